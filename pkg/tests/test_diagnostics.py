import math

import numpy as np
import pytest

from degwave import (ModalState, ProblemConfig, build_basis, energy,
                     energy_collocation, energy_eps, energy_equality_residual,
                     energy_report, fit_two_sided_decay, gronwall_bound_check,
                     holder_time_exponent, integrate, lambda_u, lipschitz_gap,
                     write_run_csv, zero_state)
from degwave.attractor import random_low_mode_state
from degwave.errors import InsufficientWindowError


class TestEnergy:
    def test_zero(self, cubic_cfg, cubic_basis):
        assert energy(zero_state(cubic_basis), cubic_cfg, cubic_basis) == 0.0

    def test_first_mode_gradient_only(self, linear_cfg, linear_basis):
        s = ModalState(np.array([1.0, 0, 0, 0]), np.zeros(4))
        assert energy(s, linear_cfg, linear_basis) == pytest.approx(
            math.pi ** 2 / 2, rel=1e-14)

    def test_modal_vs_collocation(self, cubic_cfg, cubic_basis, rng):
        # two independent evaluation routes agree to 1e-10
        for _ in range(10):
            s = random_low_mode_state(cubic_basis, rng, 2.0)
            e1 = energy(s, cubic_cfg, cubic_basis)
            e2 = energy_collocation(s, cubic_cfg, cubic_basis)
            assert e1 == pytest.approx(e2, rel=1e-10)

    def test_energy_eps_cross_term(self, cubic_cfg, cubic_basis):
        s = ModalState(np.full(8, 0.1), np.full(8, 0.2))
        e0 = energy(s, cubic_cfg, cubic_basis)
        assert energy_eps(s, 0.5, cubic_cfg, cubic_basis) == pytest.approx(
            e0 + 0.5 * 8 * 0.02, rel=1e-12)


class TestLambdaU:
    def test_zero_direction(self, cubic_cfg, cubic_basis):
        z = zero_state(cubic_basis)
        assert lambda_u(z, z, 0.7, cubic_cfg, cubic_basis) == 0.0

    def test_origin_kills_cross_term(self, cubic_cfg, cubic_basis, rng):
        U = random_low_mode_state(cubic_basis, rng, 1.0)
        lam = cubic_basis.eigenvalues
        expect = 0.5 * (U.b @ U.b + U.a ** 2 @ lam
                        + cubic_cfg.f1 * (U.a @ U.a))
        for eps in (0.0, 0.3, 5.0):
            got = lambda_u(zero_state(cubic_basis), U, eps, cubic_cfg, cubic_basis)
            assert got == pytest.approx(expect, rel=1e-14)

    def test_rejects_negative_eps(self, cubic_cfg, cubic_basis):
        z = zero_state(cubic_basis)
        with pytest.raises(ValueError):
            lambda_u(z, z, -0.1, cubic_cfg, cubic_basis)


class TestEnergyEquality:
    def test_zero_trajectory(self, cubic_cfg, cubic_basis):
        tr = integrate(zero_state(cubic_basis), 2.0, cubic_cfg, basis=cubic_basis,
                       t_eval=np.linspace(0, 2, 5))
        val, _ = energy_equality_residual(tr)
        assert val == 0.0

    def test_residual_within_tolerance_budget(self, cubic_cfg, cubic_basis, rng):
        s = random_low_mode_state(cubic_basis, rng, 1.0)
        tr = integrate(s, 50.0, cubic_cfg, basis=cubic_basis,
                       t_eval=np.linspace(0, 50, 201))
        val, t_worst = energy_equality_residual(tr)
        E0 = energy_report(tr).E[0]
        assert val <= 10.0 * (cubic_cfg.tol_abs + cubic_cfg.tol_rel * E0)
        assert 0.0 <= t_worst <= 50.0

    def test_damping_off_reduces_to_conservation(self, linear_cfg, linear_basis, rng):
        s = random_low_mode_state(linear_basis, rng, 1.0, n_low=4)
        tr = integrate(s, 10.0, linear_cfg, basis=linear_basis,
                       t_eval=np.linspace(0, 10, 41), damping_off=True)
        rep = energy_report(tr)
        val, _ = energy_equality_residual(tr)
        assert val == pytest.approx(np.max(np.abs(rep.E - rep.E[0])), rel=1e-12)

    def test_i_up_bounds_in_report(self, cubic_cfg, cubic_basis, rng):
        s = random_low_mode_state(cubic_basis, rng, 1.5)
        tr = integrate(s, 5.0, cubic_cfg, basis=cubic_basis,
                       t_eval=np.linspace(0, 5, 21))
        rep = energy_report(tr)
        p = cubic_cfg.p
        assert np.all(rep.I_up >= rep.I_u ** (p / 2) * (1 - 1e-12))
        assert np.all(rep.I_up <= 2 ** (1 - p / 2) * rep.I_u ** (p / 2) * (1 + 1e-12))


class TestDecayFits:
    def test_recovers_its_own_model(self):
        # y(t) = (t + 7)^(-1/1.5): exponent and shift recovered to 0.1%
        p = 1.5
        t = np.geomspace(10.0, 1e5, 500)
        y = (t + 7.0) ** (-1.0 / p)
        rep = fit_two_sided_decay(t, y, p, 1.0, 10.0, 1e5)
        assert rep.constrained.exponent == pytest.approx(1.0 / p)
        assert rep.constrained.offset_k == pytest.approx(7.0, rel=1e-3)
        assert rep.constrained.amplitude == pytest.approx(1.0, rel=1e-3)
        assert rep.free.exponent == pytest.approx(1.0 / p, abs=1e-3)
        assert rep.constrained.residual < 1e-6

    def test_sandwich_holds_pointwise(self):
        p = 1.3
        rng = np.random.default_rng(0)
        t = np.geomspace(50.0, 1e4, 300)
        y = 1.3 * (t + 12.0) ** (-1.0 / p) * np.exp(0.05 * rng.standard_normal(t.size))
        rep = fit_two_sided_decay(t, y, p, 0.5, 50.0, 1e4)
        lo = rep.lower.value(t, rep.i0)
        hi = rep.upper.value(t, rep.i0)
        assert np.all(lo <= y * (1 + 1e-12))
        assert np.all(y <= hi * (1 + 1e-12))
        assert rep.lower.amplitude <= rep.upper.amplitude
        assert rep.sandwich_holds(t, y)

    def test_insufficient_window(self):
        t = np.linspace(1, 2, 10)
        with pytest.raises(InsufficientWindowError):
            fit_two_sided_decay(t, t * 0 + 1.0, 1.5, 1.0, 1.0, 2.0)

    def test_residual_reported_not_hidden(self):
        p = 1.5
        t = np.geomspace(10, 1e4, 200)
        rng = np.random.default_rng(1)
        y = (t + 3.0) ** (-1 / p) * np.exp(0.1 * rng.standard_normal(t.size))
        rep = fit_two_sided_decay(t, y, p, 1.0, 10, 1e4)
        assert rep.constrained.residual > 0.05


class TestHolder:
    def test_equilibrium_flagged_degenerate(self, cubic_cfg, cubic_basis):
        tr = integrate(zero_state(cubic_basis), 10.0, cubic_cfg, basis=cubic_basis,
                       t_eval=np.linspace(0, 10, 101))
        fit = holder_time_exponent(tr)
        assert fit.degenerate

    def test_smooth_trajectory_slope(self, double_well_cfg, double_well_basis, rng):
        # active (still-oscillating) stretch of a settling trajectory
        s = random_low_mode_state(double_well_basis, rng, 2.0)
        tr = integrate(s, 10.0, double_well_cfg, basis=double_well_basis,
                       t_eval=np.linspace(0, 10, 4001))
        fit = holder_time_exponent(tr, n_pairs=4000, seed=3, max_gap=0.3)
        assert not fit.degenerate
        # C1 trajectories: slope near 1, certainly above the guaranteed 2/9
        assert fit.slope >= 2.0 / 9.0
        assert fit.ci_low <= fit.slope <= fit.ci_high

    def test_bootstrap_interval_spans_decades(self, double_well_cfg,
                                              double_well_basis, rng):
        s = random_low_mode_state(double_well_basis, rng, 2.0)
        tr = integrate(s, 50.0, double_well_cfg, basis=double_well_basis,
                       t_eval=np.unique(np.concatenate(
                           [np.linspace(0, 50, 1501),
                            np.geomspace(5e-3, 50, 500)])))
        fit = holder_time_exponent(tr, n_pairs=4000, seed=5)
        assert np.isfinite(fit.ci_low) and np.isfinite(fit.ci_high)
        assert fit.ci_low < fit.ci_high


class TestLipschitz:
    def test_linear_flow_unit_ratio_in_energy_metric(self, rng):
        # f = f1 u only, damping off: the f'(0)-weighted metric is conserved
        cfg = ProblemConfig(p=1.5, n_modes=4, f1=2.0, c3=0.0, c5=0.0,
                            tol_abs=1e-12, tol_rel=1e-12)
        b = build_basis(cfg)
        te = np.linspace(0, 20, 81)
        pairs = []
        for _ in range(3):
            s1 = random_low_mode_state(b, rng, 1.0, n_low=4)
            s2 = random_low_mode_state(b, rng, 1.0, n_low=4)
            t1 = integrate(s1, 20.0, cfg, basis=b, t_eval=te, damping_off=True)
            t2 = integrate(s2, 20.0, cfg, basis=b, t_eval=te, damping_off=True)
            pairs.append((t1, t2))
        rep = lipschitz_gap(pairs, metric="energy")
        np.testing.assert_allclose(rep.ratio_by_time, 1.0, atol=1e-6)

    def test_identical_pair_rejected(self, cubic_cfg, cubic_basis, rng):
        s = random_low_mode_state(cubic_basis, rng, 0.5)
        te = np.linspace(0, 1, 5)
        tr = integrate(s, 1.0, cubic_cfg, basis=cubic_basis, t_eval=te)
        with pytest.raises(ValueError):
            lipschitz_gap([(tr, tr)])

    def test_small_data_ratio_stable(self, cubic_cfg, cubic_basis, rng):
        te = np.linspace(0, 100, 201)
        pairs = []
        for _ in range(5):
            s1 = random_low_mode_state(cubic_basis, rng, 0.1)
            s2 = random_low_mode_state(cubic_basis, rng, 0.1)
            t1 = integrate(s1, 100.0, cubic_cfg, basis=cubic_basis, t_eval=te)
            t2 = integrate(s2, 100.0, cubic_cfg, basis=cubic_basis, t_eval=te)
            pairs.append((t1, t2))
        rep = lipschitz_gap(pairs)
        # uniform-in-time Lipschitz bound: the late-time max must not exceed
        # the overall max (no growth with the horizon)
        half = rep.times.size // 2
        assert rep.ratio_by_time[half:].max() <= rep.max_ratio + 1e-12
        assert np.isfinite(rep.max_ratio)


class TestGronwall:
    def test_explicit_solution(self):
        # F' + F = 1 with F(0)=2: F = 1 + exp(-t), sup = 2 <= M
        t = np.linspace(0, 5, 5001)
        F = 1.0 + np.exp(-t)
        one = np.ones_like(t)
        rep = gronwall_bound_check(t, F, one, one, C1=2.0, C2=1.0)
        assert rep.hypotheses_ok
        assert rep.sup_F == pytest.approx(2.0)
        assert rep.bounded

    def test_constant_zero(self):
        t = np.linspace(0, 2, 2001)
        z = np.zeros_like(t)
        rep = gronwall_bound_check(t, z, np.ones_like(t), z, C1=1.5, C2=1.0)
        assert rep.hypotheses_ok and rep.bounded

    def test_violation_reported_with_window(self):
        t = np.linspace(0, 3, 3001)
        F = np.exp(t)          # grows: F' - ... inequality fails with psi = 0
        phi = np.ones_like(t)
        psi = np.zeros_like(t)
        rep = gronwall_bound_check(t, F, phi, psi, C1=1.5, C2=1.0)
        assert not rep.inequality_ok
        assert any(kind == "inequality" for kind, _ in rep.failing_windows)

    def test_oscillation_hypothesis_fails(self):
        t = np.linspace(0, 3, 3001)
        phi = 1.0 + 0.9 * np.sin(2 * np.pi * t)   # min ~ 0.1, max ~ 1.9
        F = np.ones_like(t) * 0.5
        psi = np.ones_like(t)
        rep = gronwall_bound_check(t, F, phi, psi, C1=4.0, C2=1.5)
        assert not rep.oscillation_ok

    def test_l1_mass_hypothesis_fails(self):
        t = np.linspace(0, 2, 2001)
        phi = np.full_like(t, 3.0)
        rep = gronwall_bound_check(t, np.ones_like(t) * 0.1, phi, phi, C1=2.0,
                                   C2=1.0)
        assert not rep.window_l1_ok


class TestRunCsv:
    def test_format_and_header(self, cubic_cfg, cubic_basis, rng, tmp_path):
        s = random_low_mode_state(cubic_basis, rng, 1.0)
        tr = integrate(s, 1.0, cubic_cfg, basis=cubic_basis,
                       t_eval=np.linspace(0, 1, 5))
        path = tmp_path / "run.csv"
        write_run_csv(path, tr)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,E,I_u,I_up,residual,phase_norm,sobolev_w"
        assert len(lines) == 6
        first = lines[1].split(",")
        assert float(first[0]) == 0.0
        assert first[6] == "nan"


class TestEnergyLowerAudit:
    def test_bound_holds_on_bounded_ensemble(self, cubic_cfg, cubic_basis, rng):
        from degwave.diagnostics import e_eps_lower_audit
        te = np.linspace(0, 20, 81)
        trajs = [integrate(random_low_mode_state(cubic_basis, rng, 1.0 + i),
                           20.0, cubic_cfg, basis=cubic_basis, t_eval=te)
                 for i in range(6)]
        audit = e_eps_lower_audit(trajs, cubic_cfg)
        assert audit.holds
        assert audit.eps_threshold > 0
        assert audit.coefficient == pytest.approx(0.25)

    def test_negative_f1_shrinks_coefficient(self, double_well_cfg,
                                             double_well_basis, rng):
        from degwave.diagnostics import e_eps_lower_audit
        te = np.linspace(0, 10, 41)
        trajs = [integrate(random_low_mode_state(double_well_basis, rng, 2.0),
                           10.0, double_well_cfg, basis=double_well_basis,
                           t_eval=te)
                 for _ in range(4)]
        audit = e_eps_lower_audit(trajs, double_well_cfg)
        # superquadratic potential: mu0 = 0 applies even with f'(0) < 0
        assert audit.coefficient == pytest.approx(0.25)
        assert audit.holds


class TestGronwallShadow:
    def test_w_energy_respects_its_ceiling(self, double_well_cfg,
                                           double_well_basis, rng):
        # the empirical shadow of the weighted w-energy bound: fit the
        # hypothesis constants from a stored run, then check sup F <= M
        from degwave import integrate_decomposition
        from degwave.diagnostics import BETA_REG
        cfg = double_well_cfg
        b = double_well_basis
        s = random_low_mode_state(b, rng, 4.0)
        dt = 0.01
        te = np.arange(0.0, 30.0 + dt / 2, dt)
        u, v, w = integrate_decomposition(s, 30.0, cfg, basis=b, t_eval=te)
        lam = b.eigenvalues
        beta = BETA_REG
        eps_w = 0.01
        Iu = u.a ** 2 @ lam + np.sum(u.b ** 2, axis=1)
        quad = 0.5 * (w.b ** 2 @ lam ** beta + w.a ** 2 @ lam ** (1 + beta)
                      + cfg.fprime0 * (w.a ** 2 @ lam ** beta))
        cross = np.sum(lam ** beta * w.a * w.b, axis=1)
        F = quad + eps_w * Iu ** (cfg.p / 2) * cross
        assert np.all(F >= 0)
        phi = (2 * eps_w / 3.0) * Iu ** (cfg.p / 2)
        # L^14 grid proxy of the forcing amplitude
        vals = np.abs(u.a @ b.synthesis.T)
        l14 = (vals ** 14 @ b.weights) ** (1.0 / 14.0)
        drive = 1.0 + l14 ** 2
        dF = np.gradient(F, dt, edge_order=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            kappa_series = (dF + phi * F) / (phi * drive)
        kappa = max(1e-6, float(np.nanmax(kappa_series[: te.size // 2])))
        psi = kappa * drive
        # hypothesis constants fitted from the run itself
        nw = int(round(1.0 / dt))
        masses, oscs = [], []
        for i0 in range(0, te.size - nw):
            sl = slice(i0, i0 + nw + 1)
            masses.append(np.trapezoid(phi[sl], dx=dt)
                          + np.trapezoid(psi[sl], dx=dt))
            oscs.append(np.max(phi[sl]) / max(np.min(phi[sl]), 1e-300))
        C1 = 1.01 * max(masses)
        C2 = 1.01 * max(oscs)
        rep = gronwall_bound_check(te, F, phi, psi, C1=C1, C2=C2)
        assert rep.window_l1_ok and rep.oscillation_ok
        assert rep.bounded, f"sup F = {rep.sup_F:.3g} above ceiling {rep.M:.3g}"
