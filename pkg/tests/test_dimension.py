import math

import numpy as np
import pytest

from degwave import (DecayFit, PointCloud, box_dimension, covering_number,
                     d0_estimate, decay_time_schedule, degenerate_cover,
                     greedy_net_indices, sample_attractor, two_regime_summary,
                     vw_splitting_report)
from degwave.diagnostics import HolderFit, TwoSidedDecayReport

LN2_LN3 = math.log(2) / math.log(3)


def segment(n=10_000):
    return np.linspace(0.0, 1.0, n)[:, None]


def square(n_side=100):
    g = np.linspace(0.0, 1.0, n_side)
    X, Y = np.meshgrid(g, g)
    return np.stack([X.ravel(), Y.ravel()], axis=1)


def cantor_dust(depth=10):
    # left endpoints of the 2^depth middle-thirds intervals
    pts = np.array([0.0])
    for _ in range(depth):
        pts = np.concatenate([pts / 3.0, pts / 3.0 + 2.0 / 3.0])
    return np.sort(pts)[:, None]


def make_fit(amplitude, offset_k, p):
    return DecayFit(exponent=1.0 / p, amplitude=amplitude, offset_k=offset_k,
                    residual=0.0, window=(1e2, 1e4), p=p)


def synthetic_decay_report(p, amplitude=1.0, offset_k=1.0):
    fit = make_fit(amplitude, offset_k, p)
    return TwoSidedDecayReport(lower=make_fit(0.8 * amplitude, offset_k, p),
                               upper=fit, constrained=fit, free=fit,
                               p=p, i0=1.0, n_tail=100)


class TestCoveringNumber:
    def test_grid_cells_enumerated_by_hand(self):
        pts = np.arange(0.0, 1.05, 0.1)[:, None]   # 0.0, 0.1, ..., 1.0
        assert covering_number(pts, 0.25, "grid") == 5

    def test_single_point(self):
        for eps in (1e-3, 1.0, 100.0):
            assert covering_number(np.array([[0.3, 0.7]]), eps, "grid") == 1
            assert covering_number(np.array([[0.3, 0.7]]), eps, "greedy") == 1

    def test_greedy_two_points(self):
        pts = np.array([[0.0], [0.5]])
        assert covering_number(pts, 0.5, "greedy") == 1   # closed balls
        assert covering_number(pts, 0.49, "greedy") == 2

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            covering_number(np.empty((0, 2)), 0.1)

    def test_monotone_in_eps_nested_grid(self):
        rng = np.random.default_rng(0)
        pts = rng.random((500, 2))
        eps = 0.8 * 0.5 ** np.arange(8)
        counts = [covering_number(pts, e, "grid") for e in eps]
        assert np.all(np.diff(counts) >= 0)

    def test_monotone_in_point_set(self):
        rng = np.random.default_rng(1)
        pts = rng.random((400, 2))
        sub = pts[:100]
        for eps in (0.3, 0.1, 0.03):
            assert covering_number(sub, eps) <= covering_number(pts, eps)

    def test_grid_bounded_by_greedy(self):
        # a greedy ball of radius eps meets at most 3^d cells of side eps
        for pts, d in ((segment(2000), 1), (square(40), 2)):
            for eps in (0.3, 0.1, 0.05):
                ng = covering_number(pts, eps, "grid")
                ne = covering_number(pts, eps, "greedy")
                assert ng <= 3 ** d * ne

    def test_greedy_deterministic_lowest_first(self):
        pts = np.array([[0.0], [0.1], [1.0], [1.05]])
        idx = greedy_net_indices(pts, 0.2)
        assert idx[0] == 0 and list(idx) == [0, 2]


class TestBoxDimension:
    def test_segment_slope_one(self):
        rep = box_dimension(segment(), 0.5, 0.5, 14)
        assert rep.verdict == "ok"
        assert rep.slope == pytest.approx(1.0, abs=0.1)
        # oracle: continuum count ceil(1/eps), within the +1 boundary cell,
        # valid on the unsaturated fitting window
        lo, hi = rep.window
        for e, c in zip(rep.eps_list[lo:hi + 1], rep.counts[lo:hi + 1]):
            assert math.ceil(1 / e) <= c <= math.ceil(1 / e) + 1

    def test_square_slope_two(self):
        rep = box_dimension(square(), 0.45, 0.5, 10)
        assert rep.verdict == "ok"
        assert rep.slope == pytest.approx(2.0, abs=0.15)

    def test_single_point_slope_zero(self):
        rep = box_dimension(np.array([[0.2, 0.4]]), 1.0, 0.5, 8)
        assert rep.slope == 0.0 and rep.verdict == "ok"

    def test_cantor_exact_self_similar_counts(self):
        pts = cantor_dust(10)
        rep = box_dimension(pts, 1.0 / 3.0, 1.0 / 3.0, 10)
        # oracle: exactly 2^m occupied triadic cells at scale 3^-m
        for m, c in enumerate(rep.counts, start=1):
            if rep.window[0] <= m - 1 <= rep.window[1]:
                assert c == 2 ** m
        assert rep.verdict == "ok"
        assert rep.slope == pytest.approx(LN2_LN3, abs=0.05)

    def test_cantor_alpha_insensitive(self):
        pts = cantor_dust(10)
        r3 = box_dimension(pts, 1.0 / 3.0, 1.0 / 3.0, 10)
        r2 = box_dimension(pts, 0.5, 0.5, 14)
        assert abs(r2.slope - r3.slope) <= 0.05 * r3.slope

    def test_inconclusive_when_too_few_scales(self):
        pts = np.array([[0.0], [0.4], [0.8]])
        rep = box_dimension(pts, 0.5, 0.5, 10)
        assert rep.verdict == "inconclusive"
        assert math.isnan(rep.slope)

    def test_alpha_validated(self):
        with pytest.raises(ValueError):
            box_dimension(segment(100), 0.5, 1.5, 5)

    def test_report_serialization(self, tmp_path):
        rep = box_dimension(segment(1000), 0.5, 0.5, 8)
        rep.save_json(tmp_path / "r.json")
        rep.save_csv(tmp_path / "r.csv")
        import json
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["method"] == "grid"
        assert len(doc["eps_list"]) == len(doc["counts"]) == 8
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "m,eps,count,t_m"
        assert len(lines) == 9


class TestDecaySchedule:
    @pytest.mark.parametrize("p", [1.2, 1.5, 1.8])
    def test_d0_converges_to_p(self, p):
        rep = synthetic_decay_report(p)
        d0, eps_m, t_m, ratio = d0_estimate(rep.upper, eps0=0.5, m_max=24)
        assert d0 == pytest.approx(p, rel=0.10)
        assert np.all(np.diff(eps_m) < 0)
        assert np.all(t_m[1:] >= t_m[:-1])

    def test_schedule_follows_upper_envelope(self):
        p = 1.5
        fit = make_fit(2.0, 1.0, p)
        eps_m, t_m = decay_time_schedule(fit, 0.5, np.arange(1, 6))
        # at t_m the envelope value equals eps_m (when t_m > 0)
        val = fit.value(t_m, 0.25)
        good = t_m > 0
        np.testing.assert_allclose(val[good], eps_m[good], rtol=1e-12)


class TestDegenerateCover:
    def _holder(self):
        return HolderFit(slope=1.0, intercept=0.0, ci_low=0.9, ci_high=1.1,
                         n_pairs=100, degenerate=False)

    def test_origin_cloud_counts_one(self, cubic_cfg, cubic_basis):
        cloud = PointCloud(a=np.zeros((1, 8)), b=np.zeros((1, 8)),
                           eigenvalues=cubic_basis.eigenvalues, dim=1, n_modes=8)
        rep = degenerate_cover(cloud, cubic_cfg, synthetic_decay_report(1.5),
                               self._holder(), eps0=0.5, m_max=4,
                               basis=cubic_basis)
        assert np.all(rep.report.counts == 1)
        assert rep.report.slope == 0.0
        assert all(v == "ok" for v in rep.verified)

    def test_two_regime_identity(self):
        outer = box_dimension(segment(2000), 0.5, 0.5, 9)
        ann = box_dimension(segment(500), 0.25, 0.5, 7)

        class Stub:        # minimal stand-in carrying the identity fields
            theta = 0.9
            inner_dim_bound = 1.2

            class report:
                d0 = 1.5

        s = two_regime_summary(outer, ann, Stub)
        assert s["combined_bound"] == pytest.approx(
            s["outer_slope"] + (s["annulus_slope"] + s["d0"] + 1.0) / s["theta"])


@pytest.fixture(scope="module")
def small_cloud(double_well_cfg, double_well_basis):
    return sample_attractor(double_well_cfg, n_traj=12, burn_in=10.0,
                            n_samples=32, stride=0.5,
                            basis=double_well_basis, max_norm=5.0, jobs=2)


class TestVWReport:
    def test_contraction_below_one(self, small_cloud, double_well_cfg,
                                   double_well_basis):
        rep = vw_splitting_report(small_cloud, double_well_cfg, eps0=3.0,
                                  T_grid=[2.0, 4.0, 8.0], n_samples=8,
                                  n_directions=4, basis=double_well_basis,
                                  jobs=2)
        assert rep.q_max < 1.0
        assert np.all(rep.q_per_probe <= 1.0 + 1e-9)
        assert np.isfinite(rep.w_proxy_sup)

    def test_q_decreases_with_T(self, small_cloud, double_well_cfg,
                                double_well_basis):
        # I_V never increases, so the maximum over probes cannot grow
        rep = vw_splitting_report(small_cloud, double_well_cfg, eps0=3.0,
                                  T_grid=[1.0, 2.0, 4.0, 8.0], n_samples=6,
                                  n_directions=2, basis=double_well_basis)
        assert np.all(np.diff(rep.q_by_T) <= 1e-9)

    def test_not_enough_samples_rejected(self, small_cloud, double_well_cfg,
                                         double_well_basis):
        with pytest.raises(ValueError, match="phase norm"):
            vw_splitting_report(small_cloud, double_well_cfg, eps0=100.0,
                                T_grid=[1.0], n_samples=8,
                                basis=double_well_basis)
