"""Jitted integration kernels.

One RHS covers the four coupled systems (full flow, v/w decomposition,
linearization, V/W split of the linearization); an integer ``kind`` selects
the layout.  The driver is an explicit Dormand-Prince 5(4) pair with PI step
control, FSAL, and the standard quartic dense-output polynomial.  The running
dissipation integral rides along as the last state component, so its
quadrature uses the same internal stages as the step itself.

State layouts (K = basis size, z = dissipation integral of the base flow):
    kind 0 (full):  [a, b, z]                          ny = 2K+1
    kind 1 (v/w):   [a_u, b_u, a_v, b_v, a_w, b_w, z]  ny = 6K+1
    kind 2 (lin):   [a_u, b_u, a_U, b_U, z]            ny = 4K+1
    kind 3 (V/W):   [a_u, b_u, a_V, b_V, a_W, b_W, z]  ny = 6K+1

The hot path is allocation-free: matvecs are hand-rolled (the collocation
matrices are small enough that BLAS dispatch overhead dominates) and all
stage storage lives in caller-owned buffers.
"""

import numpy as np
from numba import njit

KIND_FULL = 0
KIND_VW_DECOMP = 1
KIND_LINEARIZED = 2
KIND_VW_SPLIT = 3

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_NONFINITE = 2
STATUS_MAXSTEPS = 3

# Dormand-Prince 5(4) tableau
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)

# dense-output polynomial: y(t0 + th) = y0 + h * sum_i K_i * sum_j P[i,j] t^(j+1)
_DENSE_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_TINY = 1e-200  # below this, the p-2 power of a norm is treated as exactly 0


@njit(cache=True, nogil=True)
def _rhs_into(kind, y, dy, wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off):
    """Fill dy with the vector field at y; wk is scratch of size 2G+4K."""
    ny = y.shape[0]
    G = S.shape[0]
    vals = wk[0:G]
    Uvals = wk[G:2 * G]
    fu = wk[2 * G:2 * G + K]
    fpU = wk[2 * G + K:2 * G + 2 * K]
    aU = wk[2 * G + 2 * K:2 * G + 3 * K]
    bU = wk[2 * G + 3 * K:2 * G + 4 * K]

    a = y[0:K]
    b = y[K:2 * K]
    g2 = 0.0
    v2 = 0.0
    for i in range(K):
        g2 += lam[i] * a[i] * a[i]
        v2 += b[i] * b[i]
    if damp_off:
        gp = 0.0
        vp = 0.0
    else:
        gp = g2 ** (0.5 * p)
        vp = v2 ** (0.5 * p)
    D = gp + vp

    have_f = (f1 != 0.0) or (c3 != 0.0) or (c5 != 0.0)
    if have_f:
        for g in range(G):
            s = 0.0
            for k in range(K):
                s += S[g, k] * a[k]
            vals[g] = s
        for k in range(K):
            s = 0.0
            for g in range(G):
                u = vals[g]
                u2 = u * u
                s += P[k, g] * (u * (f1 + u2 * (c3 + c5 * u2)))
            fu[k] = s
    else:
        for k in range(K):
            fu[k] = 0.0

    for i in range(K):
        dy[i] = b[i]
        dy[K + i] = -lam[i] * a[i] - D * b[i] - fu[i]
    dy[ny - 1] = D * v2

    if kind == KIND_FULL:
        return

    if kind == KIND_VW_DECOMP:
        w2 = 0.0
        for i in range(K):
            bwi = y[5 * K + i]
            w2 += bwi * bwi
        wp = 0.0 if damp_off else w2 ** (0.5 * p)
        cv = gp + 0.5 * vp
        cw = 0.5 * wp + gp + 0.5 * vp
        for i in range(K):
            av = y[2 * K + i]
            bv = y[3 * K + i]
            aw = y[4 * K + i]
            bw = y[5 * K + i]
            dy[2 * K + i] = bv
            dy[3 * K + i] = (-lam[i] * av
                             - (0.5 * vp * b[i] - 0.5 * wp * bw)
                             - cv * bv
                             - lam_shift * av)
            dy[4 * K + i] = bw
            dy[5 * K + i] = (-lam[i] * aw
                             - cw * bw
                             - (fu[i] - lam_shift * a[i] + lam_shift * aw))
        return

    # linearized flows: need f'(u)U and the damping-gradient coupling
    if kind == KIND_LINEARIZED:
        for i in range(K):
            aU[i] = y[2 * K + i]
            bU[i] = y[3 * K + i]
    else:
        for i in range(K):
            aU[i] = y[2 * K + i] + y[4 * K + i]
            bU[i] = y[3 * K + i] + y[5 * K + i]

    ip_grad = 0.0
    ip_vel = 0.0
    for i in range(K):
        ip_grad += lam[i] * a[i] * aU[i]
        ip_vel += b[i] * bU[i]
    if damp_off:
        gcoup = 0.0
    else:
        t1 = g2 ** (0.5 * (p - 2.0)) * ip_grad if g2 > _TINY else 0.0
        t2 = v2 ** (0.5 * (p - 2.0)) * ip_vel if v2 > _TINY else 0.0
        gcoup = p * (t1 + t2)

    if have_f:
        for g in range(G):
            s = 0.0
            for k in range(K):
                s += S[g, k] * aU[k]
            Uvals[g] = s
        for k in range(K):
            s = 0.0
            for g in range(G):
                u2 = vals[g] * vals[g]
                fp = f1 + u2 * (3.0 * c3 + 5.0 * c5 * u2)
                s += P[k, g] * (fp * Uvals[g])
            fpU[k] = s
    else:
        for k in range(K):
            fpU[k] = 0.0

    if kind == KIND_LINEARIZED:
        for i in range(K):
            dy[2 * K + i] = bU[i]
            dy[3 * K + i] = -lam[i] * aU[i] - D * bU[i] - fpU[i] - gcoup * b[i]
        return

    for i in range(K):
        aV = y[2 * K + i]
        bV = y[3 * K + i]
        aW = y[4 * K + i]
        bW = y[5 * K + i]
        dy[2 * K + i] = bV
        dy[3 * K + i] = -lam[i] * aV - D * bV
        dy[4 * K + i] = bW
        dy[5 * K + i] = -lam[i] * aW - D * bW - fpU[i] - gcoup * b[i]


@njit(cache=True, nogil=True)
def _rhs(kind, y, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off):
    """Allocating convenience wrapper around _rhs_into."""
    dy = np.empty(y.shape[0])
    wk = np.empty(2 * S.shape[0] + 4 * K)
    _rhs_into(kind, y, dy, wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    return dy


@njit(cache=True, nogil=True)
def _error_norm(err, y0, y1, tol_abs, tol_rel):
    # z (last component) is excluded: step control is purely physical
    n = err.shape[0] - 1
    if n <= 0:
        return 0.0
    s = 0.0
    for i in range(n):
        yi = abs(y0[i])
        if abs(y1[i]) > yi:
            yi = abs(y1[i])
        sc = tol_abs + tol_rel * yi
        e = err[i] / sc
        s += e * e
    return np.sqrt(s / n)


@njit(cache=True, nogil=True)
def _stages_into(kind, y, h, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off,
                 Kmat, ytmp, ynew, errv, wk):
    """Fill the six remaining stages from Kmat[0]=k1; ynew/errv on exit."""
    ny = y.shape[0]
    for j in range(ny):
        ytmp[j] = y[j] + h * _A21 * Kmat[0, j]
    _rhs_into(kind, ytmp, Kmat[1], wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    for j in range(ny):
        ytmp[j] = y[j] + h * (_A31 * Kmat[0, j] + _A32 * Kmat[1, j])
    _rhs_into(kind, ytmp, Kmat[2], wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    for j in range(ny):
        ytmp[j] = y[j] + h * (_A41 * Kmat[0, j] + _A42 * Kmat[1, j] + _A43 * Kmat[2, j])
    _rhs_into(kind, ytmp, Kmat[3], wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    for j in range(ny):
        ytmp[j] = y[j] + h * (_A51 * Kmat[0, j] + _A52 * Kmat[1, j]
                              + _A53 * Kmat[2, j] + _A54 * Kmat[3, j])
    _rhs_into(kind, ytmp, Kmat[4], wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    for j in range(ny):
        ytmp[j] = y[j] + h * (_A61 * Kmat[0, j] + _A62 * Kmat[1, j]
                              + _A63 * Kmat[2, j] + _A64 * Kmat[3, j]
                              + _A65 * Kmat[4, j])
    _rhs_into(kind, ytmp, Kmat[5], wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    for j in range(ny):
        ynew[j] = y[j] + h * (_B1 * Kmat[0, j] + _B3 * Kmat[2, j]
                              + _B4 * Kmat[3, j] + _B5 * Kmat[4, j]
                              + _B6 * Kmat[5, j])
    _rhs_into(kind, ynew, Kmat[6], wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    for j in range(ny):
        errv[j] = h * (_E1 * Kmat[0, j] + _E3 * Kmat[2, j] + _E4 * Kmat[3, j]
                       + _E5 * Kmat[4, j] + _E6 * Kmat[5, j] + _E7 * Kmat[6, j])


@njit(cache=True, nogil=True)
def _attempt_step(kind, y, h, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off, k1):
    """Allocating single-attempt wrapper; returns (ynew, errv, Kmat)."""
    ny = y.shape[0]
    Kmat = np.empty((7, ny))
    for j in range(ny):
        Kmat[0, j] = k1[j]
    ytmp = np.empty(ny)
    ynew = np.empty(ny)
    errv = np.empty(ny)
    wk = np.empty(2 * S.shape[0] + 4 * K)
    _stages_into(kind, y, h, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off,
                 Kmat, ytmp, ynew, errv, wk)
    return ynew, errv, Kmat


@njit(cache=True, nogil=True)
def _dense_eval_into(y0, Kmat, h, theta, out):
    ny = y0.shape[0]
    t1 = theta
    t2 = t1 * theta
    t3 = t2 * theta
    t4 = t3 * theta
    for j in range(ny):
        out[j] = y0[j]
    for i in range(7):
        w = (_DENSE_P[i, 0] * t1 + _DENSE_P[i, 1] * t2
             + _DENSE_P[i, 2] * t3 + _DENSE_P[i, 3] * t4)
        if w != 0.0:
            for j in range(ny):
                out[j] += h * w * Kmat[i, j]


@njit(cache=True, nogil=True)
def _initial_step(kind, y0, f0, t_end, K, lam, S, P, f1, c3, c5, p,
                  lam_shift, damp_off, tol_abs, tol_rel, h_max):
    n = y0.shape[0] - 1
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = tol_abs + tol_rel * abs(y0[i])
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    if t_end > 0:
        h0 = min(h0, 0.1 * t_end)
    y1 = y0 + h0 * f0
    f1v = _rhs(kind, y1, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)
    d2 = 0.0
    for i in range(n):
        sc = tol_abs + tol_rel * abs(y0[i])
        d2 += ((f1v[i] - f0[i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1)
    if h > h_max:
        h = h_max
    if t_end > 0 and h > t_end:
        h = t_end
    return h


@njit(cache=True, nogil=True)
def _grow(arr, need):
    cap = arr.shape[0]
    if need <= cap:
        return arr
    new = np.empty((2 * cap,) + arr.shape[1:])
    new[:cap] = arr
    return new


@njit(cache=True, nogil=True)
def dopri5(kind, K, y0, t_end, t_eval,
           lam, S, P, f1, c3, c5, p, lam_shift, damp_off,
           tol_abs, tol_rel, h_max, max_steps, record_steps):
    """Integrate from t=0 to t_end with dense output at t_eval (sorted).

    Returns (status, t_reached, n_accepted, n_rejected, n_rhs,
             Y_eval, step_t, step_h, step_err, Y_steps).
    """
    ny = y0.shape[0]
    G = S.shape[0]
    n_eval = t_eval.shape[0]
    Y_eval = np.empty((n_eval, ny))
    ieval = 0
    while ieval < n_eval and t_eval[ieval] <= 0.0:
        Y_eval[ieval] = y0
        ieval += 1

    cap = 4096
    step_t = np.empty(cap)
    step_h = np.empty(cap)
    step_err = np.empty(cap)
    if record_steps:
        Y_steps = np.empty((cap, ny))
    else:
        Y_steps = np.empty((0, ny))

    t = 0.0
    y = y0.copy()
    naccept = 0
    nreject = 0
    nfev = 1
    wk = np.empty(2 * G + 4 * K)
    Kmat = np.empty((7, ny))
    ytmp = np.empty(ny)
    ynew = np.empty(ny)
    errv = np.empty(ny)
    k1 = np.empty(ny)
    _rhs_into(kind, y, k1, wk, K, lam, S, P, f1, c3, c5, p, lam_shift, damp_off)

    if t_end <= 0.0:
        return (STATUS_OK, t, naccept, nreject, nfev, Y_eval,
                step_t[:0], step_h[:0], step_err[:0], Y_steps[:0])

    h = _initial_step(kind, y, k1, t_end, K, lam, S, P, f1, c3, c5, p,
                      lam_shift, damp_off, tol_abs, tol_rel, h_max)
    nfev += 1

    safety = 0.9
    beta = 0.04
    expo1 = 0.2 - beta * 0.75
    facold = 1e-4
    fac_shrink = 5.0    # at most /5 per step
    fac_grow = 10.0     # at most x10 per step
    last_rejected = False
    bad_streak = 0
    nsteps = 0
    status = STATUS_OK

    while t < t_end:
        if nsteps >= max_steps:
            status = STATUS_MAXSTEPS
            break
        if h < 1e-14:
            status = STATUS_UNDERFLOW
            break
        if t + h > t_end:
            h = t_end - t
        nsteps += 1

        for j in range(ny):
            Kmat[0, j] = k1[j]
        _stages_into(kind, y, h, K, lam, S, P, f1, c3, c5, p, lam_shift,
                     damp_off, Kmat, ytmp, ynew, errv, wk)
        nfev += 6
        err = _error_norm(errv, y, ynew, tol_abs, tol_rel)
        if not np.isfinite(err):
            bad_streak += 1
            if bad_streak > 30:
                status = STATUS_NONFINITE
                break
            nreject += 1
            h *= 0.1
            last_rejected = True
            continue
        bad_streak = 0

        if err <= 1.0:
            # dense output for pending evaluation times in (t, t+h]
            while ieval < n_eval and t_eval[ieval] <= t + h + 1e-15:
                theta = (t_eval[ieval] - t) / h
                if theta >= 1.0:
                    Y_eval[ieval] = ynew
                else:
                    _dense_eval_into(y, Kmat, h, theta, Y_eval[ieval])
                ieval += 1

            step_t = _grow(step_t, naccept + 1)
            step_h = _grow(step_h, naccept + 1)
            step_err = _grow(step_err, naccept + 1)
            step_t[naccept] = t + h
            step_h[naccept] = h
            step_err[naccept] = err
            if record_steps:
                Y_steps = _grow(Y_steps, naccept + 1)
                Y_steps[naccept] = ynew

            t = t + h
            for j in range(ny):
                y[j] = ynew[j]
                k1[j] = Kmat[6, j]   # FSAL
            naccept += 1

            if err == 0.0:
                fac = 1.0 / fac_grow
            else:
                fac11 = err ** expo1
                fac = fac11 / facold ** beta
                fac = max(1.0 / fac_grow, min(fac_shrink, fac / safety))
            hnew = h / fac
            if last_rejected and hnew > h:
                hnew = h
            h = min(hnew, h_max)
            facold = max(err, 1e-4)
            last_rejected = False
        else:
            nreject += 1
            fac11 = err ** expo1
            h = h / min(fac_shrink, fac11 / safety)
            last_rejected = True

    if status == STATUS_OK:
        while ieval < n_eval:
            Y_eval[ieval] = y
            ieval += 1

    return (status, t, naccept, nreject, nfev, Y_eval,
            step_t[:naccept], step_h[:naccept], step_err[:naccept],
            Y_steps[:naccept] if record_steps else Y_steps[:0])
