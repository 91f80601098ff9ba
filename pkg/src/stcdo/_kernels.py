"""Compiled inner loops: coefficient ODE integration, the filter recursion and
loss-path generation.

Everything here is deliberately loop-explicit so the arithmetic order is fixed
and reproducible; the Kalman update in particular is mirrored line-for-line by
the straight-line reference used in the tests.
"""
import math

import numpy as np
from numba import njit

RICCATI_GUARD = 1.0e6


@njit(cache=True, nogil=True)
def riccati_rk4(alpha, beta_y, beta_z, ky_phys, rn_ky, rn_kz, half_sy2, half_sz2,
                drift_const, one_factor, n_steps, h):
    """Fixed-step RK4 for (A, B_y, B_z) plus running integrals of B_y and B_z.

    Columns are independent loss levels.  Returns (A, By, Bz, IBy, IBz,
    blow_step, blow_col); blow_step is -1 unless a column crossed the overflow
    guard, in which case integration aborts.
    """
    m = alpha.shape[0]
    n = n_steps + 1
    a_out = np.zeros((n, m))
    by_out = np.zeros((n, m))
    bz_out = np.zeros((n, m))
    iby_out = np.zeros((n, m))
    ibz_out = np.zeros((n, m))
    for j in range(m):
        bey = beta_y[j]
        bez = beta_z[j]
        al = alpha[j]
        a = 0.0
        by = 0.0
        bz = 0.0
        iby = 0.0
        ibz = 0.0
        for k in range(n_steps):
            # stage 1
            d1y = bey - rn_ky * by - half_sy2 * by * by
            d1z = 0.0 if one_factor else bez + ky_phys * by - rn_kz * bz - half_sz2 * bz * bz
            d1a = al + drift_const * (by if one_factor else bz)
            # stage 2
            by2 = by + 0.5 * h * d1y
            bz2 = bz + 0.5 * h * d1z
            d2y = bey - rn_ky * by2 - half_sy2 * by2 * by2
            d2z = 0.0 if one_factor else bez + ky_phys * by2 - rn_kz * bz2 - half_sz2 * bz2 * bz2
            d2a = al + drift_const * (by2 if one_factor else bz2)
            # stage 3
            by3 = by + 0.5 * h * d2y
            bz3 = bz + 0.5 * h * d2z
            d3y = bey - rn_ky * by3 - half_sy2 * by3 * by3
            d3z = 0.0 if one_factor else bez + ky_phys * by3 - rn_kz * bz3 - half_sz2 * bz3 * bz3
            d3a = al + drift_const * (by3 if one_factor else bz3)
            # stage 4
            by4 = by + h * d3y
            bz4 = bz + h * d3z
            d4y = bey - rn_ky * by4 - half_sy2 * by4 * by4
            d4z = 0.0 if one_factor else bez + ky_phys * by4 - rn_kz * bz4 - half_sz2 * bz4 * bz4
            d4a = al + drift_const * (by4 if one_factor else bz4)
            sixth = h / 6.0
            iby += sixth * (by + 2.0 * by2 + 2.0 * by3 + by4)
            ibz += sixth * (bz + 2.0 * bz2 + 2.0 * bz3 + bz4)
            by += sixth * (d1y + 2.0 * d2y + 2.0 * d3y + d4y)
            bz += sixth * (d1z + 2.0 * d2z + 2.0 * d3z + d4z)
            a += sixth * (d1a + 2.0 * d2a + 2.0 * d3a + d4a)
            if abs(by) > RICCATI_GUARD or abs(bz) > RICCATI_GUARD:
                return a_out, by_out, bz_out, iby_out, ibz_out, k + 1, j
            a_out[k + 1, j] = a
            by_out[k + 1, j] = by
            bz_out[k + 1, j] = bz
            iby_out[k + 1, j] = iby
            ibz_out[k + 1, j] = ibz
    return a_out, by_out, bz_out, iby_out, ibz_out, -1, -1


@njit(cache=True, nogil=True)
def _psd_clip_2x2(q):
    """Clip the eigenvalues of a symmetric 2x2 at zero (in place)."""
    a = q[0, 0]
    b = 0.5 * (q[0, 1] + q[1, 0])
    d = q[1, 1]
    mean = 0.5 * (a + d)
    half = 0.5 * (a - d)
    disc = math.sqrt(half * half + b * b)
    lo = mean - disc
    if lo >= 0.0:
        q[0, 1] = b
        q[1, 0] = b
        return
    hi = mean + disc
    if hi <= 0.0:
        q[0, 0] = 0.0
        q[0, 1] = 0.0
        q[1, 0] = 0.0
        q[1, 1] = 0.0
        return
    # keep the eigvector of the positive eigenvalue
    if abs(b) > 1.0e-300:
        v0 = hi - d
        v1 = b
    elif a >= d:
        v0 = 1.0
        v1 = 0.0
    else:
        v0 = 0.0
        v1 = 1.0
    nrm = math.sqrt(v0 * v0 + v1 * v1)
    v0 /= nrm
    v1 /= nrm
    q[0, 0] = hi * v0 * v0
    q[0, 1] = hi * v0 * v1
    q[1, 0] = hi * v0 * v1
    q[1, 1] = hi * v1 * v1


LN_2PI = math.log(2.0 * math.pi)


@njit(cache=True, nogil=True)
def kalman_core(obs, mask, c_vec, b_mat, h_diag, m0, m1, qc, qy, qz,
                x0, p0, jitter, store, innov_out, f_out):
    """Prediction/update recursion with per-date masking.

    Returns (status, bad_index, loglik, xp_all, xf_all, pp_all, pf_all, d_all).
    status: 0 ok, 1 singular innovation covariance, 2 non-finite loglik.
    """
    n_dates, m_obs = obs.shape
    xf = np.empty(2)
    xf[0] = x0[0]
    xf[1] = x0[1]
    pf = p0.copy()
    xp_all = np.zeros((n_dates, 2))
    xf_all = np.zeros((n_dates, 2))
    pp_all = np.zeros((n_dates, 2, 2))
    pf_all = np.zeros((n_dates, 2, 2))
    d_all = np.zeros(n_dates, dtype=np.int64)
    idx = np.empty(m_obs, dtype=np.int64)
    g = np.empty((m_obs, 2))
    x_sol = np.empty((m_obs, 2))
    f = np.empty((m_obs, m_obs))
    l_chol = np.empty((m_obs, m_obs))
    e = np.empty(m_obs)
    z = np.empty(m_obs)
    loglik = 0.0
    q = np.empty((2, 2))
    pp = np.empty((2, 2))
    tmp = np.empty((2, 2))
    for k in range(n_dates):
        # predict from the clamped previous filtered state
        yc = xf[0] if xf[0] > 0.0 else 0.0
        zc = xf[1] if xf[1] > 0.0 else 0.0
        for i in range(2):
            for j in range(2):
                q[i, j] = qc[i, j] + qy[i, j] * yc + qz[i, j] * zc
        _psd_clip_2x2(q)
        xp0 = m0[0] + m1[0, 0] * xf[0] + m1[0, 1] * xf[1]
        xp1 = m0[1] + m1[1, 0] * xf[0] + m1[1, 1] * xf[1]
        for i in range(2):
            for j in range(2):
                tmp[i, j] = m1[i, 0] * pf[0, j] + m1[i, 1] * pf[1, j]
        for i in range(2):
            for j in range(2):
                pp[i, j] = tmp[i, 0] * m1[j, 0] + tmp[i, 1] * m1[j, 1] + q[i, j]
        xp_all[k, 0] = xp0
        xp_all[k, 1] = xp1
        pp_all[k, 0, 0] = pp[0, 0]
        pp_all[k, 0, 1] = pp[0, 1]
        pp_all[k, 1, 0] = pp[1, 0]
        pp_all[k, 1, 1] = pp[1, 1]

        d = 0
        for i in range(m_obs):
            if mask[k, i]:
                idx[d] = i
                d += 1
        d_all[k] = d
        if d == 0:
            xf[0] = xp0 if xp0 > 0.0 else 0.0
            xf[1] = xp1 if xp1 > 0.0 else 0.0
            pf[0, 0] = pp[0, 0]
            pf[0, 1] = pp[0, 1]
            pf[1, 0] = pp[1, 0]
            pf[1, 1] = pp[1, 1]
            xf_all[k, 0] = xf[0]
            xf_all[k, 1] = xf[1]
            pf_all[k, 0, 0] = pf[0, 0]
            pf_all[k, 0, 1] = pf[0, 1]
            pf_all[k, 1, 0] = pf[1, 0]
            pf_all[k, 1, 1] = pf[1, 1]
            continue

        # innovation and its covariance on the observed coordinates
        for a in range(d):
            i = idx[a]
            e[a] = obs[k, i] - (c_vec[i] + b_mat[i, 0] * xp0 + b_mat[i, 1] * xp1)
            g[a, 0] = b_mat[i, 0] * pp[0, 0] + b_mat[i, 1] * pp[1, 0]
            g[a, 1] = b_mat[i, 0] * pp[0, 1] + b_mat[i, 1] * pp[1, 1]
        for a in range(d):
            ia = idx[a]
            for b in range(d):
                ib = idx[b]
                f[a, b] = g[a, 0] * b_mat[ib, 0] + g[a, 1] * b_mat[ib, 1]
            f[a, a] += h_diag[ia]

        ok = _cholesky(f, l_chol, d)
        if not ok:
            for a in range(d):
                f[a, a] += jitter
            ok = _cholesky(f, l_chol, d)
            if not ok:
                return 1, k, loglik, xp_all, xf_all, pp_all, pf_all, d_all

        # loglik pieces
        logdet = 0.0
        for a in range(d):
            logdet += math.log(l_chol[a, a])
        logdet *= 2.0
        for a in range(d):
            s = e[a]
            for b in range(a):
                s -= l_chol[a, b] * z[b]
            z[a] = s / l_chol[a, a]
        quad = 0.0
        for a in range(d):
            quad += z[a] * z[a]
        loglik += -0.5 * (d * LN_2PI + logdet + quad)
        if not math.isfinite(loglik):
            return 2, k, loglik, xp_all, xf_all, pp_all, pf_all, d_all

        # gain: solve F X = G, K = X^T
        for col in range(2):
            for a in range(d):
                s = g[a, col]
                for b in range(a):
                    s -= l_chol[a, b] * x_sol[b, col]
                x_sol[a, col] = s / l_chol[a, a]
            for a in range(d - 1, -1, -1):
                s = x_sol[a, col]
                for b in range(a + 1, d):
                    s -= l_chol[b, a] * x_sol[b, col]
                x_sol[a, col] = s / l_chol[a, a]

        up0 = 0.0
        up1 = 0.0
        for a in range(d):
            up0 += x_sol[a, 0] * e[a]
            up1 += x_sol[a, 1] * e[a]
        xf[0] = xp0 + up0
        xf[1] = xp1 + up1
        if xf[0] < 0.0:
            xf[0] = 0.0
        if xf[1] < 0.0:
            xf[1] = 0.0
        for i in range(2):
            for j in range(2):
                s = 0.0
                for a in range(d):
                    s += x_sol[a, i] * g[a, j]
                tmp[i, j] = s
        pf[0, 0] = pp[0, 0] - tmp[0, 0]
        pf[0, 1] = 0.5 * ((pp[0, 1] - tmp[0, 1]) + (pp[1, 0] - tmp[1, 0]))
        pf[1, 0] = pf[0, 1]
        pf[1, 1] = pp[1, 1] - tmp[1, 1]

        xf_all[k, 0] = xf[0]
        xf_all[k, 1] = xf[1]
        pf_all[k, 0, 0] = pf[0, 0]
        pf_all[k, 0, 1] = pf[0, 1]
        pf_all[k, 1, 0] = pf[1, 0]
        pf_all[k, 1, 1] = pf[1, 1]
        if store:
            for a in range(d):
                innov_out[k, idx[a]] = e[a]
                for b in range(d):
                    f_out[k, idx[a], idx[b]] = f[a, b]
    return 0, -1, loglik, xp_all, xf_all, pp_all, pf_all, d_all


@njit(cache=True, nogil=True)
def _cholesky(a, l_out, d):
    """Lower Cholesky of the leading d x d block; False on non-PD pivot."""
    for i in range(d):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= l_out[i, k] * l_out[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                l_out[i, i] = math.sqrt(s)
            else:
                l_out[i, j] = s / l_out[j, j]
    return True


@njit(cache=True, nogil=True)
def _lgd_inverse_scalar(w_gamma, w_beta, a0, b0, lam, cap, s):
    """Smallest x with the mixture cdf >= s; cap on catastrophic draws."""
    top = (w_gamma * -math.expm1(-a0 * cap) + w_beta * -math.expm1(-b0 * cap)) / lam
    if s >= top:
        return cap
    lo = 0.0
    hi = cap
    while hi - lo > 1.0e-12:
        mid = 0.5 * (lo + hi)
        val = (w_gamma * -math.expm1(-a0 * mid) + w_beta * -math.expm1(-b0 * mid)) / lam
        if val >= s:
            hi = mid
        else:
            lo = mid
    return hi


@njit(cache=True, nogil=True)
def loss_paths(y_paths, z_paths, dt, psi, gamma, a0, b0, c0, r,
               clocks, sizes, loss_out, lambda_bar_out, n_jumps_out, status_out):
    """Thinning-free loss simulation: accrue the tilted cumulative intensity
    until it crosses an exponential clock, then draw the jump size from the
    mixture law at the crossing date.

    status per path: 0 ok, 1 negative intensity increment (internal
    inconsistency), 3 ran out of pre-generated draws (caller retries with a
    larger draw budget).
    """
    n, k_plus_1 = y_paths.shape
    n_steps = k_plus_1 - 1
    n_draws = clocks.shape[1]
    ea1 = math.exp(-a0)
    eb1 = math.exp(-b0)
    for i in range(n):
        l = 0.0
        ega = 1.0
        egb = 1.0
        tau_bar = 0.0
        lam_bar = 0.0
        nj = 0
        ci = 0
        u = clocks[i, ci]
        ci += 1
        status = 0
        loss_out[i, 0] = 0.0
        lambda_bar_out[i, 0] = 0.0
        for k in range(n_steps):
            if l < 1.0:
                lam = gamma * (ega - ea1) + (egb - eb1) * y_paths[i, k] + c0 * z_paths[i, k]
            else:
                lam = 0.0
            if lam < 0.0:
                status = 1
                break
            lam_bar += psi * lam * dt
            lambda_bar_out[i, k + 1] = lam_bar
            loss_out[i, k + 1] = l
            if l < 1.0 and lam_bar - tau_bar >= u:
                yk = y_paths[i, k + 1]
                zk = z_paths[i, k + 1]
                w_gamma = gamma * ega
                w_beta = yk * egb
                lamj = gamma * (ega - ea1) + (egb - eb1) * yk + c0 * zk
                if lamj > 0.0:
                    if ci >= n_draws or nj >= sizes.shape[1]:
                        status = 3
                        break
                    s = sizes[i, nj]
                    dl = _lgd_inverse_scalar(w_gamma, w_beta, a0, b0, lamj, 1.0 - l, s)
                    l = l + dl
                    if l > 1.0:
                        l = 1.0
                    loss_out[i, k + 1] = l
                    ega = math.exp(-a0 * l)
                    egb = math.exp(-b0 * l)
                    tau_bar = lam_bar
                    nj += 1
                    u = clocks[i, ci]
                    ci += 1
        n_jumps_out[i] = nj
        status_out[i] = status
    return 0
