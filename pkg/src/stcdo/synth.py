"""Synthetic spread-panel generation (the toolkit's test-data source).

Factors follow the true square-root dynamics (Euler with intra-day substeps
under the historical measure); spreads are the exact measurement equation plus
independent Gaussian noise with the per-tranche variances from the parameter
set.  No default event occurs: the panel loss level is identically zero,
matching how the filter is run.
"""
from __future__ import annotations

import datetime as _dt

import numpy as np

from .kalman import measurement_matrices
from .moments import mean_map, variance_affine
from .panel import DEFAULT_DT, ObservationPanel
from .params import ModelParams
from .riccati import build_tranche_curve
from .rng import substream

_SUBSTEPS = 10


def synthetic_states(p: ModelParams, n_dates: int, dt: float, seed: int,
                     y0: float | None = None, z0: float | None = None,
                     scheme: str = "gaussian") -> np.ndarray:
    """Factor levels at observation dates, shape (n_dates, 2).

    Starts at the stationary mean unless an explicit state is given; the first
    panel date already carries one observation gap of evolution.

    ``scheme='gaussian'`` draws transitions from the exact conditional mean and
    covariance with Gaussian innovations (clamped to the cone), i.e. the same
    law the filter assumes; estimator audits on such panels test the
    calibration machinery itself.  ``scheme='euler'`` sub-steps the true
    square-root dynamics instead.
    """
    y = p.theta_z if y0 is None else y0
    z = p.theta_z if z0 is None else z0
    rng = substream(seed, 0, "synth")
    out = np.empty((n_dates, 2))
    one_factor = p.is_one_factor
    if scheme == "gaussian":
        m0, m1 = mean_map(p, dt)
        qc, qy, qz = variance_affine(p, dt)
        state = np.array([max(y, 0.0), max(z, 0.0) if not one_factor else p.theta_z])
        for k in range(n_dates):
            q = qc + qy * state[0] + qz * state[1]
            w, v = np.linalg.eigh(0.5 * (q + q.T))
            root = v * np.sqrt(np.maximum(w, 0.0))
            state = m0 + m1 @ state + root @ rng.standard_normal(2)
            state = np.maximum(state, 0.0)
            if one_factor:
                state[1] = p.theta_z
            out[k] = state
        return out
    if scheme != "euler":
        raise ValueError("scheme must be 'gaussian' or 'euler'")
    h = dt / _SUBSTEPS
    sq = np.sqrt(h)
    k_live, s_live = p.factor_kappa, p.factor_sigma
    for k in range(n_dates):
        w = rng.standard_normal((_SUBSTEPS, 2))
        for m in range(_SUBSTEPS):
            yp, zp = max(y, 0.0), max(z, 0.0)
            if one_factor:
                y = y + k_live * (p.theta_z - yp) * h + s_live * np.sqrt(yp) * sq * w[m, 0]
                z = p.theta_z
            else:
                y = y + p.kappa_y * (zp - yp) * h + p.sigma_y * np.sqrt(yp) * sq * w[m, 0]
                z = z + p.kappa_z * (p.theta_z - zp) * h + p.sigma_z * np.sqrt(zp) * sq * w[m, 1]
        out[k, 0] = max(y, 0.0)
        out[k, 1] = p.theta_z if one_factor else max(z, 0.0)
    return out


def _business_dates(n: int, start: str = "2006-08-30") -> tuple[str, ...]:
    day = _dt.date.fromisoformat(start)
    out = []
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += _dt.timedelta(days=1)
    return tuple(out)


def generate_panel(
    p: ModelParams,
    boundaries,
    maturities,
    n_dates: int,
    seed: int,
    dt: float = DEFAULT_DT,
    missing_rate: float = 0.0,
    start_date: str = "2006-08-30",
    states: np.ndarray | None = None,
    scheme: str = "gaussian",
):
    """Simulate a spread panel; returns (panel, states).

    ``missing_rate`` masks entries independently at random (never a whole
    date).  Pass ``states`` to reuse a pre-simulated factor path; otherwise
    they are drawn per ``scheme`` (see :func:`synthetic_states`).
    """
    boundaries = np.asarray(boundaries, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    n_j = len(boundaries) - 1
    if p.n_tranches != n_j:
        raise ValueError("params must carry one noise variance per tranche")
    if states is None:
        states = synthetic_states(p, n_dates, dt, seed, scheme=scheme)
    curve = build_tranche_curve(p, boundaries, float(maturities.max()))
    c_vec, b_mat = measurement_matrices(p, curve, maturities)
    clean = c_vec[None, :] + states @ b_mat.T
    noise_rng = substream(seed, 1, "noise")
    sd = np.sqrt(np.repeat(np.asarray(p.h, dtype=float), len(maturities)))
    spreads = clean + noise_rng.standard_normal(clean.shape) * sd[None, :]
    mask = np.ones(spreads.shape, dtype=bool)
    if missing_rate > 0.0:
        mask_rng = substream(seed, 2, "noise")
        mask = mask_rng.random(spreads.shape) >= missing_rate
        # never drop an entire date
        empty = ~mask.any(axis=1)
        mask[empty, 0] = True
    spreads = np.where(mask, spreads, np.nan)
    panel = ObservationPanel(
        dates=_business_dates(n_dates, start_date),
        maturities=maturities,
        boundaries=boundaries,
        spreads=spreads,
        mask=mask,
        dt=dt,
    )
    return panel, states
