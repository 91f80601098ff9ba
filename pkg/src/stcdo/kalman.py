"""Linear measurement/transition construction and the masked filter pass.

The spread of tranche cell j at time-to-maturity tau is affine in the factors
once the exponential loading is replaced by its cell average:

    R = C(tau, j) + B_y(tau, j)/tau * Y + B_z(tau, j)/tau * Z + noise,

with noise variance depending on the tranche only.  The state evolves by the
exact conditional-mean map with Gaussianized innovations whose covariance is
the exact conditional covariance evaluated at the (clamped) previous filtered
state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .moments import mean_map, uncond_moments, variance_affine
from .panel import ObservationPanel
from .params import ModelParams
from .pricing import gamma_survival_integral
from .riccati import CoefficientCurve, build_tranche_curve, piecewise_beta_values

DEFAULT_STEP = 1.0 / 360.0


def piecewise_beta(p: ModelParams, boundaries) -> np.ndarray:
    """Cell averages of the exponential loading (closed form)."""
    return piecewise_beta_values(p, boundaries)


def measurement_model(p: ModelParams, curve: CoefficientCurve, tau: float, j: int):
    """Intercept and factor loadings of the spread equation for cell ``j``.

    Returns (intercept, loading_y, loading_z).
    """
    edges = curve.cell_edges
    if edges is None:
        raise ValueError("measurement model needs a tranche curve")
    lo, hi = float(edges[j]), float(edges[j + 1])
    width = hi - lo
    drift = float(curve.drift_at(tau)[..., j])
    gint = float(gamma_survival_integral(p, lo, hi, tau))
    intercept = (math.log(width) + drift - math.log(gint)) / tau
    load_y = float(curve.by_at(tau)[..., j]) / tau
    load_z = float(curve.bz_at(tau)[..., j]) / tau
    return intercept, load_y, load_z


def measurement_matrices(p: ModelParams, curve: CoefficientCurve, maturities):
    """Stacked intercept vector and loading matrix, column ``j * I + i``."""
    maturities = np.asarray(maturities, dtype=float)
    n_i = len(maturities)
    n_j = len(curve.cell_edges) - 1
    c_vec = np.empty(n_i * n_j)
    b_mat = np.empty((n_i * n_j, 2))
    for j in range(n_j):
        for i, tau in enumerate(maturities):
            c, ly, lz = measurement_model(p, curve, float(tau), j)
            col = j * n_i + i
            c_vec[col] = c
            b_mat[col, 0] = ly
            b_mat[col, 1] = lz
    return c_vec, b_mat


def transition_model(p: ModelParams, prev_state, dt: float):
    """Affine state propagation (M0, M1, Q) over one observation gap.

    Q is the exact conditional covariance at the clamped previous state,
    symmetrized and eigenvalue-floored at zero.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    y = max(float(prev_state[0]), 0.0)
    z = max(float(prev_state[1]), 0.0)
    m0, m1 = mean_map(p, dt)
    qc, qy, qz = variance_affine(p, dt)
    q = qc + qy * y + qz * z
    q = 0.5 * (q + q.T)
    w, v = np.linalg.eigh(q)
    q = (v * np.maximum(w, 0.0)) @ v.T
    return m0, m1, 0.5 * (q + q.T)


@dataclass(frozen=True)
class FilterOutput:
    """Per-date filter artifacts plus the accumulated quasi log-likelihood."""

    loglik: float
    filtered_states: np.ndarray
    predicted_states: np.ndarray
    filtered_covs: np.ndarray
    predicted_covs: np.ndarray
    innovations: np.ndarray | None
    innovation_covs: np.ndarray | None
    n_observed: np.ndarray


def _initial_conditions(p: ModelParams):
    u = uncond_moments(p)
    x0 = np.array([u.mean_y, u.mean_z])
    p0 = np.array([[u.var_y, u.cov_yz], [u.cov_yz, u.var_z]])
    return x0, p0


def kalman_pass(
    p: ModelParams,
    panel: ObservationPanel,
    curve: CoefficientCurve | None = None,
    store_details: bool = True,
    q_override: np.ndarray | None = None,
    jitter: float = 1.0e-10,
) -> FilterOutput:
    """Run the masked prediction/update recursion over the whole panel.

    The filter starts from the stationary moments; filtered states are clamped
    to the nonnegative cone after each update.  A numerically singular
    innovation covariance is retried once with diagonal jitter; failing that
    (or a non-finite likelihood) raises ArithmeticError naming the date.
    """
    if p.n_tranches != panel.n_tranches:
        raise ValueError(
            f"params carry {p.n_tranches} tranche variances, panel has "
            f"{panel.n_tranches} tranches"
        )
    if curve is None:
        curve = build_tranche_curve(
            p, panel.boundaries, float(np.max(panel.maturities)), DEFAULT_STEP
        )
    c_vec, b_mat = measurement_matrices(p, curve, panel.maturities)
    h_diag = np.repeat(np.asarray(p.h, dtype=float), panel.n_maturities)
    m0, m1 = mean_map(p, panel.dt)
    if q_override is not None:
        qc = np.asarray(q_override, dtype=float)
        qy = np.zeros((2, 2))
        qz = np.zeros((2, 2))
    else:
        qc, qy, qz = variance_affine(p, panel.dt)
    x0, p0 = _initial_conditions(p)
    obs = np.where(panel.mask, panel.spreads, 0.0)
    mask = panel.mask.astype(np.bool_)
    k, m = obs.shape
    if store_details:
        innov = np.full((k, m), np.nan)
        fmat = np.full((k, m, m), np.nan)
    else:
        innov = np.zeros((1, 1))
        fmat = np.zeros((1, 1, 1))
    status, bad, loglik, xp, xf, pp, pf, d_all = _kernels.kalman_core(
        obs, mask, c_vec, b_mat, h_diag, m0, m1, qc, qy, qz,
        x0, p0, jitter, store_details, innov, fmat,
    )
    if status == 1:
        raise ArithmeticError(
            f"innovation covariance numerically singular at date "
            f"{panel.dates[bad]} (index {bad})"
        )
    if status == 2:
        raise ArithmeticError(
            f"non-finite log-likelihood at date {panel.dates[bad]} (index {bad})"
        )
    return FilterOutput(
        loglik=float(loglik),
        filtered_states=xf,
        predicted_states=xp,
        filtered_covs=pf,
        predicted_covs=pp,
        innovations=innov if store_details else None,
        innovation_covs=fmat if store_details else None,
        n_observed=d_all,
    )
