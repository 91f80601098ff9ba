"""Coefficient ODE solver and the resulting bond-price coefficient curves.

A curve samples the functions A, B_y, B_z (and the running integrals of B_y,
B_z needed by intercept terms) on a regular maturity grid, one column per loss
level.  Columns are labelled by the *left* endpoint of the interval on which
they apply: coefficient lookup at loss level ``x`` is piecewise-constant to the
right of each label, levels at or above 1 price the riskless bond exactly.

Two build modes:

* :func:`build_curve` / :func:`solve_riccati` integrate with the exact,
  pointwise contract functions at each requested level.
* :func:`build_tranche_curve` applies the cell-averaged step approximation of
  the exponential loading, one column per tranche cell, which makes the
  loadings constant on cells and the measurement equation linear in the state.

Evaluation decomposes ``A(tau, x) = alpha(x) * tau + drift`` where the drift
part is the accumulated integral column, so the smooth within-cell variation
of ``alpha`` is kept exact even on tranche curves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .contract import contract_functions
from .errors import GridRangeError, RiccatiExplosionError
from .params import FactorState, LossState, ModelParams


def piecewise_beta_values(p: ModelParams, boundaries) -> np.ndarray:
    """Cell averages of the exponential loading over each tranche cell.

    Closed form of (1/dx) * int exp(-b0*x) - exp(-b0) dx on [lo, hi].
    """
    edges = np.asarray(boundaries, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("boundaries must be strictly increasing")
    if edges[0] < 0.0 or edges[-1] > 1.0:
        raise ValueError("boundaries must lie in [0, 1]")
    lo, hi = edges[:-1], edges[1:]
    if p.b0 == 0.0:
        return np.zeros(len(lo))
    width = hi - lo
    avg = (np.exp(-p.b0 * lo) - np.exp(-p.b0 * hi)) / (p.b0 * width) - math.exp(-p.b0)
    return avg


@dataclass(frozen=True)
class CoefficientCurve:
    """Sampled coefficient functions on a (tau, loss-level) grid."""

    params: ModelParams
    x_grid: np.ndarray
    tau_grid: np.ndarray
    a: np.ndarray
    b_y: np.ndarray
    b_z: np.ndarray
    b_y_integral: np.ndarray
    b_z_integral: np.ndarray
    beta_y_cols: np.ndarray
    cell_edges: np.ndarray | None = None

    @property
    def step(self) -> float:
        return float(self.tau_grid[1] - self.tau_grid[0])

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])

    @property
    def n_cols(self) -> int:
        return len(self.x_grid)

    @property
    def is_tranche_curve(self) -> bool:
        return self.cell_edges is not None

    # -- lookups -----------------------------------------------------------
    def column_of(self, x: float) -> int:
        """Column applying at loss level ``x``; -1 denotes the riskless bond."""
        if x < 0.0:
            raise ValueError("loss level must be nonnegative")
        if x >= 1.0:
            return -1
        if x < self.x_grid[0]:
            raise GridRangeError(f"loss level {x} below the sampled grid")
        return int(np.searchsorted(self.x_grid, x, side="right") - 1)

    def _pos(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < -1e-12) or np.any(tau > self.tau_max + 1e-9):
            raise GridRangeError(
                f"maturity outside the sampled grid [0, {self.tau_max}]"
            )
        pos = np.clip(tau, 0.0, self.tau_max) / self.step
        i0 = np.minimum(pos.astype(np.int64), len(self.tau_grid) - 2)
        w = pos - i0
        return i0, w

    def _interp(self, mat, tau):
        i0, w = self._pos(tau)
        return (1.0 - w)[..., None] * mat[i0] + w[..., None] * mat[i0 + 1]

    def by_at(self, tau):
        return self._interp(self.b_y, tau)

    def bz_at(self, tau):
        return self._interp(self.b_z, tau)

    def drift_at(self, tau):
        """Accumulated constant-drift part of A at maturities ``tau``."""
        mat = self.b_y_integral if self.params.is_one_factor else self.b_z_integral
        return self.params.drift_const * self._interp(mat, tau)

    def ibz_at(self, tau):
        return self._interp(self.b_z_integral, tau)

    def coeffs_at(self, tau: float, x: float):
        """(A, B_y, B_z) applying at loss level ``x`` and maturity ``tau``."""
        col = self.column_of(x)
        if col < 0:
            return self.params.r * tau, 0.0, 0.0
        alpha, _, _ = contract_functions(x, self.params)
        by = float(self._interp(self.b_y[:, col : col + 1], tau)[..., 0])
        bz = float(self._interp(self.b_z[:, col : col + 1], tau)[..., 0])
        drift = float(self.drift_at(tau)[..., col])
        return alpha * tau + drift, by, bz


def _build(p: ModelParams, labels, alphas, betas_y, betas_z, tau_max, step,
           cell_edges=None) -> CoefficientCurve:
    if tau_max <= 0.0:
        raise ValueError("tau_max must be positive")
    if not 0.0 < step <= tau_max:
        raise ValueError("step must lie in (0, tau_max]")
    n_steps = int(round(tau_max / step))
    a, by, bz, iby, ibz, blow_step, blow_col = _kernels.riccati_rk4(
        np.asarray(alphas, dtype=float),
        np.asarray(betas_y, dtype=float),
        np.asarray(betas_z, dtype=float),
        p.factor_kappa,
        p.rn_kappa_y,
        p.rn_kappa_z,
        0.5 * p.factor_sigma**2,
        0.5 * p.sigma_z**2,
        p.drift_const,
        p.is_one_factor,
        n_steps,
        step,
    )
    if blow_step >= 0:
        raise RiccatiExplosionError(blow_step * step, f"coefficient column {blow_col}")
    tau_grid = np.arange(n_steps + 1) * step
    return CoefficientCurve(
        params=p,
        x_grid=np.asarray(labels, dtype=float),
        tau_grid=tau_grid,
        a=a,
        b_y=by,
        b_z=bz,
        b_y_integral=iby,
        b_z_integral=ibz,
        beta_y_cols=np.asarray(betas_y, dtype=float),
        cell_edges=None if cell_edges is None else np.asarray(cell_edges, dtype=float),
    )


def build_curve(p: ModelParams, xs, tau_max: float, step: float = 1.0 / 360.0
                ) -> CoefficientCurve:
    """Integrate the coefficient ODEs with exact contract functions at each
    loss level in ``xs``."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if np.any(np.diff(xs) <= 0) and len(xs) > 1:
        raise ValueError("loss levels must be strictly increasing")
    alpha, beta_y, beta_z = contract_functions(xs, p)
    alpha = np.atleast_1d(alpha)
    beta_y = np.atleast_1d(beta_y)
    beta_z = np.atleast_1d(beta_z)
    return _build(p, xs, alpha, beta_y, beta_z, tau_max, step)


def solve_riccati(p: ModelParams, x: float, tau_max: float,
                  step: float = 1.0 / 360.0) -> CoefficientCurve:
    """Single-level curve at loss level ``x`` (exact contract functions)."""
    return build_curve(p, [x], tau_max, step)


def build_tranche_curve(p: ModelParams, boundaries, tau_max: float,
                        step: float = 1.0 / 360.0) -> CoefficientCurve:
    """One coefficient column per tranche cell, with the exponential loading
    replaced by its cell average (loadings constant on cells)."""
    edges = np.asarray(boundaries, dtype=float)
    beta_y = piecewise_beta_values(p, edges)
    labels = edges[:-1]
    alpha, _, _ = contract_functions(labels, p)
    beta_z = np.full(len(labels), p.c0)
    return _build(p, labels, np.atleast_1d(alpha), beta_y, beta_z, tau_max, step,
                  cell_edges=edges)


def bond_price(c: CoefficientCurve, f: FactorState, l: LossState, x: float,
               tau: float) -> float:
    """Price of the defaultable zero-recovery claim paying 1 iff the pool loss
    at maturity is at most ``x``."""
    if tau < 0.0:
        raise GridRangeError("maturity must be nonnegative")
    if l.l > x:
        return 0.0
    a, by, bz = c.coeffs_at(tau, x)
    z_eff = c.params.theta_z if c.params.is_one_factor else f.z
    return math.exp(-a - by * f.y - bz * z_eff)
