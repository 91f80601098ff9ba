"""Tranche legs, par coupons, spot values and the discount/spread transforms.

All loss-dimension integrals run 16-node Gauss-Legendre per tranche cell (the
integrands are smooth inside cells); the protection-leg time integral uses the
same rule composited per quarter-year.  Integrals start at the current loss
level: bonds below it are dead and contribute nothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import WipedOutTrancheError
from .params import FactorState, LossState, ModelParams
from .riccati import CoefficientCurve

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_QUARTER = 0.25


@dataclass(frozen=True)
class TrancheSpec:
    """Attachment/detachment pair with its coupon schedule.

    ``kappa0`` is the contracted running coupon; it stays None until issuance
    (spot values need it, legs and par coupons do not).  (0, 1] is the index.
    """

    x1: float
    x2: float
    coupon_dates: tuple[float, ...]
    kappa0: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.x1 < self.x2 <= 1.0:
            raise ValueError("need 0 <= x1 < x2 <= 1")
        if any(b <= a for a, b in zip(self.coupon_dates, self.coupon_dates[1:])):
            raise ValueError("coupon dates must be strictly increasing")
        if len(self.coupon_dates) == 0:
            raise ValueError("at least one coupon date required")

    @property
    def maturity(self) -> float:
        return self.coupon_dates[-1]

    @property
    def is_index(self) -> bool:
        return self.x1 == 0.0 and self.x2 == 1.0

    def with_coupon(self, kappa0: float) -> "TrancheSpec":
        return replace(self, kappa0=kappa0)

    def notional(self, l: float) -> float:
        """Surviving tranche notional H(l) = (x2-l)^+ - (x1-l)^+."""
        return max(self.x2 - l, 0.0) - max(self.x1 - l, 0.0)


def quarterly_coupon_dates(maturity_years: float, steps_per_year: int = 250
                           ) -> tuple[float, ...]:
    """Approximately quarterly coupon dates snapped onto the business-day grid."""
    n = int(round(4 * maturity_years))
    return tuple(
        math.floor(0.25 * i * steps_per_year + 0.5) / steps_per_year
        for i in range(1, n + 1)
    )


def gamma_survival_integral(p: ModelParams, lo: float, hi: float, taus):
    """int_lo^hi exp(-gamma*(e^{-a0 (x^1)} - e^{-a0}) * tau) dx, per tau."""
    taus = np.asarray(taus, dtype=float)
    if hi <= lo:
        return np.zeros(taus.shape)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    x = mid + half * _GL_NODES
    gx = np.exp(-p.a0 * np.minimum(x, 1.0)) - math.exp(-p.a0)
    vals = np.exp(-p.gamma * np.multiply.outer(taus, gx))
    return half * (vals @ _GL_WEIGHTS)


def _cells_overlapping(curve: CoefficientCurve, x1: float, x2: float):
    """(column, lo, hi) triples covering (x1, x2] on the curve's cells."""
    edges = curve.cell_edges
    if edges is None:
        edges = np.append(curve.x_grid, 1.0)
    out = []
    for j in range(len(edges) - 1):
        lo = max(float(edges[j]), x1)
        hi = min(float(edges[j + 1]), x2)
        if hi > lo:
            out.append((j, lo, hi))
    return out


def _state_factor(curve: CoefficientCurve, f: FactorState, taus, cols):
    """exp(-drift - B_y * y - B_z * z) per (tau, column)."""
    p = curve.params
    z_eff = p.theta_z if p.is_one_factor else f.z
    drift = curve.drift_at(taus)[..., cols]
    by = curve.by_at(taus)[..., cols]
    bz = curve.bz_at(taus)[..., cols]
    return np.exp(-(drift + by * f.y + bz * z_eff))


def tranche_bond_integral(curve: CoefficientCurve, f: FactorState, l: LossState,
                          x1: float, x2: float, taus, lower: float | None = None):
    """int over the loss range of P(t, t+tau, x) dx, elementwise in ``taus``.

    ``lower`` overrides the integration floor (defaults to the current loss).
    """
    p = curve.params
    taus = np.asarray(taus, dtype=float)
    floor = l.l if lower is None else lower
    total = np.zeros(taus.shape)
    for j, lo, hi in _cells_overlapping(curve, x1, x2):
        lo_eff = max(lo, floor)
        if lo_eff >= hi:
            continue
        g = _state_factor(curve, f, taus, j)
        total = total + g * gamma_survival_integral(p, lo_eff, hi, taus)
    return np.exp(-p.r * taus) * total


def tranche_discount(curve: CoefficientCurve, f: FactorState, l: LossState,
                     j: int, tau: float) -> float:
    """Width-normalized zero-coupon discount factor of tranche cell ``j``."""
    edges = curve.cell_edges
    if edges is None:
        edges = np.append(curve.x_grid, 1.0)
    if not 0 <= j < len(edges) - 1:
        raise IndexError(f"tranche index {j} out of range")
    lo, hi = float(edges[j]), float(edges[j + 1])
    if l.l >= hi:
        return 0.0
    val = tranche_bond_integral(curve, f, l, lo, hi, float(tau))
    return float(val) / (hi - lo)


def zero_spread(d: float, tau: float, r: float) -> float:
    """Continuously-compounded zero spread implied by a tranche discount."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if d <= 0.0:
        raise WipedOutTrancheError("spread undefined for a wiped-out tranche")
    return -math.log(d) / tau - r


def _remaining_coupons(tr: TrancheSpec, t: float):
    return [T - t for T in tr.coupon_dates if T > t]


def time_integral_nodes(tau_n: float, nodes_per_segment: int = 16,
                        segment: float = _QUARTER):
    """Composite Gauss-Legendre nodes/weights on [0, tau_n]."""
    if tau_n <= 0.0:
        return np.zeros(0), np.zeros(0)
    n_seg = max(1, int(math.ceil(tau_n / segment - 1e-12)))
    bounds = np.linspace(0.0, tau_n, n_seg + 1)
    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes_per_segment)
    mids = 0.5 * (bounds[1:] + bounds[:-1])
    halves = 0.5 * (bounds[1:] - bounds[:-1])
    taus = (mids[:, None] + halves[:, None] * gl_x).ravel()
    wts = (halves[:, None] * gl_w).ravel()
    return taus, wts


def annuity(curve: CoefficientCurve, f: FactorState, l: LossState,
            tr: TrancheSpec, t: float) -> float:
    """Present value of one unit of running coupon on the surviving notional."""
    taus = _remaining_coupons(tr, t)
    if not taus or l.l >= tr.x2:
        return 0.0
    vals = tranche_bond_integral(curve, f, l, tr.x1, tr.x2, np.array(taus))
    return float(vals.sum())


def protection_leg(curve: CoefficientCurve, f: FactorState, l: LossState,
                   tr: TrancheSpec, t: float) -> float:
    """Value of the default-payment leg up to the final coupon date."""
    tau_n = tr.maturity - t
    if tau_n < 0.0:
        raise ValueError("valuation after maturity")
    if l.l >= tr.x2:
        return 0.0
    first = max(tr.x2 - max(tr.x1, l.l), 0.0)
    terminal = float(tranche_bond_integral(curve, f, l, tr.x1, tr.x2, tau_n))
    taus, wts = time_integral_nodes(tau_n)
    running = float(
        wts @ tranche_bond_integral(curve, f, l, tr.x1, tr.x2, taus)
    ) if len(taus) else 0.0
    return first - terminal - curve.params.r * running


def par_coupon(curve: CoefficientCurve, f: FactorState, l: LossState,
               tr: TrancheSpec, t: float) -> float:
    """Coupon rate equating the two legs."""
    s = annuity(curve, f, l, tr, t)
    if s <= 0.0:
        raise WipedOutTrancheError(
            "par coupon undefined: tranche wiped out or no remaining coupons"
        )
    return protection_leg(curve, f, l, tr, t) / s


def spot_value(curve: CoefficientCurve, f: FactorState, l: LossState,
               tr: TrancheSpec, t: float) -> float:
    """Mark-to-model of a long position paying ``kappa0`` on the tranche."""
    if tr.kappa0 is None:
        raise ValueError("spot value needs the contracted coupon kappa0")
    if l.l >= tr.x2:
        return 0.0
    s = annuity(curve, f, l, tr, t)
    if s <= 0.0:
        return 0.0
    return (tr.kappa0 - par_coupon(curve, f, l, tr, t)) * s
