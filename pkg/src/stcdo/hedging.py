"""Variance-minimizing hedge ratios, the daily backtest ledger and the
reduction-in-volatility metric.

The hedge ratio projects the tranche gains dynamics onto the index gains
dynamics under the pricing measure:

    phi = - (Bt . Bi  +  int Ct(u) Ci(u) nu(du)) / (|Bi|^2 + int Ci(u)^2 nu(du))

with B the diffusion loading 2-vector of a position and C(u) the (negative)
value wiped out when a jump lifts the pool loss to u.  The jump-size measure
splits into two exponential densities plus the catastrophic atom; each density
is integrated by Gauss-Legendre after substituting its own exponential scale,
which concentrates nodes where the mass sits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import WipedOutTrancheError
from .params import FactorState, LossState, ModelParams
from .pricing import (
    TrancheSpec,
    _cells_overlapping,
    _remaining_coupons,
    _state_factor,
    gamma_survival_integral,
    time_integral_nodes,
)
from .riccati import CoefficientCurve

_GL8 = np.polynomial.legendre.leggauss(8)


class _ValuePricer:
    """Per-date cache of the value integrand of one position.

    The 'value' of the slice (a, b] of a tranche at time t is

        W(a, b) = int_a^b { kappa0 * sum_i P(t, T_i, x) + P(t, T_n, x)
                            + r * int_t^{T_n} P(t, u, x) du } dx,

    the bracket Corollary-style loadings integrate against.  Pillar maturities
    and per-cell state factors are computed once; slice integrals then reduce
    to Gauss-Legendre in x per overlapped cell.
    """

    def __init__(self, curve: CoefficientCurve, f: FactorState, l: LossState,
                 tr: TrancheSpec, t: float):
        self.curve = curve
        self.p = curve.params
        self.f = f
        self.l = l
        self.tr = tr
        coupon_taus = np.array(_remaining_coupons(tr, t))
        tau_n = tr.maturity - t
        time_taus, time_wts = time_integral_nodes(tau_n)
        self.taus = np.concatenate([coupon_taus, [tau_n], time_taus])
        kappa0 = tr.kappa0 if tr.kappa0 is not None else 0.0
        self.coefs = np.concatenate(
            [np.full(len(coupon_taus), kappa0), [1.0], self.p.r * time_wts]
        )
        self.cells = _cells_overlapping(curve, tr.x1, tr.x2)
        self.disc = np.exp(-self.p.r * self.taus)
        # (n_tau, n_cell) state factors and per-tau coefficient weights
        cols = [c[0] for c in self.cells]
        self.g = _state_factor(curve, f, self.taus, cols) * (
            self.coefs * self.disc
        )[:, None]
        self.by = curve.by_at(self.taus)[:, cols]
        self.bz = curve.bz_at(self.taus)[:, cols]

    def slice_value(self, a: float, b: float) -> float:
        """W(a, b) with the integration floor at the current loss level."""
        total = 0.0
        for k, (_, lo, hi) in enumerate(self.cells):
            lo_eff = max(lo, a, self.l.l)
            hi_eff = min(hi, b)
            if lo_eff >= hi_eff:
                continue
            xint = gamma_survival_integral(self.p, lo_eff, hi_eff, self.taus)
            total += float(self.g[:, k] @ xint)
        return total

    def wiped_value(self, u: float) -> float:
        """Value destroyed when the pool loss jumps to level u (>= 0)."""
        return self.slice_value(0.0, min(u, self.tr.x2))

    def diffusion_loading(self) -> np.ndarray:
        p = self.p
        z_eff = p.theta_z if p.is_one_factor else self.f.z
        wy = 0.0
        wz = 0.0
        for k, (_, lo, hi) in enumerate(self.cells):
            lo_eff = max(lo, self.l.l)
            if lo_eff >= hi:
                continue
            xint = gamma_survival_integral(p, lo_eff, hi, self.taus)
            wy += float((self.g[:, k] * self.by[:, k]) @ xint)
            wz += float((self.g[:, k] * self.bz[:, k]) @ xint)
        return np.array(
            [
                -p.factor_sigma * math.sqrt(self.f.y) * wy,
                -p.sigma_z * math.sqrt(z_eff) * wz,
            ]
        )


def diffusion_loading(curve: CoefficientCurve, f: FactorState, l: LossState,
                      tr: TrancheSpec, t: float) -> np.ndarray:
    """Brownian loading 2-vector of the discounted gains of the position."""
    if tr.kappa0 is None:
        raise ValueError("diffusion loading needs the contracted coupon kappa0")
    return _ValuePricer(curve, f, l, tr, t).diffusion_loading()


def _jump_density_segments(p: ModelParams, f: FactorState, l: LossState,
                           lo: float, edges):
    """(rate, scale) components of the jump-size density above ``lo``.

    The density in the post-jump loss level u on (l, 1) is
    gamma*a0*exp(-a0*u) + b0*exp(-b0*u)*y; each component gets its own
    exponential substitution per cell segment.
    """
    comps = []
    if p.gamma > 0.0 and p.a0 > 0.0:
        comps.append((p.a0, p.gamma))
    if f.y > 0.0 and p.b0 > 0.0:
        comps.append((p.b0, f.y))
    breaks = sorted({float(e) for e in edges if lo < e < 1.0} | {lo, 1.0})
    return comps, breaks


def jump_loading_product(curve: CoefficientCurve, f: FactorState, l: LossState,
                         tr_a: TrancheSpec, tr_b: TrancheSpec, t: float) -> float:
    """int C_a(u) C_b(u) nu(du) over jump targets u, atom included.

    Returns 0 when the jump measure vanishes (riskless configuration).
    """
    p = curve.params
    pa = _ValuePricer(curve, f, l, tr_a, t)
    pb = _ValuePricer(curve, f, l, tr_b, t)
    z_eff = p.theta_z if p.is_one_factor else f.z
    lo = max(l.l, min(tr_a.x1, tr_b.x1))
    edges = curve.cell_edges
    if edges is None:
        edges = np.append(curve.x_grid, 1.0)
    seg_edges = set(np.asarray(edges, dtype=float))
    seg_edges |= {tr_a.x1, tr_a.x2, tr_b.x1, tr_b.x2}
    comps, breaks = _jump_density_segments(p, f, l, lo, seg_edges)
    nodes, wts = _GL8
    total = 0.0
    for rate, scale in comps:
        for a, b in zip(breaks[:-1], breaks[1:]):
            va, vb = math.exp(-rate * a), math.exp(-rate * b)
            if va - vb <= 0.0:
                continue
            mid, half = 0.5 * (vb + va), 0.5 * (va - vb)
            v = mid + half * nodes
            u = -np.log(v) / rate
            vals = np.array(
                [pa.wiped_value(ui) * pb.wiped_value(ui) for ui in u]
            )
            total += scale * half * float(wts @ vals)
    atom = p.c0 * z_eff if l.l < 1.0 else 0.0
    if atom > 0.0:
        total += atom * pa.wiped_value(1.0) * pb.wiped_value(1.0)
    return total


def variance_min_phi(curve: CoefficientCurve, f: FactorState, l: LossState,
                     tr: TrancheSpec, index: TrancheSpec, t: float) -> float:
    """Variance-minimizing index position hedging a long tranche position."""
    b_tr = diffusion_loading(curve, f, l, tr, t)
    b_idx = diffusion_loading(curve, f, l, index, t)
    num = float(b_tr @ b_idx) + jump_loading_product(curve, f, l, tr, index, t)
    den = float(b_idx @ b_idx) + jump_loading_product(curve, f, l, index, index, t)
    if den <= 0.0:
        raise WipedOutTrancheError(
            "hedge undefined: index gains process is degenerate"
        )
    return -num / den


@dataclass(frozen=True)
class HedgeLedger:
    """Daily hedge audit: ratio, portfolio value, gains and P&L series."""

    times: np.ndarray
    phi: np.ndarray
    portfolio_value: np.ndarray
    daily_pl: np.ndarray
    pl_tranche: np.ndarray
    tranche_gains: np.ndarray
    index_gains: np.ndarray
    coupon_flags: np.ndarray

    @property
    def pl_hedged(self) -> np.ndarray:
        """Daily P&L of the hedged book (tranche plus index position)."""
        return self.pl_tranche + self.daily_pl


def _position_pl(times, loss, gamma, kappa0, x1, x2, coupon_dates, r, dt):
    """Daily P&L bracket of a unit long position in the (x1, x2] tranche."""
    k = len(times) - 1
    grow = math.exp(r * dt)
    pl = np.zeros(k + 1)
    cp = np.zeros(k + 1, dtype=bool)
    coupon_dates = np.asarray(coupon_dates, dtype=float)

    def notional(lv):
        return max(x2 - lv, 0.0) - max(x1 - lv, 0.0)

    for i in range(1, k + 1):
        on_coupon = bool(np.any(np.abs(coupon_dates - times[i]) < 1.0e-9))
        cp[i] = on_coupon
        coupon = kappa0 * notional(loss[i]) if on_coupon else 0.0
        writedown = notional(loss[i - 1]) - notional(loss[i])
        pl[i] = gamma[i] - gamma[i - 1] * grow + coupon - writedown
    return pl, cp


def backtest(
    times: np.ndarray,
    loss: np.ndarray,
    gamma_tranche: np.ndarray,
    gamma_index: np.ndarray,
    phi: np.ndarray,
    tr: TrancheSpec,
    index: TrancheSpec,
    r: float,
    dt: float,
) -> HedgeLedger:
    """Assemble the self-financing ledger for a hedged tranche position.

    ``phi[k]`` is the index position held over (t_k, t_{k+1}]; coupon dates
    must lie on the grid.  The tranche/index gains processes are the same
    recursion with unit position.
    """
    times = np.asarray(times, dtype=float)
    k = len(times) - 1
    for name, arr in (("loss", loss), ("gamma_tranche", gamma_tranche),
                      ("gamma_index", gamma_index)):
        if len(arr) != k + 1:
            raise ValueError(f"{name} must have {k + 1} entries, got {len(arr)}")
    if len(phi) != k:
        raise ValueError(f"phi must have {k} entries, got {len(phi)}")
    if tr.kappa0 is None or index.kappa0 is None:
        raise ValueError("both positions need their contracted coupons set")
    pl_idx, cp = _position_pl(times, loss, gamma_index, index.kappa0,
                              index.x1, index.x2, index.coupon_dates, r, dt)
    pl_tr, _ = _position_pl(times, loss, gamma_tranche, tr.kappa0,
                            tr.x1, tr.x2, tr.coupon_dates, r, dt)
    grow = math.exp(r * dt)
    value = np.zeros(k + 1)
    hedge_pl = np.zeros(k + 1)
    v_tr = np.zeros(k + 1)
    v_idx = np.zeros(k + 1)
    for i in range(1, k + 1):
        hedge_pl[i] = phi[i - 1] * pl_idx[i]
        value[i] = value[i - 1] * grow + hedge_pl[i]
        v_tr[i] = v_tr[i - 1] * grow + pl_tr[i]
        v_idx[i] = v_idx[i - 1] * grow + pl_idx[i]
    disc = np.exp(-r * times)
    return HedgeLedger(
        times=times,
        phi=np.asarray(phi, dtype=float),
        portfolio_value=value,
        daily_pl=hedge_pl,
        pl_tranche=pl_tr,
        tranche_gains=disc * v_tr,
        index_gains=disc * v_idx,
        coupon_flags=cp,
    )


def reduction_in_volatility(pl_hedged, pl_unhedged, weights=None) -> float:
    """100 x (std of hedged daily P&L) / (std of unhedged daily P&L).

    Optional per-observation probability weights produce weighted standard
    deviations (used with stress-scenario reweighting).
    """
    hedged = np.asarray(pl_hedged, dtype=float)
    unhedged = np.asarray(pl_unhedged, dtype=float)
    if hedged.shape != unhedged.shape:
        raise ValueError("P&L series must align")

    if weights is None:
        w = np.full(hedged.shape, 1.0 / len(hedged))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != hedged.shape:
            raise ValueError("weights must align with the P&L series")
        w = w / w.sum()

    def wstd(x):
        m = float(w @ x)
        return math.sqrt(max(float(w @ ((x - m) ** 2)), 0.0))

    denom = wstd(unhedged)
    if denom <= 0.0:
        raise ValueError("reduction undefined: unhedged volatility is zero")
    return 100.0 * wstd(hedged) / denom
