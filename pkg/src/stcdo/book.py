"""Vectorized scenario book: daily spot values, hedge ratios and ledgers for
whole batches of simulated paths at once.

Per day, everything scenario-specific enters through three numbers per path
(Y, Z, L); the expensive loss-dimension integrals therefore factor into
scenario-independent cell tables times per-scenario exponential state factors.
Jump-size integrals place their Gauss-Legendre nodes in each density
component's own exponential coordinate, which keeps nodes where the mass sits
regardless of cell widths.

The scalar operations in :mod:`stcdo.pricing` and :mod:`stcdo.hedging` are the
reference implementations; this engine is cross-checked against them in the
test suite and exists purely to make 2000-scenario hedging studies cheap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import FactorState, LossState
from .pricing import TrancheSpec, time_integral_nodes
from .riccati import CoefficientCurve

_GLX, _GLW = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class BookResult:
    """Per-scenario spot-value and hedge-ratio panels.

    ``gamma`` has shape (n_scenarios, n_days + 1, n_tranches + 1) with the
    index in the last slot; ``phi`` has shape (n_scenarios, n_days,
    n_tranches).
    """

    times: np.ndarray
    gamma: np.ndarray
    phi: np.ndarray
    tranches: tuple[TrancheSpec, ...]
    index: TrancheSpec


def _instrument_cells(spec: TrancheSpec, edges: np.ndarray) -> np.ndarray:
    lo = np.searchsorted(edges, spec.x1 + 1e-12) - 1
    hi = np.searchsorted(edges, spec.x2 - 1e-12)
    if abs(edges[lo] - spec.x1) > 1e-9 or abs(edges[hi] - spec.x2) > 1e-9:
        raise ValueError(
            f"tranche ({spec.x1}, {spec.x2}] must align with curve cells"
        )
    return np.arange(lo, hi)


def _gamma_part_nodes(p, lo: float, hi: float):
    """GL nodes/weights in x for int exp(-gamma(e^{-a0 x}-e^{-a0}) tau) dx."""
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    return mid + half * _GLX, half * _GLW


def _pre_matrix(p, x_nodes, taus):
    """exp(-(alpha(x) - r) * tau) at x-nodes (cols) and pillars (rows)."""
    gx = np.exp(-p.a0 * np.minimum(x_nodes, 1.0)) - math.exp(-p.a0)
    return np.exp(-p.gamma * np.multiply.outer(taus, gx))


class _DayEngine:
    """All shared tables for one valuation date."""

    def __init__(self, curve: CoefficientCurve, t: float, coupon_dates,
                 maturity: float, r: float):
        p = curve.params
        self.p = p
        self.curve = curve
        self.edges = np.asarray(curve.cell_edges, dtype=float)
        self.n_cells = len(self.edges) - 1
        coupon_taus = np.array([T - t for T in coupon_dates if T > t])
        tau_n = maturity - t
        ti_taus, ti_wts = time_integral_nodes(tau_n, nodes_per_segment=8,
                                              segment=1.0)
        self.taus = np.concatenate([coupon_taus, [tau_n], ti_taus])
        n_cp = len(coupon_taus)
        self.sl_cp = slice(0, n_cp)
        self.sl_tn = slice(n_cp, n_cp + 1)
        self.sl_ti = slice(n_cp + 1, None)
        self.ti_wts = ti_wts
        # leg coefficient template: coupon pillars weighted 1 (kappa0 applied
        # later), the terminal pillar 1, time pillars by quadrature weight * r
        self.legw = np.ones(len(self.taus))
        self.legw[self.sl_ti] = ti_wts * r
        self.disc = np.exp(-r * self.taus)
        self.by = curve.by_at(self.taus)
        self.bz = curve.bz_at(self.taus)
        self.drift = curve.drift_at(self.taus)
        # full-cell x integrals of the survival factor, discount folded in
        self.xfull = np.empty((len(self.taus), self.n_cells))
        self.xnodes = []
        self.xwts = []
        for c in range(self.n_cells):
            xs, ws = _gamma_part_nodes(p, self.edges[c], self.edges[c + 1])
            self.xnodes.append(xs)
            self.xwts.append(ws)
            self.xfull[:, c] = _pre_matrix(p, xs, self.taus) @ ws
        self.xfull *= self.disc[:, None]

    def state_factors(self, y, z):
        """exp(-drift - B_y Y - B_z Z) per (scenario, pillar, cell)."""
        z_eff = np.full_like(z, self.p.theta_z) if self.p.is_one_factor else z
        expo = (
            self.drift[None, :, :]
            + self.by[None, :, :] * y[:, None, None]
            + self.bz[None, :, :] * z_eff[:, None, None]
        )
        return np.exp(-expo)

    def partial_x_integral(self, lows, highs, taus_idx=None):
        """Discounted survival-factor x-integrals on per-scenario ranges.

        lows/highs: (m,) bounds; returns (m, P) with P the pillar count.
        """
        mid = 0.5 * (lows + highs)
        half = 0.5 * (highs - lows)
        xs = mid[:, None] + half[:, None] * _GLX[None, :]
        gx = np.exp(-self.p.a0 * np.minimum(xs, 1.0)) - math.exp(-self.p.a0)
        # (m, P, 8) exponent
        vals = np.exp(-self.p.gamma * gx[:, None, :] * self.taus[None, :, None])
        out = (vals @ _GLW) * half[:, None]
        return out * self.disc[None, :]


def _leg_pieces(eng: _DayEngine, g, xeff):
    """Per-scenario, per-cell leg sums with plain/B_y/B_z x-weightings.

    g: (n, P, C) state factors; xeff: (n, P, C) effective x-integrals.
    Returns dict leg -> (plain, by, bz) arrays of shape (n, C).
    """
    core = g * xeff
    out = {}
    for leg, sl, w in (
        ("cp", eng.sl_cp, None),
        ("tn", eng.sl_tn, None),
        ("ti", eng.sl_ti, eng.ti_wts),
    ):
        block = core[:, sl, :]
        if w is not None:
            block = block * w[None, :, None]
        plain = block.sum(axis=1)
        by = (block * eng.by[None, sl, :]).sum(axis=1)
        bz = (block * eng.bz[None, sl, :]).sum(axis=1)
        out[leg] = (plain, by, bz)
    return out


def _jump_components(p, y):
    """Density components (rate, per-scenario scale) of the jump-size law."""
    comps = []
    if p.gamma > 0.0 and p.a0 > 0.0:
        comps.append((p.a0, np.full_like(y, p.gamma)))
    if p.b0 > 0.0:
        comps.append((p.b0, y.copy()))
    return comps


def hedge_book(
    curve: CoefficientCurve,
    tranches: list[TrancheSpec],
    index: TrancheSpec,
    y_paths: np.ndarray,
    z_paths: np.ndarray,
    loss_paths: np.ndarray,
    dt: float,
) -> BookResult:
    """Daily spot values for all instruments and variance-minimizing hedge
    ratios for each tranche, across a whole scenario batch.

    All instruments must share the index's coupon schedule and align with the
    curve's tranche cells; ``kappa0`` must be set on every spec.
    """
    p = curve.params
    n, k_plus_1 = loss_paths.shape
    n_days = k_plus_1 - 1
    instruments = list(tranches) + [index]
    for spec in instruments:
        if spec.kappa0 is None:
            raise ValueError("all instruments need kappa0 set")
        if spec.coupon_dates != index.coupon_dates:
            raise ValueError("book engine assumes one shared coupon schedule")
    edges = np.asarray(curve.cell_edges, dtype=float)
    cells = [_instrument_cells(spec, edges) for spec in instruments]
    n_tr = len(tranches)
    times = np.arange(k_plus_1) * dt
    gamma = np.zeros((n, k_plus_1, len(instruments)))
    phi = np.zeros((n, n_days, n_tr))
    maturity = index.maturity

    for k in range(k_plus_1):
        t = times[k]
        if t >= maturity:
            break
        eng = _DayEngine(curve, t, index.coupon_dates, maturity, p.r)
        y = y_paths[:, k]
        z = z_paths[:, k]
        loss = loss_paths[:, k]
        g = eng.state_factors(y, z)  # (n, P, C)

        # effective x-integrals: zero dead cells, partial for the loss cell
        xeff = np.broadcast_to(eng.xfull[None, :, :], g.shape).copy()
        cell_lo = edges[:-1][None, :]
        cell_hi = edges[1:][None, :]
        dead = cell_hi <= loss[:, None]
        xeff[dead[:, None, :].repeat(len(eng.taus), axis=1)] = 0.0
        part = (loss[:, None] > cell_lo) & (loss[:, None] < cell_hi)
        part_s, part_c = np.nonzero(part)
        if len(part_s):
            lows = loss[part_s]
            highs = edges[part_c + 1]
            xpart = eng.partial_x_integral(lows, highs)  # (m, P)
            xeff[part_s, :, part_c] = xpart

        pieces = _leg_pieces(eng, g, xeff)

        # spot values
        for a, spec in enumerate(instruments):
            cs = cells[a]
            s_ann = pieces["cp"][0][:, cs].sum(axis=1)
            tn = pieces["tn"][0][:, cs].sum(axis=1)
            ti = pieces["ti"][0][:, cs].sum(axis=1)
            h_live = np.maximum(spec.x2 - np.maximum(spec.x1, loss), 0.0)
            v_prot = h_live - tn - p.r * ti
            gamma[:, k, a] = spec.kappa0 * s_ann - v_prot

        if k == n_days:
            break

        # diffusion loadings
        sqy = np.sqrt(np.maximum(y, 0.0))
        z_eff = np.full_like(z, p.theta_z) if p.is_one_factor else z
        sqz = np.sqrt(np.maximum(z_eff, 0.0))
        b_load = np.empty((n, 2, len(instruments)))
        for a, spec in enumerate(instruments):
            cs = cells[a]
            uy = (spec.kappa0 * pieces["cp"][1][:, cs].sum(axis=1)
                  + pieces["tn"][1][:, cs].sum(axis=1)
                  + p.r * pieces["ti"][1][:, cs].sum(axis=1))
            uz = (spec.kappa0 * pieces["cp"][2][:, cs].sum(axis=1)
                  + pieces["tn"][2][:, cs].sum(axis=1)
                  + p.r * pieces["ti"][2][:, cs].sum(axis=1))
            b_load[:, 0, a] = -p.factor_sigma * sqy * uy
            b_load[:, 1, a] = -p.sigma_z * sqz * uz

        jp = _jump_products(eng, instruments, cells, pieces, g, loss, y, z_eff)

        b_idx = b_load[:, :, -1]
        den = (b_idx**2).sum(axis=1) + jp[:, -1, -1]
        safe = den > 0.0
        for a in range(n_tr):
            num = (b_load[:, :, a] * b_idx).sum(axis=1) + jp[:, a, -1]
            phi[:, k, a] = np.where(safe, -num / np.where(safe, den, 1.0), 0.0)

    return BookResult(times=times, gamma=gamma, phi=phi,
                      tranches=tuple(tranches), index=index)


def _jump_products(eng: _DayEngine, instruments, cells, pieces, g, loss, y,
                   z_eff):
    """Pairwise jump-loading integrals against the index, plus index/index.

    Returns (n, n_instr, n_instr) filled only where needed: (a, -1) and
    (-1, -1); the symmetric slot (-1, a) mirrors.
    """
    p = eng.p
    n = len(loss)
    n_instr = len(instruments)
    edges = eng.edges
    comps = _jump_components(p, y)

    # full value per (scenario, cell) per instrument-leg combination
    plain = pieces["cp"][0], pieces["tn"][0], pieces["ti"][0]

    def cell_value(a, weights=None):
        """(n, C) per-cell position value for instrument a (zero off-range)."""
        spec = instruments[a]
        out = np.zeros_like(plain[0])
        cs = cells[a]
        out[:, cs] = (spec.kappa0 * plain[0][:, cs] + plain[1][:, cs]
                      + p.r * plain[2][:, cs])
        return out

    cellval = np.stack([cell_value(a) for a in range(n_instr)], axis=0)
    # cumulative value strictly below each cell
    cumbelow = np.concatenate(
        [np.zeros((n_instr, n, 1)), np.cumsum(cellval, axis=2)[:, :, :-1]],
        axis=2,
    )
    total = cellval.sum(axis=2)  # (n_instr, n)

    out = np.zeros((n, n_instr, n_instr))
    pair_rows = list(range(n_instr))  # rows a paired against the index column

    def c_at(nodes_u, node_cell, xleft, scen_idx):
        """C values (-wiped value) for every instrument at given u-nodes.

        nodes_u: (m,) u levels; node_cell: (m,) cell of each node;
        xleft: (m, P) partial x-integrals from the node's cell floor (already
        loss-clipped) up to u; scen_idx: (m,) scenario of each node.
        Returns (n_instr, m).
        """
        m = len(nodes_u)
        cvals = np.empty((n_instr, m))
        gsel = g[scen_idx, :, node_cell]  # (m, P)
        for a in range(n_instr):
            spec = instruments[a]
            w = eng.legw.copy()
            w[eng.sl_cp] = spec.kappa0
            in_range = np.isin(node_cell, cells[a])
            partial = np.where(in_range, (gsel * (w[None, :] * xleft)).sum(axis=1), 0.0)
            base = cumbelow[a, scen_idx, node_cell]
            # clip at detachment: nodes above x2 wipe the whole position
            above = nodes_u >= instruments[a].x2
            cvals[a] = np.where(above, -total[a, scen_idx],
                                -(base + partial))
            below = nodes_u <= instruments[a].x1
            cvals[a] = np.where(below, 0.0, cvals[a])
        return cvals

    # ---- shared nodes: cells fully above the loss level -------------------
    for rate, scale in comps:
        for c in range(eng.n_cells):
            a_edge, b_edge = float(edges[c]), float(edges[c + 1])
            va, vb = math.exp(-rate * a_edge), math.exp(-rate * b_edge)
            if va - vb <= 1e-300:
                continue
            mid, half = 0.5 * (va + vb), 0.5 * (va - vb)
            v = mid + half * _GLX
            u = -np.log(v) / rate
            wts = half * _GLW  # integrate f dv
            # x-integral from the cell floor up to u (scenario independent)
            xleft = eng.partial_x_integral(np.full(len(u), a_edge), u)
            alive = loss <= a_edge + 1e-15  # cell fully alive for scenario
            scen = np.nonzero(alive)[0]
            if not len(scen):
                continue
            nodes_u = np.tile(u, len(scen))
            node_cell = np.full(len(nodes_u), c)
            scen_idx = np.repeat(scen, len(u))
            xl = np.tile(xleft, (len(scen), 1))
            cvals = c_at(nodes_u, node_cell, xl, scen_idx)
            cvals = cvals.reshape(n_instr, len(scen), len(u))
            w_tot = wts[None, :] * scale[scen, None]
            ci = cvals[-1]
            for a in pair_rows:
                out[scen, a, -1] += ((cvals[a] * ci) * w_tot).sum(axis=1)

    # ---- per-scenario nodes: the cell containing the loss level -----------
    cell_lo = edges[:-1]
    cell_hi = edges[1:]
    for rate, scale in comps:
        in_cell = (loss[:, None] > cell_lo[None, :] + 1e-15) & (
            loss[:, None] < cell_hi[None, :]
        )
        scen, cell_of = np.nonzero(in_cell)
        if not len(scen):
            continue
        a_s = loss[scen]
        b_s = cell_hi[cell_of]
        va = np.exp(-rate * a_s)
        vb = np.exp(-rate * b_s)
        ok = va - vb > 1e-300
        scen, cell_of, a_s, b_s, va, vb = (
            arr[ok] for arr in (scen, cell_of, a_s, b_s, va, vb)
        )
        if not len(scen):
            continue
        mid, half = 0.5 * (va + vb), 0.5 * (va - vb)
        v = mid[:, None] + half[:, None] * _GLX[None, :]
        u = -np.log(v) / rate  # (m, 8)
        wts = half[:, None] * _GLW[None, :]
        m = len(scen)
        lows = np.repeat(a_s, 8)
        xleft = eng.partial_x_integral(lows, u.ravel())
        cvals = c_at(u.ravel(), np.repeat(cell_of, 8), xleft, np.repeat(scen, 8))
        cvals = cvals.reshape(n_instr, m, 8)
        w_tot = wts * scale[scen, None]
        ci = cvals[-1]
        for a in pair_rows:
            out[scen, a, -1] += ((cvals[a] * ci) * w_tot).sum(axis=1)

    # ---- catastrophic atom -------------------------------------------------
    atom = p.c0 * z_eff * (loss < 1.0)
    if np.any(atom > 0.0):
        c_end = -total  # C at u = 1 wipes everything that was alive
        ci = c_end[-1]
        for a in pair_rows:
            out[:, a, -1] += atom * c_end[a] * ci
    return out


# ---------------------------------------------------------------------------
# vectorized ledger
# ---------------------------------------------------------------------------

def position_pl_matrix(times, loss, gamma, spec: TrancheSpec, r: float,
                       dt: float):
    """Daily P&L of a unit position, vectorized over scenarios.

    Mirrors the scalar ledger in :mod:`stcdo.hedging`; tested to agree with it
    elementwise.
    """
    grow = math.exp(r * dt)
    coupon_dates = np.asarray(spec.coupon_dates, dtype=float)
    on_coupon = np.zeros(len(times), dtype=bool)
    for i, t in enumerate(times):
        on_coupon[i] = bool(np.any(np.abs(coupon_dates - t) < 1e-9))
    notional = np.maximum(spec.x2 - loss, 0.0) - np.maximum(spec.x1 - loss, 0.0)
    pl = np.zeros_like(gamma)
    pl[:, 1:] = (
        gamma[:, 1:]
        - gamma[:, :-1] * grow
        + np.where(on_coupon[1:][None, :], spec.kappa0 * notional[:, 1:], 0.0)
        - (notional[:, :-1] - notional[:, 1:])
    )
    return pl


def book_reductions(result: BookResult, loss_paths: np.ndarray, r: float,
                    dt: float):
    """Per-scenario reduction-in-volatility for each hedged tranche.

    Returns (rv, pl_tranche, pl_hedge): rv has shape (n_scenarios,
    n_tranches), NaN where the unhedged position shows no P&L variance.
    """
    times = result.times
    n, _, _ = result.gamma.shape
    n_tr = len(result.tranches)
    pl_idx = position_pl_matrix(times, loss_paths, result.gamma[:, :, -1],
                                result.index, r, dt)
    rv = np.full((n, n_tr), np.nan)
    pl_tr_all = []
    pl_hedge_all = []
    for a, spec in enumerate(result.tranches):
        pl_tr = position_pl_matrix(times, loss_paths, result.gamma[:, :, a],
                                   spec, r, dt)
        pl_hedge = np.zeros_like(pl_tr)
        pl_hedge[:, 1:] = result.phi[:, :, a] * pl_idx[:, 1:]
        hedged = pl_tr + pl_hedge
        sd_u = pl_tr[:, 1:].std(axis=1)
        sd_h = hedged[:, 1:].std(axis=1)
        good = sd_u > 0.0
        rv[good, a] = 100.0 * sd_h[good] / sd_u[good]
        pl_tr_all.append(pl_tr)
        pl_hedge_all.append(pl_hedge)
    return rv, pl_tr_all, pl_hedge_all
