"""Conditional and unconditional factor moments.

The first two conditional moments of the affine pair (Y, Z) are polynomials in
the starting state whose coefficient functions solve small linear ODE systems
with constant coefficients.  We solve those systems exactly as sums of
exponentials (`_ExpSum`), which yields closed forms for the conditional mean
vector and covariance matrix; the printed closed form of the Y-variance in the
source material is garbled, so the variance here is assembled from the
coefficient systems directly.  Two independent oracles cross-check the result:
a fixed-step RK4 integration of the same coefficient ODES
(:func:`appendix_coefficient_oracle`) and a full-truncation Euler Monte Carlo
(:func:`mc_moment_oracle`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .params import ModelParams
from .rng import substream

_RESONANCE_TOL = 1.0e-9


@dataclass(frozen=True)
class MomentSet:
    """First two (co)moments of the factor pair over a horizon."""

    mean_y: float
    mean_z: float
    var_y: float
    var_z: float
    cov_yz: float
    horizon: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.mean_y, self.mean_z, self.var_y, self.var_z, self.cov_yz]
        )


class _ExpSum:
    """Finite sum  tau -> sum_i c_i * exp(-r_i * tau), kept as {rate: coef}."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = dict(terms) if terms else {}

    def __add__(self, other):
        out = dict(self.terms)
        for r, c in other.terms.items():
            out[r] = out.get(r, 0.0) + c
        return _ExpSum(out)

    def scaled(self, s):
        return _ExpSum({r: c * s for r, c in self.terms.items()})

    def value(self, tau):
        return sum(c * math.exp(-r * tau) for r, c in sorted(self.terms.items()))


def _solve_decay(decay: float, forcing: _ExpSum, init: float) -> _ExpSum:
    """Exact solution of  phi' = -decay*phi + forcing,  phi(0) = init."""
    out = {decay: init}
    for m, a in forcing.terms.items():
        if abs(decay - m) < _RESONANCE_TOL:
            raise ZeroDivisionError(
                f"resonant decay rates {decay} ~ {m}; parameters sit on a "
                "singular manifold"
            )
        w = a / (decay - m)
        out[m] = out.get(m, 0.0) + w
        out[decay] = out.get(decay, 0.0) - w
    return _ExpSum(out)


@lru_cache(maxsize=64)
def _coefficient_sums(ky: float, kz: float, th: float, sy: float, sz: float):
    """All coefficient functions of the two-factor moment polynomials.

    Returns a dict with the mean systems (h*, g*) and the second-moment
    systems (p* for Y^2, q* for Z^2, f* for YZ).
    """
    zero = _ExpSum()
    kzth = kz * th
    sy2, sz2 = sy * sy, sz * sz
    c = {}
    # E[Y] = h0 + hy*y + hz*z
    c["hy"] = _solve_decay(ky, zero, 1.0)
    c["hz"] = _solve_decay(kz, c["hy"].scaled(ky), 0.0)
    c["h0"] = _solve_decay(0.0, c["hz"].scaled(kzth), 0.0)
    # E[Z] = g0 + gz*z
    c["gz"] = _solve_decay(kz, zero, 1.0)
    c["g0"] = _solve_decay(0.0, c["gz"].scaled(kzth), 0.0)
    # E[Y^2] = p0 + py*y + pz*z + pz2*z^2 + pzy*z*y + py2*y^2
    c["py2"] = _solve_decay(2.0 * ky, zero, 1.0)
    c["pzy"] = _solve_decay(ky + kz, c["py2"].scaled(2.0 * ky), 0.0)
    c["pz2"] = _solve_decay(2.0 * kz, c["pzy"].scaled(ky), 0.0)
    c["py"] = _solve_decay(ky, c["pzy"].scaled(kzth) + c["py2"].scaled(sy2), 0.0)
    c["pz"] = _solve_decay(
        kz, c["py"].scaled(ky) + c["pz2"].scaled(2.0 * kzth + sz2), 0.0
    )
    c["p0"] = _solve_decay(0.0, c["pz"].scaled(kzth), 0.0)
    # E[Z^2] = q0 + qz*z + qz2*z^2   (the y-coefficients vanish identically)
    c["qz2"] = _solve_decay(2.0 * kz, zero, 1.0)
    c["qz"] = _solve_decay(kz, c["qz2"].scaled(2.0 * kzth + sz2), 0.0)
    c["q0"] = _solve_decay(0.0, c["qz"].scaled(kzth), 0.0)
    # E[YZ] = f0 + fy*y + fz*z + fz2*z^2 + fzy*z*y   (fy2 vanishes)
    c["fzy"] = _solve_decay(ky + kz, zero, 1.0)
    c["fz2"] = _solve_decay(2.0 * kz, c["fzy"].scaled(ky), 0.0)
    c["fy"] = _solve_decay(ky, c["fzy"].scaled(kzth), 0.0)
    c["fz"] = _solve_decay(
        kz, c["fy"].scaled(ky) + c["fz2"].scaled(2.0 * kzth + sz2), 0.0
    )
    c["f0"] = _solve_decay(0.0, c["fz"].scaled(kzth), 0.0)
    return c


def _cir_variance_parts(kappa: float, theta: float, sigma: float, t: float):
    """(const, state) coefficients of the scalar square-root factor variance."""
    e = math.exp(-kappa * t)
    const = sigma * sigma * theta * (1.0 - e) ** 2 / (2.0 * kappa)
    slope = sigma * sigma * (e - e * e) / kappa
    return const, slope


def mean_map(p: ModelParams, t: float):
    """Affine conditional-mean map: state_t ~ M0 + M1 @ state_0."""
    if p.is_one_factor:
        e = math.exp(-p.factor_kappa * t)
        m0 = np.array([p.theta_z * (1.0 - e), 0.0])
        m1 = np.array([[e, 0.0], [0.0, 1.0]])
        return m0, m1
    c = _coefficient_sums(p.kappa_y, p.kappa_z, p.theta_z, p.sigma_y, p.sigma_z)
    m0 = np.array([c["h0"].value(t), c["g0"].value(t)])
    m1 = np.array([[c["hy"].value(t), c["hz"].value(t)], [0.0, c["gz"].value(t)]])
    return m0, m1


def variance_affine(p: ModelParams, t: float):
    """Affine-in-state representation of the conditional covariance.

    Returns (Qc, Qy, Qz): 2x2 arrays with ``Q(y, z) = Qc + Qy*y + Qz*z``.
    The quadratic terms of the raw second-moment polynomials cancel exactly
    for an affine diffusion, so the covariance is affine in the start state.
    """
    if p.is_one_factor:
        const, slope = _cir_variance_parts(p.factor_kappa, p.theta_z, p.factor_sigma, t)
        qc = np.array([[const, 0.0], [0.0, 0.0]])
        qy = np.array([[slope, 0.0], [0.0, 0.0]])
        return qc, qy, np.zeros((2, 2))
    c = _coefficient_sums(p.kappa_y, p.kappa_z, p.theta_z, p.sigma_y, p.sigma_z)
    h0, hy, hz = (c[k].value(t) for k in ("h0", "hy", "hz"))
    g0, gz = (c[k].value(t) for k in ("g0", "gz"))
    vy_c = c["p0"].value(t) - h0 * h0
    vy_y = c["py"].value(t) - 2.0 * h0 * hy
    vy_z = c["pz"].value(t) - 2.0 * h0 * hz
    vz_c = c["q0"].value(t) - g0 * g0
    vz_z = c["qz"].value(t) - 2.0 * g0 * gz
    vyz_c = c["f0"].value(t) - h0 * g0
    vyz_y = c["fy"].value(t) - hy * g0
    vyz_z = c["fz"].value(t) - h0 * gz - hz * g0
    qc = np.array([[vy_c, vyz_c], [vyz_c, vz_c]])
    qy = np.array([[vy_y, vyz_y], [vyz_y, 0.0]])
    qz = np.array([[vy_z, vyz_z], [vyz_z, vz_z]])
    return qc, qy, qz


def cond_moments(p: ModelParams, y0: float, z0: float, t: float) -> MomentSet:
    """Closed-form conditional moments over horizon ``t`` under the
    historical measure (risk premia do not enter)."""
    if t < 0.0:
        raise ValueError("horizon must be nonnegative")
    if t == 0.0:
        return MomentSet(y0, z0, 0.0, 0.0, 0.0, 0.0)
    m0, m1 = mean_map(p, t)
    mean = m0 + m1 @ np.array([y0, z0])
    qc, qy, qz = variance_affine(p, t)
    q = qc + qy * y0 + qz * z0
    if p.is_one_factor:
        mean[1] = p.theta_z
    return MomentSet(mean[0], mean[1], q[0, 0], q[1, 1], q[0, 1], t)


def uncond_moments(p: ModelParams) -> MomentSet:
    """Stationary mean/covariance (both factor means equal theta_z)."""
    if p.is_one_factor:
        k, s = p.factor_kappa, p.factor_sigma
        if k <= 0.0:
            raise ValueError("no stationary law: factor speed must be positive")
        return MomentSet(
            p.theta_z, p.theta_z, s * s * p.theta_z / (2.0 * k), 0.0, 0.0, math.inf
        )
    ky, kz = p.kappa_y, p.kappa_z
    if ky <= 0.0 or kz <= 0.0:
        raise ValueError("no stationary law: both speeds must be positive")
    vz = p.sigma_z**2 * p.theta_z / (2.0 * kz)
    vy = p.sigma_y**2 * p.theta_z / (2.0 * ky) + ky * p.theta_z * p.sigma_z**2 / (
        2.0 * (kz + ky) * kz
    )
    vyz = ky / (kz + ky) * vz
    return MomentSet(p.theta_z, p.theta_z, vy, vz, vyz, math.inf)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def _rk4(rhs, y0, t, n_steps):
    h = t / n_steps
    y = np.array(y0, dtype=float)
    for _ in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def appendix_coefficient_oracle(p: ModelParams, t: float):
    """Numerically integrate the polynomial-coefficient ODE systems.

    Independent of the closed forms above: the same linear systems are driven
    through fixed-step RK4 and the second moments are assembled from the
    resulting coefficients.  Returns ``(coefficients, MomentSet)`` where
    ``coefficients`` maps the systems ('g', 'h', 'f', 'q', 'p') to vectors in
    the order (c0, cy, cz, cz2, czy, cy2) (mean systems carry the first three).
    """
    if t < 0.0:
        raise ValueError("horizon must be nonnegative")
    th = p.theta_z
    n = max(64, min(400_000, int(math.ceil(2000.0 * t)))) if t > 0 else 1

    if p.is_one_factor:
        # scalar factor: mean system (c0, cx) and second-moment (c0, cx, cx2)
        k, s = p.factor_kappa, p.factor_sigma
        kth = k * th

        def rhs_mean(c):
            return np.array([kth * c[1], -k * c[1]])

        def rhs_sq(c):
            return np.array(
                [kth * c[1], -k * c[1] + (2.0 * kth + s * s) * c[2], -2.0 * k * c[2]]
            )

        hh = _rk4(rhs_mean, [0.0, 1.0], t, n) if t > 0 else np.array([0.0, 1.0])
        pp = _rk4(rhs_sq, [0.0, 0.0, 1.0], t, n) if t > 0 else np.array([0.0, 0.0, 1.0])
        coeffs = {"h": hh, "p": pp}

        def assemble(y0, z0):
            ey = hh[0] + hh[1] * y0
            ey2 = pp[0] + pp[1] * y0 + pp[2] * y0 * y0
            return MomentSet(ey, th, ey2 - ey * ey, 0.0, 0.0, t)

        return coeffs, assemble

    ky, kz = p.kappa_y, p.kappa_z
    sy, sz = p.sigma_y, p.sigma_z
    kzth = kz * th

    def rhs3(c):
        return np.array([kzth * c[2], -ky * c[1], ky * c[1] - kz * c[2]])

    def rhs6(c):
        c0, cy, cz, cz2, czy, cy2 = c
        return np.array(
            [
                kzth * cz,
                -ky * cy + kzth * czy + sy * sy * cy2,
                ky * cy - kz * cz + (2.0 * kzth + sz * sz) * cz2,
                ky * czy - 2.0 * kz * cz2,
                2.0 * ky * cy2 - (ky + kz) * czy,
                -2.0 * ky * cy2,
            ]
        )

    init3_h = np.array([0.0, 1.0, 0.0])
    init3_g = np.array([0.0, 0.0, 1.0])
    inits6 = {
        "p": np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        "q": np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        "f": np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
    }
    if t == 0.0:
        coeffs = {"h": init3_h, "g": init3_g, **inits6}
    else:
        coeffs = {
            "h": _rk4(rhs3, init3_h, t, n),
            "g": _rk4(rhs3, init3_g, t, n),
            "p": _rk4(rhs6, inits6["p"], t, n),
            "q": _rk4(rhs6, inits6["q"], t, n),
            "f": _rk4(rhs6, inits6["f"], t, n),
        }

    def assemble(y0, z0):
        def poly6(v):
            return (
                v[0]
                + v[1] * y0
                + v[2] * z0
                + v[3] * z0 * z0
                + v[4] * z0 * y0
                + v[5] * y0 * y0
            )

        ey = coeffs["h"][0] + coeffs["h"][1] * y0 + coeffs["h"][2] * z0
        ez = coeffs["g"][0] + coeffs["g"][1] * y0 + coeffs["g"][2] * z0
        ey2, ez2, eyz = poly6(coeffs["p"]), poly6(coeffs["q"]), poly6(coeffs["f"])
        return MomentSet(ey, ez, ey2 - ey * ey, ez2 - ez * ez, eyz - ey * ez, t)

    return coeffs, assemble


_CHUNK = 8192


def mc_moment_oracle(
    p: ModelParams,
    y0: float,
    z0: float,
    t: float,
    n_paths: int,
    step: float,
    seed: int,
):
    """Full-truncation Euler estimate of the conditional moments.

    Paths are generated in fixed-size chunks, each on its own counter-based
    stream, so the result is bit-identical for a given seed regardless of how
    chunks are scheduled.  Returns ``(MomentSet, MomentSet of standard errors)``.
    """
    if n_paths < 1000:
        raise ValueError("need at least 1000 paths")
    if step > t:
        raise ValueError("step must not exceed the horizon")
    n_steps = int(round(t / step))
    one_factor = p.is_one_factor
    ky = p.factor_kappa
    sy = p.factor_sigma
    kz, th, sz = p.kappa_z, p.theta_z, p.sigma_z

    ys = np.empty(n_paths)
    zs = np.empty(n_paths)
    done = 0
    chunk_idx = 0
    while done < n_paths:
        m = min(_CHUNK, n_paths - done)
        rng = substream(seed, chunk_idx, "moment")
        w = rng.standard_normal((n_steps, 2, _CHUNK))[:, :, :m] * math.sqrt(step)
        y = np.full(m, float(y0))
        z = np.full(m, float(z0))
        for k in range(n_steps):
            yp = np.maximum(y, 0.0)
            zp = np.maximum(z, 0.0)
            if one_factor:
                y = y + ky * (th - yp) * step + sy * np.sqrt(yp) * w[k, 0]
            else:
                y = y + ky * (zp - yp) * step + sy * np.sqrt(yp) * w[k, 0]
                z = z + kz * (th - zp) * step + sz * np.sqrt(zp) * w[k, 1]
        ys[done : done + m] = y
        zs[done : done + m] = th if one_factor else z
        done += m
        chunk_idx += 1

    n = float(n_paths)
    my, mz = ys.mean(), zs.mean()
    dy, dz = ys - my, zs - mz
    vy = float(dy @ dy) / (n - 1.0)
    vz = float(dz @ dz) / (n - 1.0)
    cyz = float(dy @ dz) / (n - 1.0)
    est = MomentSet(my, mz, vy, vz, cyz, t)
    m4y = float((dy**2 @ dy**2)) / n
    m4z = float((dz**2 @ dz**2)) / n
    u = dy * dz
    se = MomentSet(
        math.sqrt(vy / n),
        math.sqrt(vz / n) if vz > 0 else 0.0,
        math.sqrt(max(m4y - vy * vy, 0.0) / n),
        math.sqrt(max(m4z - vz * vz, 0.0) / n),
        math.sqrt(max(float(u @ u) / n - cyz * cyz, 0.0) / n),
        t,
    )
    return est, se
