"""Contract functions, default-arrival intensity and the loss-given-default law.

The three exogenous contract functions

    alpha(x)  = gamma * (exp(-a0*(x^1)) - exp(-a0)) + r
    beta_y(x) = exp(-b0*(x^1)) - exp(-b0)
    beta_z(x) = c0 * 1[0 <= x < 1]

(with ``x^1`` shorthand for ``min(x, 1)``) determine both the bond coefficient
ODEs and the compensator of the loss process.  The conditional jump-size law
is a stochastic mixture of truncated exponentials plus a catastrophic point
mass at ``1 - l`` whose weight is driven by the second factor.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import UndefinedDistributionError
from .params import FactorState, ModelParams

#: absolute tolerance of the monotone root search in the inverse cdf
_INVERSE_TOL = 1.0e-12


def contract_functions(x, p: ModelParams):
    """Evaluate (alpha, beta_y, beta_z) at loss level ``x`` (scalar or array)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("loss level must be nonnegative")
    xc = np.minimum(x, 1.0)
    alpha = p.gamma * (np.exp(-p.a0 * xc) - math.exp(-p.a0)) + p.r
    beta_y = np.exp(-p.b0 * xc) - math.exp(-p.b0)
    beta_z = np.where(x < 1.0, p.c0, 0.0)
    if x.ndim == 0:
        return float(alpha), float(beta_y), float(beta_z)
    return alpha, beta_y, beta_z


def jump_intensity(p: ModelParams, f: FactorState, l_pre: float) -> float:
    """Default-event arrival intensity at pre-jump loss ``l_pre``.

    Equals alpha(L) - r + beta_y(L)*Y + beta_z(L)*Z, which is nonnegative for
    any admissible parameters and state.
    """
    if not 0.0 <= l_pre <= 1.0:
        raise ValueError("l_pre must lie in [0, 1]")
    alpha, beta_y, beta_z = contract_functions(l_pre, p)
    z_eff = p.theta_z if p.is_one_factor else f.z
    return (alpha - p.r) + beta_y * f.y + beta_z * z_eff


def _mixture_parts(p: ModelParams, f: FactorState, l_pre: float):
    """Continuous-part weights and the catastrophic atom mass (unnormalized)."""
    z_eff = p.theta_z if p.is_one_factor else f.z
    w_gamma = p.gamma * math.exp(-p.a0 * l_pre)
    w_beta = f.y * math.exp(-p.b0 * l_pre)
    atom = p.c0 * z_eff if l_pre < 1.0 else 0.0
    return w_gamma, w_beta, atom


def lgd_cdf(p: ModelParams, f: FactorState, l_pre: float, x) -> float:
    """Cumulative jump-size distribution ``nu(t, (0, x]) / Lambda_t``.

    Continuous on (0, 1 - l_pre) with an atom of mass ``c0 * z / Lambda`` at
    exactly ``1 - l_pre``; equals 1 for ``x >= 1 - l_pre``.
    """
    lam = jump_intensity(p, f, l_pre)
    if lam <= 0.0:
        raise UndefinedDistributionError("zero arrival intensity: jump-size law undefined")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("jump size must be nonnegative")
    w_gamma, w_beta, atom = _mixture_parts(p, f, l_pre)
    cont = w_gamma * (-np.expm1(-p.a0 * np.minimum(x, 1.0 - l_pre))) + w_beta * (
        -np.expm1(-p.b0 * np.minimum(x, 1.0 - l_pre))
    )
    out = (cont + np.where(x >= 1.0 - l_pre, atom, 0.0)) / lam
    out = np.where(x >= 1.0 - l_pre, 1.0, out)
    return float(out) if out.ndim == 0 else out


def lgd_inverse_cdf(p: ModelParams, f: FactorState, l_pre: float, s: float) -> float:
    """Smallest jump size ``x`` with ``lgd_cdf(x) >= s`` for ``s`` in (0, 1).

    Draws above the continuous mass map to exactly ``1 - l_pre`` (catastrophe);
    the continuous branch is solved by monotone bisection to 1e-12.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie strictly inside (0, 1)")
    lam = jump_intensity(p, f, l_pre)
    if lam <= 0.0:
        raise UndefinedDistributionError("zero arrival intensity: jump-size law undefined")
    w_gamma, w_beta, _ = _mixture_parts(p, f, l_pre)
    cap = 1.0 - l_pre

    def cont(x):
        return (w_gamma * -math.expm1(-p.a0 * x) + w_beta * -math.expm1(-p.b0 * x)) / lam

    if s >= cont(cap):
        return cap
    lo, hi = 0.0, cap
    while hi - lo > _INVERSE_TOL:
        mid = 0.5 * (lo + hi)
        if cont(mid) >= s:
            hi = mid
        else:
            lo = mid
    return hi


def expected_lgd(
    p: ModelParams, f: FactorState, l_pre: float, include_catastrophe: bool = True
) -> float:
    """Closed-form expected jump size given a default at pre-jump loss ``l_pre``.

    With ``include_catastrophe=False`` the catastrophic weight is removed from
    both the numerator and the denominator.
    """
    if not 0.0 <= l_pre <= 1.0:
        raise ValueError("l_pre must lie in [0, 1]")
    q = p.with_(c0=0.0) if not include_catastrophe else p
    lam = jump_intensity(q, f, l_pre)
    if lam <= 0.0:
        raise UndefinedDistributionError("zero arrival intensity: expected LGD undefined")
    z_eff = q.theta_z if q.is_one_factor else f.z
    rem = 1.0 - l_pre
    num = 0.0
    if q.gamma > 0.0 and q.a0 > 0.0:
        num += q.gamma / q.a0 * (
            math.exp(-q.a0 * l_pre) - math.exp(-q.a0) * (q.a0 * rem + 1.0)
        )
    if f.y > 0.0 and q.b0 > 0.0:
        num += f.y / q.b0 * (
            math.exp(-q.b0 * l_pre) - math.exp(-q.b0) * (q.b0 * rem + 1.0)
        )
    num += q.c0 * rem * z_eff
    return num / lam
