"""Model parameters and elementary state containers.

The factor pair (Y, Z) follows square-root diffusions in which Z is the
stochastic mean-reversion level of Y.  The one-factor nested variant keeps a
single square-root factor with a constant mean-reversion level; by convention
its own speed/vol/risk-premium live in the ``kappa_z``/``sigma_z``/``lambda_z``
slots (the ``*_y`` slots are ignored) and the catastrophic weight ``c0`` is
forced to zero.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

from .errors import SingularParameterError

TWO_FACTOR = "two-factor"
ONE_FACTOR = "one-factor"

#: closed-form moment denominators contain (kz-ky), (kz-2ky), ky, kz, kz+ky
EPS_SINGULAR = 1.0e-6
#: nudge applied to kappa_z when parameters land on a singular manifold
SINGULAR_NUDGE = 1.0e-8


def _manifold_gaps(kappa_y: float, kappa_z: float) -> list[float]:
    return [
        kappa_y,
        kappa_z,
        abs(kappa_z - kappa_y),
        abs(kappa_z - 2.0 * kappa_y),
        kappa_z + kappa_y,
    ]


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set: factor dynamics, risk premia, contract functions,
    risk-free rate and per-tranche measurement-noise variances."""

    kappa_y: float
    kappa_z: float
    theta_z: float
    sigma_y: float
    sigma_z: float
    lambda_y: float
    lambda_z: float
    gamma: float
    a0: float
    b0: float
    c0: float
    r: float = 0.05
    h: tuple[float, ...] = field(default_factory=tuple)
    model_kind: str = TWO_FACTOR
    strict_singular: bool = False

    def __post_init__(self):
        if self.model_kind not in (TWO_FACTOR, ONE_FACTOR):
            raise ValueError(f"unknown model_kind {self.model_kind!r}")
        if self.model_kind == ONE_FACTOR and self.c0 != 0.0:
            # the nested model has no catastrophic term
            object.__setattr__(self, "c0", 0.0)
        for name in ("sigma_y", "sigma_z", "gamma", "a0", "b0", "c0"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if self.kappa_z * self.theta_z < 0.0:
            raise ValueError("kappa_z * theta_z must be nonnegative")
        if any(hj <= 0.0 for hj in self.h):
            raise ValueError("measurement variances h must be positive")
        for name in ("lambda_y", "lambda_z", "r"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        self._enforce_off_manifold()

    def _enforce_off_manifold(self):
        if self.is_one_factor:
            if self.kappa_z <= EPS_SINGULAR:
                raise SingularParameterError(
                    f"one-factor speed kappa_z={self.kappa_z} below {EPS_SINGULAR}"
                )
            return
        if self.kappa_y <= EPS_SINGULAR or self.kappa_z <= EPS_SINGULAR:
            raise SingularParameterError(
                f"kappa_y={self.kappa_y}, kappa_z={self.kappa_z}: speeds must "
                f"exceed {EPS_SINGULAR}"
            )
        if min(_manifold_gaps(self.kappa_y, self.kappa_z)) > EPS_SINGULAR:
            return
        if self.strict_singular:
            raise SingularParameterError(
                f"kappa_y={self.kappa_y}, kappa_z={self.kappa_z} sit within "
                f"{EPS_SINGULAR} of a singular manifold"
            )
        kz = self.kappa_z
        for _ in range(200):
            kz += SINGULAR_NUDGE
            if min(_manifold_gaps(self.kappa_y, kz)) > EPS_SINGULAR:
                break
        else:
            raise SingularParameterError(
                "could not nudge kappa_z off the singular manifold"
            )
        warnings.warn(
            f"kappa_z={self.kappa_z} is near a singular manifold; "
            f"perturbed to {kz}",
            RuntimeWarning,
            stacklevel=3,
        )
        object.__setattr__(self, "kappa_z", kz)

    # -- live-factor views -------------------------------------------------
    @property
    def is_one_factor(self) -> bool:
        return self.model_kind == ONE_FACTOR

    @property
    def factor_kappa(self) -> float:
        """Physical mean-reversion speed of the diffusive factor Y."""
        return self.kappa_z if self.is_one_factor else self.kappa_y

    @property
    def factor_sigma(self) -> float:
        return self.sigma_z if self.is_one_factor else self.sigma_y

    @property
    def factor_lambda(self) -> float:
        return self.lambda_z if self.is_one_factor else self.lambda_y

    @property
    def rn_kappa_y(self) -> float:
        """Risk-neutral speed entering the Y-coefficient ODE."""
        return self.factor_kappa + self.factor_lambda

    @property
    def rn_kappa_z(self) -> float:
        return self.kappa_z + self.lambda_z

    @property
    def drift_const(self) -> float:
        """Constant part of the (risk-neutral) factor drift, kappa_z * theta_z."""
        return self.kappa_z * self.theta_z

    @property
    def n_tranches(self) -> int:
        return len(self.h)

    def with_(self, **kwargs) -> "ModelParams":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class FactorState:
    """Nonnegative factor levels at a point in time."""

    y: float
    z: float
    t: float = 0.0

    def __post_init__(self):
        if self.y < 0.0 or self.z < 0.0:
            raise ValueError(f"factor levels must be nonnegative, got ({self.y}, {self.z})")


@dataclass(frozen=True)
class LossState:
    """Realized pool loss fraction; ``is_pre_jump`` marks a left limit."""

    l: float
    is_pre_jump: bool = False

    def __post_init__(self):
        if not 0.0 <= self.l <= 1.0:
            raise ValueError(f"loss fraction must lie in [0, 1], got {self.l}")
