"""Quasi-maximum-likelihood parameter estimation and the nested-model test.

The likelihood is maximized by Nelder-Mead over transformed coordinates (log
for positive parameters, identity for the risk-premium slopes), restarted from
jittered initial points.  Standard errors come from the inverse of a
finite-difference Hessian of the negative log-likelihood at the optimum,
mapped back through the transform by the delta method.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats
from statsmodels.tools.numdiff import approx_hess

from .errors import CalibrationError, StcdoError
from .kalman import kalman_pass
from .panel import ObservationPanel
from .params import ONE_FACTOR, TWO_FACTOR, ModelParams
from .rng import substream

_MODEL_FIELDS = {
    TWO_FACTOR: (
        "kappa_z", "kappa_y", "theta_z", "lambda_z", "lambda_y",
        "sigma_z", "sigma_y", "a0", "gamma", "b0", "c0",
    ),
    ONE_FACTOR: ("kappa_z", "theta_z", "lambda_z", "sigma_z", "a0", "gamma", "b0"),
}
_IDENTITY_FIELDS = frozenset({"lambda_z", "lambda_y"})
_LOG_FLOOR = 1.0e-12


def parameter_names(model_kind: str, n_tranches: int) -> list[str]:
    return list(_MODEL_FIELDS[model_kind]) + [f"h_{j + 1}" for j in range(n_tranches)]


def pack(p: ModelParams) -> np.ndarray:
    """Map a parameter set to unconstrained optimizer coordinates."""
    out = []
    for name in _MODEL_FIELDS[p.model_kind]:
        v = getattr(p, name)
        out.append(v if name in _IDENTITY_FIELDS else math.log(max(v, _LOG_FLOOR)))
    out.extend(math.log(max(hj, _LOG_FLOOR)) for hj in p.h)
    return np.array(out)


def unpack(x: np.ndarray, template: ModelParams) -> ModelParams:
    """Inverse of :func:`pack`, keeping non-estimated fields from ``template``."""
    names = _MODEL_FIELDS[template.model_kind]
    kwargs = {}
    for k, name in enumerate(names):
        kwargs[name] = x[k] if name in _IDENTITY_FIELDS else math.exp(x[k])
    h = tuple(math.exp(v) for v in x[len(names):])
    if len(h) != template.n_tranches:
        raise ValueError("parameter vector length mismatch")
    return template.with_(h=h, **kwargs)


@dataclass(frozen=True)
class CalibrationConfig:
    """Optimizer budget and restart policy.

    ``max_evals`` caps the total function evaluations per start; each start
    re-launches the simplex from its best point until the improvement drops
    below ``restart_tol`` (fresh simplices are how Nelder-Mead escapes
    collapsed geometry in this many dimensions).
    """

    n_starts: int = 3
    max_evals: int = 12000
    evals_per_restart: int = 2500
    restart_tol: float = 1.0e-3
    seed: int = 0
    start_scale: float = 0.25
    xatol: float = 1.0e-7
    fatol: float = 1.0e-7
    se_method: str = "hessian"
    workers: int | None = None


@dataclass
class CalibrationResult:
    params: ModelParams
    std_errors: dict[str, float | None]
    loglik: float
    converged: bool
    n_fev: int
    se_available: bool
    start_logliks: list[float] = field(default_factory=list)

    def summary(self) -> str:
        lines = [f"loglik = {self.loglik:.6f}  (converged={self.converged}, "
                 f"nfev={self.n_fev})"]
        names = parameter_names(self.params.model_kind, self.params.n_tranches)
        vec = pack(self.params)
        for k, name in enumerate(names):
            v = vec[k] if name in _IDENTITY_FIELDS else math.exp(vec[k])
            se = self.std_errors.get(name)
            se_txt = f"{se:.6g}" if se is not None else "n/a"
            lines.append(f"  {name:<10s} {v: .6g}   (se {se_txt})")
        return "\n".join(lines)


def _workers(config: CalibrationConfig) -> int:
    if config.workers is not None:
        return max(1, config.workers)
    env = os.environ.get("STCDO_WORKERS")
    if env:
        return max(1, int(env))
    return 1


def make_objective(panel: ObservationPanel, template: ModelParams,
                   free: list[str] | None = None):
    """Negative quasi log-likelihood over transformed coordinates.

    Any parameter vector that fails to produce a finite likelihood maps to
    +inf so the optimizer simply walks away from it.  With ``free`` given,
    the objective varies only those coordinates (by name) and pins the rest
    at the template's values.
    """
    names = parameter_names(template.model_kind, template.n_tranches)
    base = pack(template)
    if free is None:
        sel = np.arange(len(names))
    else:
        unknown = set(free) - set(names)
        if unknown:
            raise ValueError(f"unknown parameter names: {sorted(unknown)}")
        sel = np.array([k for k, n in enumerate(names) if n in free])

    def embed(x: np.ndarray) -> np.ndarray:
        full = base.copy()
        full[sel] = x
        return full

    def neg_loglik(x: np.ndarray) -> float:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                p = unpack(embed(x), template)
                out = kalman_pass(p, panel, store_details=False)
        except (StcdoError, ArithmeticError, ValueError, ZeroDivisionError,
                OverflowError, np.linalg.LinAlgError):
            return math.inf
        return -out.loglik if math.isfinite(out.loglik) else math.inf

    neg_loglik.embed = embed
    neg_loglik.selection = sel
    return neg_loglik


def qml_calibrate(panel: ObservationPanel, init: ModelParams,
                  config: CalibrationConfig = CalibrationConfig(),
                  free: list[str] | None = None) -> CalibrationResult:
    """Maximize the filter likelihood by multistart Nelder-Mead.

    ``free`` restricts the optimization to the named parameters (the rest stay
    at their ``init`` values); standard errors are reported for the free set.
    """
    neg_loglik = make_objective(panel, init, free)
    x_init = pack(init)[neg_loglik.selection]
    rng = substream(config.seed, 0, "start")
    starts = [x_init]
    for _ in range(max(0, config.n_starts - 1)):
        starts.append(x_init + config.start_scale * rng.standard_normal(len(x_init)))

    def run(x0):
        x = np.asarray(x0, dtype=float)
        best_fun = math.inf
        nfev = 0
        success = False
        while nfev < config.max_evals:
            res = optimize.minimize(
                neg_loglik, x, method="Nelder-Mead",
                options={
                    "maxfev": min(config.evals_per_restart,
                                  config.max_evals - nfev),
                    "xatol": config.xatol,
                    "fatol": config.fatol,
                    "adaptive": True,
                },
            )
            nfev += res.nfev
            improved = res.fun < best_fun - config.restart_tol
            if res.fun < best_fun:
                best_fun = res.fun
                x = res.x
            success = bool(res.success)
            if success and not improved:
                break
            if not improved and not math.isfinite(res.fun):
                break
        return optimize.OptimizeResult(
            x=x, fun=best_fun, nfev=nfev, success=success
        )

    n_workers = _workers(config)
    if n_workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(x0) for x0 in starts]

    finite = [res for res in results if math.isfinite(res.fun)]
    if not finite:
        raise CalibrationError("no optimizer start produced a finite likelihood")
    best = min(finite, key=lambda res: res.fun)

    all_names = parameter_names(init.model_kind, init.n_tranches)
    free_names = [all_names[k] for k in neg_loglik.selection]
    std_errors: dict[str, float | None] = {name: None for name in all_names}
    se_available = False
    if config.se_method == "hessian":
        se_t = _hessian_standard_errors(neg_loglik, best.x)
        if se_t is not None:
            se_available = True
            for k, name in enumerate(free_names):
                if name in _IDENTITY_FIELDS:
                    std_errors[name] = float(se_t[k])
                else:
                    # delta method through the log transform
                    std_errors[name] = float(se_t[k] * math.exp(best.x[k]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        params = unpack(neg_loglik.embed(best.x), init)
    return CalibrationResult(
        params=params,
        std_errors=std_errors,
        loglik=-float(best.fun),
        converged=bool(best.success),
        n_fev=int(sum(res.nfev for res in results)),
        se_available=se_available,
        start_logliks=[-float(res.fun) for res in results],
    )


def _hessian_standard_errors(neg_loglik, x_opt: np.ndarray):
    # widen the finite-difference step until the Hessian is positive definite;
    # too-small steps read curvature off simplex-level noise
    for eps in (None, 1.0e-5, 1.0e-4, 1.0e-3):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                hess = approx_hess(x_opt, neg_loglik, epsilon=eps)
                if not np.all(np.isfinite(hess)):
                    continue
                if np.any(np.linalg.eigvalsh(hess) <= 0.0):
                    continue
                cov = np.linalg.inv(hess)
            diag = np.diag(cov)
            if np.any(~np.isfinite(diag)) or np.any(diag <= 0.0):
                continue
            return np.sqrt(diag)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError):
            continue
    return None


def lrt(loglik_1f: float, loglik_2f: float) -> float:
    """Likelihood-ratio statistic 2 * (LL_two_factor - LL_one_factor)."""
    if not (math.isfinite(loglik_1f) and math.isfinite(loglik_2f)):
        raise ValueError("both log-likelihoods must be finite")
    stat = 2.0 * (loglik_2f - loglik_1f)
    if stat < -1.0e-6:
        warnings.warn(
            f"negative LRT statistic {stat}: nesting violated (optimizer artifact)",
            RuntimeWarning,
            stacklevel=2,
        )
    return stat


def lrt_threshold(df: int, level: float = 0.99) -> float:
    """Chi-square critical value for the nested comparison."""
    return float(stats.chi2.ppf(level, df))


def lrt_df(n_tranches: int) -> int:
    """Parameter-count difference between the nested specifications."""
    return len(_MODEL_FIELDS[TWO_FACTOR]) - len(_MODEL_FIELDS[ONE_FACTOR])
