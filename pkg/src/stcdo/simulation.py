"""Factor-path simulation, loss-path generation with intensity tilting, and
scenario reweighting.

Stress scenarios amplify the arrival intensity by a factor ``psi``; the
induced change of measure is undone per scenario by the weight

    w = exp((psi - 1) * sum_k Lambda_k * dt) / psi^N,

where the sum runs over the untilted intensity along the path and N counts the
realized jumps.  Every random draw comes from a counter-based stream keyed by
(seed, scenario index, purpose), so scenario sets are bit-reproducible and
independent of chunking or worker count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .params import ModelParams
from .rng import substream

_CHUNK = 4096
_INITIAL_DRAWS = 64


def _drift_coefficients(p: ModelParams, measure: str):
    """(const, y-slope, z-coupling) drift pieces for Y and Z under P or Q."""
    if measure == "P":
        ky = p.factor_kappa
        return (0.0, ky, ky), (p.kappa_z * p.theta_z, p.kappa_z)
    if measure == "Q":
        return (
            (0.0, p.factor_kappa + p.factor_lambda, p.factor_kappa),
            (p.kappa_z * p.theta_z, p.kappa_z + p.lambda_z),
        )
    raise ValueError("measure must be 'P' or 'Q'")


def simulate_factors(p: ModelParams, y0: float, z0: float, n_steps: int,
                     dt: float, seed: int, index: int = 0,
                     measure: str = "P") -> np.ndarray:
    """One full-truncation Euler path of (Y, Z); shape (n_steps + 1, 2).

    The returned path is clamped to the nonnegative cone (the latent Euler
    recursion keeps the raw values).  ``index`` selects the scenario substream
    so path i of a batch equals the single-path call with ``index=i``.
    """
    if n_steps < 1 or dt <= 0.0:
        raise ValueError("need n_steps >= 1 and dt > 0")
    return _factor_chunk(
        p, y0, z0, n_steps, dt, seed, index, 1, measure
    )[0]


def _factor_chunk(p: ModelParams, y0, z0, n_steps, dt, seed, first_index,
                  n_paths, measure):
    """Euler-simulate ``n_paths`` consecutive scenario paths."""
    (ycon, yslope, ycouple), (zcon, zslope) = _drift_coefficients(p, measure)
    one_factor = p.is_one_factor
    sy = p.factor_sigma
    sz = p.sigma_z
    sq = math.sqrt(dt)
    w = np.empty((n_paths, n_steps, 2))
    for i in range(n_paths):
        w[i] = substream(seed, first_index + i, "factor").standard_normal((n_steps, 2))
    out = np.empty((n_paths, n_steps + 1, 2))
    y = np.full(n_paths, float(y0))
    z = np.full(n_paths, float(z0))
    out[:, 0, 0] = np.maximum(y, 0.0)
    out[:, 0, 1] = p.theta_z if one_factor else np.maximum(z, 0.0)
    for k in range(n_steps):
        yp = np.maximum(y, 0.0)
        zp = np.maximum(z, 0.0)
        if one_factor:
            y = y + (zcon - zslope * yp) * dt + sy * np.sqrt(yp) * sq * w[:, k, 0]
            out[:, k + 1, 0] = np.maximum(y, 0.0)
            out[:, k + 1, 1] = p.theta_z
        else:
            y = y + (ycon + ycouple * zp - yslope * yp) * dt + sy * np.sqrt(yp) * sq * w[:, k, 0]
            z = z + (zcon - zslope * zp) * dt + sz * np.sqrt(zp) * sq * w[:, k, 1]
            out[:, k + 1, 0] = np.maximum(y, 0.0)
            out[:, k + 1, 1] = np.maximum(z, 0.0)
    return out


def simulate_loss(p: ModelParams, factor_path: np.ndarray, psi: float, seed: int,
                  dt: float, index: int = 0):
    """Loss trajectory along one factor path.

    Returns (loss_path, n_jumps, cumulative_tilted_intensity); all arrays have
    the factor path's length.  The clock and jump-size draws come from their
    own substreams, so enlarging the internal draw budget never changes a
    realized path.
    """
    if psi <= 0.0:
        raise ValueError("psi must be positive")
    paths = np.asarray(factor_path, dtype=float)[None, :, :]
    loss, n_jumps, lam_bar = _loss_paths_batch(p, paths, psi, seed, dt, index)
    return loss[0], int(n_jumps[0]), lam_bar[0]


def _loss_paths_batch(p: ModelParams, factor_paths: np.ndarray, psi: float,
                      seed: int, dt: float, first_index: int):
    n, k_plus_1 = factor_paths.shape[0], factor_paths.shape[1]
    y = np.ascontiguousarray(factor_paths[:, :, 0])
    z = np.ascontiguousarray(factor_paths[:, :, 1])
    z_eff = z if not p.is_one_factor else np.full_like(z, p.theta_z)
    loss = np.zeros((n, k_plus_1))
    lam_bar = np.zeros((n, k_plus_1))
    n_jumps = np.zeros(n, dtype=np.int64)
    budget = _INITIAL_DRAWS
    pending = np.arange(n)
    while len(pending):
        clocks = np.empty((len(pending), budget))
        sizes = np.empty((len(pending), budget))
        for row, idx in enumerate(pending):
            clocks[row] = substream(seed, first_index + int(idx), "clock").standard_exponential(budget)
            sizes[row] = substream(seed, first_index + int(idx), "jump").random(budget)
        sub_loss = np.zeros((len(pending), k_plus_1))
        sub_lam = np.zeros((len(pending), k_plus_1))
        sub_jumps = np.zeros(len(pending), dtype=np.int64)
        status = np.zeros(len(pending), dtype=np.int64)
        _kernels.loss_paths(
            np.ascontiguousarray(y[pending]), np.ascontiguousarray(z_eff[pending]),
            dt, psi, p.gamma, p.a0, p.b0, p.c0, p.r,
            clocks, sizes, sub_loss, sub_lam, sub_jumps, status,
        )
        if np.any(status == 1):
            raise AssertionError("negative intensity increment in loss simulation")
        done = status == 0
        loss[pending[done]] = sub_loss[done]
        lam_bar[pending[done]] = sub_lam[done]
        n_jumps[pending[done]] = sub_jumps[done]
        pending = pending[~done]
        budget *= 2
        if budget > 1 << 20:
            raise RuntimeError("loss simulation draw budget exploded")
    return loss, n_jumps, lam_bar


@dataclass(frozen=True)
class ScenarioBatch:
    """Simulated scenarios sharing one tilting parameter."""

    psi: float
    seed: int
    measure: str
    dt: float
    n_jumps: np.ndarray
    terminal_loss: np.ndarray
    intensity_sum: np.ndarray
    factor_paths: np.ndarray | None = None
    loss_paths: np.ndarray | None = None
    lambda_bar: np.ndarray | None = None
    first_index: int = 0

    @property
    def n_scenarios(self) -> int:
        return len(self.n_jumps)


def simulate_scenarios(
    p: ModelParams,
    y0: float,
    z0: float,
    n_steps: int,
    dt: float,
    psi: float,
    seed: int,
    n_scenarios: int,
    measure: str = "P",
    keep_paths: bool = True,
    first_index: int = 0,
    factor_paths: np.ndarray | None = None,
) -> ScenarioBatch:
    """Simulate a batch of factor+loss scenarios.

    Pass ``factor_paths`` to run conditionally on fixed factor trajectories
    (sharing them across tilting parameters); otherwise each scenario draws
    its own path from the (seed, index, 'factor') substream.
    """
    if psi <= 0.0:
        raise ValueError("psi must be positive")
    keep = keep_paths or factor_paths is not None
    losses = [] if keep else None
    lams = [] if keep else None
    facs = [] if keep else None
    n_jumps = np.empty(n_scenarios, dtype=np.int64)
    terminal = np.empty(n_scenarios)
    isum = np.empty(n_scenarios)
    done = 0
    while done < n_scenarios:
        m = min(_CHUNK, n_scenarios - done)
        if factor_paths is not None:
            chunk = np.asarray(factor_paths[done : done + m], dtype=float)
        else:
            chunk = _factor_chunk(
                p, y0, z0, n_steps, dt, seed, first_index + done, m, measure
            )
        loss, nj, lam_bar = _loss_paths_batch(
            p, chunk, psi, seed, dt, first_index + done
        )
        n_jumps[done : done + m] = nj
        terminal[done : done + m] = loss[:, -1]
        isum[done : done + m] = lam_bar[:, -1] / psi
        if keep:
            losses.append(loss)
            lams.append(lam_bar)
            facs.append(chunk)
        done += m
    return ScenarioBatch(
        psi=psi,
        seed=seed,
        measure=measure,
        dt=dt,
        n_jumps=n_jumps,
        terminal_loss=terminal,
        intensity_sum=isum,
        factor_paths=np.concatenate(facs) if keep else None,
        loss_paths=np.concatenate(losses) if keep else None,
        lambda_bar=np.concatenate(lams) if keep else None,
        first_index=first_index,
    )


def importance_weight(batch: ScenarioBatch, psi: float | None = None) -> np.ndarray:
    """Per-scenario likelihood ratio restoring base-measure expectations."""
    psi = batch.psi if psi is None else psi
    if psi <= 0.0:
        raise ValueError("psi must be positive")
    return np.exp((psi - 1.0) * batch.intensity_sum) / psi ** batch.n_jumps


@dataclass(frozen=True)
class ScenarioSet:
    """Aggregated normal and stress batches with normalized probabilities."""

    normal: ScenarioBatch
    stress: ScenarioBatch
    raw_weights: np.ndarray
    q: np.ndarray
    p: np.ndarray
    q_bar: np.ndarray
    p_bar: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        """Aggregate probabilities, normal scenarios first; sums to one."""
        return np.concatenate([self.q_bar, self.p_bar])

    @property
    def terminal_losses(self) -> np.ndarray:
        return np.concatenate(
            [self.normal.terminal_loss, self.stress.terminal_loss]
        )


def normalize_and_aggregate(normal: ScenarioBatch, stress: ScenarioBatch
                            ) -> ScenarioSet:
    """Exact weight normalization and fifty/fifty batch aggregation."""
    if normal.n_scenarios == 0 or stress.n_scenarios == 0:
        raise ValueError("both batches must be non-empty")
    w = importance_weight(stress)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("degenerate stress weights: sum is zero")
    p_norm = w / total
    q = np.full(normal.n_scenarios, 1.0 / normal.n_scenarios)
    return ScenarioSet(
        normal=normal,
        stress=stress,
        raw_weights=w,
        q=q,
        p=p_norm,
        q_bar=q / 2.0,
        p_bar=p_norm / 2.0,
    )


def weighted_empirical_cdf(values, probs, x):
    """P(value <= x) under the given probabilities; right-continuous in x."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape:
        raise ValueError("values and probs must align")
    if abs(probs.sum() - 1.0) > 1.0e-9:
        raise ValueError("probabilities must sum to one")
    x = np.asarray(x, dtype=float)
    flags = values[None, ...] <= x[..., None] if x.ndim else values <= x
    out = (flags * probs).sum(axis=-1)
    return float(out) if out.ndim == 0 else out
