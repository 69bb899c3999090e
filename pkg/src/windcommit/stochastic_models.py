"""Wind-power change process: AR(2) dynamics and the evaluation mixture model.

The change in wind power between consecutive stages follows a zero-mean
stationary AR(2).  Out-of-sample wind paths mix those AR changes with
occasional large negative jumps drawn from a fitted rare-change sampler.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence, TextIO

import numpy as np
from scipy.signal import lfilter, lfiltic

from .formats import fmt_float
from .seeding import derive_seed

# Draws one rare (large negative) change given a random stream.
RareSampler = Callable[[np.random.Generator], float]


@dataclass(frozen=True)
class ARModel:
    """Zero-mean AR(2) for stage-to-stage wind power changes, in GW.

    z_h = phi1 * z_{h-1} + phi2 * z_{h-2} + eps_h,  eps_h ~ N(0, innovation_std^2)
    """

    phi1: float = 0.90
    phi2: float = 0.05
    innovation_std: float = 1.0

    def __post_init__(self) -> None:
        p1, p2 = self.phi1, self.phi2
        if not (math.isfinite(p1) and math.isfinite(p2)):
            raise ValueError("AR coefficients must be finite")
        if not (p2 + p1 < 1.0 and p2 - p1 < 1.0 and abs(p2) < 1.0):
            raise ValueError(
                f"non-stationary AR(2) coefficients phi1={p1}, phi2={p2}: "
                "need phi2+phi1<1, phi2-phi1<1, |phi2|<1"
            )
        # zero std allowed: the deterministic recursion is used in tests
        if not (math.isfinite(self.innovation_std) and self.innovation_std >= 0.0):
            raise ValueError(f"innovation_std must be >= 0, got {self.innovation_std}")


@dataclass(frozen=True)
class ARState:
    """Two-lag memory of the change process: (z_{h-1}, z_{h-2})."""

    z_lag1: float = 0.0
    z_lag2: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.z_lag1) and math.isfinite(self.z_lag2)):
            raise ValueError("AR state must be finite")


def ar_step(
    model: ARModel, state: ARState, rng: np.random.Generator
) -> tuple[float, ARState]:
    """Advance the change process one stage; returns (z, next_state)."""
    eps = model.innovation_std * rng.standard_normal()
    z = model.phi1 * state.z_lag1 + model.phi2 * state.z_lag2 + eps
    return z, ARState(z, state.z_lag1)


def stationary_variance(model: ARModel) -> float:
    """Yule-Walker stationary variance of the AR(2) change process."""
    p1, p2, s = model.phi1, model.phi2, model.innovation_std
    return s * s * (1.0 - p2) / ((1.0 + p2) * ((1.0 - p2) ** 2 - p1 * p1))


def apply_change(w: float, z: float) -> float:
    """Propagate a wind power level by one change, clamping at zero.

    Wind power is non-negative by definition; the clamp is the mechanism
    that enforces it when a large negative change overshoots.
    """
    return max(w + z, 0.0)


def simulate_changes(
    model: ARModel, state: ARState, n_steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized simulation of n_steps of the change process.

    Bit-identical to repeated ar_step with the same innovation draws; the
    recursion is evaluated by scipy's lfilter for speed on long paths.
    """
    if n_steps <= 0:
        return np.empty(0)
    eps = model.innovation_std * rng.standard_normal(n_steps)
    b = [1.0]
    a = [1.0, -model.phi1, -model.phi2]
    zi = lfiltic(b, a, [state.z_lag1, state.z_lag2])
    z, _ = lfilter(b, a, eps, zi=zi)
    return z


@dataclass(frozen=True)
class RealizationConfig:
    """Parameters of one out-of-sample wind path."""

    q: float
    horizon: int
    y0: float
    seed: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"jump probability q must be in [0, 1], got {self.q}")
        if self.horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {self.horizon}")
        if self.y0 < 0.0:
            raise ValueError(f"initial wind power y0 must be >= 0, got {self.y0}")


@dataclass(frozen=True)
class Realization:
    """A realized wind path with per-stage jump indicators."""

    y: tuple[float, ...]
    jumps: tuple[bool, ...]
    is_rare: bool

    def __post_init__(self) -> None:
        if len(self.y) != len(self.jumps):
            raise ValueError("y and jumps must have equal length")
        if self.jumps and self.jumps[0]:
            raise ValueError("stage 0 carries the initial value and cannot jump")
        if self.is_rare != any(self.jumps[1:]):
            raise ValueError("is_rare must equal 'any jump at stage >= 1'")


def generate_realization(
    config: RealizationConfig,
    model: ARModel,
    ar_state0: ARState,
    rare_sampler: RareSampler | None,
) -> Realization:
    """Draw one wind path from the Bernoulli jump mixture.

    Per stage h >= 1 a jump indicator is drawn first; on a jump the change
    comes from the rare sampler, otherwise from an AR step.  Either way the
    realized change enters the AR history, so later AR steps condition on it.
    """
    if config.q > 0.0 and rare_sampler is None:
        raise ValueError("a rare_sampler is required when q > 0")
    rng = np.random.default_rng(config.seed)
    state = ar_state0
    y = [config.y0]
    jumps = [False]
    for _ in range(1, config.horizon):
        jump = rng.random() < config.q
        if jump:
            change = float(rare_sampler(rng))
            state = ARState(change, state.z_lag1)
        else:
            change, state = ar_step(model, state, rng)
        y.append(apply_change(y[-1], change))
        jumps.append(jump)
    return Realization(y=tuple(y), jumps=tuple(jumps), is_rare=any(jumps[1:]))


def generate_batch(
    config: RealizationConfig,
    model: ARModel,
    ar_state0: ARState,
    rare_sampler: RareSampler | None,
    n_realizations: int,
    threads: int = 1,
) -> list[Realization]:
    """Independent realizations with per-index derived seeds.

    Realization i uses seed derived from (config.seed, "realization", i),
    so the batch is identical regardless of thread count or scheduling.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")

    def one(i: int) -> Realization:
        cfg = replace(config, seed=derive_seed(config.seed, "realization", i))
        return generate_realization(cfg, model, ar_state0, rare_sampler)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(n_realizations)))
    return [one(i) for i in range(n_realizations)]


def write_realizations_csv(realizations: Sequence[Realization], out: TextIO) -> None:
    """CSV export: realization_id,stage,y,jump,is_rare."""
    out.write("realization_id,stage,y,jump,is_rare\n")
    for rid, r in enumerate(realizations):
        for h, (yv, j) in enumerate(zip(r.y, r.jumps)):
            out.write(f"{rid},{h},{fmt_float(yv)},{int(j)},{int(r.is_rare)}\n")
