"""Rare negative wind-change probabilities via a discrete-time Fleming-Viot system.

The change process visits the near region (-a, +inf) constantly and the deep
negative tail (-inf, -c) rarely.  A Fleming-Viot particle system keeps N
copies of the chain alive below -a by restarting any particle that climbs
above -a onto the state of another particle that is still below.  Occupation
of the tail intervals is accumulated with survival weights over excursions
started from the chain's entry distribution into (-inf, -a]; by the
regenerative (renewal-reward) identity this estimates the stationary
distribution conditional on being below -a.  Multiplying by the plain
Monte Carlo estimate of P(Z <= -a) yields absolute interval probabilities.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .formats import dumps, fmt_float
from .stochastic_models import ARModel, ARState, simulate_changes

# Excursion rounds stop once the cumulative survival weight is below this;
# later steps would contribute less than one part in 10^6 of the measure.
WEIGHT_FLOOR = 1e-6

# Hard cap on plain-chain steps while hunting entry states, so a pathological
# absorption boundary fails loudly instead of spinning forever.
_MAX_WARM_STEPS = 10**8

_CHUNK = 1 << 16


class EstimationError(RuntimeError):
    """The tail estimate is unusable (e.g. no particle ever reached the tail)."""


@dataclass(frozen=True)
class TailPartition:
    """Partition of the deep tail (-inf, -c_threshold) into K intervals.

    boundaries holds the finite edges -c_threshold * 10**(k*delta) for
    k = 0..inner_count, descending from -c_threshold to -inner_edge; the
    final interval C_K extends to -inf.  Interval k (1-based) is
    [boundaries[k], boundaries[k-1]) for k < K and (-inf, -inner_edge) for K.
    """

    a: float
    c_threshold: float
    inner_edge: float
    inner_count: int
    boundaries: tuple[float, ...]

    def __post_init__(self) -> None:
        if not (0.0 < self.a < self.c_threshold < self.inner_edge):
            raise ValueError(
                f"need 0 < a < c_threshold < inner_edge, got "
                f"a={self.a}, c_threshold={self.c_threshold}, inner_edge={self.inner_edge}"
            )
        if self.inner_count < 1:
            raise ValueError(f"inner_count must be >= 1, got {self.inner_count}")
        if len(self.boundaries) != self.inner_count + 1:
            raise ValueError("boundaries must have inner_count + 1 edges")
        for lo, hi in zip(self.boundaries[1:], self.boundaries[:-1]):
            if not lo < hi:
                raise ValueError("boundaries must be strictly descending")

    @property
    def n_intervals(self) -> int:
        return self.inner_count + 1

    @property
    def delta(self) -> float:
        """Log-10 width shared by the inner sub-intervals."""
        return (math.log10(self.inner_edge) - math.log10(self.c_threshold)) / self.inner_count

    def interval(self, k: int) -> tuple[float, float]:
        """(lower, upper) of interval k, 1-based; lower is -inf for k = K."""
        if not 1 <= k <= self.n_intervals:
            raise ValueError(f"interval index must be in 1..{self.n_intervals}, got {k}")
        if k == self.n_intervals:
            return (-math.inf, -self.inner_edge)
        return (self.boundaries[k], self.boundaries[k - 1])

    def interval_length(self, k: int) -> float:
        lo, hi = self.interval(k)
        return hi - lo

    def bin_edges_ascending(self) -> np.ndarray:
        """Edges for histogramming states z <= -a: tail intervals then the gap."""
        return np.concatenate([self.boundaries[::-1], [-self.a]])


def build_partition(
    a: float, c_threshold: float, inner_edge: float, inner_count: int
) -> TailPartition:
    """Log-10-equal partition of [-inner_edge, -c_threshold) plus the unbounded tail."""
    if not (0.0 < a < c_threshold < inner_edge):
        raise ValueError(
            f"need 0 < a < c_threshold < inner_edge, got "
            f"a={a}, c_threshold={c_threshold}, inner_edge={inner_edge}"
        )
    if inner_count < 1:
        raise ValueError(f"inner_count must be >= 1, got {inner_count}")
    delta = (math.log10(inner_edge) - math.log10(c_threshold)) / inner_count
    boundaries = tuple(-c_threshold * 10.0 ** (k * delta) for k in range(inner_count + 1))
    return TailPartition(
        a=a,
        c_threshold=c_threshold,
        inner_edge=inner_edge,
        inner_count=inner_count,
        boundaries=boundaries,
    )


@dataclass(frozen=True)
class FVConfig:
    """Particle-system run parameters.

    n_steps is the total particle-step budget across excursion rounds;
    burn_in is the plain-chain burn-in discarded before entry states are
    collected for each round's warm start.
    """

    n_particles: int = 1000
    n_steps: int = 10_000
    burn_in: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_particles < 2:
            raise ValueError(f"n_particles must be >= 2, got {self.n_particles}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.burn_in < 0:
            raise ValueError(f"burn_in must be >= 0, got {self.burn_in}")


@dataclass(frozen=True)
class TailProbabilities:
    """Estimated absolute and normalized tail-interval probabilities.

    occupation is the estimated conditional occupation over the K tail
    intervals followed by the gap bin [-c_threshold, -a]; it is None when
    loaded from a file that does not carry it.
    """

    p_hat: tuple[float, ...]
    weights: tuple[float, ...]
    occupation: tuple[float, ...] | None
    exit_mass: float
    partition: TailPartition


def warm_start_particles(
    model: ARModel,
    partition: TailPartition,
    n_particles: int,
    rng: np.random.Generator,
    burn_in: int = 0,
) -> np.ndarray:
    """Entry states of the plain chain into (-inf, -a].

    Simulates the change process from (0, 0), discards burn_in steps, and
    records the full AR state each time the chain steps from above -a to
    at or below it, cycling until n_particles entries are found.  Returns
    an (n_particles, 2) array of (z_lag1, z_lag2) rows, every z_lag1 <= -a.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    a = partition.a
    state = ARState(0.0, 0.0)
    if burn_in > 0:
        z = simulate_changes(model, state, burn_in, rng)
        state = ARState(float(z[-1]), float(z[-2]) if burn_in >= 2 else state.z_lag1)
    out = np.empty((n_particles, 2))
    found = 0
    total = 0
    while found < n_particles:
        if total > _MAX_WARM_STEPS:
            raise EstimationError(
                f"no {n_particles} entries below -a={-a} within {_MAX_WARM_STEPS} steps; "
                "the absorption boundary is too deep for this model"
            )
        z = simulate_changes(model, state, _CHUNK, rng)
        prev = np.concatenate(([state.z_lag1], z[:-1]))
        hits = np.flatnonzero((prev > -a) & (z <= -a))
        take = hits[: n_particles - found]
        out[found : found + take.size, 0] = z[take]
        out[found : found + take.size, 1] = prev[take]
        found += take.size
        total += _CHUNK
        state = ARState(float(z[-1]), float(z[-2]))
    return out


def fv_run(model: ARModel, partition: TailPartition, config: FVConfig) -> np.ndarray:
    """Survival-weighted Fleming-Viot occupation of the region below -a.

    Runs excursion rounds until the step budget is spent.  Each round starts
    the N particles on fresh entry states, then repeatedly: histogram the
    current particle values with the round's survival weight; advance every
    particle one AR step; restart each particle that climbed above -a
    (sequentially in particle-index order) onto a donor chosen uniformly
    among the particles currently at or below -a, a pool that includes
    particles already restarted this step; multiply the survival weight by
    the step's surviving fraction.  A round ends when its weight falls below
    WEIGHT_FLOOR.

    Returns the normalized occupation over the K tail intervals followed by
    the gap bin [-c_threshold, -a]; it estimates the stationary law of the
    change conditioned on being at or below -a.
    """
    rng = np.random.default_rng(config.seed)
    n = config.n_particles
    k_bins = partition.n_intervals + 1
    asc = partition.bin_edges_ascending()
    phi1, phi2, std = model.phi1, model.phi2, model.innovation_std
    neg_a = -partition.a

    counts = np.zeros(k_bins)
    steps_used = 0
    while steps_used < config.n_steps:
        particles = warm_start_particles(model, partition, n, rng, burn_in=config.burn_in)
        z1 = particles[:, 0].copy()
        z2 = particles[:, 1].copy()
        survival = 1.0
        while survival >= WEIGHT_FLOOR and steps_used < config.n_steps:
            idx = np.searchsorted(asc, z1, side="right")
            counts += survival * np.bincount(idx, minlength=k_bins)[:k_bins]
            z1, z2, d = _fv_step(model, neg_a, z1, z2, rng)
            survival *= 1.0 - d / n
            steps_used += 1

    total = counts.sum()
    if total <= 0.0:
        raise EstimationError("empty occupation histogram")
    nu = counts / total
    # rebase from position order (deepest first) to interval order C_1..C_K, gap
    k = partition.n_intervals
    out = np.empty(k_bins)
    out[:k] = nu[k - 1 :: -1]
    out[k] = nu[k]
    return out


def _fv_step(
    model: ARModel,
    neg_a: float,
    z1: np.ndarray,
    z2: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    """One Fleming-Viot step: advance all particles, restart the absorbed.

    Absorbed particles (new value above -a) are processed sequentially in
    particle-index order; each copies the full AR state of a donor chosen
    uniformly among the particles currently at or below -a, so an earlier
    restart in the same step is a valid donor.  Returns the new state arrays
    and the number of absorptions.
    """
    n = z1.size
    eps = model.innovation_std * rng.standard_normal(n)
    new1 = model.phi1 * z1 + model.phi2 * z2 + eps
    new2 = z1
    absorbed = np.flatnonzero(new1 > neg_a)
    d = absorbed.size
    if d == 0:
        return new1, new2, 0
    if d == n:
        raise EstimationError("entire particle set was absorbed in one step")
    alive = np.flatnonzero(new1 <= neg_a).tolist()
    # donor pool grows by one as each restarted particle rejoins it
    picks = rng.integers(0, n - d + np.arange(d))
    l1 = new1.tolist()
    l2 = new2.tolist()
    for j, i in zip(picks, absorbed):
        donor = alive[j]
        l1[i] = l1[donor]
        l2[i] = l2[donor]
        alive.append(i)
    return np.asarray(l1), np.asarray(l2), d


def estimate_exit_mass(
    model: ARModel, a: float, n_steps: int, rng: np.random.Generator
) -> float:
    """Plain Monte Carlo estimate of P(Z <= -a) under the stationary law.

    Single simulation from (0, 0) with the first 1000 steps discarded as
    burn-in; the region below -a is visited constantly, so a plain long-run
    frequency is accurate and cheap.
    """
    if not a >= 0.0:
        raise ValueError(f"a must be non-negative, got {a}")
    if n_steps < 100_000:
        raise ValueError(f"n_steps must be >= 100000 for a stable estimate, got {n_steps}")
    burn = 1000
    state = ARState(0.0, 0.0)
    hits = 0
    kept = 0
    remaining = n_steps + burn
    to_discard = burn
    while remaining > 0:
        chunk = min(remaining, 1_000_000)
        z = simulate_changes(model, state, chunk, rng)
        state = ARState(float(z[-1]), float(z[-2]) if chunk >= 2 else state.z_lag1)
        if to_discard >= chunk:
            to_discard -= chunk
        else:
            zz = z[to_discard:]
            to_discard = 0
            hits += int(np.count_nonzero(zz <= -a))
            kept += zz.size
        remaining -= chunk
    return hits / kept


def tail_probabilities(
    nu: np.ndarray, exit_mass: float, partition: TailPartition
) -> TailProbabilities:
    """Absolute interval probabilities p_hat_k = exit_mass * nu(C_k) and weights."""
    k = partition.n_intervals
    nu = np.asarray(nu, dtype=float)
    if nu.shape != (k + 1,):
        raise ValueError(f"expected occupation over {k + 1} bins, got shape {nu.shape}")
    if np.any(nu < 0.0) or abs(float(nu.sum()) - 1.0) > 1e-9:
        raise ValueError("occupation histogram must be normalized and non-negative")
    if not 0.0 <= exit_mass <= 1.0:
        raise ValueError(f"exit_mass must be a probability, got {exit_mass}")
    p_hat = exit_mass * nu[:k]
    total = float(p_hat.sum())
    if total <= 0.0:
        raise EstimationError(
            "tail intervals were never visited; increase n_steps or n_particles"
        )
    weights = p_hat / total
    weights = weights / weights.sum()
    return TailProbabilities(
        p_hat=tuple(float(p) for p in p_hat),
        weights=tuple(float(w) for w in weights),
        occupation=tuple(float(v) for v in nu),
        exit_mass=float(exit_mass),
        partition=partition,
    )


def sample_rare_changes(
    tp: TailProbabilities,
    partition: TailPartition,
    rng: np.random.Generator,
    size: int,
) -> np.ndarray:
    """Vectorized rare-change draws from the estimated interval mixture.

    An interval is chosen by normalized weight; inner intervals are sampled
    uniformly as upper - length*(1 - u) with u ~ U[0,1), which lands in
    [lower, upper) exactly; the unbounded interval uses -inner_edge - Exp(1).
    Uniform and exponential variates are drawn for every slot regardless of
    the chosen interval so the stream layout does not depend on the choices.
    """
    k = partition.n_intervals
    ls = rng.choice(k, size=size, p=np.asarray(tp.weights))
    u = rng.random(size)
    e = rng.exponential(1.0, size)
    while np.any(e == 0.0):  # zero would land exactly on the open edge
        zero = e == 0.0
        e[zero] = rng.exponential(1.0, int(zero.sum()))
    uppers = np.array([partition.interval(j)[1] for j in range(1, k)])
    lengths = np.array([partition.interval_length(j) for j in range(1, k)])
    inner = np.minimum(ls, k - 2)
    vals = np.where(
        ls < k - 1,
        uppers[inner] - lengths[inner] * (1.0 - u),
        -partition.inner_edge - e,
    )
    return vals


def sample_rare_change(
    tp: TailProbabilities, partition: TailPartition, rng: np.random.Generator
) -> float:
    """One rare-change draw; always lies in the chosen tail interval."""
    return float(sample_rare_changes(tp, partition, rng, 1)[0])


def rare_change_sampler(tp: TailProbabilities):
    """Sampler closure over fitted tail probabilities, for the mixture model."""
    return lambda rng: sample_rare_change(tp, tp.partition, rng)


def save_tail_probabilities(tp: TailProbabilities, config: FVConfig, out: TextIO) -> None:
    """JSON export: {a, c_threshold, edges, p_hat, weights, exit_mass, config}."""
    doc = {
        "a": tp.partition.a,
        "c_threshold": tp.partition.c_threshold,
        "edges": list(tp.partition.boundaries),
        "p_hat": list(tp.p_hat),
        "weights": list(tp.weights),
        "exit_mass": tp.exit_mass,
        "config": {
            "n_particles": config.n_particles,
            "n_steps": config.n_steps,
            "burn_in": config.burn_in,
            "seed": config.seed,
        },
    }
    out.write(dumps(doc))
    out.write("\n")


def load_tail_probabilities(src: TextIO) -> TailProbabilities:
    """Inverse of save_tail_probabilities; occupation is not persisted."""
    doc = json.load(src)
    edges = [float(x) for x in doc["edges"]]
    partition = TailPartition(
        a=float(doc["a"]),
        c_threshold=float(doc["c_threshold"]),
        inner_edge=-edges[-1],
        inner_count=len(edges) - 1,
        boundaries=tuple(edges),
    )
    p_hat = tuple(float(x) for x in doc["p_hat"])
    weights = tuple(float(x) for x in doc["weights"])
    if len(p_hat) != partition.n_intervals or len(weights) != partition.n_intervals:
        raise ValueError("p_hat/weights length does not match the partition")
    return TailProbabilities(
        p_hat=p_hat,
        weights=weights,
        occupation=None,
        exit_mass=float(doc["exit_mass"]),
        partition=partition,
    )
