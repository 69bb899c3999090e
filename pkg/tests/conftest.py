import numpy as np
import pytest
from scipy.signal import lfilter, lfiltic

from windcommit import (
    ARModel,
    FVConfig,
    build_partition,
    estimate_exit_mass,
    fv_run,
    tail_probabilities,
)

ORACLE_STEPS = 10**7
ORACLE_SEED = 424242


@pytest.fixture(scope="session")
def default_model():
    return ARModel()


@pytest.fixture(scope="session")
def default_partition():
    return build_partition(2.0, 3.0, 9.0, 5)


@pytest.fixture(scope="session")
def mc_oracle(default_partition):
    """Plain-chain Monte Carlo reference, independent of the package internals.

    Simulates the AR(2) recursion directly with scipy's filter, then measures
    the exit mass P(Z <= -a) and the conditional interval distribution.
    """
    part = default_partition
    rng = np.random.default_rng(ORACLE_SEED)
    eps = rng.standard_normal(ORACLE_STEPS)
    b, a = [1.0], [1.0, -0.90, -0.05]
    z, _ = lfilter(b, a, eps, zi=lfiltic(b, a, [0.0, 0.0]))
    z = z[1000:]
    exit_mass = float(np.mean(z <= -part.a))
    below = z[z <= -part.a]
    asc = part.bin_edges_ascending()
    idx = np.searchsorted(asc, below, side="right")
    counts = np.bincount(idx, minlength=part.n_intervals + 1)[: part.n_intervals + 1]
    cond = counts / counts.sum()  # position order: deepest interval first, gap last
    k = part.n_intervals
    cond_intervals = cond[:k][::-1]  # reordered to C_1..C_K
    return {
        "exit_mass": exit_mass,
        "cond": cond_intervals,
        "cond_gap": float(cond[k]),
        "p_abs": exit_mass * cond_intervals,
    }


@pytest.fixture(scope="session")
def default_tail(default_model, default_partition):
    """One full-scale tail estimate shared across the suite (N=1000, 1e4 steps)."""
    cfg = FVConfig(n_particles=1000, n_steps=10_000, burn_in=100, seed=1234)
    nu = fv_run(default_model, default_partition, cfg)
    exit_mass = estimate_exit_mass(
        default_model, default_partition.a, 10**6, np.random.default_rng(77)
    )
    tp = tail_probabilities(nu, exit_mass, default_partition)
    return {"nu": nu, "exit_mass": exit_mass, "tp": tp, "config": cfg}
