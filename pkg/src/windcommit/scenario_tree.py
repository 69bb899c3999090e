"""Order-B scenario trees of wind power, in benchmark and rare-event-biased modes.

Nodes are stored breadth-first in flat arrays, so the children of any node
occupy a contiguous id range and stage slices are contiguous; the dispatch
solver sweeps stages without an explicit child list.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from io import StringIO
from pathlib import Path
from typing import TextIO

import numpy as np

from .formats import dumps, fmt_float
from .fv_tail import TailProbabilities, sample_rare_changes
from .stochastic_models import ARModel, ARState


class TreeFormatError(ValueError):
    """A serialized tree file is malformed; the message carries the line number."""


class TreeMode(str, enum.Enum):
    BENCHMARK = "benchmark"
    BIASED = "biased"


@dataclass(frozen=True)
class TreeConfig:
    horizon: int
    branching: int
    w0: float
    mode: TreeMode
    rare_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ValueError(f"horizon must be >= 2, got {self.horizon}")
        if self.branching < 1:
            raise ValueError(f"branching must be >= 1, got {self.branching}")
        if self.w0 < 0.0:
            raise ValueError(f"w0 must be >= 0, got {self.w0}")
        if not 0.0 <= self.rare_fraction <= 1.0:
            raise ValueError(f"rare_fraction must be in [0, 1], got {self.rare_fraction}")
        if self.mode is TreeMode.BIASED:
            n_rare = self.branching * self.rare_fraction
            if abs(n_rare - round(n_rare)) > 1e-9 or round(n_rare) < 1:
                raise ValueError(
                    f"biased mode needs branching*rare_fraction to be a positive "
                    f"integer, got {self.branching}*{self.rare_fraction}={n_rare}"
                )

    @property
    def n_rare_children(self) -> int:
        if self.mode is not TreeMode.BIASED:
            return 0
        return int(round(self.branching * self.rare_fraction))


@dataclass(frozen=True)
class TreeNode:
    id: int
    parent: int | None
    stage: int
    w: float
    ar_state: ARState
    rare_branch: bool


def node_count(branching: int, horizon: int) -> int:
    """Nodes in an order-B tree with the given horizon: sum of B^h, h < H."""
    if branching < 1 or horizon < 1:
        raise ValueError("branching and horizon must be >= 1")
    return sum(branching**h for h in range(horizon))


class ScenarioTree:
    """Breadth-first wind-power tree; arrays are frozen after construction."""

    def __init__(
        self,
        config: TreeConfig,
        w: np.ndarray,
        z_lag1: np.ndarray,
        z_lag2: np.ndarray,
        rare: np.ndarray,
    ):
        self.config = config
        n = node_count(config.branching, config.horizon)
        if not (len(w) == len(z_lag1) == len(z_lag2) == len(rare) == n):
            raise ValueError(f"expected arrays of length {n}")
        self._offsets = np.cumsum([0] + [config.branching**h for h in range(config.horizon)])
        self.w = np.asarray(w, dtype=float)
        self.z_lag1 = np.asarray(z_lag1, dtype=float)
        self.z_lag2 = np.asarray(z_lag2, dtype=float)
        self.rare = np.asarray(rare, dtype=bool)
        stage = np.empty(n, dtype=np.int64)
        parent = np.empty(n, dtype=np.int64)
        parent[0] = -1
        for h in range(config.horizon):
            stage[self._offsets[h] : self._offsets[h + 1]] = h
            if h > 0:
                ids = np.arange(self._offsets[h], self._offsets[h + 1])
                parent[ids] = self._offsets[h - 1] + (ids - self._offsets[h]) // config.branching
        self.stage = stage
        self.parent = parent
        for arr in (self.w, self.z_lag1, self.z_lag2, self.rare, self.stage, self.parent):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return int(self._offsets[-1])

    @property
    def n_nodes(self) -> int:
        return len(self)

    @property
    def n_scenarios(self) -> int:
        return self.config.branching ** (self.config.horizon - 1)

    def stage_ids(self, h: int) -> range:
        if not 0 <= h < self.config.horizon:
            raise ValueError(f"stage must be in 0..{self.config.horizon - 1}, got {h}")
        return range(int(self._offsets[h]), int(self._offsets[h + 1]))

    def children(self, node_id: int) -> range:
        """Contiguous id range of the node's children (empty for leaves)."""
        self._check_id(node_id)
        h = int(self.stage[node_id])
        if h == self.config.horizon - 1:
            return range(0, 0)
        b = self.config.branching
        first = int(self._offsets[h + 1]) + (node_id - int(self._offsets[h])) * b
        return range(first, first + b)

    def node(self, node_id: int) -> TreeNode:
        self._check_id(node_id)
        pid = int(self.parent[node_id])
        return TreeNode(
            id=node_id,
            parent=None if pid < 0 else pid,
            stage=int(self.stage[node_id]),
            w=float(self.w[node_id]),
            ar_state=ARState(float(self.z_lag1[node_id]), float(self.z_lag2[node_id])),
            rare_branch=bool(self.rare[node_id]),
        )

    def _check_id(self, node_id: int) -> None:
        if not 0 <= node_id < len(self):
            raise ValueError(f"node id {node_id} out of range 0..{len(self) - 1}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScenarioTree):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.z_lag1, other.z_lag1)
            and np.array_equal(self.z_lag2, other.z_lag2)
            and np.array_equal(self.rare, other.rare)
        )


def build_tree(
    config: TreeConfig, model: ARModel, tail: TailProbabilities | None = None
) -> ScenarioTree:
    """Generate the tree stage by stage from a single seeded stream.

    Each parent spawns B children with independent innovations: all AR draws
    in benchmark mode; in biased mode the first B*(1-rare_fraction) children
    are AR draws and the rest come from the rare-change sampler.  The drawn
    change (pre-clamp) is installed as the child's z_lag1, so both diagnostics
    and the AR recursion condition on it; w is clamped at zero.
    """
    if config.mode is TreeMode.BIASED and tail is None:
        raise ValueError("biased mode requires tail probabilities")
    rng = np.random.default_rng(config.seed)
    b = config.branching
    n = node_count(b, config.horizon)
    offsets = np.cumsum([0] + [b**h for h in range(config.horizon)])

    w = np.empty(n)
    z1 = np.zeros(n)
    z2 = np.zeros(n)
    rare = np.zeros(n, dtype=bool)
    w[0] = config.w0

    n_rare = config.n_rare_children
    n_ar = b - n_rare
    for h in range(config.horizon - 1):
        ps, pe = int(offsets[h]), int(offsets[h + 1])
        n_par = pe - ps
        par_w = np.repeat(w[ps:pe], b)
        par_z1 = np.repeat(z1[ps:pe], b)

        changes = np.empty(n_par * b)
        if n_ar > 0:
            eps = model.innovation_std * rng.standard_normal(n_par * n_ar)
            ar = (
                model.phi1 * np.repeat(z1[ps:pe], n_ar)
                + model.phi2 * np.repeat(z2[ps:pe], n_ar)
                + eps
            )
        if n_rare > 0:
            rr = sample_rare_changes(tail, tail.partition, rng, n_par * n_rare)
        mask = np.tile(np.r_[np.zeros(n_ar, bool), np.ones(n_rare, bool)], n_par)
        if n_ar > 0:
            changes[~mask] = ar
        if n_rare > 0:
            changes[mask] = rr

        cs, ce = int(offsets[h + 1]), int(offsets[h + 2])
        w[cs:ce] = np.maximum(par_w + changes, 0.0)
        z1[cs:ce] = changes
        z2[cs:ce] = par_z1
        rare[cs:ce] = mask
    return ScenarioTree(config, w, z1, z2, rare)


def node_weight(tree: ScenarioTree, node_id: int) -> float:
    """Scenario mass through the node: B^(-stage)."""
    tree._check_id(node_id)
    return float(tree.config.branching) ** (-int(tree.stage[node_id]))


def serialize(tree: ScenarioTree, dest: str | Path | TextIO) -> None:
    """Header JSON line, then one CSV line per node with 17-digit floats."""
    if isinstance(dest, (str, Path)):
        with open(dest, "w") as fh:
            serialize(tree, fh)
        return
    cfg = tree.config
    header = {
        "B": cfg.branching,
        "H": cfg.horizon,
        "w0": cfg.w0,
        "mode": cfg.mode.value,
        "seed": cfg.seed,
        "count": len(tree),
        "rare_fraction": cfg.rare_fraction,
    }
    dest.write(dumps(header, indent=None))
    dest.write("\n")
    parent = tree.parent
    stage = tree.stage
    for i in range(len(tree)):
        dest.write(
            f"{i},{int(parent[i])},{int(stage[i])},"
            f"{fmt_float(tree.w[i])},{fmt_float(tree.z_lag1[i])},"
            f"{fmt_float(tree.z_lag2[i])},{int(tree.rare[i])}\n"
        )


def deserialize(src: str | Path | TextIO) -> ScenarioTree:
    """Lossless inverse of serialize; malformed input reports a line number."""
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            return deserialize(fh)
    header_line = src.readline()
    if not header_line.strip():
        raise TreeFormatError("line 1: missing header")
    try:
        header = json.loads(header_line)
        config = TreeConfig(
            horizon=int(header["H"]),
            branching=int(header["B"]),
            w0=float(header["w0"]),
            mode=TreeMode(header["mode"]),
            rare_fraction=float(header.get("rare_fraction", 0.5)),
            seed=int(header["seed"]),
        )
        count = int(header["count"])
    except (KeyError, ValueError, TypeError) as exc:
        raise TreeFormatError(f"line 1: bad header ({exc})") from exc
    expected = node_count(config.branching, config.horizon)
    if count != expected:
        raise TreeFormatError(
            f"line 1: count {count} does not match a ({config.branching},{config.horizon}) tree ({expected})"
        )

    w = np.empty(count)
    z1 = np.empty(count)
    z2 = np.empty(count)
    rare = np.empty(count, dtype=bool)
    for i in range(count):
        line = src.readline()
        lineno = i + 2
        if not line:
            raise TreeFormatError(f"line {lineno}: file truncated, expected {count} node lines")
        parts = line.rstrip("\n").split(",")
        if len(parts) != 7:
            raise TreeFormatError(f"line {lineno}: expected 7 fields, got {len(parts)}")
        try:
            nid = int(parts[0])
            w[i] = float(parts[3])
            z1[i] = float(parts[4])
            z2[i] = float(parts[5])
            rare[i] = bool(int(parts[6]))
        except ValueError as exc:
            raise TreeFormatError(f"line {lineno}: {exc}") from exc
        if nid != i:
            raise TreeFormatError(f"line {lineno}: node id {nid} out of order (expected {i})")
        if not math.isfinite(w[i]) or w[i] < 0.0:
            raise TreeFormatError(f"line {lineno}: invalid wind power {parts[3]}")
    return ScenarioTree(config, w, z1, z2, rare)


def serialize_to_string(tree: ScenarioTree) -> str:
    buf = StringIO()
    serialize(tree, buf)
    return buf.getvalue()
