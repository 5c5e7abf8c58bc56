"""Weighted communication graphs and their random generators.

A communication graph over ``m`` phones is a dense symmetric matrix of tie
strengths in ``[0, 1]``. Strong ties mean frequent communication; the
complementary weight ``1 - w`` is the co-location risk used by the
objective. The diagonal is fixed at 1 so a phone carries zero risk against
itself.

Two generators are provided:

* :func:`gen_sbm` draws a clustered binary graph from a stochastic block
  model (edge = tie of strength 1).
* :func:`gen_uniform` draws independent ``Uniform(0, 1)`` tie strengths for
  every unordered pair.

Both are pure functions of their configuration and seed. Randomness comes
from NumPy's ``default_rng`` (PCG64), so reruns with the same seed are
byte-identical within a NumPy major version.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

_SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class CommGraph:
    """Symmetric weighted communication graph over ``m`` phones.

    Attributes
    ----------
    m : int
        Number of phones (nodes).
    w : np.ndarray, shape (m, m), float64
        Tie strengths. Symmetric, off-diagonal entries in [0, 1],
        diagonal fixed at 1. The array is read-only after construction.
    """

    m: int
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.shape != (self.m, self.m):
            raise ConfigError(f"weight matrix shape {w.shape} != ({self.m}, {self.m})")
        if not np.isfinite(w).all():
            raise ConfigError("weight matrix contains non-finite entries")
        if np.abs(w - w.T).max(initial=0.0) > _SYMMETRY_TOL:
            raise ConfigError("weight matrix is not symmetric")
        off = w[~np.eye(self.m, dtype=bool)]
        if off.size and (off.min() < 0.0 or off.max() > 1.0):
            raise ConfigError("off-diagonal weights must lie in [0, 1]")
        if not np.all(w.diagonal() == 1.0):
            raise ConfigError("diagonal must be fixed at 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class SbmConfig:
    """Configuration for the stochastic block model generator.

    ``cluster_sizes`` must partition ``m``. Use
    :func:`cluster_sizes_from_proportions` to derive sizes from fractional
    proportions. ``p_between > p_within`` (anti-community structure) is
    legal but triggers a warning.
    """

    m: int
    num_clusters: int
    cluster_sizes: tuple[int, ...]
    p_within: float
    p_between: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(s) for s in self.cluster_sizes))
        if self.m < 1:
            raise ConfigError("m must be positive")
        if self.num_clusters < 1 or len(self.cluster_sizes) != self.num_clusters:
            raise ConfigError("cluster_sizes length must equal num_clusters")
        if any(s < 1 for s in self.cluster_sizes):
            raise ConfigError("every cluster size must be >= 1")
        if sum(self.cluster_sizes) != self.m:
            raise ConfigError(f"cluster sizes sum to {sum(self.cluster_sizes)}, expected m={self.m}")
        for name in ("p_within", "p_between"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"{name}={p} is not a probability")
        if self.p_between > self.p_within:
            warnings.warn(
                "p_between > p_within: generating anti-community structure",
                stacklevel=2,
            )


def cluster_sizes_from_proportions(m: int, proportions) -> tuple[int, ...]:
    """Convert fractional cluster proportions into integer sizes summing to m.

    Largest-remainder apportionment: floor each share, then hand out the
    remaining nodes in order of descending fractional remainder (ties go to
    the lowest index). Deterministic and exact.
    """
    props = np.asarray(proportions, dtype=np.float64)
    if props.ndim != 1 or props.size == 0:
        raise ConfigError("proportions must be a non-empty 1-d sequence")
    if np.any(props < 0) or abs(props.sum() - 1.0) > 1e-9:
        raise ConfigError("proportions must be nonnegative and sum to 1")
    shares = props * m
    sizes = np.floor(shares).astype(np.int64)
    remainders = shares - sizes
    # Stable sort on (-remainder, index) hands ties to the lowest index.
    order = np.argsort(-remainders, kind="stable")
    for idx in order[: m - int(sizes.sum())]:
        sizes[idx] += 1
    if np.any(sizes < 1):
        raise ConfigError("apportionment produced an empty cluster; use fewer clusters")
    return tuple(int(s) for s in sizes)


def gen_sbm(cfg: SbmConfig) -> CommGraph:
    """Draw a binary clustered graph from the stochastic block model.

    Each unordered pair {i, j} gets an independent Bernoulli edge with
    probability ``p_within`` when both endpoints share a cluster and
    ``p_between`` otherwise; an edge sets the tie strength to 1. The
    diagonal is 1 by convention.
    """
    m = cfg.m
    labels = np.repeat(np.arange(cfg.num_clusters), cfg.cluster_sizes)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, cfg.p_within, cfg.p_between)

    rng = np.random.default_rng(cfg.seed)
    draws = rng.random((m, m))
    upper = np.triu(draws < prob, k=1)
    w = upper.astype(np.float64)
    w += w.T
    np.fill_diagonal(w, 1.0)
    return CommGraph(m=m, w=w)


def gen_uniform(m: int, seed: int = 0) -> CommGraph:
    """Draw a dense graph with independent Uniform(0, 1) tie strengths.

    Every unordered off-diagonal pair gets one draw, mirrored to keep the
    matrix symmetric; the diagonal is 1.
    """
    if m < 2:
        raise ConfigError("gen_uniform requires m >= 2")
    rng = np.random.default_rng(seed)
    draws = rng.random((m, m))
    w = np.triu(draws, k=1)
    w += w.T
    np.fill_diagonal(w, 1.0)
    return CommGraph(m=m, w=w)


def complement(g: CommGraph) -> np.ndarray:
    """Complementary risk matrix ``1 - w``: symmetric with zero diagonal."""
    return 1.0 - g.w


# ---------------------------------------------------------------------------
# File format: versioned plain text, dense row-major weights.
#
#   qapgraph v1 m=<int>
#   <m rows of m space-separated weights, 9 significant digits>
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^qapgraph v1 m=(\d+)$")


def format_graph(g: CommGraph) -> str:
    """Serialize a graph to the ``qapgraph v1`` text format."""
    lines = [f"qapgraph v1 m={g.m}"]
    for row in g.w:
        lines.append(" ".join(f"{x:.9g}" for x in row))
    return "\n".join(lines) + "\n"


def write_graph(g: CommGraph, path) -> None:
    Path(path).write_text(format_graph(g))


def parse_graph(text: str) -> CommGraph:
    """Parse the ``qapgraph v1`` format.

    Validates symmetry within 1e-9 and re-symmetrizes by averaging with the
    transpose, so serialization round-trips cannot accumulate asymmetry.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigError("empty graph file")
    match = _HEADER_RE.match(lines[0].strip())
    if match is None:
        raise ConfigError(f"bad qapgraph header: {lines[0]!r}")
    m = int(match.group(1))
    if len(lines) != m + 1:
        raise ConfigError(f"expected {m} weight rows, found {len(lines) - 1}")
    try:
        w = np.array([[float(x) for x in ln.split()] for ln in lines[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ConfigError(f"unparseable weight entry: {exc}") from exc
    if w.shape != (m, m):
        raise ConfigError(f"weight rows have wrong width for m={m}")
    if np.abs(w - w.T).max(initial=0.0) > _SYMMETRY_TOL:
        raise ConfigError("graph file asymmetric beyond 1e-9")
    w = (w + w.T) / 2.0
    return CommGraph(m=m, w=w)


def read_graph(path) -> CommGraph:
    return parse_graph(Path(path).read_text())
