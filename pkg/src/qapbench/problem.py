"""Allocation states, the risk objective, feasibility, and rewards.

An allocation assigns each of ``m`` phones to one of ``n`` hosts. Its risk
is the total complementary tie strength over co-located pairs:

    risk = 1/2 * sum_{i != j} (1 - w[i][j]) * [assign[i] == assign[j]]

Capacity feasibility (at most ``c_j`` phones on host ``j``) is checked but
never enforced structurally: states may be infeasible, and the reward's
KL penalty is the only pressure toward the desired host distribution.

All operations are pure; :class:`AllocationState` is a value type backed by
a read-only array.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, StateError
from .graph import CommGraph, complement, format_graph, parse_graph, read_graph


@dataclass(frozen=True)
class ProblemInstance:
    """A communication graph plus host-side data.

    Attributes
    ----------
    graph : CommGraph
    n : int
        Number of hosts.
    capacities : np.ndarray, shape (n,), int64
        Maximum phones per host. Must satisfy sum(capacities) >= m.
    desired_dist : np.ndarray, shape (n,), float64
        Target distribution of phones over hosts; strictly positive,
        sums to 1 within 1e-12.
    """

    graph: CommGraph
    n: int
    capacities: np.ndarray
    desired_dist: np.ndarray

    def __post_init__(self):
        caps = np.array(self.capacities, dtype=np.int64)
        q = np.array(self.desired_dist, dtype=np.float64)
        if caps.shape != (self.n,) or q.shape != (self.n,):
            raise ConfigError("capacities and desired_dist must have length n")
        if caps.sum() < self.graph.m:
            raise ConfigError(
                f"total capacity {int(caps.sum())} < m={self.graph.m}: no feasible allocation"
            )
        if np.any(q <= 0.0):
            raise ConfigError("desired_dist entries must be strictly positive")
        if abs(q.sum() - 1.0) > 1e-12:
            raise ConfigError("desired_dist must sum to 1 within 1e-12")
        caps.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "capacities", caps)
        object.__setattr__(self, "desired_dist", q)

    @property
    def m(self) -> int:
        return self.graph.m

    @cached_property
    def w_bar(self) -> np.ndarray:
        wb = complement(self.graph)
        wb.setflags(write=False)
        return wb


@dataclass(frozen=True)
class AllocationState:
    """Phone-to-host assignment as a length-m vector of host indices."""

    assign: np.ndarray

    def __post_init__(self):
        a = np.array(self.assign, dtype=np.int64)
        if a.ndim != 1:
            raise StateError("assignment must be one-dimensional")
        a.setflags(write=False)
        object.__setattr__(self, "assign", a)


def _check_state(inst: ProblemInstance, s: AllocationState) -> None:
    if s.assign.shape != (inst.m,):
        raise StateError(f"assignment length {s.assign.size} != m={inst.m}")
    if s.assign.size and (s.assign.min() < 0 or s.assign.max() >= inst.n):
        raise StateError("host index out of range")


def random_state(inst: ProblemInstance, rng: np.random.Generator) -> AllocationState:
    """Uniform independent host per phone; not necessarily feasible."""
    return AllocationState(rng.integers(0, inst.n, size=inst.m))


def risk(inst: ProblemInstance, s: AllocationState) -> float:
    """Total co-location risk of a state."""
    _check_state(inst, s)
    a = s.assign
    same = a[:, None] == a[None, :]
    return 0.5 * float(inst.w_bar[same].sum())


def host_counts(inst: ProblemInstance, s: AllocationState) -> np.ndarray:
    _check_state(inst, s)
    return np.bincount(s.assign, minlength=inst.n).astype(np.int64)


def is_feasible(inst: ProblemInstance, s: AllocationState) -> bool:
    """True iff every host's occupancy is within its capacity."""
    return bool(np.all(host_counts(inst, s) <= inst.capacities))


def host_distribution(inst: ProblemInstance, s: AllocationState) -> np.ndarray:
    """Empirical distribution of phones over hosts; sums to 1."""
    return host_counts(inst, s) / inst.m


def kl_penalty(inst: ProblemInstance, s: AllocationState) -> float:
    """KL(actual || desired) with the 0*log(0) = 0 convention.

    Finite because the desired distribution is strictly positive; zero iff
    the actual distribution matches it exactly.
    """
    return _kl_from_counts(host_counts(inst, s), inst.m, inst.desired_dist)


def _kl_from_counts(counts: np.ndarray, m: int, q: np.ndarray) -> float:
    total = 0.0
    for c, qj in zip(counts, q):
        if c > 0:
            p = c / m
            total += p * math.log(p / qj)
    return total


def apply_move(s: AllocationState, phone: int, host: int) -> AllocationState:
    """Return a new state with one phone reassigned; the input is unchanged."""
    if not (0 <= phone < s.assign.size):
        raise StateError(f"phone index {phone} out of range")
    if host < 0:
        raise StateError(f"host index {host} out of range")
    a = s.assign.copy()
    a[phone] = host
    return AllocationState(a)


def move_deltas(
    inst: ProblemInstance, s: AllocationState, phone: int, host: int
) -> tuple[float, float]:
    """(risk delta, KL delta) of moving one phone, in O(m).

    Only the moved phone's row of the risk matrix and the two affected
    hosts' occupancy terms change, so the full objective never needs to be
    recomputed per step.
    """
    _check_state(inst, s)
    if not (0 <= phone < inst.m) or not (0 <= host < inst.n):
        raise StateError("move indices out of range")
    a = s.assign
    old = int(a[phone])
    if old == host:
        return 0.0, 0.0
    row = inst.w_bar[phone]
    drisk = float(row[a == host].sum() - row[a == old].sum())

    counts = host_counts(inst, s)
    m, q = inst.m, inst.desired_dist
    kl_before = _kl_terms(counts[old], m, q[old]) + _kl_terms(counts[host], m, q[host])
    kl_after = _kl_terms(counts[old] - 1, m, q[old]) + _kl_terms(counts[host] + 1, m, q[host])
    return drisk, kl_after - kl_before


def _kl_terms(count: int, m: int, qj: float) -> float:
    if count <= 0:
        return 0.0
    p = count / m
    return p * math.log(p / qj)


def step_reward(
    inst: ProblemInstance,
    before: AllocationState,
    after: AllocationState,
    beta: float = 1.0,
) -> float:
    """Reward for one reallocation: the cut in risk plus ``beta`` times the
    cut in the KL penalty.

    ``before`` and ``after`` may differ in at most one phone. Summed over an
    episode, the penalty part telescopes to ``beta * (KL_first - KL_last)``.
    """
    diff = np.nonzero(before.assign != after.assign)[0]
    if diff.size == 0:
        return 0.0
    if diff.size > 1:
        raise StateError("states differ in more than one phone")
    phone = int(diff[0])
    drisk, dkl = move_deltas(inst, before, phone, int(after.assign[phone]))
    return -drisk + beta * (-dkl)


def capacities_from_relative(rel, m: int) -> np.ndarray:
    """Integer capacities from relative shares, guaranteed to cover m phones.

    Each share is rounded half-up; if the rounded total still falls short of
    ``m``, the most under-allocated hosts (largest ``rel_j * m - c_j``, ties
    to the lowest index) are topped up one by one. The result satisfies
    ``m <= sum(c) <= m + n``.
    """
    rel = np.asarray(rel, dtype=np.float64)
    if rel.ndim != 1 or rel.size == 0:
        raise ConfigError("relative capacities must be a non-empty 1-d sequence")
    if np.any(rel < 0) or abs(rel.sum() - 1.0) > 1e-9:
        raise ConfigError("relative capacities must be nonnegative and sum to 1")
    shares = rel * m
    caps = np.floor(shares + 0.5).astype(np.int64)
    deficit = m - int(caps.sum())
    if deficit > 0:
        order = np.argsort(-(shares - caps), kind="stable")
        for idx in order[:deficit]:
            caps[idx] += 1
    return caps


# ---------------------------------------------------------------------------
# File format: versioned plain text.
#
#   qapinst v1 m=<int> n=<int>
#   capacities <n ints>
#   desired <n floats, 9 significant digits>
#   <graph: either an embedded qapgraph v1 block, or "graph <relative path>">
# ---------------------------------------------------------------------------

_INST_HEADER_RE = re.compile(r"^qapinst v1 m=(\d+) n=(\d+)$")


def format_instance(inst: ProblemInstance) -> str:
    """Serialize an instance with its graph embedded."""
    lines = [
        f"qapinst v1 m={inst.m} n={inst.n}",
        "capacities " + " ".join(str(int(c)) for c in inst.capacities),
        "desired " + " ".join(f"{x:.9g}" for x in inst.desired_dist),
    ]
    return "\n".join(lines) + "\n" + format_graph(inst.graph)


def write_instance(inst: ProblemInstance, path) -> None:
    Path(path).write_text(format_instance(inst))


def read_instance(path) -> ProblemInstance:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) < 4:
        raise ConfigError("truncated qapinst file")
    match = _INST_HEADER_RE.match(lines[0].strip())
    if match is None:
        raise ConfigError(f"bad qapinst header: {lines[0]!r}")
    m, n = int(match.group(1)), int(match.group(2))
    if not lines[1].startswith("capacities ") or not lines[2].startswith("desired "):
        raise ConfigError("qapinst requires 'capacities' then 'desired' lines")
    caps = [int(x) for x in lines[1].split()[1:]]
    desired = [float(x) for x in lines[2].split()[1:]]
    if lines[3].startswith("graph "):
        graph = read_graph(path.parent / lines[3].split(None, 1)[1])
    else:
        graph = parse_graph("\n".join(lines[3:]))
    if graph.m != m:
        raise ConfigError(f"graph has m={graph.m}, header says {m}")
    return ProblemInstance(graph=graph, n=n, capacities=caps, desired_dist=desired)
