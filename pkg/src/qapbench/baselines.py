"""Classical solvers that calibrate the learned agent.

* :func:`brute_force` - exact minimum-risk allocation by pruned enumeration,
  bounded to ``n**m <= 1e7``.
* :func:`random_feasible` / :func:`greedy_construct` - cheap constructive
  baselines.
* :func:`local_search_swap` - best-improvement relocation/swap descent.
* :func:`qp_relax_solve` - Frank-Wolfe minimization of the continuous
  relaxation over the transportation polytope {X >= 0, row sums = 1,
  column sums <= capacities}, with an exact min-cost-flow linear oracle,
  followed by :func:`round_fractional` to recover a feasible allocation.

The relaxation is non-convex (the complementary weight matrix is
indefinite), so Frank-Wolfe only reaches a stationary point; the best
iterate seen is returned. All solvers are pure functions of their inputs
and seeds, and every result carries its re-verified risk.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InfeasibleInstanceError, InstanceTooLargeError, StateError
from .problem import AllocationState, ProblemInstance, host_counts, is_feasible, risk

_BRUTE_FORCE_LIMIT = 10_000_000
_SUFFIX_BLOCK = 1 << 16


@dataclass(frozen=True)
class FractionalAllocation:
    """Relaxed allocation: nonnegative matrix with unit row sums."""

    x: np.ndarray  # (m, n)

    def __post_init__(self):
        x = np.array(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError("fractional allocation must be a matrix")
        if x.min(initial=0.0) < -1e-12:
            raise ConfigError("fractional allocation has negative entries")
        if np.abs(x.sum(axis=1) - 1.0).max(initial=0.0) > 1e-9:
            raise ConfigError("fractional allocation rows must sum to 1")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    def host_loads(self) -> np.ndarray:
        return self.x.sum(axis=0)


@dataclass(frozen=True)
class BaselineResult:
    allocation: AllocationState
    risk: float
    feasible: bool
    wall_time: float
    method: str


def _finish(inst: ProblemInstance, assign: np.ndarray, method: str, t0: float) -> BaselineResult:
    state = AllocationState(assign)
    return BaselineResult(
        allocation=state,
        risk=risk(inst, state),
        feasible=is_feasible(inst, state),
        wall_time=time.perf_counter() - t0,
        method=method,
    )


# ---------------------------------------------------------------------------
# Exact enumeration.
# ---------------------------------------------------------------------------


def _suffix_tables(wb: np.ndarray, caps: np.ndarray, lo: int, m: int, n: int):
    """Precompute, for all host tuples of phones lo..m-1: the digit matrix,
    the internal pairwise risk, and per-host counts."""
    v = m - lo
    size = n ** v
    digits = np.empty((size, v), dtype=np.int8)
    idx = np.arange(size)
    for pos in range(v):
        digits[:, pos] = (idx // (n ** (v - 1 - pos))) % n
    internal = np.zeros(size)
    for a in range(v):
        for b in range(a + 1, v):
            internal += wb[lo + a, lo + b] * (digits[:, a] == digits[:, b])
    counts = np.empty((size, n), dtype=np.int32)
    for j in range(n):
        counts[:, j] = (digits == j).sum(axis=1)
    return digits, internal, counts


def brute_force(inst: ProblemInstance) -> BaselineResult:
    """Globally optimal feasible allocation; ties break lexicographically.

    Enumerates host tuples phone by phone, skipping any prefix that already
    violates a capacity or cannot beat the incumbent risk; the last few
    phones are enumerated as one vectorized block.
    """
    t0 = time.perf_counter()
    m, n = inst.m, inst.n
    if n ** m > _BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(
            f"n^m = {n}^{m} exceeds the enumeration bound {_BRUTE_FORCE_LIMIT:g}"
        )
    wb = inst.w_bar
    caps = inst.capacities

    v = 0
    while v < m and n ** (v + 1) <= _SUFFIX_BLOCK:
        v += 1
    lo = m - v
    digits, internal, suffix_counts = _suffix_tables(wb, caps, lo, m, n)
    suffix_rows = np.arange(v)

    best_risk = np.inf
    best_assign: np.ndarray | None = None
    prefix = np.empty(lo, dtype=np.int64)
    prefix_counts = np.zeros(n, dtype=np.int64)

    def scan_block(prefix_risk: float) -> None:
        nonlocal best_risk, best_assign
        if v == 0:
            if prefix_risk < best_risk:
                best_risk = prefix_risk
                best_assign = prefix.copy()
            return
        # cost of each suffix phone against the fixed prefix, per host
        if lo:
            onehot = np.zeros((lo, n))
            onehot[np.arange(lo), prefix] = 1.0
            cross = wb[lo:, :lo] @ onehot  # (v, n)
            middle = cross[suffix_rows[None, :], digits].sum(axis=1)
        else:
            middle = 0.0
        total = prefix_risk + middle + internal
        feasible = np.all(suffix_counts <= (caps - prefix_counts)[None, :], axis=1)
        if not feasible.any():
            return
        total = np.where(feasible, total, np.inf)
        idx = int(np.argmin(total))
        if total[idx] < best_risk:
            best_risk = float(total[idx])
            best_assign = np.concatenate([prefix, digits[idx].astype(np.int64)])

    def dfs(pos: int, prefix_risk: float) -> None:
        if prefix_risk >= best_risk:
            return
        if pos == lo:
            scan_block(prefix_risk)
            return
        row = wb[pos, :pos]
        for host in range(n):
            if prefix_counts[host] >= caps[host]:
                continue
            added = float(row[prefix[:pos] == host].sum()) if pos else 0.0
            prefix[pos] = host
            prefix_counts[host] += 1
            dfs(pos + 1, prefix_risk + added)
            prefix_counts[host] -= 1

    dfs(0, 0.0)
    if best_assign is None:
        raise InfeasibleInstanceError("no feasible allocation exists")
    return _finish(inst, best_assign, "brute_force", t0)


# ---------------------------------------------------------------------------
# Constructive baselines.
# ---------------------------------------------------------------------------


def random_feasible(inst: ProblemInstance, rng: np.random.Generator) -> BaselineResult:
    """Phones in random order, each on a uniformly chosen host with room."""
    t0 = time.perf_counter()
    remaining = inst.capacities.copy()
    assign = np.empty(inst.m, dtype=np.int64)
    for phone in rng.permutation(inst.m):
        open_hosts = np.flatnonzero(remaining > 0)
        host = int(open_hosts[rng.integers(open_hosts.size)])
        assign[phone] = host
        remaining[host] -= 1
    return _finish(inst, assign, "random", t0)


def greedy_construct(inst: ProblemInstance) -> BaselineResult:
    """Strongest-tied phones first, each on the feasible host that adds the
    least risk against already-placed phones (lowest index on ties)."""
    t0 = time.perf_counter()
    w = inst.graph.w
    wb = inst.w_bar
    order = np.argsort(-(w.sum(axis=1) - 1.0), kind="stable")
    remaining = inst.capacities.copy()
    assign = np.full(inst.m, -1, dtype=np.int64)
    for phone in order:
        deltas = np.full(inst.n, np.inf)
        for j in range(inst.n):
            if remaining[j] > 0:
                deltas[j] = wb[phone][assign == j].sum()
        host = int(np.argmin(deltas))
        assign[phone] = host
        remaining[host] -= 1
    return _finish(inst, assign, "greedy", t0)


# ---------------------------------------------------------------------------
# Local search.
# ---------------------------------------------------------------------------


def local_search_swap(inst: ProblemInstance, start: AllocationState,
                      budget: int) -> BaselineResult:
    """Best-improvement descent over single relocations and pairwise swaps.

    Each pass scans every feasible relocation and every cross-host swap and
    applies the single best strictly improving move (relocations win ties,
    then lexicographic order); stops when no move improves or after
    ``budget`` passes. The result never violates capacities and its risk
    never exceeds the start's.
    """
    t0 = time.perf_counter()
    if not is_feasible(inst, start):
        raise StateError("local search requires a feasible starting allocation")
    if budget < 0:
        raise ConfigError("budget must be nonnegative")
    wb = inst.w_bar
    caps = inst.capacities
    m, n = inst.m, inst.n
    assign = start.assign.copy()
    counts = host_counts(inst, start).copy()
    rows = np.arange(m)

    for _ in range(budget):
        onehot = np.zeros((m, n))
        onehot[rows, assign] = 1.0
        r = wb @ onehot                       # r[i, j]: risk of i against host j
        r_own = r[rows, assign]

        reloc = r - r_own[:, None]
        reloc[rows, assign] = np.inf
        reloc[:, :][np.broadcast_to(counts >= caps, (m, n))] = np.inf
        best_reloc_flat = int(np.argmin(reloc))
        best_reloc = reloc.reshape(-1)[best_reloc_flat]

        gathered = r[:, assign]               # gathered[i, j] = r[i, host of j]
        swap = gathered - r_own[:, None] + gathered.T - r_own[None, :] - 2.0 * wb
        same_host = assign[:, None] == assign[None, :]
        swap[same_host] = np.inf
        swap[np.tril_indices(m)] = np.inf
        best_swap_flat = int(np.argmin(swap))
        best_swap = swap.reshape(-1)[best_swap_flat]

        if min(best_reloc, best_swap) >= -1e-12:
            break
        if best_reloc <= best_swap:
            phone, host = divmod(best_reloc_flat, n)
            counts[assign[phone]] -= 1
            counts[host] += 1
            assign[phone] = host
        else:
            i, j = divmod(best_swap_flat, m)
            assign[i], assign[j] = assign[j], assign[i]
    return _finish(inst, assign, "local_search", t0)


# ---------------------------------------------------------------------------
# Linear minimization oracle: min <cost, X> over the transportation polytope,
# solved exactly as a min-cost flow by successive shortest paths. Phones have
# unit supply; hosts drain into the sink with their capacities, so unused
# capacity is simply flow that never materializes.
# ---------------------------------------------------------------------------


class _FlowNetwork:
    def __init__(self, num_nodes: int):
        self.num_nodes = num_nodes
        self.to: list[int] = []
        self.cap: list[float] = []
        self.cost: list[float] = []
        self.adj: list[list[int]] = [[] for _ in range(num_nodes)]

    def add_edge(self, u: int, v: int, cap: float, cost: float) -> int:
        idx = len(self.to)
        self.to.append(v); self.cap.append(cap); self.cost.append(cost)
        self.adj[u].append(idx)
        self.to.append(u); self.cap.append(0.0); self.cost.append(-cost)
        self.adj[v].append(idx + 1)
        return idx


def _bellman_ford(net: _FlowNetwork, src: int) -> np.ndarray:
    dist = np.full(net.num_nodes, np.inf)
    dist[src] = 0.0
    for _ in range(net.num_nodes - 1):
        changed = False
        for u in range(net.num_nodes):
            du = dist[u]
            if not np.isfinite(du):
                continue
            for e in net.adj[u]:
                if net.cap[e] > 0.5 and du + net.cost[e] < dist[net.to[e]] - 1e-15:
                    dist[net.to[e]] = du + net.cost[e]
                    changed = True
        if not changed:
            break
    return dist


def _dijkstra(net: _FlowNetwork, src: int, pot: np.ndarray):
    dist = np.full(net.num_nodes, np.inf)
    dist[src] = 0.0
    prev_edge = np.full(net.num_nodes, -1, dtype=np.int64)
    heap = [(0.0, src)]
    done = np.zeros(net.num_nodes, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for e in net.adj[u]:
            if net.cap[e] <= 0.5:
                continue
            v = net.to[e]
            # reduced cost; tiny negatives from float potentials are clamped
            nd = d + max(net.cost[e] + pot[u] - pot[v], 0.0)
            if nd < dist[v] - 1e-15:
                dist[v] = nd
                prev_edge[v] = e
                heapq.heappush(heap, (nd, v))
    return dist, prev_edge


def lmo_transportation(cost: np.ndarray, capacities: Sequence[int]) -> FractionalAllocation:
    """Exact linear oracle over {X >= 0, row sums = 1, col sums <= c}.

    Builds the bipartite phone-to-host network with unit supplies and host
    capacities and runs successive shortest paths (Bellman-Ford potentials
    once, then Dijkstra with reduced costs). The optimum of a linear
    objective over this integral polytope is a vertex, so the returned
    matrix is 0/1.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ConfigError("cost must be an m x n matrix")
    if not np.isfinite(cost).all():
        raise ConfigError("cost matrix contains non-finite entries")
    m, n = cost.shape
    caps = np.asarray(capacities, dtype=np.int64)
    if caps.shape != (n,) or caps.min(initial=1) < 0:
        raise ConfigError("capacities must be n nonnegative integers")
    if caps.sum() < m:
        raise InfeasibleInstanceError(f"total capacity {int(caps.sum())} < m={m}")

    src, snk = 0, m + n + 1
    net = _FlowNetwork(m + n + 2)
    for i in range(m):
        net.add_edge(src, 1 + i, 1.0, 0.0)
    edge_ids = np.empty((m, n), dtype=np.int64)
    for i in range(m):
        for j in range(n):
            edge_ids[i, j] = net.add_edge(1 + i, 1 + m + j, 1.0, float(cost[i, j]))
    for j in range(n):
        net.add_edge(1 + m + j, snk, float(caps[j]), 0.0)

    pot = _bellman_ford(net, src) if cost.min() < 0.0 else np.zeros(net.num_nodes)
    for _ in range(m):
        dist, prev_edge = _dijkstra(net, src, pot)
        if not np.isfinite(dist[snk]):
            raise InfeasibleInstanceError("flow network admits no augmenting path")
        reached = np.isfinite(dist)
        pot[reached] += dist[reached]
        v = snk
        while v != src:
            e = int(prev_edge[v])
            net.cap[e] -= 1.0
            net.cap[e ^ 1] += 1.0
            v = net.to[e ^ 1]

    x = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            if net.cap[int(edge_ids[i, j]) ^ 1] > 0.5:  # reverse edge carries flow
                x[i, j] = 1.0
    return FractionalAllocation(x)


# ---------------------------------------------------------------------------
# Frank-Wolfe on the continuous relaxation.
# ---------------------------------------------------------------------------


def qp_relax_solve(inst: ProblemInstance, iters: int = 500, seed: int = 0,
                   restarts: int = 5, window: int = 25, rel_tol: float = 1e-8,
                   on_iterate=None) -> FractionalAllocation:
    """Minimize the relaxed risk over the transportation polytope.

    Conditional-gradient iterations with the min-cost-flow oracle and exact
    line search on the quadratic (the objective along a segment is a
    parabola, so the minimizing step has a closed form, clamped to [0, 1]).
    Each restart begins from a fresh random feasible one-hot matrix and runs
    for at most ``iters`` iterations, stopping early once the best objective
    improves by less than ``rel_tol`` (relative) over ``window`` iterations.

    The relaxed objective is linear in each phone's row, so its landscape is
    riddled with vertex-like stationary points; restarts are what keep the
    returned point competitive with the best integral allocations. The best
    iterate across all restarts is returned, making the reported objective
    sequence non-increasing. ``on_iterate`` receives every iterate (for
    invariant checks).
    """
    if iters < 1 or restarts < 1:
        raise ConfigError("iters and restarts must be >= 1")
    wb = inst.w_bar
    best_x: np.ndarray | None = None
    best_f = np.inf
    for restart in range(restarts):
        start = random_feasible(inst, np.random.default_rng((seed, restart)))
        x = np.zeros((inst.m, inst.n))
        x[np.arange(inst.m), start.allocation.assign] = 1.0
        if on_iterate is not None:
            on_iterate(x.copy())
        grad = wb @ x
        f = 0.5 * float((x * grad).sum())
        if f < best_f:
            best_f, best_x = f, x.copy()
        history = [f]
        run_best = f
        for _ in range(iters):
            vertex = lmo_transportation(grad, inst.capacities)
            d = vertex.x - x
            slope = float((grad * d).sum())      # <grad f, d>, <= 0 at the oracle
            curvature = float((d * (wb @ d)).sum())
            if curvature > 0.0:
                gamma = min(1.0, max(0.0, -slope / curvature))
            else:
                # concave along d: the segment minimum sits at an endpoint
                gamma = 1.0 if slope + 0.5 * curvature < 0.0 else 0.0
            if gamma > 0.0:
                x = x + gamma * d
            if on_iterate is not None:
                on_iterate(x.copy())
            grad = wb @ x
            f = 0.5 * float((x * grad).sum())
            if f < best_f:
                best_f, best_x = f, x.copy()
            run_best = min(run_best, f)
            history.append(run_best)
            if len(history) > window:
                anchor = history[-window - 1]
                if anchor - run_best <= rel_tol * max(1.0, abs(anchor)):
                    break
    return FractionalAllocation(best_x)


def round_fractional(inst: ProblemInstance, frac: FractionalAllocation) -> BaselineResult:
    """Feasible integral allocation from a fractional one.

    Phones are processed in descending order of their largest entry; each
    goes to its highest-mass host that still has room (next-highest
    otherwise). One best-improvement pass then repairs obvious local
    mistakes. Always feasible.
    """
    t0 = time.perf_counter()
    x = frac.x
    if x.shape != (inst.m, inst.n):
        raise ConfigError("fractional allocation shape does not match the instance")
    remaining = inst.capacities.copy()
    assign = np.empty(inst.m, dtype=np.int64)
    order = np.argsort(-x.max(axis=1), kind="stable")
    for phone in order:
        for host in np.argsort(-x[phone], kind="stable"):
            if remaining[host] > 0:
                assign[phone] = host
                remaining[host] -= 1
                break
    repaired = local_search_swap(inst, AllocationState(assign), budget=1)
    result = _finish(inst, repaired.allocation.assign, "round_fractional", t0)
    return result
