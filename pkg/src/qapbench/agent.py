"""k-step Q-learning: episode rollout, replay memory, target network, Adam.

One episode visits every phone of a fresh graph exactly once (ascending
index order by default), reallocating it with an epsilon-greedy choice over
the model's action values. Rewards accumulate over ``k`` consecutive steps
before a transition enters the replay memory; the final transition of an
episode is terminal and drops the bootstrap term. After each push, one Adam
update is applied to the mean TD loss over a uniformly sampled batch, and
the frozen target network is refreshed every ``target_sync_every`` updates.

The training loop is single-writer: parameters, optimizer state, and replay
memory belong to one logical thread. Evaluation rollouts only read a
parameter snapshot and may fan out freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, MutableMapping, Sequence

import numpy as np

from ._heap import reduce_heap_trimming
from .errors import ConfigError, TrainingError
from .model import (
    ContextPair,
    GradientSet,
    ModelConfig,
    ModelParams,
    _forward_batch,
    init_params,
    loss_and_grad,
)
from .problem import (
    AllocationState,
    ProblemInstance,
    apply_move,
    is_feasible,
    kl_penalty,
    risk,
    step_reward,
)
from .seeds import NS_EPISODE_RNG, NS_EVAL_INIT, NS_PARAM_INIT, derive_stream


@dataclass
class TrainConfig:
    """Training hyperparameters. Everything is overridable; the defaults are
    desk-scale values in line with common Q-learning practice."""

    episodes: int = 300
    replay_capacity: int = 10_000
    batch_size: int = 32
    k: int = 4
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int | None = None  # None: half of the episodes
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    target_sync_every: int = 100
    beta: float = 1.0
    seed: int = 0
    eval_batch: int = 8
    eval_every: int = 1
    shuffle_visit_order: bool = False

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not (self.replay_capacity >= self.batch_size >= 1):
            raise ConfigError("need replay_capacity >= batch_size >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError("gamma must lie in [0, 1]")
        for name in ("epsilon_start", "epsilon_end"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.epsilon_end > self.epsilon_start:
            raise ConfigError("epsilon schedule must be non-increasing (end <= start)")
        if self.epsilon_decay_episodes is not None and self.epsilon_decay_episodes < 1:
            raise ConfigError("epsilon_decay_episodes must be >= 1")
        if self.learning_rate < 0 or self.target_sync_every < 1:
            raise ConfigError("bad optimizer settings")
        if self.eval_batch < 1 or self.eval_every < 1:
            raise ConfigError("eval_batch and eval_every must be >= 1")


def epsilon_at(cfg: TrainConfig, episode: int) -> float:
    """Exploration rate for a 0-based episode index: linear decay from
    ``epsilon_start`` to ``epsilon_end`` over the decay horizon, then flat."""
    horizon = cfg.epsilon_decay_episodes
    if horizon is None:
        horizon = max(1, cfg.episodes // 2)
    if episode >= horizon:
        return cfg.epsilon_end
    frac = episode / horizon
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


@dataclass(frozen=True)
class Transition:
    """One replay record spanning k environment steps.

    State snapshots are taken at decision time: ``state_from`` is what the
    agent saw before acting on ``phone_from``; ``state_to`` is what it saw k
    steps later (for terminal records, the episode's final state). Context
    vectors are stored only in frozen-context mode.
    """

    graph_id: int
    state_from: AllocationState
    phone_from: int
    action: int
    reward: float
    state_to: AllocationState
    phone_to: int
    terminal: bool
    ctx_from: ContextPair | None = None
    ctx_to: ContextPair | None = None

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise TrainingError("non-finite accumulated reward")


class ReplayMemory:
    """Fixed-capacity ring buffer with uniform i.i.d. sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, tr: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._next] = tr
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise ConfigError("cannot sample from an empty replay memory")
        idxs = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idxs]

    def graph_ids(self) -> set[int]:
        return {tr.graph_id for tr in self._items}

    def __iter__(self):
        return iter(self._items)


@dataclass
class OptimizerState:
    """Adam moment accumulators plus the global update counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(t) for name, t in params.named_tensors()},
            v={name: np.zeros_like(t) for name, t in params.named_tensors()},
        )


def adam_step(params: ModelParams, grads: GradientSet, opt: OptimizerState,
              lr: float, beta_moments: tuple[float, float] = (0.9, 0.999),
              eps_hat: float = 1e-8) -> ModelParams:
    """One bias-corrected adaptive-moment update, applied in place.

    Parameter tensors are mutated at this single writer point and the same
    ``ModelParams`` object is returned.
    """
    b1, b2 = beta_moments
    opt.step += 1
    correct1 = 1.0 - b1 ** opt.step
    correct2 = 1.0 - b2 ** opt.step
    for name, tensor in params.named_tensors():
        g = getattr(grads, name)
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name} at update {opt.step}")
        m, v = opt.m[name], opt.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        tensor -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps_hat)
    return params


def select_action(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy host choice; greedy ties break to the lowest index."""
    q = np.asarray(q)
    if q.size == 0:
        raise ConfigError("empty action-value vector")
    if not (0.0 <= epsilon <= 1.0):
        raise ConfigError("epsilon must lie in [0, 1]")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


@dataclass
class EpisodeStats:
    total_return: float
    final_risk: float
    final_kl: float
    feasible: bool
    losses: list[float] = field(default_factory=list)
    epsilon: float = 0.0
    visit_order: np.ndarray | None = None
    transitions_pushed: int = 0


def run_episode(inst: ProblemInstance, params: ModelParams, target: ModelParams,
                cfg: TrainConfig, mem: ReplayMemory, opt: OptimizerState,
                rng: np.random.Generator, epsilon: float, graph_id: int,
                instances: MutableMapping[int, ProblemInstance],
                frozen_context: bool = False,
                target_cache: dict | None = None) -> EpisodeStats:
    """Play one episode on a fresh graph and learn from replayed transitions.

    The initial allocation is uniform per phone (feasibility not required).
    Each of the m steps reallocates one phone; from step k-1 onward a k-step
    transition is recorded at decision time, and the episode's last record
    is terminal. Each push triggers one Adam update once the memory holds a
    full batch. ``params`` and ``target`` are updated in place.
    """
    m, n, k = inst.m, inst.n, cfg.k
    if not (1 <= k <= m):
        raise ConfigError(f"k={k} must lie in [1, m={m}]")
    instances[graph_id] = inst
    if target_cache is None:
        target_cache = {}

    order = rng.permutation(m) if cfg.shuffle_visit_order else np.arange(m)
    state = AllocationState(rng.integers(0, n, size=m))
    states = [state]
    actions: list[int] = []
    rewards: list[float] = []
    ctxs: list[ContextPair | None] = []
    visited = np.zeros(m, dtype=bool)
    losses: list[float] = []
    pushed = 0

    def learn() -> None:
        if len(mem) < cfg.batch_size:
            return
        batch = mem.sample(cfg.batch_size, rng)
        loss, grads = loss_and_grad(params, target, batch, cfg.gamma,
                                    instances, frozen_context,
                                    target_cache=target_cache)
        adam_step(params, grads, opt, cfg.learning_rate,
                  (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps)
        losses.append(loss)
        if opt.step % cfg.target_sync_every == 0:
            target.copy_from(params)
            target_cache.clear()

    for step_idx in range(m):
        phone = int(order[step_idx])
        q, trace = _forward_batch(
            params, inst.w_bar[None], state.assign[None],
            np.array([phone]), visited=visited[None].copy(),
            need_trace=frozen_context,
        )
        ctx = ContextPair(trace.c_left[0], trace.c_right[0]) if frozen_context else None
        ctxs.append(ctx)
        if step_idx >= k:
            start = step_idx - k
            mem.push(Transition(
                graph_id=graph_id,
                state_from=states[start], phone_from=int(order[start]),
                action=actions[start], reward=float(sum(rewards[start:step_idx])),
                state_to=states[step_idx], phone_to=phone, terminal=False,
                ctx_from=ctxs[start], ctx_to=ctx,
            ))
            pushed += 1
            learn()
        action = select_action(q[0], epsilon, rng)
        new_state = apply_move(state, phone, action)
        rewards.append(step_reward(inst, state, new_state, cfg.beta))
        actions.append(action)
        visited[phone] = True
        state = new_state
        states.append(state)

    start = m - k
    mem.push(Transition(
        graph_id=graph_id,
        state_from=states[start], phone_from=int(order[start]),
        action=actions[start], reward=float(sum(rewards[start:m])),
        state_to=states[m], phone_to=m, terminal=True,
        ctx_from=ctxs[start], ctx_to=None,
    ))
    pushed += 1
    learn()

    return EpisodeStats(
        total_return=float(sum(rewards)),
        final_risk=risk(inst, state),
        final_kl=kl_penalty(inst, state),
        feasible=is_feasible(inst, state),
        losses=losses,
        epsilon=epsilon,
        visit_order=order,
        transitions_pushed=pushed,
    )


@dataclass(frozen=True)
class RolloutResult:
    state: AllocationState
    initial_risk: float
    initial_kl: float
    risk: float
    kl: float
    feasible: bool

    def ret(self, beta: float = 1.0) -> float:
        """Episode return: the cut in risk plus beta times the cut in KL."""
        return (self.initial_risk - self.risk) + beta * (self.initial_kl - self.kl)


def greedy_rollout_batch(instances: Sequence[ProblemInstance], params: ModelParams,
                         seeds: Sequence[int]) -> list[RolloutResult]:
    """Deterministic greedy episodes over same-sized instances, in lockstep.

    Every instance starts from a uniform random allocation drawn from its
    own seed, then phones are visited in ascending order with epsilon = 0.
    """
    if len(instances) != len(seeds):
        raise ConfigError("instances and seeds must have equal length")
    if not instances:
        return []
    m = instances[0].m
    if any(inst.m != m for inst in instances):
        raise ConfigError("lockstep rollouts need a uniform phone count")
    b = len(instances)
    assign = np.stack([
        np.random.default_rng(seed).integers(0, inst.n, size=m)
        for inst, seed in zip(instances, seeds)
    ])
    initial = [AllocationState(row) for row in assign]
    wb = np.stack([inst.w_bar for inst in instances])
    for t in range(m):
        ts = np.full(b, t, dtype=np.int64)
        q, _ = _forward_batch(params, wb, assign, ts)
        assign[:, t] = q.argmax(axis=1)
    results = []
    for i, inst in enumerate(instances):
        final = AllocationState(assign[i])
        results.append(RolloutResult(
            state=final,
            initial_risk=risk(inst, initial[i]),
            initial_kl=kl_penalty(inst, initial[i]),
            risk=risk(inst, final),
            kl=kl_penalty(inst, final),
            feasible=is_feasible(inst, final),
        ))
    return results


def greedy_rollout(inst: ProblemInstance, params: ModelParams, seed: int = 0) -> RolloutResult:
    """Single greedy evaluation episode; deterministic given seed and params."""
    return greedy_rollout_batch([inst], params, [seed])[0]


@dataclass(frozen=True)
class CurveRow:
    """One training-curve record (per episode)."""

    episode: int
    mean_return: float
    mean_final_risk: float
    mean_final_kl: float
    feasible_fraction: float
    loss_mean: float
    epsilon: float


def train(sampler: Callable[[int], ProblemInstance], cfg: TrainConfig,
          model_cfg: ModelConfig | None = None) -> tuple[ModelParams, list[CurveRow]]:
    """Run Z episodes over freshly sampled graphs and record a training curve.

    ``sampler(i)`` must deterministically produce the instance for stream
    index ``i``; indices 0..Z-1 feed the episodes and Z..Z+eval_batch-1 make
    up a fixed evaluation set. Curve metrics are greedy-rollout averages over
    that evaluation set, refreshed every ``eval_every`` episodes (stale rows
    repeat the latest measurement so the curve always has Z rows).
    """
    reduce_heap_trimming()
    model_cfg = model_cfg or ModelConfig()
    if cfg.shuffle_visit_order and not model_cfg.frozen_context:
        # Replayed forward passes rebuild contexts from the ascending-order
        # convention, which is wrong for shuffled episodes.
        raise ConfigError("shuffle_visit_order requires the frozen-context mode")
    eval_instances = [sampler(cfg.episodes + j) for j in range(cfg.eval_batch)]
    n_hosts = {inst.n for inst in eval_instances}
    if len(n_hosts) != 1:
        raise ConfigError("sampler produced instances with differing host counts")
    n = n_hosts.pop()

    params = init_params(n, model_cfg.d_h, model_cfg.d_prime, model_cfg.layers,
                         seed=derive_stream(cfg.seed, NS_PARAM_INIT, 0))
    target = params.copy()
    opt = OptimizerState.zeros_like(params)
    mem = ReplayMemory(cfg.replay_capacity)
    rng = np.random.default_rng(derive_stream(cfg.seed, NS_EPISODE_RNG, 0))
    eval_seeds = [derive_stream(cfg.seed, NS_EVAL_INIT, j) for j in range(cfg.eval_batch)]
    instances: dict[int, ProblemInstance] = {}
    target_cache: dict = {}

    curve: list[CurveRow] = []
    last_eval: tuple[float, float, float, float] | None = None
    for episode in range(cfg.episodes):
        inst = sampler(episode)
        if inst.n != n:
            raise ConfigError("sampler changed the host count mid-run")
        eps = epsilon_at(cfg, episode)
        stats = run_episode(inst, params, target, cfg, mem, opt, rng,
                            epsilon=eps, graph_id=episode, instances=instances,
                            frozen_context=model_cfg.frozen_context,
                            target_cache=target_cache)
        live = mem.graph_ids()
        for gid in [g for g in instances if g not in live]:
            del instances[gid]

        if (episode + 1) % cfg.eval_every == 0 or episode == cfg.episodes - 1 or last_eval is None:
            rollouts = greedy_rollout_batch(eval_instances, params, eval_seeds)
            last_eval = (
                float(np.mean([r.ret(cfg.beta) for r in rollouts])),
                float(np.mean([r.risk for r in rollouts])),
                float(np.mean([r.kl for r in rollouts])),
                float(np.mean([1.0 if r.feasible else 0.0 for r in rollouts])),
            )
        loss_mean = float(np.mean(stats.losses)) if stats.losses else float("nan")
        curve.append(CurveRow(
            episode=episode + 1,
            mean_return=last_eval[0],
            mean_final_risk=last_eval[1],
            mean_final_kl=last_eval[2],
            feasible_fraction=last_eval[3],
            loss_mean=loss_mean,
            epsilon=eps,
        ))
    return params, curve
