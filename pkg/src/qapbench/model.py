"""The trainable scoring stack and its gradient engine.

Architecture, for one instance with ``m`` phones and ``n`` hosts:

* **Encoder** (message passing over the complementary weights, repeated
  ``layers`` times with one shared parameter set)::

      h_i(0)   = theta3 @ x_i                       x_i: one-hot host vector
      h_i(l+1) = relu(theta3 @ x_i
                      + theta2 @ sum_j wb[i][j] * relu(theta1 @ h_j(l) + mu1))

  The ``theta3 @ x_i`` term is a residual path from the initial embedding;
  the inner ``relu(theta1 . + mu1)`` is a pre-pooling transform applied
  before neighbor aggregation.

* **Context aggregation** for the acting phone ``t``: the left context sums
  final embeddings of phones already reallocated this episode, the right
  context sums the rest, both weighted by the acting phone's row of ``wb``.

* **Q-head**::

      c = concat(theta5 @ c_left, theta4 @ c_right)
      q = theta6 @ relu(c)                          one value per host

Gradients are produced by a fixed-topology reverse-mode pass written for
exactly this architecture; no autodiff framework is involved. Everything is
float64. The batched entry points stack samples that share a phone count so
one NumPy call sequence covers a whole replay batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .problem import AllocationState, ProblemInstance

TENSOR_NAMES = ("theta1", "theta2", "theta3", "mu1", "theta4", "theta5", "theta6")


@dataclass
class EncoderParams:
    """Shared message-passing parameters, reused across all recursions."""

    theta1: np.ndarray  # (d_h, d_h) pre-pooling transform
    theta2: np.ndarray  # (d_h, d_h) aggregation transform
    theta3: np.ndarray  # (d_h, n)   one-hot input lift / residual
    mu1: np.ndarray     # (d_h,)     pre-pooling bias
    layers: int

    def __post_init__(self):
        d_h = self.theta1.shape[0]
        if self.theta1.shape != (d_h, d_h) or self.theta2.shape != (d_h, d_h):
            raise ConfigError("theta1/theta2 must be square with matching width")
        if self.theta3.ndim != 2 or self.theta3.shape[0] != d_h:
            raise ConfigError("theta3 must be (d_h, n)")
        if self.mu1.shape != (d_h,):
            raise ConfigError("mu1 must be a d_h vector")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        for name in ("theta1", "theta2", "theta3", "mu1"):
            if not np.isfinite(getattr(self, name)).all():
                raise ConfigError(f"{name} contains non-finite entries")

    @property
    def d_h(self) -> int:
        return self.theta1.shape[0]

    @property
    def n(self) -> int:
        return self.theta3.shape[1]


@dataclass
class DecoderParams:
    """Q-head parameters."""

    theta4: np.ndarray  # (d_prime, d_h) right-context channel
    theta5: np.ndarray  # (d_prime, d_h) left-context channel
    theta6: np.ndarray  # (n, 2 * d_prime) output head

    def __post_init__(self):
        if self.theta4.shape != self.theta5.shape or self.theta4.ndim != 2:
            raise ConfigError("theta4/theta5 must share shape (d_prime, d_h)")
        if self.theta6.ndim != 2 or self.theta6.shape[1] != 2 * self.theta4.shape[0]:
            raise ConfigError("theta6 must be (n, 2 * d_prime)")
        for name in ("theta4", "theta5", "theta6"):
            if not np.isfinite(getattr(self, name)).all():
                raise ConfigError(f"{name} contains non-finite entries")

    @property
    def d_prime(self) -> int:
        return self.theta4.shape[0]

    @property
    def n(self) -> int:
        return self.theta6.shape[0]


@dataclass
class ModelParams:
    """The full trainable set: six matrices plus the pre-pooling bias."""

    encoder: EncoderParams
    decoder: DecoderParams
    seed: int = 0

    def __post_init__(self):
        if self.encoder.d_h != self.decoder.theta4.shape[1]:
            raise ConfigError("decoder width does not match encoder d_h")
        if self.encoder.n != self.decoder.n:
            raise ConfigError("encoder and decoder disagree on host count")

    @property
    def n(self) -> int:
        return self.encoder.n

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "theta1", self.encoder.theta1
        yield "theta2", self.encoder.theta2
        yield "theta3", self.encoder.theta3
        yield "mu1", self.encoder.mu1
        yield "theta4", self.decoder.theta4
        yield "theta5", self.decoder.theta5
        yield "theta6", self.decoder.theta6

    def copy(self) -> "ModelParams":
        enc = EncoderParams(
            theta1=self.encoder.theta1.copy(),
            theta2=self.encoder.theta2.copy(),
            theta3=self.encoder.theta3.copy(),
            mu1=self.encoder.mu1.copy(),
            layers=self.encoder.layers,
        )
        dec = DecoderParams(
            theta4=self.decoder.theta4.copy(),
            theta5=self.decoder.theta5.copy(),
            theta6=self.decoder.theta6.copy(),
        )
        return ModelParams(encoder=enc, decoder=dec, seed=self.seed)

    def copy_from(self, other: "ModelParams") -> None:
        """Overwrite tensor contents in place (used for target-network syncs)."""
        for (_, dst), (_, src) in zip(self.named_tensors(), other.named_tensors()):
            np.copyto(dst, src)


@dataclass
class ModelConfig:
    """Architecture hyperparameters, independent of any instance size."""

    d_h: int = 64
    d_prime: int = 32
    layers: int = 3
    frozen_context: bool = False

    def __post_init__(self):
        if min(self.d_h, self.d_prime, self.layers) < 1:
            raise ConfigError("model dimensions must be positive")


@dataclass(frozen=True)
class EmbeddingSet:
    """Final node embeddings, one row per phone."""

    h: np.ndarray  # (m, d_h)


@dataclass(frozen=True)
class ContextPair:
    """Weighted aggregations of final embeddings around the acting phone."""

    c_left: np.ndarray   # (d_h,)
    c_right: np.ndarray  # (d_h,)


@dataclass
class GradientSet:
    """One gradient tensor per trainable tensor, shape-congruent."""

    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray
    mu1: np.ndarray
    theta4: np.ndarray
    theta5: np.ndarray
    theta6: np.ndarray

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "GradientSet":
        return cls(**{name: np.zeros_like(t) for name, t in params.named_tensors()})

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for name in TENSOR_NAMES:
            yield name, getattr(self, name)


def init_params(n: int, d_h: int, d_prime: int, layers: int, seed: int = 0) -> ModelParams:
    """Glorot-uniform initialization, deterministic given the seed.

    Each tensor is drawn Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out));
    the bias vector uses fan_in = fan_out = d_h. Tensors are drawn in the
    fixed order theta1..theta3, mu1, theta4..theta6 from a single PCG64
    stream.
    """
    if min(n, d_h, d_prime, layers) < 1:
        raise ConfigError("all model dimensions must be positive")
    rng = np.random.default_rng(seed)

    def draw(fan_out: int, fan_in: int, shape) -> np.ndarray:
        r = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=shape)

    enc = EncoderParams(
        theta1=draw(d_h, d_h, (d_h, d_h)),
        theta2=draw(d_h, d_h, (d_h, d_h)),
        theta3=draw(d_h, n, (d_h, n)),
        mu1=draw(d_h, d_h, (d_h,)),
        layers=layers,
    )
    dec = DecoderParams(
        theta4=draw(d_prime, d_h, (d_prime, d_h)),
        theta5=draw(d_prime, d_h, (d_prime, d_h)),
        theta6=draw(n, 2 * d_prime, (n, 2 * d_prime)),
    )
    return ModelParams(encoder=enc, decoder=dec, seed=seed)


# ---------------------------------------------------------------------------
# Batched forward / backward core.
#
# All samples in a stack share the phone count m; each brings its own
# complementary matrix, assignment, and acting phone. Shapes: wb (B, m, m),
# assign (B, m), ts (B,). `visited` marks phones already reallocated this
# episode; by default that is every index below the acting phone.
# ---------------------------------------------------------------------------


@dataclass
class _Trace:
    assign: np.ndarray
    wb: np.ndarray
    visited: np.ndarray
    h0: np.ndarray
    pre_pool: list = field(default_factory=list)   # A_l
    pooled: list = field(default_factory=list)     # P_l = relu(A_l)
    messages: list = field(default_factory=list)   # M_l = wb @ P_l
    pre_act: list = field(default_factory=list)    # B_l = H0 + M_l @ theta2.T
    hs: list = field(default_factory=list)         # [H0, H_1, .., H_L]
    wl: np.ndarray | None = None
    wr: np.ndarray | None = None
    c_left: np.ndarray | None = None
    c_right: np.ndarray | None = None
    concat: np.ndarray | None = None               # c, pre-relu
    z: np.ndarray | None = None


def _default_visited(ts: np.ndarray, m: int) -> np.ndarray:
    return np.arange(m)[None, :] < np.asarray(ts)[:, None]


def _encode_batch(enc: EncoderParams, wb: np.ndarray, assign: np.ndarray,
                  trace: _Trace | None) -> np.ndarray:
    h0 = enc.theta3.T[assign]  # (B, m, d_h)
    h = h0
    if trace is not None:
        trace.h0 = h0
        trace.hs.append(h0)
    for _ in range(enc.layers):
        a = h @ enc.theta1.T + enc.mu1
        p = np.maximum(a, 0.0)
        msg = wb @ p
        pre = h0 + msg @ enc.theta2.T
        h = np.maximum(pre, 0.0)
        if trace is not None:
            trace.pre_pool.append(a)
            trace.pooled.append(p)
            trace.messages.append(msg)
            trace.pre_act.append(pre)
            trace.hs.append(h)
    return h


def _head_batch(dec: DecoderParams, c_left: np.ndarray, c_right: np.ndarray,
                trace: _Trace | None) -> np.ndarray:
    u = c_left @ dec.theta5.T
    v = c_right @ dec.theta4.T
    c = np.concatenate([u, v], axis=1)
    z = np.maximum(c, 0.0)
    q = z @ dec.theta6.T
    if trace is not None:
        trace.concat = c
        trace.z = z
    return q


def _forward_batch(params: ModelParams, wb: np.ndarray, assign: np.ndarray,
                   ts: np.ndarray, visited: np.ndarray | None = None,
                   need_trace: bool = False) -> tuple[np.ndarray, _Trace | None]:
    b, m = assign.shape
    ts = np.asarray(ts, dtype=np.int64)
    if visited is None:
        visited = _default_visited(ts, m)
    trace = _Trace(assign=assign, wb=wb, visited=visited, h0=None) if need_trace else None
    h = _encode_batch(params.encoder, wb, assign, trace)

    wt = wb[np.arange(b), ts]  # (B, m): acting phone's risk row
    wl = np.where(visited, wt, 0.0)
    wr = np.where(visited, 0.0, wt)
    c_left = np.matmul(wl[:, None, :], h)[:, 0, :]
    c_right = np.matmul(wr[:, None, :], h)[:, 0, :]
    if trace is not None:
        trace.wl, trace.wr = wl, wr
        trace.c_left, trace.c_right = c_left, c_right
    q = _head_batch(params.decoder, c_left, c_right, trace)
    return q, trace


def _backward_batch(params: ModelParams, trace: _Trace, dq: np.ndarray,
                    grads: GradientSet) -> None:
    """Accumulate d(loss)/d(params) into `grads` given d(loss)/d(q)."""
    enc, dec = params.encoder, params.decoder
    d_prime = dec.d_prime

    grads.theta6 += dq.T @ trace.z
    dz = dq @ dec.theta6
    dc = dz * (trace.concat > 0.0)
    du, dv = dc[:, :d_prime], dc[:, d_prime:]
    grads.theta5 += du.T @ trace.c_left
    grads.theta4 += dv.T @ trace.c_right
    dc_left = du @ dec.theta5
    dc_right = dv @ dec.theta4

    dh = trace.wl[:, :, None] * dc_left[:, None, :] + trace.wr[:, :, None] * dc_right[:, None, :]
    dh0 = np.zeros_like(trace.h0)
    wb_t = np.swapaxes(trace.wb, 1, 2)
    d_h = enc.d_h
    for layer in range(enc.layers - 1, -1, -1):
        db = dh * (trace.pre_act[layer] > 0.0)
        dh0 += db
        db_flat = db.reshape(-1, d_h)
        grads.theta2 += db_flat.T @ trace.messages[layer].reshape(-1, d_h)
        dmsg = db @ enc.theta2
        dp = wb_t @ dmsg
        da = dp * (trace.pre_pool[layer] > 0.0)
        da_flat = da.reshape(-1, d_h)
        grads.mu1 += da_flat.sum(axis=0)
        grads.theta1 += da_flat.T @ trace.hs[layer].reshape(-1, d_h)
        dh = da @ enc.theta1
    dh0 += dh  # input path of the first recursion

    dtheta3_t = np.zeros((enc.n, enc.d_h))
    np.add.at(dtheta3_t, trace.assign.reshape(-1), dh0.reshape(-1, enc.d_h))
    grads.theta3 += dtheta3_t.T


def _decoder_backward_batch(dec: DecoderParams, trace: _Trace, dq: np.ndarray,
                            grads: GradientSet) -> None:
    """Head-only backward for the frozen-context training mode."""
    d_prime = dec.d_prime
    grads.theta6 += dq.T @ trace.z
    dz = dq @ dec.theta6
    dc = dz * (trace.concat > 0.0)
    grads.theta5 += dc[:, :d_prime].T @ trace.c_left
    grads.theta4 += dc[:, d_prime:].T @ trace.c_right


# ---------------------------------------------------------------------------
# Public single-state operations.
# ---------------------------------------------------------------------------


def encode(p: EncoderParams, w_bar: np.ndarray, s: AllocationState, n: int) -> EmbeddingSet:
    """Run the message-passing encoder on one state; rows follow phone order."""
    m = s.assign.size
    if w_bar.shape != (m, m):
        raise ConfigError(f"w_bar shape {w_bar.shape} does not match m={m}")
    if p.n != n:
        raise ConfigError(f"encoder built for n={p.n}, instance has n={n}")
    if s.assign.size and int(s.assign.max()) >= n:
        raise ConfigError("assignment references a host beyond n")
    h = _encode_batch(p, w_bar[None], s.assign[None], trace=None)
    return EmbeddingSet(h=h[0])


def contexts(e: EmbeddingSet, w_bar: np.ndarray, t: int,
             visited: np.ndarray | None = None) -> ContextPair:
    """Left/right context vectors for acting phone ``t`` (0-based).

    The left context aggregates embeddings of phones reallocated before
    ``t`` (by default: all indices below ``t``), the right context the
    remaining ones, each weighted by ``w_bar[t]``. The acting phone itself
    contributes nothing because the risk matrix has a zero diagonal.
    """
    m = e.h.shape[0]
    if not (0 <= t < m):
        raise ConfigError(f"acting phone {t} out of range for m={m}")
    if visited is None:
        visited = np.arange(m) < t
    row = w_bar[t]
    c_left = (np.where(visited, row, 0.0)[:, None] * e.h).sum(axis=0)
    c_right = (np.where(visited, 0.0, row)[:, None] * e.h).sum(axis=0)
    return ContextPair(c_left=c_left, c_right=c_right)


def q_values(d: DecoderParams, c: ContextPair) -> np.ndarray:
    """Action values for allocating the acting phone to each host."""
    if c.c_left.shape != (d.theta5.shape[1],):
        raise ConfigError("context width does not match decoder")
    q = _head_batch(d, c.c_left[None], c.c_right[None], trace=None)
    return q[0]


def forward(params: ModelParams, inst: ProblemInstance, s: AllocationState, t: int) -> np.ndarray:
    """Full pass encode -> contexts -> q_values on the current allocation."""
    if params.n != inst.n:
        raise ConfigError(f"model built for n={params.n}, instance has n={inst.n}")
    if not (0 <= t < inst.m):
        raise ConfigError(f"acting phone {t} out of range for m={inst.m}")
    q, _ = _forward_batch(params, inst.w_bar[None], s.assign[None], np.array([t]))
    return q[0]


def forward_batch(params: ModelParams, inst: ProblemInstance,
                  states: Sequence[AllocationState], ts: Sequence[int]) -> np.ndarray:
    """Vectorized forward over several states of one instance; row ``b``
    equals ``forward(params, inst, states[b], ts[b])``."""
    if len(states) != len(ts):
        raise ConfigError("states and ts must have equal length")
    if not states:
        return np.zeros((0, params.n))
    assign = np.stack([s.assign for s in states])
    wb = np.broadcast_to(inst.w_bar, (len(states),) + inst.w_bar.shape)
    q, _ = _forward_batch(params, wb, assign, np.asarray(ts, dtype=np.int64))
    return q


# ---------------------------------------------------------------------------
# k-step TD loss and exact gradients.
# ---------------------------------------------------------------------------


def _group_by_m(batch: Sequence) -> list[list[int]]:
    groups: dict[int, list[int]] = {}
    for idx, tr in enumerate(batch):
        groups.setdefault(tr.state_from.assign.size, []).append(idx)
    return list(groups.values())


def _stack_group(batch, idxs, instances, side: str):
    assign = np.stack([getattr(batch[i], f"state_{side}").assign for i in idxs])
    ts = np.array([getattr(batch[i], f"phone_{side}") for i in idxs], dtype=np.int64)
    wb = np.stack([instances[batch[i].graph_id].w_bar for i in idxs])
    return wb, assign, ts


def _targets_for_group(target: ModelParams, batch, idxs, gamma: float,
                       instances, frozen_context: bool,
                       cache: dict | None = None) -> np.ndarray:
    """Bootstrap target value per sample; terminal samples use the bare reward.

    ``cache`` maps a successor-state key to the target network's max Q value;
    the caller must clear it whenever the target network changes. It removes
    repeated forward passes for transitions that get replayed many times
    between target refreshes.
    """
    rewards = np.array([batch[i].reward for i in idxs])
    ys = rewards.copy()
    live = [j for j, i in enumerate(idxs) if not batch[i].terminal]
    if not live:
        return ys
    live_idxs = [idxs[j] for j in live]
    if frozen_context:
        c_left = np.stack([batch[i].ctx_to.c_left for i in live_idxs])
        c_right = np.stack([batch[i].ctx_to.c_right for i in live_idxs])
        q_next = _head_batch(target.decoder, c_left, c_right, trace=None)
        maxq = q_next.max(axis=1)
    else:
        maxq = np.empty(len(live_idxs))
        if cache is None:
            fresh = list(range(len(live_idxs)))
        else:
            keys = [
                (batch[i].graph_id, batch[i].phone_to, batch[i].state_to.assign.tobytes())
                for i in live_idxs
            ]
            fresh = []
            for pos, key in enumerate(keys):
                hit = cache.get(key)
                if hit is None:
                    fresh.append(pos)
                else:
                    maxq[pos] = hit
        if fresh:
            wb, assign, ts = _stack_group(batch, [live_idxs[p] for p in fresh], instances, "to")
            q_next, _ = _forward_batch(target, wb, assign, ts)
            maxq[fresh] = q_next.max(axis=1)
            if cache is not None:
                for p in fresh:
                    cache[keys[p]] = float(maxq[p])
    ys[live] = rewards[live] + gamma * maxq
    return ys


def loss_and_grad(params: ModelParams, target: ModelParams, batch: Sequence,
                  gamma: float, instances: Mapping[int, ProblemInstance],
                  frozen_context: bool = False,
                  target_cache: dict | None = None) -> tuple[float, GradientSet]:
    """Mean squared k-step TD error over a replay batch, plus exact gradients.

    Per sample: ``(Q(state_from, phone_from)[action] - y)^2`` with
    ``y = reward + gamma * max_a Q_target(state_to, phone_to)``, the
    bootstrap dropped on terminal samples. Gradients cover every tensor in
    ``params``; the target network receives none. In frozen-context mode
    the stored context vectors are treated as constants, so only the head
    tensors get nonzero gradients.
    """
    if not batch:
        raise ConfigError("loss_and_grad requires a non-empty batch")
    grads = GradientSet.zeros_like(params)
    total = 0.0
    b_total = len(batch)
    for idxs in _group_by_m(batch):
        actions = np.array([batch[i].action for i in idxs], dtype=np.int64)
        ys = _targets_for_group(target, batch, idxs, gamma, instances,
                                frozen_context, target_cache)
        if frozen_context:
            c_left = np.stack([batch[i].ctx_from.c_left for i in idxs])
            c_right = np.stack([batch[i].ctx_from.c_right for i in idxs])
            trace = _Trace(assign=None, wb=None, visited=None, h0=None)
            trace.c_left, trace.c_right = c_left, c_right
            q = _head_batch(params.decoder, c_left, c_right, trace)
        else:
            wb, assign, ts = _stack_group(batch, idxs, instances, "from")
            q, trace = _forward_batch(params, wb, assign, ts, need_trace=True)
        rows = np.arange(len(idxs))
        td = q[rows, actions] - ys
        total += float((td * td).sum())
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * td / b_total
        if frozen_context:
            _decoder_backward_batch(params.decoder, trace, dq, grads)
        else:
            _backward_batch(params, trace, dq, grads)
    return total / b_total, grads


def batch_loss(params: ModelParams, target: ModelParams, batch: Sequence,
               gamma: float, instances: Mapping[int, ProblemInstance],
               frozen_context: bool = False, target_cache: dict | None = None) -> float:
    """Loss only, no backward pass; used by the finite-difference check."""
    if not batch:
        raise ConfigError("batch_loss requires a non-empty batch")
    total = 0.0
    for idxs in _group_by_m(batch):
        actions = np.array([batch[i].action for i in idxs], dtype=np.int64)
        ys = _targets_for_group(target, batch, idxs, gamma, instances,
                                frozen_context, target_cache)
        if frozen_context:
            c_left = np.stack([batch[i].ctx_from.c_left for i in idxs])
            c_right = np.stack([batch[i].ctx_from.c_right for i in idxs])
            q = _head_batch(params.decoder, c_left, c_right, trace=None)
        else:
            wb, assign, ts = _stack_group(batch, idxs, instances, "from")
            q, _ = _forward_batch(params, wb, assign, ts)
        td = q[np.arange(len(idxs)), actions] - ys
        total += float((td * td).sum())
    return total / len(batch)


def finite_diff_check(params: ModelParams, target: ModelParams, batch: Sequence,
                      instances: Mapping[int, ProblemInstance], gamma: float = 0.99,
                      step: float = 1e-5, frozen_context: bool = False,
                      corrupt: tuple[str, int, float] | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Perturbs every scalar parameter by ``+-step``; the relative error uses
    the denominator ``max(|analytic|, |numeric|, 1e-8)``. ``corrupt``
    multiplies one analytic gradient entry (tensor name, flat index, factor)
    before comparison, to prove the check can detect a broken gradient.
    """
    _, grads = loss_and_grad(params, target, batch, gamma, instances, frozen_context)
    if corrupt is not None:
        name, flat_idx, factor = corrupt
        getattr(grads, name).reshape(-1)[flat_idx] *= factor
    # The target network never moves during the check, so its values can be
    # computed once and reused across all perturbations.
    cache: dict = {}
    worst = 0.0
    for name, tensor in params.named_tensors():
        analytic = getattr(grads, name).reshape(-1)
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = batch_loss(params, target, batch, gamma, instances, frozen_context, cache)
            flat[i] = orig - step
            lo = batch_loss(params, target, batch, gamma, instances, frozen_context, cache)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(analytic[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpoint format: versioned JSON with row-major tensor payloads.
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def save_checkpoint(params: ModelParams, path) -> None:
    record = {
        "version": _CHECKPOINT_VERSION,
        "kind": "qapbench-checkpoint",
        "n": params.n,
        "d_h": params.encoder.d_h,
        "d_prime": params.decoder.d_prime,
        "L": params.encoder.layers,
        "seed": params.seed,
        "tensors": {
            name: {"shape": list(t.shape), "values": t.reshape(-1).tolist()}
            for name, t in params.named_tensors()
        },
    }
    Path(path).write_text(json.dumps(record, indent=1) + "\n")


def _expected_shapes(n: int, d_h: int, d_prime: int) -> dict[str, tuple[int, ...]]:
    return {
        "theta1": (d_h, d_h),
        "theta2": (d_h, d_h),
        "theta3": (d_h, n),
        "mu1": (d_h,),
        "theta4": (d_prime, d_h),
        "theta5": (d_prime, d_h),
        "theta6": (n, 2 * d_prime),
    }


def load_checkpoint(path) -> ModelParams:
    try:
        record = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"unparseable checkpoint: {exc}") from exc
    if record.get("version") != _CHECKPOINT_VERSION or record.get("kind") != "qapbench-checkpoint":
        raise ConfigError("not a qapbench v1 checkpoint")
    n, d_h, d_prime = record["n"], record["d_h"], record["d_prime"]
    expected = _expected_shapes(n, d_h, d_prime)
    tensors = {}
    for name, shape in expected.items():
        entry = record["tensors"].get(name)
        if entry is None:
            raise ConfigError(f"checkpoint missing tensor {name}")
        if tuple(entry["shape"]) != shape:
            raise ConfigError(f"tensor {name} has shape {entry['shape']}, expected {list(shape)}")
        arr = np.array(entry["values"], dtype=np.float64).reshape(shape)
        if not np.isfinite(arr).all():
            raise ConfigError(f"tensor {name} contains non-finite values")
        tensors[name] = arr
    enc = EncoderParams(theta1=tensors["theta1"], theta2=tensors["theta2"],
                        theta3=tensors["theta3"], mu1=tensors["mu1"],
                        layers=int(record["L"]))
    dec = DecoderParams(theta4=tensors["theta4"], theta5=tensors["theta5"],
                        theta6=tensors["theta6"])
    return ModelParams(encoder=enc, decoder=dec, seed=int(record.get("seed", 0)))
