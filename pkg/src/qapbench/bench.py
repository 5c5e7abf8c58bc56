"""Experiment orchestration: configs, commands, CSV emission, run records.

Commands mirror the CLI: ``generate`` writes instance files, ``train``
produces a checkpoint plus a training curve, ``eval`` sweeps a trained model
over test sizes, ``compare`` runs several methods on identical instance
sets, and ``check`` executes the verification battery.

Reproducibility contract: every CSV ends with a metadata comment carrying
the config hash and master seed, and re-running a command with the same
seed yields numerically identical files. Wall-clock timings therefore never
enter CSVs; they live in each command's ``run_record.json``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from ._heap import reduce_heap_trimming
from .agent import (
    ModelConfig,
    TrainConfig,
    greedy_rollout_batch,
    train,
)
from .baselines import (
    brute_force,
    greedy_construct,
    local_search_swap,
    qp_relax_solve,
    random_feasible,
    round_fractional,
)
from .errors import ConfigError
from .graph import SbmConfig, cluster_sizes_from_proportions, gen_sbm, gen_uniform
from .model import (
    ModelParams,
    finite_diff_check,
    init_params,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
)
from .problem import (
    AllocationState,
    ProblemInstance,
    apply_move,
    capacities_from_relative,
    host_counts,
    kl_penalty,
    risk,
    step_reward,
    write_instance,
)
from .seeds import (
    NS_EVAL_INSTANCE,
    NS_INSTANCE,
    NS_METHOD_RNG,
    NS_ROLLOUT_INIT,
    NS_TRAIN_INSTANCE,
    derive_stream,
)

_BRUTE_FORCE_BOUND = 10_000_000
METHODS = ("rl", "qp", "greedy", "local_search", "random", "brute_force")


# ---------------------------------------------------------------------------
# Configuration.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SbmParams:
    num_clusters: int = 5
    proportions: tuple[float, ...] | None = None  # None: equal clusters
    p_within: float = 0.7
    p_between: float = 0.05

    def __post_init__(self):
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be >= 1")
        if self.proportions is not None:
            object.__setattr__(self, "proportions", tuple(float(p) for p in self.proportions))
            if len(self.proportions) != self.num_clusters:
                raise ConfigError("proportions length must equal num_clusters")


@dataclass(frozen=True)
class ExperimentConfig:
    family: str
    m_train: int
    m_eval: tuple[int, ...]
    n: int
    relative_capacities: tuple[float, ...]
    eval_batch: int
    out_dir: str
    master_seed: int
    train: TrainConfig
    model: ModelConfig
    sbm: SbmParams = SbmParams()
    desired_distribution: tuple[float, ...] | None = None  # None: relative capacities

    def __post_init__(self):
        if self.family not in ("sbm", "uniform"):
            raise ConfigError(f"unknown instance family {self.family!r}")
        if self.m_train < 2 or self.n < 1:
            raise ConfigError("need m_train >= 2 and n >= 1")
        if not self.m_eval:
            raise ConfigError("m_eval sweep must be non-empty")
        if any(m < 2 for m in self.m_eval):
            raise ConfigError("every evaluation size must be >= 2")
        if len(self.relative_capacities) != self.n:
            raise ConfigError("relative_capacities must have length n")
        if self.eval_batch < 1:
            raise ConfigError("eval_batch must be >= 1")
        if not (0 <= self.master_seed < 2 ** 64):
            raise ConfigError("master_seed must be a u64")

    def desired(self) -> tuple[float, ...]:
        return self.desired_distribution or self.relative_capacities


_CONFIG_VERSION = 1


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _sub_config(cls, section: dict, where: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, fields, where)
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"bad {where} section: {exc}") from exc


def parse_config(doc: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from a parsed JSON document.

    Unknown keys anywhere are rejected so typos cannot silently fall back
    to defaults.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("version") != _CONFIG_VERSION:
        raise ConfigError(f"config version must be {_CONFIG_VERSION}")
    top = {
        "version", "family", "sbm", "m_train", "m_eval", "n",
        "relative_capacities", "desired_distribution", "eval_batch",
        "out_dir", "master_seed", "train", "model",
    }
    _check_keys(doc, top, "config")
    required = ["family", "m_train", "m_eval", "n", "relative_capacities",
                "out_dir", "master_seed"]
    for key in required:
        if key not in doc:
            raise ConfigError(f"config is missing required key {key!r}")

    train_section = dict(doc.get("train", {}))
    train_section.setdefault("seed", doc["master_seed"] % (2 ** 63))
    train_cfg = _sub_config(TrainConfig, train_section, "train")
    model_cfg = _sub_config(ModelConfig, dict(doc.get("model", {})), "model")
    sbm_section = dict(doc.get("sbm", {}))
    if "proportions" in sbm_section and sbm_section["proportions"] is not None:
        sbm_section["proportions"] = tuple(sbm_section["proportions"])
    sbm = _sub_config(SbmParams, sbm_section, "sbm")

    desired = doc.get("desired_distribution")
    return ExperimentConfig(
        family=doc["family"],
        m_train=int(doc["m_train"]),
        m_eval=tuple(int(m) for m in doc["m_eval"]),
        n=int(doc["n"]),
        relative_capacities=tuple(float(x) for x in doc["relative_capacities"]),
        desired_distribution=tuple(float(x) for x in desired) if desired else None,
        eval_batch=int(doc.get("eval_batch", 50)),
        out_dir=str(doc["out_dir"]),
        master_seed=int(doc["master_seed"]),
        train=train_cfg,
        model=model_cfg,
        sbm=sbm,
    )


def load_config(path, seed_override: int | None = None,
                out_override: str | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if seed_override is not None:
        doc["master_seed"] = seed_override
        doc.setdefault("train", {})
        doc["train"]["seed"] = seed_override % (2 ** 63)
    if out_override is not None:
        doc["out_dir"] = out_override
    return parse_config(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully normalized config snapshot (defaults filled in)."""
    doc = dataclasses.asdict(cfg)
    doc["version"] = _CONFIG_VERSION
    return doc


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Instance construction.
# ---------------------------------------------------------------------------


def make_instance(cfg: ExperimentConfig, m: int, seed: int) -> ProblemInstance:
    if cfg.family == "sbm":
        props = cfg.sbm.proportions or tuple(1.0 / cfg.sbm.num_clusters
                                             for _ in range(cfg.sbm.num_clusters))
        sizes = cluster_sizes_from_proportions(m, props)
        graph = gen_sbm(SbmConfig(
            m=m, num_clusters=cfg.sbm.num_clusters, cluster_sizes=sizes,
            p_within=cfg.sbm.p_within, p_between=cfg.sbm.p_between, seed=seed,
        ))
    else:
        graph = gen_uniform(m, seed)
    return ProblemInstance(
        graph=graph,
        n=cfg.n,
        capacities=capacities_from_relative(cfg.relative_capacities, m),
        desired_dist=cfg.desired(),
    )


def train_sampler(cfg: ExperimentConfig) -> Callable[[int], ProblemInstance]:
    def sampler(index: int) -> ProblemInstance:
        return make_instance(cfg, cfg.m_train,
                             derive_stream(cfg.master_seed, NS_TRAIN_INSTANCE, index))
    return sampler


def _pack(m: int, i: int) -> int:
    return (m << 24) | i


# ---------------------------------------------------------------------------
# CSV and record emission.
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.9g}"
    return str(value)


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence],
              cfg: ExperimentConfig) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    lines.append(f"# config_sha256={config_hash(cfg)} master_seed={cfg.master_seed}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]], str]:
    """Read back a toolkit CSV: (header, rows, metadata comment)."""
    lines = Path(path).read_text().splitlines()
    meta = ""
    rows = []
    for ln in lines[1:]:
        if ln.startswith("#"):
            meta = ln
        elif ln.strip():
            rows.append(ln.split(","))
    return lines[0].split(","), rows, meta


def _write_run_record(out_dir: Path, cfg: ExperimentConfig, command: str,
                      rows: list[dict], aggregates: list[dict],
                      wall_time: float) -> None:
    record = {
        "version_tag": __version__,
        "command": command,
        "config_sha256": config_hash(cfg),
        "config": config_to_dict(cfg),
        "wall_time_s": wall_time,
        "rows": rows,
        "aggregates": aggregates,
    }
    (out_dir / "run_record.json").write_text(json.dumps(record, indent=1) + "\n")


def _aggregate(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())  # population std: defined for batch 1


# ---------------------------------------------------------------------------
# Commands.
# ---------------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, count: int) -> list[Path]:
    """Write ``count`` instance files plus a manifest into the output dir."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    paths = []
    for i in range(count):
        seed = derive_stream(cfg.master_seed, NS_INSTANCE, i)
        inst = make_instance(cfg, cfg.m_train, seed)
        name = f"instance_{i:05d}.qapinst"
        write_instance(inst, out / name)
        entries.append({"path": name, "seed": seed, "m": cfg.m_train})
        paths.append(out / name)
    manifest = {
        "version": 1,
        "master_seed": cfg.master_seed,
        "config_sha256": config_hash(cfg),
        "family": cfg.family,
        "count": count,
        "files": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return paths


_CURVE_HEADER = ["episode", "mean_return", "mean_final_risk", "mean_final_kl",
                 "feasible_fraction", "loss_mean", "epsilon"]


def cmd_train(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Train on the configured family and write checkpoint + curve CSV."""
    t0 = time.perf_counter()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, curve = train(train_sampler(cfg), cfg.train, cfg.model)
    ckpt_path = out / "checkpoint.json"
    save_checkpoint(params, ckpt_path)
    curve_path = out / "curve.csv"
    write_csv(curve_path, _CURVE_HEADER,
              [[r.episode, r.mean_return, r.mean_final_risk, r.mean_final_kl,
                r.feasible_fraction, r.loss_mean, r.epsilon] for r in curve],
              cfg)
    _write_run_record(out, cfg, "train", rows=[], aggregates=[],
                      wall_time=time.perf_counter() - t0)
    return ckpt_path, curve_path


def _eval_header(n: int) -> list[str]:
    return (["row", "method", "m", "instance_seed", "risk", "risk_std", "feasible"]
            + [f"occ_{j}" for j in range(n)])


def cmd_eval(checkpoint, cfg: ExperimentConfig) -> Path:
    """Greedy rollouts of a trained model across the evaluation sweep.

    Emits one row per instance (with its host-occupancy histogram) and one
    aggregate row per size; aggregates are recomputable from the instance
    rows.
    """
    t0 = time.perf_counter()
    params = load_checkpoint(checkpoint)
    if params.n != cfg.n:
        raise ConfigError(f"checkpoint built for n={params.n}, config has n={cfg.n}")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    rows: list[list] = []
    record_rows: list[dict] = []
    record_aggs: list[dict] = []
    for m in cfg.m_eval:
        seeds = [derive_stream(cfg.master_seed, NS_EVAL_INSTANCE, _pack(m, i))
                 for i in range(cfg.eval_batch)]
        instances = [make_instance(cfg, m, s) for s in seeds]
        init_seeds = [derive_stream(cfg.master_seed, NS_ROLLOUT_INIT, _pack(m, i))
                      for i in range(cfg.eval_batch)]
        t_roll = time.perf_counter()
        rollouts = greedy_rollout_batch(instances, params, init_seeds)
        roll_time = time.perf_counter() - t_roll
        occs = []
        for inst, seed, res in zip(instances, seeds, rollouts):
            occ = host_counts(inst, res.state)
            occs.append(occ)
            rows.append(["instance", "rl", m, seed, res.risk, "", res.feasible] + list(occ))
            record_rows.append({"method": "rl", "m": m, "seed": seed,
                                "risk": res.risk, "feasible": res.feasible,
                                "wall_time_s": roll_time / len(rollouts)})
        mean_risk, std_risk = _aggregate([r.risk for r in rollouts])
        frac = float(np.mean([1.0 if r.feasible else 0.0 for r in rollouts]))
        mean_occ = np.mean(np.stack(occs), axis=0)
        rows.append(["aggregate", "rl", m, "", mean_risk, std_risk, frac] + list(mean_occ))
        record_aggs.append({"method": "rl", "m": m, "mean_risk": mean_risk,
                            "std_risk": std_risk, "feasible_fraction": frac})
    path = out / "eval.csv"
    write_csv(path, _eval_header(cfg.n), rows, cfg)
    _write_run_record(out, cfg, "eval", record_rows, record_aggs,
                      time.perf_counter() - t0)
    return path


_METHOD_IDS = {name: i for i, name in enumerate(METHODS)}


def _run_method(method: str, inst: ProblemInstance, cfg: ExperimentConfig,
                m: int, i: int, params: ModelParams | None):
    seed = derive_stream(cfg.master_seed, NS_METHOD_RNG,
                         (_METHOD_IDS[method] << 40) | _pack(m, i))
    if method == "rl":
        init_seed = derive_stream(cfg.master_seed, NS_ROLLOUT_INIT, _pack(m, i))
        t0 = time.perf_counter()
        res = greedy_rollout_batch([inst], params, [init_seed])[0]
        return res.risk, res.feasible, time.perf_counter() - t0
    if method == "qp":
        t0 = time.perf_counter()
        frac = qp_relax_solve(inst, seed=seed)
        rounded = round_fractional(inst, frac)
        return rounded.risk, rounded.feasible, time.perf_counter() - t0
    if method == "greedy":
        res = greedy_construct(inst)
    elif method == "local_search":
        start = random_feasible(inst, np.random.default_rng(seed))
        res = local_search_swap(inst, start.allocation, budget=10 * inst.m)
    elif method == "random":
        res = random_feasible(inst, np.random.default_rng(seed))
    elif method == "brute_force":
        res = brute_force(inst)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return res.risk, res.feasible, res.wall_time


def cmd_compare(checkpoint, cfg: ExperimentConfig, methods: Sequence[str],
                threads: int = 1) -> tuple[Path, Path]:
    """Run the selected methods on identical instance sets and emit paired
    rows plus per-size mean/std series for plotting."""
    t0 = time.perf_counter()
    methods = list(methods)
    if not methods:
        raise ConfigError("no methods selected")
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    if len(set(methods)) != len(methods):
        raise ConfigError("duplicate method in selection")
    params = None
    if "rl" in methods:
        if checkpoint is None:
            raise ConfigError("method 'rl' requires a checkpoint")
        params = load_checkpoint(checkpoint)
        if params.n != cfg.n:
            raise ConfigError(f"checkpoint built for n={params.n}, config has n={cfg.n}")
    if "brute_force" in methods:
        worst = max(cfg.m_eval)
        if cfg.n ** worst > _BRUTE_FORCE_BOUND:
            raise ConfigError(
                f"brute_force infeasible at m={worst}: n^m exceeds {_BRUTE_FORCE_BOUND:g}")

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tasks = []
    for m in cfg.m_eval:
        seeds = [derive_stream(cfg.master_seed, NS_EVAL_INSTANCE, _pack(m, i))
                 for i in range(cfg.eval_batch)]
        instances = [make_instance(cfg, m, s) for s in seeds]
        for i, (inst, seed) in enumerate(zip(instances, seeds)):
            for method in methods:
                tasks.append((method, inst, m, i, seed))

    def run(task):
        method, inst, m, i, seed = task
        return _run_method(method, inst, cfg, m, i, params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, tasks))
    else:
        outcomes = [run(t) for t in tasks]

    rows = []
    record_rows = []
    for (method, _inst, m, i, seed), (risk_val, feasible, wall) in zip(tasks, outcomes):
        rows.append([method, m, seed, risk_val, feasible])
        record_rows.append({"method": method, "m": m, "seed": seed,
                            "risk": risk_val, "feasible": bool(feasible),
                            "wall_time_s": wall})
    compare_path = out / "compare.csv"
    write_csv(compare_path, ["method", "m", "instance_seed", "risk", "feasible"],
              rows, cfg)

    plot_rows = []
    record_aggs = []
    for m in cfg.m_eval:
        for method in methods:
            risks = [r[3] for r in rows if r[0] == method and r[1] == m]
            mean_risk, std_risk = _aggregate(risks)
            plot_rows.append([m, method, mean_risk, std_risk, len(risks)])
            record_aggs.append({"method": method, "m": m, "mean_risk": mean_risk,
                                "std_risk": std_risk, "batch": len(risks)})
    plot_path = out / "plot_data.csv"
    write_csv(plot_path, ["m", "method", "mean_risk", "std_risk", "batch"],
              plot_rows, cfg)
    _write_run_record(out, cfg, "compare", record_rows, record_aggs,
                      time.perf_counter() - t0)
    return compare_path, plot_path


# ---------------------------------------------------------------------------
# Verification battery.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


def _tiny_batch(inst: ProblemInstance, rng: np.random.Generator, size: int):
    from .agent import Transition  # local import to avoid a cycle at module load

    batch = []
    for b in range(size):
        before = AllocationState(rng.integers(0, inst.n, inst.m))
        after = AllocationState(rng.integers(0, inst.n, inst.m))
        batch.append(Transition(
            graph_id=0,
            state_from=before, phone_from=int(rng.integers(inst.m)),
            action=int(rng.integers(inst.n)), reward=float(rng.normal()),
            state_to=after, phone_to=int(rng.integers(inst.m)),
            terminal=bool(b == size - 1),
        ))
    return batch


def _check_gradients(seed: int, inject_fault: bool) -> PropertyResult:
    worst = 0.0
    rng = np.random.default_rng(seed)
    for trial in range(4):
        m = int(rng.integers(4, 9))
        n = int(rng.integers(2, 4))
        inst = ProblemInstance(
            graph=gen_uniform(m, int(rng.integers(2 ** 32))),
            n=n, capacities=np.full(n, m), desired_dist=np.full(n, 1.0 / n),
        )
        params = init_params(n, d_h=int(rng.integers(3, 8)), d_prime=int(rng.integers(2, 5)),
                             layers=int(rng.integers(1, 3)), seed=int(rng.integers(2 ** 32)))
        target = init_params(n, params.encoder.d_h, params.decoder.d_prime,
                             params.encoder.layers, seed=int(rng.integers(2 ** 32)))
        batch = _tiny_batch(inst, rng, size=3)
        corrupt = None
        if inject_fault and trial == 0:
            _, grads = loss_and_grad(params, target, batch, 0.9, {0: inst})
            idx = int(np.argmax(np.abs(grads.theta2.reshape(-1))))
            corrupt = ("theta2", idx, 2.0)
        err = finite_diff_check(params, target, batch, {0: inst}, gamma=0.9,
                                corrupt=corrupt)
        worst = max(worst, err)
    return PropertyResult("gradient_check", worst < 1e-4,
                          f"max_rel_err={worst:.3g} tol=1e-4")


def _check_equivariance(seed: int) -> PropertyResult:
    from .model import encode

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(10):
        m, n = int(rng.integers(5, 12)), int(rng.integers(2, 4))
        inst = ProblemInstance(graph=gen_uniform(m, int(rng.integers(2 ** 32))), n=n,
                               capacities=np.full(n, m), desired_dist=np.full(n, 1.0 / n))
        params = init_params(n, 6, 4, 2, seed=int(rng.integers(2 ** 32)))
        s = AllocationState(rng.integers(0, n, m))
        perm = rng.permutation(m)
        h = encode(params.encoder, inst.w_bar, s, n).h
        wb_p = inst.w_bar[np.ix_(perm, perm)]
        h_p = encode(params.encoder, wb_p, AllocationState(s.assign[perm]), n).h
        worst = max(worst, float(np.abs(h_p - h[perm]).max()))
    return PropertyResult("encoder_equivariance", worst < 1e-9,
                          f"max_abs_dev={worst:.3g} tol=1e-9")


def _check_telescoping(seed: int) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    beta = 1.0
    for _ in range(20):
        m, n = int(rng.integers(4, 20)), int(rng.integers(2, 5))
        inst = ProblemInstance(graph=gen_uniform(m, int(rng.integers(2 ** 32))), n=n,
                               capacities=np.full(n, m), desired_dist=np.full(n, 1.0 / n))
        state = AllocationState(rng.integers(0, n, m))
        first = state
        total = 0.0
        for phone in range(m):
            nxt = apply_move(state, phone, int(rng.integers(n)))
            total += step_reward(inst, state, nxt, beta)
            state = nxt
        expected = (risk(inst, first) - risk(inst, state)
                    + beta * (kl_penalty(inst, first) - kl_penalty(inst, state)))
        worst = max(worst, abs(total - expected))
    return PropertyResult("reward_telescoping", worst < 1e-9,
                          f"max_abs_dev={worst:.3g} tol=1e-9")


def _check_oracle_dominance(seed: int) -> PropertyResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(25):
        m, n = int(rng.integers(5, 10)), int(rng.integers(2, 4))
        if n ** m > 100_000:
            m = 8
        caps = capacities_from_relative(np.full(n, 1.0 / n), m)
        inst = ProblemInstance(graph=gen_uniform(m, int(rng.integers(2 ** 32))), n=n,
                               capacities=caps, desired_dist=np.full(n, 1.0 / n))
        opt = brute_force(inst).risk
        rivals = [
            random_feasible(inst, np.random.default_rng(int(rng.integers(2 ** 32)))).risk,
            greedy_construct(inst).risk,
            local_search_swap(
                inst, random_feasible(inst, np.random.default_rng(1)).allocation,
                budget=5 * m).risk,
            round_fractional(inst, qp_relax_solve(inst, iters=150, seed=3)).risk,
        ]
        worst = max(worst, opt - min(rivals))
    return PropertyResult("oracle_dominance", worst <= 1e-9,
                          f"max(opt - rival)={worst:.3g} tol=1e-9")


def _check_polytope(seed: int) -> PropertyResult:
    rng = np.random.default_rng(seed)
    ok = True
    detail = []
    worst_row = worst_col = worst_neg = worst_int = 0.0
    for _ in range(5):
        m, n = int(rng.integers(6, 14)), int(rng.integers(2, 5))
        caps = capacities_from_relative(np.full(n, 1.0 / n), m)
        inst = ProblemInstance(graph=gen_uniform(m, int(rng.integers(2 ** 32))), n=n,
                               capacities=caps, desired_dist=np.full(n, 1.0 / n))
        iterates: list[np.ndarray] = []
        qp_relax_solve(inst, iters=60, seed=int(rng.integers(2 ** 32)),
                       restarts=2, on_iterate=iterates.append)
        for x in iterates:
            worst_row = max(worst_row, float(np.abs(x.sum(axis=1) - 1.0).max()))
            worst_col = max(worst_col, float((x.sum(axis=0) - caps).max()))
            worst_neg = max(worst_neg, float((-x).max()))
        cost = rng.normal(size=(m, n))
        from .baselines import lmo_transportation
        vertex = lmo_transportation(cost, caps).x
        worst_int = max(worst_int, float(np.minimum(np.abs(vertex),
                                                    np.abs(vertex - 1.0)).max()))
    ok = worst_row <= 1e-9 and worst_col <= 1e-9 and worst_neg <= 1e-12 and worst_int <= 1e-9
    detail = (f"row_dev={worst_row:.3g} col_excess={worst_col:.3g} "
              f"neg={worst_neg:.3g} integrality={worst_int:.3g}")
    return PropertyResult("polytope_invariants", ok, detail)


def cmd_check(cfg: ExperimentConfig | None = None,
              inject_gradient_fault: bool = False) -> list[PropertyResult]:
    """Run the verification battery; exactly one result per property."""
    reduce_heap_trimming()
    seed = cfg.master_seed if cfg is not None else 0
    return [
        _check_gradients(derive_stream(seed, 15, 0), inject_gradient_fault),
        _check_equivariance(derive_stream(seed, 15, 1)),
        _check_telescoping(derive_stream(seed, 15, 2)),
        _check_oracle_dominance(derive_stream(seed, 15, 3)),
        _check_polytope(derive_stream(seed, 15, 4)),
    ]
