"""Command-line interface.

    qapbench generate --config cfg.json --count 10 [--out DIR] [--seed S]
    qapbench train    --config cfg.json [--out DIR] [--seed S]
    qapbench eval     --config cfg.json --checkpoint ckpt.json [--out DIR]
    qapbench compare  --config cfg.json --methods rl,qp [--checkpoint ...]
    qapbench check    --config cfg.json [--inject-gradient-fault]

Exit status: 0 on success, 2 on configuration errors, 3 on verification
failure, 1 on anything else.
"""

from __future__ import annotations

import argparse
import sys

from ._heap import reduce_heap_trimming
from .bench import cmd_check, cmd_compare, cmd_eval, cmd_generate, cmd_train, load_config
from .errors import ConfigError, QapBenchError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qapbench",
        description="Phone-clone allocation benchmark: RL agent vs classical solvers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for batch evaluation")

    p = sub.add_parser("generate", help="write instance files + manifest")
    common(p)
    p.add_argument("--count", type=int, default=1, help="number of instances")

    p = sub.add_parser("train", help="train a model; writes checkpoint and curve.csv")
    common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint over the test sweep")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("compare", help="run methods on identical instance sets")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--methods", default="rl,qp",
                   help="comma-separated subset of rl,qp,greedy,local_search,random,brute_force")

    p = sub.add_parser("check", help="run the verification battery")
    common(p)
    p.add_argument("--inject-gradient-fault", action="store_true",
                   help="corrupt one gradient entry to prove the check detects it")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    reduce_heap_trimming()
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        if args.command == "generate":
            paths = cmd_generate(cfg, args.count)
            print(f"wrote {len(paths)} instance(s) to {cfg.out_dir}")
        elif args.command == "train":
            ckpt, curve = cmd_train(cfg)
            print(f"checkpoint: {ckpt}")
            print(f"curve: {curve}")
        elif args.command == "eval":
            path = cmd_eval(args.checkpoint, cfg)
            print(f"results: {path}")
        elif args.command == "compare":
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            compare_path, plot_path = cmd_compare(args.checkpoint, cfg, methods,
                                                  threads=args.threads)
            print(f"comparison: {compare_path}")
            print(f"plot data: {plot_path}")
        elif args.command == "check":
            results = cmd_check(cfg, inject_gradient_fault=args.inject_gradient_fault)
            failed = False
            for res in results:
                status = "PASS" if res.passed else "FAIL"
                print(f"{res.name}: {status} ({res.detail})")
                failed = failed or not res.passed
            if failed:
                return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except QapBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
