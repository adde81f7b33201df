"""Command-line entry point.

    pegrl train --config exp.yaml --seed 0 --steps 20000 --out runs/a
    pegrl eval --checkpoint runs/a/seed_0/checkpoints/latest --offset-mm 0 1 2 3 4 5
    pegrl transfer --config source.yaml --target-config target.yaml --out runs/t
    pegrl ablate --config exp.yaml --variant full --variant mlp-policy --out runs/abl
    pegrl plot --metrics runs/a/seed_0/metrics.csv --trace runs/a/eval/traces_0mm_0deg/episode_000.csv
    pegrl grad-check

Configuration layers: YAML file < PEGRL_<SECTION>__<KEY> environment
variables < command-line flags (including --set section.key=value).
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .harness import config as C
from .nn.checkpoint import CheckpointFormatError, CheckpointVersionError

log = logging.getLogger("pegrl")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="experiment YAML")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--workers", type=int, help="in-process rollout environments")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. sac.batch_size=128")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pegrl", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("train", help="train SAC on the insertion task")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="resume from a checkpoint directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally over goal offsets")
    _common(p)
    p.add_argument("--checkpoint", type=Path, help="agent checkpoint or run checkpoint directory")
    p.add_argument("--scripted", action="store_true", help="evaluate the scripted insertion stub instead")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--offset-mm", type=float, nargs="+", default=[0.0])
    p.add_argument("--offset-deg", type=float, nargs="+", default=[0.0])

    p = sub.add_parser("transfer", help="pretrain, fine-tune on a shifted target, compare with scratch")
    _common(p)
    p.add_argument("--target-config", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, help="skip pretraining and start from this agent checkpoint")

    p = sub.add_parser("ablate", help="train ablation variants with paired seeds")
    _common(p)
    p.add_argument("--variant", action="append", help=f"one of {', '.join(C.VARIANTS)} (repeatable)")

    p = sub.add_parser("plot", help="render learning curves and traces as SVG")
    p.add_argument("--metrics", type=Path, nargs="*", default=[])
    p.add_argument("--trace", type=Path, nargs="*", default=[])
    p.add_argument("--out", type=Path, default=Path("plots"))

    p = sub.add_parser("grad-check", help="finite-difference check of all backward passes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    return ap


def _load(args, config_path=None) -> C.ExperimentConfig:
    over = C.parse_assignments(args.set)
    train = {}
    if args.seed:
        train["seeds"] = list(args.seed)
    if args.steps is not None:
        train["total_steps"] = args.steps
    if args.workers is not None:
        train["workers"] = args.workers
    if args.out is not None:
        train["out_dir"] = str(args.out)
    if train:
        over = C.deep_merge(over, {"train": train})
    return C.load_config(config_path if config_path is not None else args.config, over)


def run(args) -> int:
    from .harness import experiments as X
    from .harness.plots import emit_plots
    from .harness.verify import gradient_suite

    if args.cmd == "train":
        if args.checkpoint is not None and args.config is None:
            cfg = _load(args, X.find_run_config(args.checkpoint))
        else:
            cfg = _load(args)
        res = X.cmd_train(cfg, resume=args.checkpoint)
        for seed, evals in res.items():
            last = evals[-1][1].success_rate if evals else float("nan")
            print(f"seed {seed}: final eval success {last:.2f}, steps to 80%: "
                  f"{X.steps_to_threshold(evals, X.SUCCESS_THRESHOLD)}")
        return 0

    if args.cmd == "eval":
        if args.scripted:
            cfg = _load(args)
            policy = X.scripted_insert_policy(cfg)
        else:
            if args.checkpoint is None:
                raise UsageError("eval needs --checkpoint or --scripted")
            cfg = _load(args, args.config or X.find_run_config(args.checkpoint))
            policy = X.agent_policy(X.load_agent(args.checkpoint, cfg))
        out = args.out or Path(cfg.train.out_dir) / "eval"
        rows = X.cmd_eval(cfg, policy, args.episodes, args.offset_mm, args.offset_deg, out)
        print("offset_mm offset_deg success mean_steps mean_seconds")
        for r in rows:
            print(f"{r.offset_mm:9.2f} {r.offset_deg:10.2f} {r.success_rate:7.2f} {r.mean_steps:10.1f} "
                  f"{r.mean_seconds:12.2f}")
        return 0

    if args.cmd == "transfer":
        src = _load(args)
        tgt = _load(args, args.target_config)
        out = args.out or Path(src.train.out_dir)
        rep = X.cmd_transfer(src, tgt, out, source_checkpoint=args.checkpoint)
        print(yaml.safe_dump({k: v for k, v in rep.to_dict().items() if not k.endswith("curve")}, sort_keys=False))
        return 0

    if args.cmd == "ablate":
        cfg = _load(args)
        variants = args.variant or list(C.VARIANTS)
        res = X.cmd_ablate(cfg, variants, args.out or Path(cfg.train.out_dir))
        for r in res:
            print(f"{r.variant:15s} seed {r.seed}: steps to 80% {r.steps_to_threshold}, return AUC {r.return_auc:.2f}")
        return 0

    if args.cmd == "plot":
        for path in emit_plots(args.metrics, args.trace, args.out):
            print(path)
        return 0

    if args.cmd == "grad-check":
        errs = gradient_suite(args.seed)
        ok = True
        for name, e in errs.items():
            flag = "ok" if e < args.tol else "FAIL"
            ok &= e < args.tol
            print(f"{name:12s} max rel err {e:.2e} {flag}")
        return 0 if ok else 2
    raise UsageError(f"unknown command {args.cmd}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return run(args)
    except (UsageError, C.ConfigError) as exc:
        print(f"pegrl: error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointVersionError, CheckpointFormatError) as exc:
        print(f"pegrl: checkpoint error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures, including halted training
        print(f"pegrl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
