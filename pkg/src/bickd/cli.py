"""Command-line entry point (``bickd``).

Exit codes: 0 success, 1 run failure, 2 configuration/usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import config as config_mod
from . import gradcheck, metrics, models, runner, trainer
from .data import Dataset, load_idx, subsample
from .errors import BickdError
from .losses import METHODS

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2

class UsageError(Exception):
    pass


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands repeat the flags with SUPPRESS so either position works
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--threads", type=int, default=default(1), help="parallel independent runs")
    parser.add_argument("--format", choices=("csv", "json"), default=default("csv"), help="per-run report format")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bickd", description="Bilateral contrastive distillation lab.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="train the teacher on ground-truth labels")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="teacher checkpoint path")

    p = sub.add_parser("distill", help="distill one student")
    p.add_argument("--config", required=True)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    p.add_argument("--method", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="pretrain + distill every (method, seed) + aggregate")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("geometry", help="orthogonality report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True,
                   help="config/dataset JSON, dataset CSV, or IMAGES.idx,LABELS.idx")
    p.add_argument("--out", required=True, help="output JSON path")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    for sp in sub.choices.values():
        _global_flags(sp, suppress=True)
    return parser


def _load_geometry_data(spec: str) -> Dataset:
    if "," in spec:
        images, labels = spec.split(",", 1)
        for p in (images, labels):
            if not Path(p).is_file():
                raise FileNotFoundError(f"--data: no such file {p}")
        return load_idx(images, labels)
    path = Path(spec)
    if not path.is_file():
        raise FileNotFoundError(f"--data: no such file {path}")
    if path.suffix == ".csv":
        return Dataset.from_csv(path)
    doc = json.loads(path.read_text())
    if "dataset" not in doc:
        doc = {"dataset": doc}
    return config_mod.from_dict(doc, base_dir=path.parent).dataset.load()[1]


def cmd_pretrain(args) -> int:
    cfg = config_mod.load(args.config)
    train, evald = cfg.dataset.load()
    teacher, report = runner.pretrain(cfg, train, evald)
    models.save(teacher, args.out)
    print(f"teacher eval top-1 {report.summary['top1']:.4f} -> {args.out}")
    return EXIT_OK


def cmd_distill(args) -> int:
    if args.method not in METHODS:
        raise UsageError(f"unknown method {args.method!r}; valid: {', '.join(METHODS)}")
    cfg = config_mod.load(args.config)
    if not Path(args.teacher).is_file():
        raise FileNotFoundError(f"--teacher: no such file {args.teacher}")
    teacher = models.load(args.teacher)
    train, evald = cfg.dataset.load()
    result = runner.distill_one(cfg, teacher, subsample(train, cfg.sampler), evald,
                                args.method, args.seed, Path(args.out), args.format)
    if result.status != "ok":
        print(f"distill failed: {result.error}", file=sys.stderr)
        return EXIT_RUN_FAILED
    print(json.dumps(result.summary, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = config_mod.load(args.config)
    out = Path(args.out)
    if cfg.regimes:
        results = runner.run_regimes(cfg, out, args.threads, args.format)
        for label, rows in results.items():
            _print_summary(rows, label)
    else:
        _print_summary(runner.run(cfg, out, args.threads, args.format))
    return EXIT_OK


def _print_summary(rows, title: Optional[str] = None) -> None:
    if title:
        print(f"[{title}]")
    for row in rows:
        top1 = row["mean_top1"]
        print(f"  {row['method']:<11} top1={'n/a' if top1 is None else f'{top1:.4f}'}")


def cmd_geometry(args) -> int:
    if not Path(args.ckpt).is_file():
        raise FileNotFoundError(f"--ckpt: no such file {args.ckpt}")
    params = models.load(args.ckpt)
    ds = _load_geometry_data(args.data)
    logits = models.predict(params, ds.features)
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    stats = metrics.orthogonality_report(probs, ds.labels, logits=logits)
    doc = {
        "top1": metrics.topk_accuracy(logits, ds.labels, 1),
        "top5": metrics.topk_accuracy(logits, ds.labels, min(5, logits.shape[1])),
        **stats.to_dict(),
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=2))
    print(f"offdiag_cos_mean={stats.offdiag_cos_mean:.4f} within_class_cos_mean={stats.within_class_cos_mean:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    worst = gradcheck.run_suite(args.trials, args.seed)
    for line in gradcheck.summarize(worst):
        print(line)
    overall = max(worst.values())
    ok = overall <= gradcheck.TOLERANCE
    print(f"max relative error {overall:.3e} ({'PASS' if ok else 'FAIL'}, tolerance {gradcheck.TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_RUN_FAILED


COMMANDS = {
    "pretrain": cmd_pretrain,
    "distill": cmd_distill,
    "sweep": cmd_sweep,
    "geometry": cmd_geometry,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (config_mod.ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except runner.SweepFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    except (BickdError, ValueError, trainer.DivergenceError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())
