"""Sweep orchestration: pretrain once, distill every (method, seed), aggregate.

Output layout of :func:`run` (one regime)::

    <out>/teacher.json            teacher checkpoint
    <out>/teacher_report.csv
    <out>/runs/<method>/seed_<s>/report.{csv,json}, student.json
    <out>/runs.csv                one row per (method, seed), with status
    <out>/summary.csv             per-method aggregates over seeds

:func:`run_regimes` repeats that under ``<out>/<regime>/`` for every sampler
and adds ``regimes.csv`` and ``deltas.csv`` (BicKD minus vanilla KD).
"""

from __future__ import annotations

import csv
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import models, trainer
from .config import ExperimentConfig
from .data import Dataset, SamplerSpec, subsample
from .errors import BickdError
from .models import ModelParams

logger = logging.getLogger(__name__)

SUMMARY_FIELDS = ("method", "mean_top1", "std_top1", "mean_top5", "offdiag_cos_mean", "within_class_cos_mean")
RUN_FIELDS = ("method", "seed", "status", "top1", "top5", "offdiag_cos_mean", "within_class_cos_mean",
              "initial_offdiag_cos_mean", "error")


class SweepFailed(RuntimeError):
    """At least one (method, seed) cell failed; partial results are on disk."""


@dataclass
class RunResult:
    method: str
    seed: int
    status: str
    summary: Dict[str, float]
    error: str = ""


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def pretrain(cfg: ExperimentConfig, train: Dataset, evald: Optional[Dataset] = None) -> Tuple[ModelParams, trainer.TrainReport]:
    spec = cfg.teacher_spec(train.dim, train.num_classes)
    return trainer.train_teacher(spec, train, cfg.teacher_schedule, eval_data=evald)


def distill_one(cfg: ExperimentConfig, teacher: ModelParams, transfer: Dataset, evald: Dataset,
                method: str, seed: int, out_dir: Optional[Path] = None, fmt: str = "csv") -> RunResult:
    """One distillation cell; never raises, failures come back as ``status='error'``."""
    try:
        spec = cfg.student_spec(transfer.dim, transfer.num_classes, seed)
        student, report = trainer.distill(teacher, spec, transfer, cfg.schedule_for_seed(seed),
                                          cfg.weights, method, eval_data=evald)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            if fmt == "json":
                (out_dir / "report.json").write_text(report.to_json())
            else:
                (out_dir / "report.csv").write_text(report.to_csv())
            (out_dir / "summary.json").write_text(json.dumps(report.summary, indent=2))
            models.save(student, out_dir / "student.json")
        return RunResult(method, seed, "ok", report.summary)
    except Exception as exc:  # partial-failure policy: record and continue
        logger.error("run %s seed=%d failed: %s", method, seed, exc)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.txt").write_text(traceback.format_exc())
        return RunResult(method, seed, "error", {}, f"{type(exc).__name__}: {exc}")


def aggregate(results: Sequence[RunResult], methods: Sequence[str]) -> List[Dict[str, float]]:
    """Per-method means (and population std of top-1) over successful seeds."""
    rows = []
    for m in methods:
        ok = [r.summary for r in results if r.method == m and r.status == "ok"]
        if not ok:
            rows.append({"method": m, **{k: None for k in SUMMARY_FIELDS[1:]}})
            continue
        top1 = np.array([s["top1"] for s in ok])
        rows.append({
            "method": m,
            "mean_top1": float(top1.mean()),
            "std_top1": float(top1.std()),
            "mean_top5": float(np.mean([s["top5"] for s in ok])),
            "offdiag_cos_mean": float(np.mean([s["offdiag_cos_mean"] for s in ok])),
            "within_class_cos_mean": float(np.mean([s["within_class_cos_mean"] for s in ok])),
        })
    return rows


def _cell(args):
    return distill_one(*args)


def run(cfg: ExperimentConfig, out_dir: Path, threads: int = 1, fmt: str = "csv",
        sampler: Optional[SamplerSpec] = None, data: Optional[Tuple[Dataset, Dataset]] = None,
        teacher: Optional[ModelParams] = None) -> List[Dict[str, float]]:
    """Run every (method, seed) cell and write the result tables.

    Returns the summary rows.  Raises :class:`SweepFailed` after writing
    everything if any cell failed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, evald = data if data is not None else cfg.dataset.load()
    if teacher is None:
        teacher, treport = pretrain(cfg, train, evald)
        (out_dir / "teacher_report.csv").write_text(treport.to_csv())
    models.save(teacher, out_dir / "teacher.json")
    transfer = subsample(train, sampler or cfg.sampler)

    cells = [(cfg, teacher, transfer, evald, m, s, out_dir / "runs" / m / f"seed_{s}", fmt)
             for m in cfg.methods for s in cfg.seeds]
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]

    _write_csv(out_dir / "runs.csv", RUN_FIELDS, [
        [r.method, r.seed, r.status, _num(r.summary.get("top1")), _num(r.summary.get("top5")),
         _num(r.summary.get("offdiag_cos_mean")), _num(r.summary.get("within_class_cos_mean")),
         _num(r.summary.get("initial_offdiag_cos_mean")), r.error]
        for r in results
    ])
    summary = aggregate(results, cfg.methods)
    _write_csv(out_dir / "summary.csv", SUMMARY_FIELDS,
               [[row["method"], *(_num(row[k]) for k in SUMMARY_FIELDS[1:])] for row in summary])
    if fmt == "json":
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))

    failed = [r for r in results if r.status != "ok"]
    if failed:
        raise SweepFailed(f"{len(failed)} of {len(results)} runs failed; see {out_dir / 'runs.csv'}")
    return summary


def run_regimes(cfg: ExperimentConfig, out_dir: Path, threads: int = 1, fmt: str = "csv") -> Dict[str, List[Dict[str, float]]]:
    """One teacher, one :func:`run` per sampler in ``cfg.regimes``.

    Writes ``regimes.csv`` (all summary rows tagged by regime) and
    ``deltas.csv`` with ``bickd - vanilla_kd`` mean top-1 per regime when both
    methods are in the sweep.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, evald = cfg.dataset.load()
    teacher, treport = pretrain(cfg, train, evald)
    (out_dir / "teacher_report.csv").write_text(treport.to_csv())

    by_regime: Dict[str, List[Dict[str, float]]] = {}
    failures = []
    for sampler in cfg.regimes or [cfg.sampler]:
        try:
            by_regime[sampler.label] = run(cfg, out_dir / sampler.label, threads, fmt,
                                           sampler=sampler, data=(train, evald), teacher=teacher)
        except SweepFailed as exc:
            failures.append(str(exc))
            by_regime[sampler.label] = _read_summary(out_dir / sampler.label / "summary.csv")
        except BickdError as exc:  # e.g. the regime asks for more rows than exist
            logger.error("regime %s failed: %s", sampler.label, exc)
            failures.append(f"{sampler.label}: {exc}")
            (out_dir / sampler.label).mkdir(parents=True, exist_ok=True)
            (out_dir / sampler.label / "error.txt").write_text(traceback.format_exc())
            by_regime[sampler.label] = aggregate([], cfg.methods)

    _write_csv(out_dir / "regimes.csv", ("regime", *SUMMARY_FIELDS), [
        [label, row["method"], *(_num(row[k]) for k in SUMMARY_FIELDS[1:])]
        for label, rows in by_regime.items() for row in rows
    ])
    delta_rows = []
    for label, rows in by_regime.items():
        means = {row["method"]: row["mean_top1"] for row in rows}
        if means.get("bickd") is not None and means.get("vanilla_kd") is not None:
            delta_rows.append([label, _num(means["bickd"]), _num(means["vanilla_kd"]),
                               _num(means["bickd"] - means["vanilla_kd"])])
    _write_csv(out_dir / "deltas.csv", ("regime", "bickd_mean_top1", "vanilla_kd_mean_top1", "delta_top1"), delta_rows)
    if failures:
        raise SweepFailed("; ".join(failures))
    return by_regime


def _read_summary(path: Path) -> List[Dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "method" else (float(v) if v else None)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
