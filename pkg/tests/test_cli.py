import csv
import json

import numpy as np
import pytest

from bickd import data
from bickd.cli import main

TINY = {
    "dataset": {"kind": "blobs", "num_classes": 3, "dim": 4, "n_per_class": 20, "spread": 0.3,
                "seed": 1, "eval_n_per_class": 10, "eval_seed": 2},
    "teacher": {"hidden_dims": [16]},
    "student": {"hidden_dims": [4]},
    "teacher_schedule": {"epochs": 3, "batch_size": 16, "lr_decay_epochs": [2]},
    "student_schedule": {"epochs": 3, "batch_size": 16, "lr_decay_epochs": [2]},
    "methods": ["vanilla_kd", "bickd"],
    "seeds": [1, 2, 3],
}


def write_config(tmp_path, **overrides):
    cfg = json.loads(json.dumps(TINY))
    cfg.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gradcheck_exits_zero(capsys):
    assert main(["gradcheck", "--trials", "2"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_empty_seeds_is_config_error(tmp_path, capsys):
    assert main(["sweep", "--config", str(write_config(tmp_path, seeds=[])), "--out", str(tmp_path / "o")]) == 2
    assert "seeds" in capsys.readouterr().err


def test_unknown_key_is_config_error(tmp_path, capsys):
    path = write_config(tmp_path, weights={"alpah": 1})
    assert main(["sweep", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "weights.alpah" in capsys.readouterr().err


def test_missing_idx_file(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "train-images.idx"
    path = write_config(tmp_path, dataset={"kind": "idx", "train_images": str(missing),
                                           "train_labels": str(tmp_path / "labels.idx")})
    code = main(["sweep", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code != 0
    assert str(missing) in capsys.readouterr().err


def test_unknown_method_lists_valid_names(tmp_path, capsys):
    code = main(["distill", "--config", str(write_config(tmp_path)), "--teacher", "t.json",
                 "--method", "kd", "--seed", "1", "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert all(m in err for m in ("vanilla_kd", "bickd", "sc_only", "cc_only", "oa_s", "oa_c", "ce_only"))


def test_unknown_method_in_config(tmp_path, capsys):
    assert main(["sweep", "--config", str(write_config(tmp_path, methods=["bickd", "crd"])),
                 "--out", str(tmp_path / "o")]) == 2
    assert "oa_s" in capsys.readouterr().err


def test_argparse_error_exits_two():
    assert main(["distill", "--config", "x"]) == 2


def test_pretrain_distill_geometry(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "teacher.json")]) == 0
    assert main(["--format", "json", "distill", "--config", str(cfg), "--teacher", str(tmp_path / "teacher.json"),
                 "--method", "bickd", "--seed", "1", "--out", str(tmp_path / "student")]) == 0
    assert (tmp_path / "student" / "report.json").is_file()
    assert main(["geometry", "--ckpt", str(tmp_path / "student" / "student.json"),
                 "--data", str(cfg), "--out", str(tmp_path / "geo.json")]) == 0
    doc = json.loads((tmp_path / "geo.json").read_text())
    assert 0.0 <= doc["offdiag_cos_mean"] <= 1.0


def test_geometry_on_csv_and_idx(tmp_path):
    cfg = write_config(tmp_path, dataset={"kind": "blobs", "num_classes": 3, "dim": 4, "n_per_class": 10,
                                          "spread": 0.3})
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "t.json")]) == 0
    ds = data.make_gaussian_blobs(3, 4, 5, 0.3, seed=9)
    ds.to_csv(tmp_path / "eval.csv")
    assert main(["geometry", "--ckpt", str(tmp_path / "t.json"), "--data", str(tmp_path / "eval.csv"),
                 "--out", str(tmp_path / "g.json")]) == 0

    images = np.random.default_rng(0).integers(0, 256, size=(6, 2, 2), dtype=np.uint8)
    data.write_idx(images, [0, 1, 2, 0, 1, 2], tmp_path / "i.idx", tmp_path / "l.idx")
    assert main(["geometry", "--ckpt", str(tmp_path / "t.json"),
                 "--data", f"{tmp_path / 'i.idx'},{tmp_path / 'l.idx'}", "--out", str(tmp_path / "g2.json")]) == 0
    assert main(["geometry", "--ckpt", str(tmp_path / "t.json"), "--data", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path / "g3.json")]) == 2


def test_sweep_outputs_and_aggregation(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    summary = read_rows(out / "summary.csv")
    assert list(summary[0]) == ["method", "mean_top1", "std_top1", "mean_top5", "offdiag_cos_mean",
                                "within_class_cos_mean"]
    for row in summary:
        per_seed = [json.loads((out / "runs" / row["method"] / f"seed_{s}" / "summary.json").read_text())["top1"]
                    for s in (1, 2, 3)]
        assert float(row["mean_top1"]) == pytest.approx(np.mean(per_seed), abs=1e-15)
        assert float(row["std_top1"]) == pytest.approx(np.std(per_seed), abs=1e-15)
    assert len(read_rows(out / "runs.csv")) == 6


def test_single_cell_summary_equals_report(tmp_path):
    out = tmp_path / "run"
    assert main(["sweep", "--config", str(write_config(tmp_path, methods=["ce_only"], seeds=[1])),
                 "--out", str(out)]) == 0
    (row,) = read_rows(out / "summary.csv")
    report = json.loads((out / "runs" / "ce_only" / "seed_1" / "summary.json").read_text())
    assert float(row["mean_top1"]) == report["top1"] and float(row["std_top1"]) == 0.0


def test_sweep_deterministic_and_threads(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert main(["sweep", "--threads", "2", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    ref = (tmp_path / "a" / "summary.csv").read_bytes()
    assert (tmp_path / "b" / "summary.csv").read_bytes() == ref
    assert (tmp_path / "c" / "summary.csv").read_bytes() == ref


def test_partial_failure_preserves_results(tmp_path, capsys):
    # k=25 exceeds the 20 available rows per class, so every run fails at sampling
    cfg = write_config(tmp_path, regimes=[{"kind": "few_shot", "k_per_class": 5},
                                          {"kind": "few_shot", "k_per_class": 25}])
    out = tmp_path / "reg"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 1
    assert (out / "few_shot_k5" / "summary.csv").is_file()
    assert (out / "regimes.csv").is_file()


def test_run_failure_writes_error_row(tmp_path, monkeypatch):
    from bickd import runner, trainer

    original = trainer.distill

    def flaky(teacher, spec, *args, **kwargs):
        if spec.seed == 2:
            raise trainer.DivergenceError("boom")
        return original(teacher, spec, *args, **kwargs)

    monkeypatch.setattr(trainer, "distill", flaky)
    out = tmp_path / "run"
    assert main(["sweep", "--config", str(write_config(tmp_path)), "--out", str(out)]) == 1
    rows = read_rows(out / "runs.csv")
    assert sorted(r["status"] for r in rows) == ["error", "error", "ok", "ok", "ok", "ok"]
    assert (out / "runs" / "bickd" / "seed_2" / "error.txt").is_file()
    assert all(r["mean_top1"] for r in read_rows(out / "summary.csv"))
