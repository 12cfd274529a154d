"""One test per acceptance criterion; each prints a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py``; the lines are repeated
in the "acceptance criteria" section of the terminal summary.
"""

import csv
import struct
import time

import numpy as np
import pytest

import oracles
from bickd import config, data, gradcheck, losses, models, runner
from bickd import tensor as tn
from bickd.cli import main
from bickd.losses import LossWeights, PredictionBatch
from bickd.tensor import Tensor

BLOB_DATASET = {"kind": "blobs", "num_classes": 10, "dim": 20, "n_per_class": 300, "spread": 0.4,
                "seed": 1, "eval_n_per_class": 200, "eval_seed": 2}
SCHEDULE = {"epochs": 40, "batch_size": 64, "lr_init": 0.05, "lr_decay_epochs": [20, 30, 36]}
# Distillation setup for the directional checks: the teacher sees the full
# training split and the student only a 10-per-class transfer subset, so the
# teacher's soft targets carry information the labels alone do not.
DESK = {
    "dataset": BLOB_DATASET,
    "sampler": {"kind": "few_shot", "k_per_class": 10, "seed": 3},
    "teacher": {"hidden_dims": [64, 64], "seed": 0},
    "student": {"hidden_dims": [16]},
    "teacher_schedule": SCHEDULE,
    "student_schedule": SCHEDULE,
    "weights": {"alpha": 1.0, "beta": 2.0, "gamma": 2.0, "lam": 0.1, "tau_kl": 4.0},
    "methods": list(losses.METHODS),
    "seeds": list(range(1, 11)),
}


def random_batch(rng):
    b, c = int(rng.integers(1, 9)), int(rng.integers(2, 9))
    scale = rng.uniform(0.1, 5)
    s = tn.softmax_rows(rng.normal(size=(b, c)) * scale).data
    t = tn.softmax_rows(rng.normal(size=(b, c)) * scale).data
    return s, t, rng.integers(0, c, size=b)


def read_csv(path):
    def num(v):
        try:
            return float(v)
        except ValueError:
            return v

    with open(path, newline="") as fh:
        return [{k: num(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def pb(p, y):
    return PredictionBatch(Tensor(p), y)


@pytest.fixture(scope="module")
def desk_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    cfg = config.from_dict(DESK)
    start = time.perf_counter()
    rows = runner.run(cfg, out)
    elapsed = time.perf_counter() - start
    runs = read_csv(out / "runs.csv")
    return {r["method"]: r for r in rows}, runs, elapsed / len(runs), out


def test_criterion_1_loss_oracles(acceptance):
    rng = np.random.default_rng(2024)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        s, t, y = random_batch(rng)
        S, T, Y = s.tolist(), t.tolist(), y.tolist()
        ps, pt = pb(s, y), pb(t, y)
        worst = max(worst,
                    abs(losses.loss_soa(ps, pt).item() - oracles.soa(S, T, Y)),
                    abs(losses.loss_coa(ps, pt).item() - oracles.coa(S, T)),
                    abs(losses.loss_ca(ps, pt).item() - oracles.ca(S, T)),
                    abs(losses.loss_kl(ps, pt).item() - oracles.kl(S, T)))
    elapsed = time.perf_counter() - start
    acceptance(1, "loss oracle equivalence", worst <= 1e-12 and elapsed < 10,
               f"max |vectorised - loop| = {worst:.2e} over 1000 batches in {elapsed:.2f}s")


def test_criterion_2_gradients(acceptance, capsys):
    code = main(["gradcheck", "--trials", "100"])
    out = capsys.readouterr().out
    last = out.strip().splitlines()[-1]
    worst = float(last.split()[3])
    covered = {"loss_bickd", "loss_vanilla_kd", "loss_sc", "loss_cc", "loss_soa", "loss_coa", "loss_ca",
               "loss_kl", "loss_ce", "mlp_relu_bickd", "mlp_tanh_bickd"}
    names = {line.split()[0] for line in out.splitlines()[:-1]}
    ok = code == 0 and worst <= gradcheck.TOLERANCE and covered <= names
    acceptance(2, "gradient correctness", ok, f"gradcheck exit {code}, max relative error {worst:.2e} over 100 trials")


def test_criterion_3_bounds(acceptance):
    rng = np.random.default_rng(77)
    violations = 0
    for _ in range(1000):
        s, t, y = random_batch(rng)
        ps, pt = pb(s, y), pb(t, y)
        violations += not (-1 <= losses.loss_soa(ps, pt).item() <= 0)
        violations += not (-1 <= losses.loss_coa(ps, pt).item() <= 0)
        violations += not losses.loss_kl(ps, pt).item() >= 0
        violations += not losses.loss_ca(ps, pt).item() >= 0
        u, v = rng.uniform(0, 1, size=(2, s.shape[1]))
        d = losses.cosine_distance(u + 1e-3, v).item()
        violations += not (0 <= d <= 1)

    teacher_grads = 0.0
    for method in losses.METHODS:
        s = Tensor(rng.normal(size=(8, 5)), requires_grad=True)
        t = Tensor(rng.normal(size=(8, 5)), requires_grad=True)
        losses.method_loss(method, s, t, rng.integers(0, 5, size=8), LossWeights())[0].backward()
        teacher_grads += 0.0 if t.grad is None else float(np.abs(t.grad).sum())
    for fn in (losses.loss_soa, losses.loss_coa, losses.loss_ca, losses.loss_kl):
        zs = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        zt = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
        y = rng.integers(0, 4, size=6)
        fn(PredictionBatch.from_logits(zs, y), PredictionBatch.from_logits(zt, y)).backward()
        teacher_grads += 0.0 if zt.grad is None else float(np.abs(zt.grad).sum())
    acceptance(3, "bound invariants", violations == 0 and teacher_grads == 0.0,
               f"{violations} bound violations, total teacher gradient {teacher_grads}")


def test_criterion_4_ideal_geometry(acceptance):
    eye = np.eye(5)
    y = np.arange(5)
    values = [losses.loss_soa(pb(eye, y), pb(eye, y)).item(), losses.loss_coa(pb(eye, y), pb(eye, y)).item(),
              losses.loss_kl(pb(eye, y), pb(eye, y)).item(), losses.loss_ca(pb(eye, y), pb(eye, y)).item()]
    acceptance(4, "analytic one-hot fixture", values == [-1.0, -1.0, 0.0, 0.0],
               f"soa, coa, kl, ca = {values}")


def test_criterion_5_directional_ordering(acceptance, desk_sweep):
    summary, _, per_run, _ = desk_sweep
    m = {k: v["mean_top1"] for k, v in summary.items()}
    checks = {
        "bickd >= vanilla_kd": m["bickd"] >= m["vanilla_kd"],
        **{f"{k} >= ce_only": m[k] >= m["ce_only"] for k in ("sc_only", "cc_only", "oa_s", "oa_c")},
        "bickd >= max(sc_only, cc_only)": m["bickd"] >= max(m["sc_only"], m["cc_only"]),
        "runtime < 600 s per run": per_run < 600,
    }
    failed = [k for k, ok in checks.items() if not ok]
    detail = ", ".join(f"{k}={v:.4f}" for k, v in m.items()) + f", {per_run:.2f}s/run"
    if failed:
        detail += f"; failed: {failed}"
    acceptance(5, "desk-scale ordering over 10 paired seeds", not failed, detail)


def test_criterion_6_geometry_effect(acceptance, desk_sweep):
    summary, runs, _, _ = desk_sweep
    bickd_runs = [r for r in runs if r["method"] == "bickd"]
    init = float(np.mean([r["initial_offdiag_cos_mean"] for r in bickd_runs]))
    final = summary["bickd"]["offdiag_cos_mean"]
    kd = summary["vanilla_kd"]["offdiag_cos_mean"]
    per_seed = all(r["offdiag_cos_mean"] < r["initial_offdiag_cos_mean"] for r in bickd_runs)
    ok = final < init and per_seed and final <= kd + 0.02
    acceptance(6, "geometry effect", ok,
               f"bickd offdiag {final:.4f} (init {init:.4f}, lower on every seed: {per_seed}), vanilla_kd {kd:.4f}")


def test_criterion_7_regimes(acceptance, tmp_path):
    doc = dict(DESK, methods=["vanilla_kd", "bickd"], seeds=[1, 2, 3],
               regimes=[{"kind": "few_shot", "k_per_class": k, "seed": 3} for k in (5, 10, 20)]
               + [{"kind": "long_tail", "rho": r, "n_max": 100, "seed": 3} for r in (10, 100)])
    cfg = config.from_dict(doc)
    results = runner.run_regimes(cfg, tmp_path)
    labels = ["few_shot_k5", "few_shot_k10", "few_shot_k20", "long_tail_rho10", "long_tail_rho100"]
    well_formed = list(results) == labels and all(
        (tmp_path / lab / "summary.csv").read_text().splitlines()[0] == ",".join(runner.SUMMARY_FIELDS)
        and all(row["mean_top1"] is not None for row in rows)
        for lab, rows in results.items())

    deltas = read_csv(tmp_path / "deltas.csv")
    delta_ok = [d["regime"] for d in deltas] == labels
    tiny = data.make_gaussian_blobs(3, 2, 100, 0.1, seed=0)
    counts = data.subsample(tiny, data.SamplerSpec("long_tail", rho=100, n_max=100)).class_counts.tolist()
    train, _ = cfg.dataset.load()
    lt = data.subsample(train, cfg.regimes[-1]).class_counts
    profile_ok = counts == [100, 10, 1] and lt.tolist() == data.long_tail_counts(100, 10, 100).tolist()
    shown = ", ".join(f"{d['regime']}={d['delta_top1']:+.4f}" for d in deltas)
    acceptance(7, "regime harnesses", well_formed and delta_ok and profile_ok,
               f"long-tail counts {counts}; bickd - vanilla_kd top-1 deltas: {shown}")


def test_criterion_8_determinism(acceptance, desk_sweep, tmp_path):
    _, _, _, first = desk_sweep
    cfg = config.from_dict(DESK)
    runner.run(cfg, tmp_path / "again", threads=2)
    same = (tmp_path / "again" / "summary.csv").read_bytes() == (first / "summary.csv").read_bytes()
    same_runs = (tmp_path / "again" / "runs.csv").read_bytes() == (first / "runs.csv").read_bytes()
    acceptance(8, "determinism", same and same_runs, "summary.csv and runs.csv byte-identical on re-run")


def test_criterion_9_idx(acceptance, tmp_path):
    pixels = np.arange(2 * 3 * 2, dtype=np.uint8).reshape(2, 3, 2) * 21
    img = struct.pack(">IIII", 0x00000803, 2, 3, 2) + pixels.tobytes()
    lab = struct.pack(">II", 0x00000801, 2) + bytes([3, 1])
    (tmp_path / "img").write_bytes(img)
    (tmp_path / "lab").write_bytes(lab)
    ds = data.load_idx(tmp_path / "img", tmp_path / "lab")
    exact = (np.array_equal(ds.features, pixels.reshape(2, 6) / 255.0)
             and np.array_equal(np.rint(ds.features * 255).astype(np.uint8).reshape(2, 3, 2), pixels)
             and ds.labels.tolist() == [3, 1])
    data.write_idx(pixels, [3, 1], tmp_path / "img2", tmp_path / "lab2")
    exact &= (tmp_path / "img2").read_bytes() == img and (tmp_path / "lab2").read_bytes() == lab

    def error_for(img_bytes, lab_bytes):
        (tmp_path / "bi").write_bytes(img_bytes)
        (tmp_path / "bl").write_bytes(lab_bytes)
        try:
            data.load_idx(tmp_path / "bi", tmp_path / "bl")
        except data.IdxError as exc:
            return type(exc)
        return None

    raised = [
        error_for(img, struct.pack(">II", 0x00000803, 2) + bytes([3, 1])),
        error_for(b"", lab),
        error_for(img[:-3], lab),
        error_for(img, struct.pack(">II", 0x00000801, 3) + bytes([3, 1, 0])),
    ]
    expected = [data.IdxMagicError, data.IdxTruncatedError, data.IdxTruncatedError, data.IdxCountMismatchError]
    acceptance(9, "IDX ingestion", exact and raised == expected,
               f"round trip exact: {exact}; malformed -> {[e.__name__ if e else None for e in raised]}")
