"""Acceptance criteria 1-12.

Each test records a one-line verdict; the lines are printed together in
the terminal summary (see conftest.py) and also echoed with ``-s``.
"""
import csv
import json
import math
import time
from dataclasses import replace

import numpy as np

from qaface.cli import run_command
from qaface.cli.gradcheck import run_gradcheck
from qaface.injection import (
    NEVER,
    FeatureMemory,
    InjectionParams,
    MomentumEncoder,
    effective_centers,
    memory_write,
    momentum_update,
)
from qaface.losses import (
    MarginParams,
    logits_margin,
    logits_normalized,
    margin_forward_backward,
    softmax,
)
from qaface.numerics import make_rng, random_unit_vectors
from qaface.quality import QualityWeightParams, quality_weight
from qaface.simulator.backbone import ToyBackbone
from qaface.simulator.curves import DEFAULT_S, curve_multiclass, curve_p_vs_cos
from qaface.simulator.data import SyntheticDatasetSpec, TrainingData, generate_dataset
from qaface.simulator.experiments import (
    DriftConfig,
    center_drift_experiment,
    magnitude_histogram,
    magnitude_probe,
)
from qaface.simulator.train import TrainConfig, batches_per_epoch, epoch_order, train

RESULTS: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# 1 -------------------------------------------------------------------------


def test_c01_gradient_fidelity():
    t0 = time.perf_counter()
    rep = run_gradcheck(cases=100, seed=2024, h=1e-5)
    elapsed = time.perf_counter() - t0
    worst = rep.overall
    ok = worst <= 1e-6 and elapsed < 10.0 and len(rep.max_rel_error) == 4
    verdict(1, ok, f"4 gradients x 100 cases, max rel err {worst:.2e} (<= 1e-6), "
                   f"{elapsed:.1f}s (< 10s)")


# 2 -------------------------------------------------------------------------


def test_c02_softmax_normalization():
    rng = make_rng(2)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 65))
        z = rng.uniform(-64.0, 64.0, (1, c))
        worst = max(worst, abs(float(softmax(z).sum()) - 1.0))
    verdict(2, worst <= 1e-12, f"1000 cases |logit| <= 64, max |sum-1| = {worst:.1e}")


# 3 -------------------------------------------------------------------------


def test_c03_quality_weight_contract():
    p = QualityWeightParams(tau=2.0)
    below = np.linspace(-10.0, -2.0, 1001)[:-1]
    zeros_ok = all(quality_weight(p, float(x)) == 0.0 for x in below)
    zeros_ok &= bool(np.all(quality_weight(p, below) == 0.0))
    at_tau = quality_weight(p, -2.0) == math.exp(2.0)
    spots = quality_weight(p, 0.0) == 1.0 and abs(quality_weight(p, 1.0) - math.exp(-1)) <= 1e-12
    grid = np.linspace(-2.0, 8.0, 1000)
    w = quality_weight(p, grid)
    decreasing = bool(np.all(np.diff(w) < 0))
    exp_ok = bool(np.all(w == np.exp(-grid)))
    verdict(3, zeros_ok and at_tau and spots and decreasing and exp_ok,
            "0 below -tau, exp(-x) at/above -tau, f(0)=1, f(1)=1/e, strictly decreasing "
            "on 1000-point grid")


# 4 -------------------------------------------------------------------------


def test_c04_ignore_gate_end_to_end():
    """Identity backbone, 8 classes, class 0 inputs shrunk 20x: its z-scored
    magnitude stays far below -tau, so it must never be written or injected."""
    c, d, n = 8, 8, 60
    rng = make_rng((4, 0))
    ids = random_unit_vectors(rng, c, d)
    y = np.repeat(np.arange(c), n)
    x = ids[y] + 0.1 * rng.standard_normal((c * n, d))
    x[y == 0] *= 0.05
    cfg = TrainConfig(epochs=6, batch_size=40, backbone="identity", lr_decay_epochs=(),
                      margin=MarginParams(s=8.0, m_a=0.2),
                      injection=InjectionParams(mode="quality_aware", tau=1.0, start_epoch=0))
    seen = {"steps": 0, "writes0": 0, "writes_other": 0, "mismatch": 0, "max_xhat0": -np.inf,
            "fresh_other": 0}

    def on_step(info):
        seen["steps"] += 1
        cls0 = info.labels == 0
        seen["writes0"] += int(info.written[cls0].sum())
        seen["writes_other"] += int(info.written[~cls0].sum())
        if cls0.any():
            seen["max_xhat0"] = max(seen["max_xhat0"], float(info.x_hat[cls0].max()))
        if info.state.memory.last_write[0] != NEVER:
            seen["mismatch"] += 1
        if not np.array_equal(info.effective_centers[0], info.raw_centers[0]):
            seen["mismatch"] += 1
        fresh = info.state.memory.fresh_mask(info.metrics["iteration"])
        seen["fresh_other"] += int(fresh[1:].any())

    train(cfg, TrainingData(x, y), on_step=on_step)
    ok = (seen["writes0"] == 0 and seen["mismatch"] == 0 and seen["writes_other"] > 0
          and seen["fresh_other"] > 0)
    verdict(4, ok, f"{seen['steps']} iterations: class-0 writes {seen['writes0']}, "
                   f"effective!=raw {seen['mismatch']} times, other-class writes "
                   f"{seen['writes_other']}, max class-0 x_hat {seen['max_xhat0']:.2f} < -1")


# 5 -------------------------------------------------------------------------


def test_c05_staleness_boundary():
    rng = make_rng(5)
    p = InjectionParams(delta_t=1000)
    stale_ok = fresh_ok = True
    for trial in range(200):
        c, d = int(rng.integers(2, 8)), int(rng.integers(2, 8))
        w = rng.standard_normal((c, d))
        mem = FeatureMemory.empty(c, d, 1000)
        j = int(rng.integers(0, c))
        t_write = int(rng.integers(0, 10_000))
        memory_write(mem, j, rng.standard_normal(d), float(rng.uniform(-1.9, 3.0)), t_write, p)
        stale_ok &= np.array_equal(effective_centers(w, mem, t_write + 1001, p), w)
        eff = effective_centers(w, mem, t_write + 1000, p)
        fresh_ok &= np.array_equal(eff[j], w[j] + mem.entries[j]) and not np.array_equal(
            eff[j], w[j])
    verdict(5, bool(stale_ok and fresh_ok),
            "200 trials: age 1001 -> effective == raw bitwise; age 1000 -> W + M")


# 6 -------------------------------------------------------------------------


def test_c06_momentum_encoder():
    rng = make_rng(6)
    details, ok = [], True
    for gamma in (0.0, 0.5, 0.99):
        main = rng.standard_normal(300)
        enc = MomentumEncoder(rng.standard_normal(300), gamma)
        gap0 = float(np.max(np.abs(enc.parameters - main)))
        worst = -np.inf
        for t in range(1, 501):
            enc = momentum_update(enc, main)
            gap = float(np.max(np.abs(enc.parameters - main)))
            worst = max(worst, gap - (gamma ** t * gap0 + 1e-12))
        ok &= worst <= 0.0
        details.append(f"gamma={gamma}: max slack {worst:.1e}")
    verdict(6, ok, "500 updates, " + "; ".join(details))


# 7 -------------------------------------------------------------------------


def _plain_margin_trainer(cfg: TrainConfig, data: TrainingData, embedding_dim: int):
    """Minimal margin-softmax SGD loop with no injection machinery at all.

    Mirrors the documented seed derivation: ``(seed, 0)`` for the backbone
    then the centers, ``(seed, 1, epoch)`` for the sample order.
    """
    n, in_dim = data.inputs.shape
    num_classes = int(data.labels.max()) + 1
    rng = make_rng((cfg.seed, 0))
    bb = ToyBackbone.initialized(in_dim, cfg.hidden_dim, embedding_dim, rng, cfg.activation)
    w = cfg.center_init_norm * random_unit_vectors(rng, num_classes, embedding_dim)
    vp, vw = np.zeros_like(bb.params), np.zeros_like(w)
    losses = []
    nb, bs = batches_per_epoch(n, cfg.batch_size), min(cfg.batch_size, n)
    for epoch in range(cfg.epochs):
        order = epoch_order(cfg, epoch, n)
        lr = cfg.lr_at(epoch)
        for b in range(nb):
            idx = order[b * bs:(b + 1) * bs]
            feats, cache = bb.forward(data.inputs[idx])
            out, gf, gw = margin_forward_backward(feats, w, data.labels[idx], cfg.margin)
            gp, _ = bb.backward(cache, gf)
            for param, vel, g in ((bb.params, vp, gp), (w, vw, gw)):
                g = g + cfg.weight_decay * param
                vel *= cfg.momentum
                vel += g
                param -= lr * vel
            losses.append(out.loss)
    return losses, bb.params, w


def test_c07_reduction_identities():
    spec = SyntheticDatasetSpec(num_classes=8, samples_per_class=40, input_dim=8, embedding_dim=8)
    ds = generate_dataset(spec)
    base = TrainConfig(epochs=5, batch_size=32, hidden_dim=16, lr_decay_epochs=(3,))
    off = replace(base, injection=InjectionParams(mode="off"))
    res_off = train(off, ds.training_view(), embedding_dim=8)
    losses, params, w = _plain_margin_trainer(off, ds.training_view(), 8)
    a = ([h["loss"] for h in res_off.history] == losses
         and np.array_equal(res_off.state.backbone.params, params)
         and np.array_equal(res_off.state.centers, w))

    zero = replace(base, injection=InjectionParams(mode="vpl_uniform", lam=0.0, start_epoch=0))
    res_zero = train(zero, ds.training_view(), embedding_dim=8)
    b = (res_zero.history == res_off.history
         and np.array_equal(res_zero.state.centers, res_off.state.centers)
         and np.array_equal(res_zero.state.backbone.params, res_off.state.backbone.params)
         and (res_zero.state.memory.last_write >= 0).any())

    rng = make_rng(7)
    c = True
    for _ in range(200):
        x, wc = rng.standard_normal((6, 5)), rng.standard_normal((4, 5))
        y = rng.integers(0, 4, 6)
        s = float(rng.choice([1.0, 16.0, 64.0]))
        c &= np.array_equal(logits_margin(x, wc, y, MarginParams(s=s, m_s=1.0, m_a=0.0, m_c=0.0)),
                            logits_normalized(x, wc, s))
    verdict(7, bool(a and b and c),
            f"off == plain trainer: {a}; vpl lambda=0 == off: {b}; "
            f"no-margin logits == normalized: {bool(c)} (all bitwise)")


# 8 -------------------------------------------------------------------------


def test_c08_center_drift():
    t0 = time.perf_counter()
    seeds = range(20)
    rows = center_drift_experiment(DriftConfig(unrecognizable_fraction=0.2), seeds)
    err = {(r.seed, r.variant): r.effective_error_deg for r in rows}
    wins = sum(err[(s, "quality_aware")] < err[(s, "vpl_uniform")] for s in seeds)
    clean = center_drift_experiment(DriftConfig(unrecognizable_fraction=0.0), seeds)
    worst_clean = max(r.effective_error_deg for r in clean)
    elapsed = time.perf_counter() - t0
    mean = {v: np.mean([e for (s, vv), e in err.items() if vv == v])
            for v in ("off", "vpl_uniform", "quality_aware")}
    ok = wins >= 18 and worst_clean <= 5.0 and elapsed < 300
    verdict(8, ok, f"20% unrecognizable: quality_aware < vpl_uniform in {wins}/20 seeds "
                   f"(mean deg off {mean['off']:.2f}, uniform {mean['vpl_uniform']:.2f}, "
                   f"qa {mean['quality_aware']:.2f}); 0%: worst {worst_clean:.2f} deg <= 5; "
                   f"{elapsed:.0f}s")


# 9 -------------------------------------------------------------------------


def test_c09_magnitude_ordering():
    ordered, inv_worst = 0, 0.0
    for seed in range(20):
        spec = SyntheticDatasetSpec(seed=seed)
        ds = generate_dataset(spec)
        st = train(TrainConfig(seed=seed), ds.training_view(), embedding_dim=16).state
        probe = magnitude_probe(spec, ds.identities, 1000)
        rep = magnitude_histogram(st, probe, seed=seed)
        m = rep.means
        ordered += bool(m[0] > m[1] > m[2])
        a = magnitude_histogram(st, probe, seed=seed, recalibrate=True)
        b = magnitude_histogram(st, probe, seed=seed, recalibrate=True, feature_scale=2.0)
        inv_worst = max(inv_worst, float(np.max(np.abs(a.normalized_means - b.normalized_means))))
    verdict(9, ordered >= 18 and inv_worst <= 1e-6,
            f"clean > mild > heavy in {ordered}/20 seeds (>= 18); normalized means under 2x "
            f"rescale differ by {inv_worst:.1e} (<= 1e-6)")


# 10 ------------------------------------------------------------------------


def test_c10_curve_shapes(tmp_path):
    tables = [curve_p_vs_cos(DEFAULT_S, 4, 0.0), curve_multiclass(DEFAULT_S)]
    monotone = all(bool(np.all(np.diff(t.p, axis=0) >= 0)) for t in tables)
    slopes = all(bool(np.all(np.diff(t.max_slope()) >= 0)) for t in tables)
    t = tables[0]
    i = int(np.flatnonzero(t.cos == 0.0)[0])
    quarter = float(np.max(np.abs(t.p[i] - 0.25)))
    # the emitted file carries the same curves
    assert run_command(["curves", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "curves_p_vs_cos.csv") as fh:
        data = np.array(list(csv.reader(fh))[1:], dtype=float)
    emitted = bool(np.all(np.diff(data[:, 1:1 + len(DEFAULT_S)], axis=0) >= 0))
    verdict(10, monotone and slopes and quarter <= 1e-12 and emitted,
            f"monotone in cos: {monotone and emitted}; max slope nondecreasing in s "
            f"{DEFAULT_S}: {slopes}; C=4 equal-logit p-0.25 = {quarter:.1e}")


# 11 ------------------------------------------------------------------------


ABLATIONS = (("delta_t", "0,500,1000,1500,2000"), ("tau", "0,1,2,3,4"))


def _ablate_twice(tmp_path, parameter, values):
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / f"{parameter}_{run}"
        assert run_command(["ablate", "--parameter", parameter, "--values", values,
                            "--epochs", "12", "--out", str(out)]) == 0
        blobs.append((out / f"ablate_{parameter}.csv").read_bytes())
    return list(csv.reader(blobs[0].decode().splitlines())), blobs[0] == blobs[1]


def test_c11_ablation_tables(tmp_path):
    ok, parts = True, []
    for parameter, values in ABLATIONS:
        rows, same = _ablate_twice(tmp_path, parameter, values)
        wanted = values.split(",") if parameter == "delta_t" else [
            repr(float(v)) for v in values.split(",")]
        complete = (rows[0][0] == parameter and [r[0] for r in rows[1:]] == wanted
                    and all(len(r) == len(rows[0]) and "" not in r and "nan" not in r
                            for r in rows[1:]))
        part = f"{parameter}: {len(rows) - 1} rows x {len(rows[0])} cols complete {complete}, " \
               f"rerun byte-identical {same}"
        if parameter == "tau":
            ignored0 = float(rows[1][rows[0].index("ignored_fraction")])
            complete &= ignored0 > 0.4
            part += f", tau=0 ignored fraction {ignored0:.2f}"
        ok &= complete and same
        parts.append(part)
    verdict(11, ok, "; ".join(parts))


# 12 ------------------------------------------------------------------------


def test_c12_determinism_and_checkpointing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("train.epochs = 8\ninjection.start_epoch = 2\ntrain.lr_decay_epochs = 5\n")
    dirs = {k: tmp_path / k for k in ("a", "b", "part", "rest")}
    assert run_command(["train", "--config", str(cfg), "--out", str(dirs["a"])]) == 0
    assert run_command(["train", "--config", str(cfg), "--out", str(dirs["b"])]) == 0
    # stop mid-epoch, after injection has started
    stop = 3 * 50 + 17
    assert run_command(["train", "--config", str(cfg), "--out", str(dirs["part"]),
                        "--stop-at", str(stop)]) == 0
    assert run_command(["train", "--config", str(cfg), "--out", str(dirs["rest"]),
                        "--resume", str(dirs["part"] / "checkpoint.qck")]) == 0
    a = (dirs["a"] / "metrics.jsonl").read_bytes()
    same_stream = a == (dirs["b"] / "metrics.jsonl").read_bytes()
    resumed = (dirs["part"] / "metrics.jsonl").read_bytes() + (
        dirs["rest"] / "metrics.jsonl").read_bytes()
    same_resume = resumed == a
    same_state = (dirs["rest"] / "checkpoint.qck").read_bytes() == (
        dirs["a"] / "checkpoint.qck").read_bytes()
    steps = sum(1 for line in a.decode().splitlines() if json.loads(line)["record"] == "step")
    verdict(12, same_stream and same_resume and same_state,
            f"{steps} steps: repeat run identical {same_stream}; stop at {stop} + resume "
            f"identical stream {same_resume}, final checkpoint bytes {same_state}")
