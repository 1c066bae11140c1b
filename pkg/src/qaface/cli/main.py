"""``qaface`` command line.

Every subcommand writes into ``--out`` (default from ``output.dir``).
Metrics are JSON lines with full-precision floats, tables are CSV with a
header row. Config problems exit 2, runtime failures exit 1; either way a
one-line JSON error record goes to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from ..simulator.curves import DEFAULT_S, curve_multiclass, curve_p_vs_cos, \
    hard_vs_unrecognizable_slopes
from ..simulator.data import generate_dataset
from ..simulator.evaluate import evaluate_verification
from ..simulator.experiments import (
    ABLATION_PARAMETERS,
    TRAIN_STREAM,
    ablation_harness,
    center_drift_experiment,
    eval_pairs,
    magnitude_histogram,
    magnitude_probe,
)
from ..simulator.train import train
from .checkpoint import CheckpointError, ConfigMismatch, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .gradcheck import run_gradcheck

CHECKPOINT_NAME = "checkpoint.qck"


class CommandError(Exception):
    """Runtime failure with a message fit for the error record."""


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qaface", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="config file of section.key = value lines")
        sp.add_argument("--seed", type=int, help="overrides run.seed")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        return sp

    t = common(sub.add_parser("train", help="train on the synthetic dataset"))
    t.add_argument("--epochs", type=int, help="overrides train.epochs")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-at", type=int, dest="stop_at",
                   help="stop before this global iteration (mid-run checkpoint)")

    e = common(sub.add_parser("eval", help="verification metrics of a checkpoint"))
    e.add_argument("--checkpoint", required=True)

    c = common(sub.add_parser("curves", help="p(true) versus cos(true) curves"))
    c.add_argument("--s", type=_floats, default=list(DEFAULT_S))
    c.add_argument("--points", type=int, default=401)
    c.add_argument("--classes", type=int, default=4)
    c.add_argument("--negative-cos", type=float, default=0.0, dest="negative_cos")

    h = common(sub.add_parser("histogram", help="feature magnitudes per degradation level"))
    h.add_argument("--checkpoint", help="trained state; trains from the config if absent")
    h.add_argument("--epochs", type=int)

    d = common(sub.add_parser("drift", help="two-class center drift experiment"))
    d.add_argument("--seeds", type=int, default=20, help="number of seeds, 0..N-1 offset by --seed")
    d.add_argument("--fraction", type=float, help="overrides drift.unrecognizable_fraction")

    a = common(sub.add_parser("ablate", help="sweep one parameter, one row per value"))
    a.add_argument("--parameter", required=True, choices=ABLATION_PARAMETERS)
    a.add_argument("--values", required=True, type=_floats)
    a.add_argument("--epochs", type=int)

    g = common(sub.add_parser("gradcheck", help="analytic vs finite-difference gradients"))
    g.add_argument("--cases", type=int, default=100)
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--tolerance", type=float, default=1e-6)
    return p


def _config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    if args.out is not None:
        overrides["output.dir"] = args.out
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = str(args.epochs)
    if getattr(args, "fraction", None) is not None:
        overrides["drift.unrecognizable_fraction"] = repr(args.fraction)
    try:
        return load_config(args.config, overrides)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc


def _outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.output.dir, exist_ok=True)
    return cfg.output.dir


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_run_config(out: str, cfg: RunConfig) -> None:
    with open(os.path.join(out, "config.resolved"), "w", encoding="utf-8") as fh:
        for k in sorted(cfg.values):
            v = cfg.values[k]
            text = ", ".join(map(repr, v)) if isinstance(v, tuple) else _cell(v)
            fh.write(f"{k} = {text}  # {cfg.provenance[k]}\n")


def _train_run(cfg: RunConfig, out: str, resume: str | None = None,
               stop_at: int | None = None):
    """Train (or resume), streaming one JSON record per iteration and per
    epoch into metrics.jsonl."""
    ds = generate_dataset(cfg.data, stream=TRAIN_STREAM)
    state = None
    ckpt_path = os.path.join(out, CHECKPOINT_NAME)
    if resume is not None:
        if os.path.exists(ckpt_path) and os.path.samefile(resume, ckpt_path):
            raise CommandError("--resume must not point at the checkpoint in --out")
        state = load_checkpoint(resume, cfg.config_hash())
    metrics_path = os.path.join(out, "metrics.jsonl")
    with open(metrics_path, "a" if resume else "w", encoding="utf-8") as fh:
        def on_step(info):
            fh.write(json.dumps({"record": "step", **info.metrics}) + "\n")

        def on_epoch(st):
            fh.write(json.dumps({"record": "epoch", "epoch": st.epoch,
                                 "iteration": st.iteration, "mu": st.stats.mu,
                                 "sigma": st.stats.sigma}) + "\n")

        res = train(cfg.train, ds.training_view(), state=state,
                    embedding_dim=cfg.data.embedding_dim, on_step=on_step,
                    stop_at_iteration=stop_at, on_epoch=on_epoch)
    save_checkpoint(res.state, ckpt_path, cfg.config_hash())
    return res, ds


def cmd_train(args, cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    _write_run_config(out, cfg)
    res, _ = _train_run(cfg, out, args.resume, args.stop_at)
    return {"iterations": res.state.iteration, "epoch": res.state.epoch,
            "steps_this_run": len(res.history),
            "final_loss": res.history[-1]["loss"] if res.history else None,
            "checkpoint": os.path.join(out, CHECKPOINT_NAME)}


def _eval_state(cfg: RunConfig, state):
    pairs = eval_pairs(cfg.data, cfg.eval)
    ds = generate_dataset(cfg.data, stream=TRAIN_STREAM)
    clean = ds.subset(ds.tiers == 0)
    return evaluate_verification(state, pairs, cfg.eval.far_levels,
                                 center_probe=(clean.inputs, clean.labels))


def cmd_eval(args, cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    state = load_checkpoint(args.checkpoint, cfg.config_hash())
    rep = _eval_state(cfg, state)
    result = {
        "verification_accuracy": rep.verification_accuracy,
        "threshold": rep.threshold,
        "tar_at_far": {repr(k): v for k, v in rep.tar_at_far.items()},
        "mean_magnitude_per_tier": rep.mean_magnitude_per_tier,
        "mean_center_angular_error_deg": float(np.degrees(np.nanmean(rep.center_angular_errors))),
    }
    _write_json(os.path.join(out, "eval.json"), result)
    return result


def cmd_curves(args, cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    single = curve_p_vs_cos(args.s, args.classes, args.negative_cos, args.points)
    multi = curve_multiclass(args.s, points=args.points)
    for name, table in (("curves_p_vs_cos.csv", single), ("curves_multiclass.csv", multi)):
        header, data = table.columns()
        _write_csv(os.path.join(out, name), header, data.tolist())
    slopes = {
        "max_slope": dict(zip(map(repr, multi.s_values), multi.max_slope().tolist())),
        "slope_ratios": {repr(k): v for k, v in hard_vs_unrecognizable_slopes(multi).items()},
    }
    _write_json(os.path.join(out, "curves_slopes.json"), slopes)
    return {"s": list(single.s_values), "points": args.points}


def cmd_histogram(args, cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    ds = generate_dataset(cfg.data, stream=TRAIN_STREAM)
    if args.checkpoint:
        state = load_checkpoint(args.checkpoint, cfg.config_hash())
    else:
        state = train(cfg.train, ds.training_view(), embedding_dim=cfg.data.embedding_dim).state
    probe = magnitude_probe(cfg.data, ds.identities, cfg.eval.probe_samples)
    rep = magnitude_histogram(state, probe, cfg.eval.levels, seed=cfg.seed,
                              bins=cfg.eval.histogram_bins, attenuation=cfg.data.attenuation)
    rows = []
    for k, level in enumerate(rep.levels):
        for b in range(len(rep.counts[k])):
            rows.append([level, "raw", rep.edges[b], rep.edges[b + 1], int(rep.counts[k][b])])
        for b in range(len(rep.normalized_counts[k])):
            rows.append([level, "normalized", rep.normalized_edges[b],
                         rep.normalized_edges[b + 1], int(rep.normalized_counts[k][b])])
    _write_csv(os.path.join(out, "histogram.csv"),
               ["level", "scale", "bin_lo", "bin_hi", "count"], rows)
    _write_csv(os.path.join(out, "histogram_means.csv"),
               ["level", "mean_magnitude", "mean_normalized"],
               [[lv, m, z] for lv, m, z in zip(rep.levels, rep.means, rep.normalized_means)])
    return {"levels": list(rep.levels), "means": rep.means.tolist(),
            "normalized_means": rep.normalized_means.tolist()}


def cmd_drift(args, cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    if args.seeds < 1:
        raise CommandError("--seeds must be >= 1")
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    rows = center_drift_experiment(cfg.drift, seeds)
    header = list(asdict(rows[0]).keys())
    _write_csv(os.path.join(out, "drift.csv"), header,
               [list(asdict(r).values()) for r in rows])
    by_seed: dict[int, dict[str, float]] = {}
    for r in rows:
        by_seed.setdefault(r.seed, {})[r.variant] = r.effective_error_deg
    wins = [v["quality_aware"] < v["vpl_uniform"] for v in by_seed.values()
            if "quality_aware" in v and "vpl_uniform" in v]
    summary = {
        "mean_error_deg": {v: float(np.mean([r.effective_error_deg for r in rows
                                              if r.variant == v]))
                           for v in dict.fromkeys(r.variant for r in rows)},
        "quality_aware_beats_uniform": float(np.mean(wins)) if wins else None,
        "seeds": len(by_seed),
    }
    _write_json(os.path.join(out, "drift_summary.json"), summary)
    return summary


def cmd_ablate(args, cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    table = ablation_harness(args.parameter, args.values, cfg.data, cfg.train, cfg.eval)
    path = os.path.join(out, f"ablate_{args.parameter}.csv")
    _write_csv(path, table.header, table.rows)
    return {"table": path, "rows": len(table.rows)}


def cmd_gradcheck(args, cfg: RunConfig) -> dict:
    out = _outdir(cfg)
    if args.cases < 1:
        raise CommandError("--cases must be >= 1")
    rep = run_gradcheck(args.cases, cfg.seed, args.h)
    result = {"cases": rep.cases, "seed": rep.seed, "h": rep.h,
              "max_rel_error": rep.max_rel_error, "worst_case": rep.worst_case,
              "overall": rep.overall, "tolerance": args.tolerance,
              "passed": rep.overall <= args.tolerance}
    _write_json(os.path.join(out, "gradcheck.json"), result)
    if not result["passed"]:
        raise CommandError(f"max relative error {rep.overall:.3e} exceeds {args.tolerance:g}")
    return result


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "curves": cmd_curves,
    "histogram": cmd_histogram,
    "drift": cmd_drift,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def _error(kind: str, exc: BaseException, command: str | None) -> None:
    rec = {"error": kind, "type": type(exc).__name__, "message": str(exc), "command": command}
    sys.stderr.write(json.dumps(rec) + "\n")


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0) and 2
    try:
        cfg = _config(args)
    except ConfigError as exc:
        _error("config", exc, args.command)
        return 2
    try:
        summary = COMMANDS[args.command](args, cfg)
    except ConfigMismatch as exc:
        _error("config", exc, args.command)
        return 2
    except (CommandError, CheckpointError, ValueError, RuntimeError, OSError) as exc:
        _error("runtime", exc, args.command)
        return 1
    sys.stdout.write(json.dumps(_jsonable({"command": args.command, **summary}),
                                sort_keys=True) + "\n")
    return 0


def main() -> None:
    sys.exit(run_command())
