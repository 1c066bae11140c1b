"""Mechanism experiments: center drift, magnitude histograms, ablations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..injection import InjectionParams
from ..losses import MarginParams
from ..numerics import make_rng, row_norms
from ..quality import QualityStats, calibrate, normalize_magnitude
from .data import (
    CLEAN,
    HARD,
    UNRECOGNIZABLE,
    Dataset,
    SyntheticDatasetSpec,
    degrade_batch,
    generate_dataset,
)
from .evaluate import evaluate_verification, make_pairs
from .train import StepInfo, TrainConfig, TrainState, train

VARIANTS = ("off", "vpl_uniform", "quality_aware")


# --------------------------------------------------------------------------
# center drift (two classes in the plane)


@dataclass(frozen=True)
class DriftConfig:
    samples_per_class: int = 200
    unrecognizable_fraction: float = 0.2
    hard_fraction: float = 0.3
    clean_noise: float = 0.1  # radians, uniform half-width
    hard_noise: float = 0.5
    cluster_offset: float = 1.2  # angle of the unrecognizable cluster from the identity
    cluster_spread: float = 0.15
    clean_magnitude: float = 1.0
    hard_magnitude: float = 0.6
    unrecognizable_magnitude: float = 0.15
    magnitude_jitter: float = 0.05
    # class 1 identity is class 0 rotated by this angle
    separation: float = math.pi
    epochs: int = 60
    batch_size: int = 32
    lr: float = 0.1
    start_epoch: int = 2
    delta_t: int = 1000
    tau: float = 1.0
    lam: float = 0.1
    # literal reading: every recorded write is added to the raw center
    in_place: bool = True
    margin: MarginParams = field(default_factory=lambda: MarginParams(s=1.0, m_a=0.0))
    # final error is averaged over this many trailing iterations
    tail: int = 60


def _rot(v: np.ndarray, a) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.stack([c * v[0] - s * v[1], s * v[0] + c * v[1]], axis=-1)


def make_drift_dataset(cfg: DriftConfig, seed: int) -> Dataset:
    """Two identities in R^2 plus, per class, a low-magnitude cluster of
    unrecognizable samples sitting ``cluster_offset`` radians away.

    The whole picture is point-symmetric, so the cluster pulls both
    centers the same rotational way.
    """
    rng = make_rng((seed, 200))
    a0 = rng.uniform(0.0, 2.0 * math.pi)
    ids = np.array([[math.cos(a0), math.sin(a0)],
                    [math.cos(a0 + cfg.separation), math.sin(a0 + cfg.separation)]])
    n = cfg.samples_per_class
    n_unrec = int(math.floor(cfg.unrecognizable_fraction * n + 0.5))
    n_hard = int(math.floor(cfg.hard_fraction * n + 0.5))
    n_clean = n - n_unrec - n_hard
    inputs, labels, tiers = [], [], []
    for j in range(2):
        for tier, count in ((CLEAN, n_clean), (HARD, n_hard), (UNRECOGNIZABLE, n_unrec)):
            if count == 0:
                continue
            if tier == CLEAN:
                ang = rng.uniform(-cfg.clean_noise, cfg.clean_noise, count)
                mag = cfg.clean_magnitude
            elif tier == HARD:
                ang = rng.uniform(-cfg.hard_noise, cfg.hard_noise, count)
                mag = cfg.hard_magnitude
            else:
                ang = cfg.cluster_offset + rng.uniform(-cfg.cluster_spread, cfg.cluster_spread,
                                                       count)
                mag = cfg.unrecognizable_magnitude
            r = mag * (1.0 + cfg.magnitude_jitter * rng.uniform(-1.0, 1.0, count))
            inputs.append(_rot(ids[j], ang) * r[:, None])
            labels.append(np.full(count, j))
            tiers.append(np.full(count, tier))
    return Dataset(np.concatenate(inputs), np.concatenate(labels), np.concatenate(tiers), ids)


def drift_train_config(cfg: DriftConfig, variant: str, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, lr_decay_epochs=(),
        backbone="identity", margin=cfg.margin, seed=seed,
        injection=InjectionParams(mode=variant, tau=cfg.tau, lam=cfg.lam,
                                  start_epoch=cfg.start_epoch, delta_t=cfg.delta_t,
                                  in_place=cfg.in_place),
    )


def _angles(centers: np.ndarray, ids: np.ndarray) -> np.ndarray:
    cu = centers / row_norms(centers)[:, None]
    return np.arccos(np.clip(np.einsum("ij,ij->i", cu, ids), -1.0, 1.0))


@dataclass
class DriftRow:
    variant: str
    seed: int
    unrecognizable_fraction: float
    effective_error_deg: float
    raw_error_deg: float
    displacement_deg: float
    displacement_alignment: float
    writes: int
    unrecognizable_writes: int


def run_drift_variant(cfg: DriftConfig, variant: str, seed: int,
                      dataset: Dataset | None = None) -> DriftRow:
    """Train one variant and measure its centers against the planted
    identities, averaged over the last ``cfg.tail`` iterations.

    The displacement is the move from the raw center direction to the
    effective one; its alignment is the cosine with the direction from the
    raw center toward the identity (positive: injection helps).
    """
    ds = make_drift_dataset(cfg, seed) if dataset is None else dataset
    tc = drift_train_config(cfg, variant, seed)
    ids = ds.identities
    first_tail = cfg.epochs * max(1, len(ds) // cfg.batch_size) - cfg.tail
    eff_err, raw_err, disp, align = [], [], [], []
    counts = [0, 0]

    def on_step(info: StepInfo):
        if info.written is not None:
            counts[0] += int(info.written.sum())
            unrec = ds.tiers[info.indices] == UNRECOGNIZABLE
            counts[1] += int(info.written[unrec].sum())
        if info.metrics["iteration"] < first_tail:
            return
        raw, eff = info.state.centers, info.effective_centers
        ru = raw / row_norms(raw)[:, None]
        eu = eff / row_norms(eff)[:, None]
        eff_err.append(_angles(eff, ids).mean())
        raw_err.append(_angles(raw, ids).mean())
        d = eu - ru
        toward = ids - np.einsum("ij,ij->i", ids, ru)[:, None] * ru
        scale = row_norms(d) * row_norms(toward)
        cos = np.divide(np.einsum("ij,ij->i", d, toward), scale, out=np.zeros(len(scale)),
                        where=scale > 0)
        disp.append(np.arccos(np.clip(np.einsum("ij,ij->i", eu, ru), -1.0, 1.0)).mean())
        align.append(cos.mean())

    train(tc, ds.training_view(), on_step=on_step)
    deg = 180.0 / math.pi
    return DriftRow(variant, seed, cfg.unrecognizable_fraction,
                    float(np.mean(eff_err)) * deg, float(np.mean(raw_err)) * deg,
                    float(np.mean(disp)) * deg, float(np.mean(align)), counts[0], counts[1])


def center_drift_experiment(cfg: DriftConfig | None = None, seeds=range(20),
                            variants=VARIANTS) -> list[DriftRow]:
    cfg = cfg or DriftConfig()
    rows = []
    for seed in seeds:
        ds = make_drift_dataset(cfg, seed)
        for v in variants:
            rows.append(run_drift_variant(cfg, v, seed, ds))
    return rows


# --------------------------------------------------------------------------
# desk runs and evaluation

# dataset streams
TRAIN_STREAM, EVAL_STREAM, PROBE_STREAM = 0, 1, 2
DESK_LEVELS = (0.0, 0.5, 0.95)


@dataclass(frozen=True)
class EvalConfig:
    genuine_pairs: int = 2000
    impostor_pairs: int = 10000
    far_levels: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    samples_per_class: int = 20  # held-out identities, same quality mix
    probe_samples: int = 1000  # magnitude probe size
    levels: tuple[float, ...] = DESK_LEVELS
    histogram_bins: int = 30


def eval_pairs(data_spec: SyntheticDatasetSpec, eval_cfg: EvalConfig):
    """Pairs over fresh identities (open-set), drawn from the eval stream."""
    spec = replace(data_spec, samples_per_class=eval_cfg.samples_per_class)
    ds = generate_dataset(spec, stream=EVAL_STREAM)
    rng = make_rng((data_spec.seed, 300))
    return make_pairs(ds.inputs, ds.labels, eval_cfg.genuine_pairs, eval_cfg.impostor_pairs,
                      rng, ds.tiers)


def magnitude_probe(data_spec: SyntheticDatasetSpec, train_identities: np.ndarray,
                    n: int = 1000) -> np.ndarray:
    """Held-out clean inputs of the training identities."""
    per_class = -(-n // data_spec.num_classes)
    spec = replace(data_spec, samples_per_class=per_class, quality_mix=(1.0, 0.0, 0.0))
    ds = generate_dataset(spec, identities=train_identities, stream=PROBE_STREAM)
    return ds.inputs[:n]


@dataclass
class DeskRun:
    result: "object"  # TrainResult
    report: object  # EvalReport
    dataset: Dataset


def run_desk(data_spec: SyntheticDatasetSpec, train_cfg: TrainConfig,
             eval_cfg: EvalConfig | None = None, on_step=None) -> DeskRun:
    eval_cfg = eval_cfg or EvalConfig()
    ds = generate_dataset(data_spec, stream=TRAIN_STREAM)
    res = train(train_cfg, ds.training_view(), embedding_dim=data_spec.embedding_dim,
                on_step=on_step)
    pairs = eval_pairs(data_spec, eval_cfg)
    clean = ds.subset(ds.tiers == CLEAN)
    report = evaluate_verification(res.state, pairs, eval_cfg.far_levels,
                                   center_probe=(clean.inputs, clean.labels))
    return DeskRun(res, report, ds)


# --------------------------------------------------------------------------
# magnitude histograms


@dataclass
class MagnitudeReport:
    levels: tuple[float, ...]
    edges: np.ndarray
    counts: np.ndarray  # levels x bins
    means: np.ndarray
    normalized_edges: np.ndarray
    normalized_counts: np.ndarray
    normalized_means: np.ndarray
    stats: QualityStats


def magnitude_histogram(state: TrainState, inputs: np.ndarray, levels=DESK_LEVELS,
                        seed: int = 0, bins: int = 30, attenuation: float = 0.7,
                        recalibrate: bool = False, feature_scale: float = 1.0
                        ) -> MagnitudeReport:
    """Feature magnitudes of ``inputs`` degraded to each level.

    Normalization uses the state's running statistics, or statistics
    pooled over all levels when ``recalibrate`` is set (needed when the
    state was never trained). ``feature_scale`` multiplies every feature,
    for equivariance checks.
    """
    mags = []
    for k, level in enumerate(levels):
        rng = make_rng((seed, 400, k))
        x = degrade_batch(inputs, level, rng, attenuation)
        feats = state.backbone.forward(x)[0] * feature_scale
        mags.append(row_norms(feats))
    mags = np.array(mags)
    stats = calibrate(mags.ravel(), state.stats.alpha) if (
        recalibrate or not state.stats.initialized) else state.stats
    xhat = normalize_magnitude(stats, mags)
    edges = np.histogram_bin_edges(mags, bins=bins)
    nedges = np.histogram_bin_edges(xhat, bins=bins)
    counts = np.array([np.histogram(m, bins=edges)[0] for m in mags])
    ncounts = np.array([np.histogram(z, bins=nedges)[0] for z in xhat])
    return MagnitudeReport(tuple(levels), edges, counts, mags.mean(axis=1), nedges, ncounts,
                           xhat.mean(axis=1), stats)


# --------------------------------------------------------------------------
# ablations

ABLATION_PARAMETERS = ("delta_t", "tau", "augment_probability")


def _with_value(train_cfg: TrainConfig, parameter: str, value) -> TrainConfig:
    if parameter == "delta_t":
        return replace(train_cfg, injection=replace(train_cfg.injection, delta_t=int(value)))
    if parameter == "tau":
        return replace(train_cfg, injection=replace(train_cfg.injection, tau=float(value)))
    if parameter == "augment_probability":
        return replace(train_cfg, augment_probability=float(value))
    raise ValueError(f"unknown ablation parameter {parameter!r}; "
                     f"choose from {ABLATION_PARAMETERS}")


@dataclass
class AblationTable:
    parameter: str
    header: list[str]
    rows: list[list]


def ablation_harness(parameter: str, values, data_spec: SyntheticDatasetSpec,
                     train_cfg: TrainConfig, eval_cfg: EvalConfig | None = None
                     ) -> AblationTable:
    """Train and evaluate once per value, every run from the same seed."""
    values = list(values)
    if not values:
        raise ValueError("need at least one value")
    eval_cfg = eval_cfg or EvalConfig()
    header = [parameter, "verification_accuracy"] + [
        f"tar_at_far_{far:g}" for far in eval_cfg.far_levels] + [
        "final_loss", "ignored_fraction"]
    rows = []
    for v in values:
        v = int(v) if parameter == "delta_t" else float(v)
        cfg = _with_value(train_cfg, parameter, v)
        run = run_desk(data_spec, cfg, eval_cfg)
        hist = run.result.history
        last = [r for r in hist if r["epoch"] == hist[-1]["epoch"]] if hist else []
        rows.append([v, run.report.verification_accuracy]
                    + [run.report.tar_at_far[f] for f in eval_cfg.far_levels]
                    + [float(np.mean([r["loss"] for r in last])) if last else float("nan"),
                       float(np.mean([r["ignored_fraction"] for r in last])) if last
                       else float("nan")])
    return AblationTable(parameter, header, rows)
