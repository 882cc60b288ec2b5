"""End-to-end training: segmentation, contrastive encoder training, correction, scoring."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import report
from .autograd import Tensor, concat
from .clustering import (align_clusters, clean_sample_flags, kmeans, pixel_pseudo_labels,
                         sampled_owner)
from .cube import (HsiCube, LabelMap, SyntheticSpec, extract_all_patches, generate_synthetic,
                   load_cube, load_labels, pca_reduce, save_labels)
from .encoder import (AdamState, EncoderConfig, EncoderParams, adam_update, forward,
                      init_encoder, save_checkpoint)
from .losses import (ContrastConfig, knn_positives, pixel_contrastive_loss, plc_loss,
                     soft_assign_tensor, superpixel_contrastive_loss)
from .metrics import evaluate
from .superpixel import (Segmentation, all_geometry, geometry_columns, pooling_matrix,
                         sample_pixels, save_segmentation, slic_segment, write_pgm)

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_LC", "no_LPLC")
METHOD_NAMES = {"full": "PSCPC", "no_LC": "w/o L_C", "no_LPLC": "w/o L_PLC"}
DEFAULT_SYNTHETIC = "32x32x8:4:20:10"
PAPER_LAMBDAS = (1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3)
PAPER_MS = (10, 20, 30, 40, 50)


@dataclass
class ExperimentConfig:
    input: str | None = None
    labels: str | None = None
    synthetic: str = DEFAULT_SYNTHETIC
    pca_dims: int = 3
    n_superpixels: int = 64
    compactness: float = 10.0
    patch_size: int = 5
    hidden_dims: tuple[int, ...] = (64, 32)
    embed_dim: int = 16
    activation: str = "relu"
    tau: float = 0.5
    k_neighbors: int = 3
    M: int = 10
    lam: float = 10.0
    K: int | None = None
    epochs: int = 50
    lr: float = 1e-3
    seed: int = 0
    ablation: str = "full"
    soft_temp: float = 1.0
    geom_weight: float = 0.1
    output_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    @property
    def contrast(self) -> ContrastConfig:
        return ContrastConfig(self.tau, self.k_neighbors, self.M, self.lam)

    @property
    def dataset_name(self) -> str:
        return Path(self.input).stem if self.input else f"synthetic[{self.synthetic}]"

    def encoder_config(self, in_bands: int) -> EncoderConfig:
        return EncoderConfig(self.patch_size, in_bands, list(self.hidden_dims), self.embed_dim,
                             self.activation)


@dataclass
class RunReport:
    OA: float
    NMI: float
    Kappa: float
    history: list[dict]
    runtime_seconds: float
    baseline: dict[str, float] = field(default_factory=dict)
    pixel_ids: LabelMap | None = None
    segmentation: Segmentation | None = None
    params: EncoderParams | None = None

    def metrics(self) -> dict[str, float]:
        return {"OA": self.OA, "NMI": self.NMI, "Kappa": self.Kappa}


# --------------------------------------------------------------------- training core

@dataclass
class TrainingContext:
    """Everything that stays fixed across epochs."""
    patches: np.ndarray          # (H*W, patch values)
    pool: np.ndarray             # (N, H*W) averaging matrix
    geom: np.ndarray             # (N, 6) weighted standardized geometry
    sample_idx: np.ndarray       # flat pixel index of every sampled pixel
    owner: np.ndarray            # superpixel of every sampled pixel
    K: int
    contrast: ContrastConfig
    soft_temp: float = 1.0

    @property
    def N(self) -> int:
        return self.pool.shape[0]


@dataclass
class Targets:
    """Non-differentiable quantities recomputed from detached features each epoch."""
    neighbors: np.ndarray
    centroids: np.ndarray
    superpixel_hard: np.ndarray
    pseudo: np.ndarray


def superpixel_features(params: EncoderParams, ctx: TrainingContext) -> tuple[Tensor, Tensor, Tensor]:
    """Pixel embeddings, pooled superpixel embeddings, and pooled + geometry features."""
    h = forward(params, ctx.patches)
    pooled = Tensor(ctx.pool) @ h
    return h, pooled, concat([pooled, Tensor(ctx.geom)], axis=1)


def derive_targets(H: np.ndarray, h_sampled: np.ndarray, ctx: TrainingContext, seed: int) -> Targets:
    neighbors = knn_positives(H, ctx.contrast.k_neighbors)
    sp = kmeans(H, ctx.K, seed=seed)
    px = kmeans(h_sampled, ctx.K, seed=seed + 1)
    align = align_clusters(px.hard, sp.hard[ctx.owner], ctx.K)
    pseudo = pixel_pseudo_labels(px.hard, ctx.owner, ctx.N, ctx.K, align)
    return Targets(neighbors, sp.centroids, sp.hard, pseudo)


def compute_losses(params: EncoderParams, ctx: TrainingContext, ablation: str = "full",
                   targets: Targets | None = None, seed: int = 0) -> tuple[dict[str, Tensor], Targets]:
    """All loss terms for one full-batch pass; ``targets`` freezes the discrete parts."""
    h, pooled, H = superpixel_features(params, ctx)
    h_s = h[ctx.sample_idx]
    if targets is None:
        targets = derive_targets(H.value, h_s.value, ctx, seed)
    tau = ctx.contrast.tau
    loss_s = superpixel_contrastive_loss(H, targets.neighbors, tau)
    loss_p = pixel_contrastive_loss(pooled, h_s, tau, owner=ctx.owner)
    q = soft_assign_tensor(H, targets.centroids, ctx.soft_temp)
    loss_plc = plc_loss(targets.pseudo, q)
    lam = 0.0 if ablation == "no_LPLC" else ctx.contrast.lam
    loss_c = loss_s + loss_p
    total = loss_plc * lam if ablation == "no_LC" else loss_c + loss_plc * lam
    return {"L_S": loss_s, "L_P": loss_p, "L_C": loss_c, "L_PLC": loss_plc, "L": total}, targets


# ------------------------------------------------------------------------- pipeline

def load_inputs(cfg: ExperimentConfig) -> tuple[HsiCube, LabelMap | None]:
    if cfg.input:
        cube = load_cube(cfg.input)
        truth = load_labels(cfg.labels) if cfg.labels else None
        return cube, truth
    return generate_synthetic(SyntheticSpec.parse(cfg.synthetic), cfg.seed)


def build_context(cfg: ExperimentConfig, reduced: HsiCube, seg: Segmentation, K: int) -> TrainingContext:
    samples = sample_pixels(seg, cfg.M, cfg.seed)
    sample_idx, owner = sampled_owner(samples)
    return TrainingContext(
        patches=extract_all_patches(reduced, cfg.patch_size),
        pool=pooling_matrix(seg),
        geom=cfg.geom_weight * geometry_columns(all_geometry(seg)),
        sample_idx=sample_idx, owner=owner, K=K, contrast=cfg.contrast,
        soft_temp=cfg.soft_temp)


def _resolve_K(cfg: ExperimentConfig, truth: LabelMap | None) -> int:
    if cfg.K is not None:
        return cfg.K
    if truth is not None:
        return truth.K
    raise ValueError("cluster count K is required when no ground truth is available")


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    t0 = time.perf_counter()
    cube, truth = load_inputs(cfg)
    K = _resolve_K(cfg, truth)
    reduced = pca_reduce(cube, cfg.pca_dims)
    seg = slic_segment(reduced, cfg.n_superpixels, cfg.compactness, cfg.seed)
    if seg.N <= max(K, cfg.k_neighbors):
        raise ValueError(f"segmentation produced {seg.N} superpixels; need more than "
                         f"max(K={K}, k={cfg.k_neighbors})")
    ctx = build_context(cfg, reduced, seg, K)
    params = init_encoder(cfg.encoder_config(reduced.bands), cfg.seed)
    state = AdamState()
    history = []
    for epoch in range(cfg.epochs):
        losses, targets = compute_losses(params, ctx, cfg.ablation, seed=cfg.seed + 7919 * (epoch + 1))
        row = {"epoch": epoch}
        row.update({k: float(v) for k, v in losses.items()})
        row["clean_fraction"] = float(clean_sample_flags(targets.superpixel_hard, targets.pseudo).mean())
        if not all(np.isfinite(v) for v in row.values()):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}: {row}")
        history.append(row)
        params.zero_grad()
        losses["L"].backward()
        state = adam_update(params, state, cfg.lr)
        log.debug("epoch %d %s", epoch, row)

    _, _, H = superpixel_features(params, ctx)
    final = kmeans(H.value, K, seed=cfg.seed)
    pixel_ids = LabelMap(final.hard[seg.assignment].astype(np.uint32), K)
    scores = {"OA": float("nan"), "NMI": float("nan"), "Kappa": float("nan")}
    baseline = {}
    if truth is not None:
        scores = evaluate(pixel_ids.labels, truth.labels)
        base = kmeans(reduced.pixels(), K, seed=cfg.seed)
        baseline = evaluate(base.hard, truth.labels)
    result = RunReport(scores["OA"], scores["NMI"], scores["Kappa"], history,
                       time.perf_counter() - t0, baseline, pixel_ids, seg, params)
    if cfg.output_dir:
        write_run_outputs(cfg, result)
    return result


def write_run_outputs(cfg: ExperimentConfig, result: RunReport) -> None:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if result.baseline:
        rows.append({"dataset": cfg.dataset_name, "method": "k-means", "seed": cfg.seed,
                     **result.baseline, "runtime_seconds": float("nan")})
    rows.append({"dataset": cfg.dataset_name, "method": METHOD_NAMES[cfg.ablation],
                 "seed": cfg.seed, **result.metrics(), "runtime_seconds": result.runtime_seconds})
    report.write_csv(out / "metrics.csv", rows, report.METRIC_COLUMNS)
    report.write_csv(out / "losses.csv", result.history, report.LOSS_COLUMNS)
    report.render_map(result.pixel_ids, out / "map.ppm")
    save_labels(result.pixel_ids, out / "labels.hslab")
    write_pgm(result.segmentation, out / "seg.pgm")
    save_segmentation(result.segmentation, out / "seg.hsseg")
    save_checkpoint(result.params, out / "checkpoint.hsenc")
    report.plot_losses(result.history, out / "losses.png")


# ----------------------------------------------------------------- sweeps/ablations

def run_sweep(base: ExperimentConfig, lambdas, Ms, seeds, output_dir=None) -> list[dict]:
    """Every (lambda, M, seed) cell; writes sweep.csv, sweep_grid.csv and a heatmap."""
    if not lambdas or not Ms or not seeds:
        raise ValueError("sweep grids must be non-empty")
    rows = []
    for lam in lambdas:
        for M in Ms:
            for seed in seeds:
                cfg = replace(base, lam=float(lam), M=int(M), seed=int(seed), output_dir=None)
                try:
                    res = run_experiment(cfg)
                except Exception as exc:
                    raise RuntimeError(f"sweep cell lambda={lam} M={M} seed={seed} failed: {exc}") from exc
                rows.append({"lambda": float(lam), "M": int(M), "seed": int(seed), **res.metrics()})
    if output_dir:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "sweep.csv", rows, report.SWEEP_COLUMNS)
        grid = sweep_grid(rows)
        report.write_csv(out / "sweep_grid.csv", grid, report.GRID_COLUMNS)
        report.plot_sweep_grid(grid, out / "sweep_grid.png")
    return rows


def sweep_grid(rows: list[dict]) -> list[dict]:
    """Mean OA per (lambda, M) cell, in sorted grid order."""
    cells: dict[tuple[float, int], list[float]] = {}
    for r in rows:
        cells.setdefault((r["lambda"], r["M"]), []).append(r["OA"])
    return [{"lambda": lam, "M": M, "n_seeds": len(v), "mean_OA": float(np.mean(sorted(v)))}
            for (lam, M), v in sorted(cells.items())]


def run_ablation_suite(base: ExperimentConfig, seeds, output_dir=None) -> list[dict]:
    """full / no_LC / no_LPLC on shared seeds; mean and std of each metric per variant."""
    if len(seeds) < 3:
        raise ValueError("ablation suite needs at least 3 seeds")
    runs = []
    for variant in ABLATIONS:
        for seed in seeds:
            res = run_experiment(replace(base, ablation=variant, seed=int(seed), output_dir=None))
            runs.append({"variant": variant, "seed": int(seed), **res.metrics()})
    summary = []
    for metric in ("OA", "NMI", "Kappa"):
        for variant in ABLATIONS:
            vals = np.array([r[metric] for r in runs if r["variant"] == variant])
            summary.append({"metric": metric, "variant": variant,
                            "mean": float(vals.mean()), "std": float(vals.std())})
    if output_dir:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / "ablation_runs.csv", runs, report.ABLATION_RUN_COLUMNS)
        report.write_csv(out / "ablation.csv", summary, report.ABLATION_COLUMNS)
        report.plot_ablation(summary, out / "ablation.png")
    return summary
