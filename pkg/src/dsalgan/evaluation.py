"""Saliency metrics (aveF, maxF, AUC, MAE), model evaluation across noise levels, and reports."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image
from scipy.stats import rankdata

from .data import NoiseModel, SampleTriplet, corrupt_gaussian, stack_samples, to_uint8

BETA2 = 0.3
N_THRESHOLDS = 256
THRESHOLDS = np.arange(N_THRESHOLDS, dtype=np.float64) / (N_THRESHOLDS - 1)
CSV_COLUMNS = ("dataset", "sigma", "n_images", "aveF", "maxF", "auc", "mae")

# Full-scale DSAL-GAN numbers, kept for side-by-side reading of desk results.
PAPER_TABLE3_SIGMA50 = {
    "MSRA-10K": {"aveF": 0.6523, "maxF": 0.7343, "auc": 0.9012, "mae": 0.0923},
    "ECSSD": {"aveF": 0.6328, "maxF": 0.7235, "auc": 0.8503, "mae": 0.1382},
    "SOD": {"aveF": 0.6019, "maxF": 0.7104, "auc": 0.8309, "mae": 0.1611},
}
PAPER_TABLE4_AUC = {
    "MSRA-10K": {10: 0.939, 30: 0.921, 50: 0.901, 80: 0.4512},
    "ECSSD": {10: 0.9006, 30: 0.8714, 50: 0.8503, 80: 0.4163},
    "SOD": {10: 0.8814, 30: 0.8627, 50: 0.8309, 80: 0.3942},
}


class SkipImage(ValueError):
    """Ground truth lacks a class the metric needs; the image is skipped, not failed."""


def _prepare(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt).ravel()
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and ground truth sizes differ: {pred.shape} vs {gt.shape}")
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("ground truth must be binary")
    return pred, gt.astype(bool)


def mae(pred, gt) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


def f_beta(tp, n_pred, n_pos, beta2: float = BETA2):
    """F-measure from counts; zero where nothing is predicted positive or P = R = 0."""
    tp, n_pred = np.asarray(tp, dtype=np.float64), np.asarray(n_pred, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(n_pred > 0, tp / n_pred, 0.0)
        recall = tp / n_pos
        f = (1 + beta2) * precision * recall / (beta2 * precision + recall)
    return np.where((n_pred > 0) & (tp > 0), f, 0.0)


def f_curve(pred, gt) -> np.ndarray:
    """F-measure at each threshold ``k / 255`` with ``pred >= t`` counted as positive."""
    pred, gt = _prepare(pred, gt)
    n_pos = int(gt.sum())
    if n_pos == 0:
        raise SkipImage("ground truth has no positive pixels")
    all_sorted = np.sort(pred)
    pos_sorted = np.sort(pred[gt])
    n_pred = pred.size - np.searchsorted(all_sorted, THRESHOLDS, side="left")
    tp = n_pos - np.searchsorted(pos_sorted, THRESHOLDS, side="left")
    return f_beta(tp, n_pred, n_pos)


def adaptive_threshold_index(pred) -> int:
    """Grid index nearest to ``min(1, 2 * mean(pred))``."""
    t = min(1.0, 2.0 * float(np.mean(pred)))
    return int(np.rint(t * (N_THRESHOLDS - 1)))


def f_measures(pred, gt) -> tuple[float, float]:
    """``(aveF, maxF)`` for one map.

    The adaptive threshold is snapped to the 256-level grid, so aveF is one
    of the swept values and can never exceed maxF.
    """
    curve = f_curve(pred, gt)
    return float(curve[adaptive_threshold_index(np.asarray(pred, dtype=np.float64))]), float(curve.max())


def auc(pred, gt) -> float:
    """Pixel ROC AUC via the Mann-Whitney rank statistic with mid-ranks for ties."""
    pred, gt = _prepare(pred, gt)
    n_pos = int(gt.sum())
    n_neg = gt.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SkipImage("ground truth needs both classes for AUC")
    ranks = rankdata(pred)
    return float((ranks[gt].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class MetricsReport:
    dataset: str
    sigma: float
    aveF: float
    maxF: float
    auc: float
    mae: float
    n_images: int
    n_skipped: int = 0

    def as_row(self) -> dict:
        row = asdict(self)
        return {k: row[k] for k in CSV_COLUMNS}


def image_metrics(pred, gt) -> dict[str, float]:
    ave_f, max_f = f_measures(pred, gt)
    return {"aveF": ave_f, "maxF": max_f, "auc": auc(pred, gt), "mae": mae(pred, gt)}


def summarize(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], dataset: str, sigma: float) -> MetricsReport:
    """Average per-image metrics, skipping images whose ground truth is single-class."""
    rows, skipped = [], 0
    for pred, gt in zip(preds, gts):
        try:
            rows.append(image_metrics(pred, gt))
        except SkipImage:
            skipped += 1
    if not rows:
        return MetricsReport(dataset, float(sigma), *([float("nan")] * 4), 0, skipped)
    means = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return MetricsReport(dataset, float(sigma), means["aveF"], means["maxF"], means["auc"], means["mae"], len(rows), skipped)


# ---------------------------------------------------------------------------
# model evaluation


def noise_seed(seed: int, index: int) -> int:
    """Per-image noise seed; independent of sigma so every level reuses one noise field."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def corrupt_set(clean: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    return np.stack([corrupt_gaussian(img, NoiseModel(sigma, noise_seed(seed, i))) for i, img in enumerate(clean)])


Predictor = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def model_predictor(models) -> Predictor:
    return lambda noisy, clean, masks: models.saliency(noisy)


def evaluate_model(
    model,
    datasets: dict[str, Sequence[SampleTriplet]],
    sigmas: Sequence[float],
    seed: int = 0,
    predictor: Predictor | None = None,
) -> list[MetricsReport]:
    """Corrupt each dataset at every sigma, run G2(G1(x)) and average the four metrics.

    ``model`` is a :class:`~dsalgan.pipeline.Models`, a checkpoint, or a
    checkpoint path. ``predictor(noisy, clean, masks)`` overrides inference.
    Rows come back sorted by (dataset, sigma).
    """
    if predictor is None:
        predictor = model_predictor(_as_models(model))
    reports = []
    for name in sorted(datasets):
        clean, masks = stack_samples(datasets[name])
        for sigma in sorted(float(s) for s in sigmas):
            preds = predictor(corrupt_set(clean, sigma, seed), clean, masks)
            reports.append(summarize(list(preds), list(masks), name, sigma))
    return reports


def _as_models(model):
    from .pipeline import Models
    from .train import Checkpoint

    if isinstance(model, Models):
        return model
    if isinstance(model, Checkpoint):
        return model.to_models()
    return Checkpoint.load(model).to_models()


# ---------------------------------------------------------------------------
# reports


def write_csv(reports: Sequence[MetricsReport], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.as_row())
    return path


def read_csv(path) -> list[MetricsReport]:
    with open(path, newline="") as fh:
        return [
            MetricsReport(
                row["dataset"], float(row["sigma"]), float(row["aveF"]), float(row["maxF"]),
                float(row["auc"]), float(row["mae"]), int(row["n_images"]),
            )
            for row in csv.DictReader(fh)
        ]


def _fmt(x: float) -> str:
    return "-" if x != x else f"{x:.4f}"


def _sigma_label(s: float) -> str:
    return f"{s:g}"


def metrics_markdown(reports: Sequence[MetricsReport]) -> str:
    """Per-sigma metric tables (datasets as columns) and an AUC-by-sigma table."""
    datasets = sorted({r.dataset for r in reports})
    sigmas = sorted({r.sigma for r in reports})
    cell = {(r.dataset, r.sigma): r for r in reports}
    lines = ["# Saliency metrics", ""]
    for sigma in sigmas:
        lines += [f"## Metrics at sigma={_sigma_label(sigma)}", ""]
        lines.append("| metric | " + " | ".join(datasets) + " |")
        lines.append("|---|" + "---|" * len(datasets))
        for metric, arrow in (("aveF", "↑"), ("maxF", "↑"), ("auc", "↑"), ("mae", "↓")):
            vals = [_fmt(getattr(cell[(d, sigma)], metric)) if (d, sigma) in cell else "-" for d in datasets]
            lines.append(f"| {metric} {arrow} | " + " | ".join(vals) + " |")
        lines.append("")
    lines += ["## AUC by noise level", ""]
    lines.append("| dataset | " + " | ".join(f"sigma={_sigma_label(s)}" for s in sigmas) + " |")
    lines.append("|---|" + "---|" * len(sigmas))
    for d in datasets:
        vals = [_fmt(cell[(d, s)].auc) if (d, s) in cell else "-" for s in sigmas]
        lines.append(f"| {d} | " + " | ".join(vals) + " |")
    return "\n".join(lines) + "\n"


def make_panel(noisy, denoised, saliency, gt, sep: int = 2) -> np.ndarray:
    """Side-by-side uint8 strip: noisy | denoised | predicted map | ground truth.

    Width is ``4 * W + 3 * sep``; separators are white.
    """
    tiles = []
    for tile in (noisy, denoised, saliency, gt):
        tile = np.asarray(tile, dtype=np.float32)
        if tile.ndim == 2:
            tile = np.repeat(tile[..., None], 3, axis=2)
        tiles.append(to_uint8(tile))
    h = tiles[0].shape[0]
    gap = np.full((h, sep, 3), 255, dtype=np.uint8)
    parts = []
    for i, tile in enumerate(tiles):
        if i:
            parts.append(gap)
        parts.append(tile)
    return np.concatenate(parts, axis=1)


def save_panel(path, noisy, denoised, saliency, gt, sep: int = 2) -> Path:
    path = Path(path)
    Image.fromarray(make_panel(noisy, denoised, saliency, gt, sep)).save(path)
    return path


def emit_report(
    reports: Sequence[MetricsReport],
    out_dir,
    formats: Sequence[str] = ("csv", "markdown"),
    panels: Sequence[tuple] = (),
) -> list[Path]:
    """Write ``metrics.csv`` / ``metrics.md`` and optional ``panels/panel_XXXX.png``.

    Each entry of ``panels`` is ``(noisy, denoised, saliency, gt)``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = sorted(reports, key=lambda r: (r.dataset, r.sigma))
    written = []
    for fmt in formats:
        if fmt == "csv":
            written.append(write_csv(rows, out_dir / "metrics.csv"))
        elif fmt == "markdown":
            path = out_dir / "metrics.md"
            path.write_text(metrics_markdown(rows))
            written.append(path)
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    if panels:
        (out_dir / "panels").mkdir(exist_ok=True)
        for i, panel in enumerate(panels):
            written.append(save_panel(out_dir / "panels" / f"panel_{i:04d}.png", *panel))
    return written
