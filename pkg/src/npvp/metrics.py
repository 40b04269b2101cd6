"""Reference PSNR and SSIM plus per-clip reporting (CSV, JSON, figure).

PSNR is capped at 100 dB for near-identical inputs. SSIM uses the standard
11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, averaged over valid
window positions and channels; both metrics compute in float64.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return 10.0 * math.log10(max_val * max_val / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_single(a: np.ndarray, b: np.ndarray, max_val: float) -> float:
    window = _gaussian_window()
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_a = convolve2d(a, window, mode="valid")
    mu_b = convolve2d(b, window, mode="valid")
    var_a = convolve2d(a * a, window, mode="valid") - mu_a**2
    var_b = convolve2d(b * b, window, mode="valid") - mu_b**2
    cov = convolve2d(a * b, window, mode="valid") - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Mean SSIM of one image pair, (h, w) or (h, w, c); channels averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected (h, w) or (h, w, c) images, got shape {a.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(
            f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    return float(np.mean([_ssim_single(a[:, :, c], b[:, :, c], max_val) for c in range(a.shape[2])]))


@dataclass
class ClipMetrics:
    clip_id: int
    frame_times: list[float]
    psnr: list[float]
    ssim: list[float]

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))


@dataclass
class MetricReport:
    """Per-frame metrics for a batch of clips; aggregates are the mean over
    frames within each clip, then over clips."""

    clips: list[ClipMetrics] = field(default_factory=list)

    @property
    def aggregate_psnr(self) -> float:
        return float(np.mean([c.mean_psnr for c in self.clips]))

    @property
    def aggregate_ssim(self) -> float:
        return float(np.mean([c.mean_ssim for c in self.clips]))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["clip_id", "frame_time", "psnr", "ssim"])
            for clip in self.clips:
                for t, p, s in zip(clip.frame_times, clip.psnr, clip.ssim):
                    writer.writerow([clip.clip_id, f"{t:g}", f"{p:.6f}", f"{s:.6f}"])

    def write_json(self, path: str | Path) -> None:
        payload = {
            "clips": [
                {
                    "clip_id": c.clip_id,
                    "frames": [
                        {"time": t, "psnr": p, "ssim": s}
                        for t, p, s in zip(c.frame_times, c.psnr, c.ssim)
                    ],
                    "mean_psnr": c.mean_psnr,
                    "mean_ssim": c.mean_ssim,
                }
                for c in self.clips
            ],
            "aggregate": {"psnr": self.aggregate_psnr, "ssim": self.aggregate_ssim},
        }
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def report(
    predicted_clips,
    ground_truth_clips,
    frame_times=None,
    out_dir: str | Path | None = None,
    stem: str = "metrics",
) -> MetricReport:
    """Per-frame PSNR/SSIM for aligned clip lists, with optional CSV/JSON output."""
    preds = list(predicted_clips)
    gts = list(ground_truth_clips)
    if not preds:
        raise ValueError("no clips to evaluate")
    if len(preds) != len(gts):
        raise ValueError(f"got {len(preds)} predictions but {len(gts)} ground-truth clips")

    result = MetricReport()
    for clip_id, (pred, gt) in enumerate(zip(preds, gts)):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"clip {clip_id}: shape mismatch {pred.shape} vs {gt.shape}")
        times = (
            list(frame_times[clip_id])
            if frame_times is not None
            else [float(t) for t in range(pred.shape[0])]
        )
        if len(times) != pred.shape[0]:
            raise ValueError(f"clip {clip_id}: {len(times)} times for {pred.shape[0]} frames")
        result.clips.append(
            ClipMetrics(
                clip_id=clip_id,
                frame_times=times,
                psnr=[psnr(pred[i], gt[i]) for i in range(pred.shape[0])],
                ssim=[ssim(pred[i], gt[i]) for i in range(pred.shape[0])],
            )
        )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result.write_csv(out_dir / f"{stem}.csv")
        result.write_json(out_dir / f"{stem}.json")
    return result


def render_metric_figure(report_: MetricReport, path: str | Path) -> Path:
    """Per-frame PSNR/SSIM curves, one line per clip plus the mean."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, key, label in ((axes[0], "psnr", "PSNR [dB]"), (axes[1], "ssim", "SSIM")):
        for clip in report_.clips:
            ax.plot(clip.frame_times, getattr(clip, key), alpha=0.35, lw=1.0, color="tab:blue")
        mean_curve = np.mean([getattr(c, key) for c in report_.clips], axis=0)
        ax.plot(report_.clips[0].frame_times, mean_curve, color="tab:red", lw=2.0, label="mean")
        ax.set_xlabel("frame time")
        ax.set_ylabel(label)
        ax.legend()
        ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
