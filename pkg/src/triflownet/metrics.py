"""Saliency evaluation: MAE, mean F, weighted F, S-measure, mean E-measure.

Conventions (degenerate inputs are not standardized across the field; these
are fixed here and mirrored by the test oracles):

* Predictions are quantized to 256 gray levels; thresholded metrics binarize
  with ``level > tau`` for tau in 0..255.
* For mean F and mean E, thresholds whose binarized prediction is empty are
  skipped; if every threshold is empty the score is 0. This keeps a perfect
  prediction at exactly 1.0 over the sweep.
* Empty ground truth: F-measures score 1 when the prediction binarizes to
  empty everywhere, else 0; S-measure and E-measure use the all-background
  branches of their original formulations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

EPS = np.finfo(np.float64).eps

METRIC_NAMES = ("sm", "fbeta_mean", "fbeta_weighted", "em_mean", "mae")


def _as_maps(s, g) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=np.float64)
    g = np.asarray(g)
    if s.shape != g.shape:
        raise ValueError(f"prediction/gt shape mismatch {s.shape} vs {g.shape}")
    if s.ndim != 2:
        raise ValueError(f"metrics expect 2-D maps, got shape {s.shape}")
    return s, np.asarray(g, dtype=np.float64) > 0.5


def quantize(s: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(s, dtype=np.float64) * 255.0), 0, 255).astype(np.int64)


def mae(s, g) -> float:
    s, gt = _as_maps(s, g)
    return float(np.mean(np.abs(s - gt.astype(np.float64))))


def _threshold_counts(q: np.ndarray, gt: np.ndarray):
    """Per-threshold confusion counts for ``q > tau``, tau = 0..255."""
    fg_hist = np.bincount(q[gt], minlength=256)
    bg_hist = np.bincount(q[~gt], minlength=256)
    # tail[g] = number of pixels with level >= g; tp[tau] = tail[tau + 1]
    fg_tail = np.append(np.cumsum(fg_hist[::-1])[::-1], 0)
    bg_tail = np.append(np.cumsum(bg_hist[::-1])[::-1], 0)
    return fg_tail[1:], bg_tail[1:]


def f_measure_mean(s, g, beta2: float = 0.3) -> float:
    s, gt = _as_maps(s, g)
    q = quantize(s)
    n_fg = int(gt.sum())
    if n_fg == 0:
        return 1.0 if q.max() == 0 else 0.0
    tp, fp = _threshold_counts(q, gt)
    predicted = tp + fp
    valid = predicted > 0
    if not valid.any():
        return 0.0
    precision = np.zeros(256)
    precision[valid] = tp[valid] / predicted[valid]
    recall = tp / n_fg
    denom = beta2 * precision + recall
    fbeta = np.zeros(256)
    good = denom > 0
    fbeta[good] = (1.0 + beta2) * precision[good] * recall[good] / denom[good]
    return float(fbeta[valid].mean())


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _offsets_at(d2: int):
    """(dy, dx) pairs with dy*dy + dx*dx == d2, in lexicographic order."""
    r = int(math.isqrt(d2))
    for dy in range(-r, r + 1):
        rem = d2 - dy * dy
        rx = math.isqrt(rem)
        if rx * rx != rem:
            continue
        yield (dy, -rx)
        if rx:
            yield (dy, rx)


def _nearest_foreground_error(err: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Move each background pixel's error to the one at its nearest foreground
    pixel; equidistant candidates resolve to the smallest (row, col).

    Background pixels are grouped by their exact squared distance (integral on
    the pixel grid), and each group scans only its own distance's offset ring,
    so the cost stays near-linear in the number of background pixels.
    """
    h, w = gt.shape
    moved = np.where(gt, err, 0.0)
    bg = np.flatnonzero(~gt.ravel())
    if bg.size == 0:
        return moved
    dist2 = np.rint(ndimage.distance_transform_edt(~gt) ** 2).astype(np.int64)
    d2_bg = dist2.ravel()[bg]
    order = np.argsort(d2_bg, kind="stable")
    bg, d2_bg = bg[order], d2_bg[order]
    gt_flat = gt.ravel()
    err_flat = err.ravel()
    out_flat = moved.ravel()

    start = 0
    while start < bg.size:
        d2 = int(d2_bg[start])
        stop = start + int(np.searchsorted(d2_bg[start:], d2, side="right"))
        group = bg[start:stop]
        ys, xs = group // w, group % w
        pending = np.ones(group.size, dtype=bool)
        for dy, dx in _offsets_at(d2):
            if not pending.any():
                break
            ny, nx = ys + dy, xs + dx
            ok = pending & (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
            if not ok.any():
                continue
            idx = np.flatnonzero(ok)
            target = ny[idx] * w + nx[idx]
            hit = gt_flat[target]
            if hit.any():
                out_flat[group[idx[hit]]] = err_flat[target[hit]]
                pending[idx[hit]] = False
        start = stop
    return moved


def f_measure_weighted(s, g) -> float:
    s, gt = _as_maps(s, g)
    if not gt.any():
        return 1.0 if quantize(s).max() == 0 else 0.0
    err = np.abs(s - gt.astype(np.float64))
    dist = ndimage.distance_transform_edt(~gt)
    # Background errors inherit the error at the nearest foreground pixel.
    err_moved = _nearest_foreground_error(err, gt)
    smoothed = ndimage.convolve(err_moved, _gaussian_kernel(), mode="constant", cval=0.0)
    min_err = err.copy()
    take = gt & (smoothed < err)
    min_err[take] = smoothed[take]
    # Importance decays with distance from the object boundary.
    weight = np.ones_like(err)
    weight[~gt] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[~gt])
    weighted_err = min_err * weight
    n_fg = gt.sum()
    tp_w = n_fg - weighted_err[gt].sum()
    fp_w = weighted_err[~gt].sum()
    recall = 1.0 - weighted_err[gt].mean()
    precision = tp_w / (EPS + tp_w + fp_w)
    return float(2.0 * recall * precision / (EPS + recall + precision))


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + EPS))


def _ssim_region(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    x, y = pred.mean(), gt.mean()
    sigma_x = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sigma_y = ((gt - y) ** 2).sum() / (n - 1 + EPS)
    sigma_xy = ((pred - x) * (gt - y)).sum() / (n - 1 + EPS)
    num = 4.0 * x * y * sigma_xy
    den = (x * x + y * y) * (sigma_x + sigma_y)
    if num != 0.0:
        return float(num / (den + EPS))
    return 1.0 if den == 0.0 else 0.0


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    """1-based centroid column/row, matching the original formulation."""
    rows, cols = gt.shape
    total = gt.sum()
    if total == 0:
        return int(round(cols / 2.0)), int(round(rows / 2.0))
    x = int(np.floor((gt.sum(axis=0) * np.arange(1, cols + 1)).sum() / total + 0.5))
    y = int(np.floor((gt.sum(axis=1) * np.arange(1, rows + 1)).sum() / total + 0.5))
    return x, y


def s_measure(s, g, alpha: float = 0.5) -> float:
    s, gt = _as_maps(s, g)
    gt_f = gt.astype(np.float64)
    y = gt_f.mean()
    if y == 0.0:
        return float(1.0 - s.mean())
    if y == 1.0:
        return float(s.mean())

    s_object = y * _object_score(s[gt]) + (1.0 - y) * _object_score((1.0 - s)[~gt])

    cx, cy = _centroid(gt_f)
    rows, cols = gt.shape
    area = rows * cols
    quads_pred = [s[:cy, :cx], s[:cy, cx:], s[cy:, :cx], s[cy:, cx:]]
    quads_gt = [gt_f[:cy, :cx], gt_f[:cy, cx:], gt_f[cy:, :cx], gt_f[cy:, cx:]]
    w1 = (cx * cy) / area
    w2 = ((cols - cx) * cy) / area
    w3 = (cx * (rows - cy)) / area
    w4 = 1.0 - w1 - w2 - w3
    weights = (w1, w2, w3, w4)
    s_region = sum(w * _ssim_region(p, q)
                   for w, p, q in zip(weights, quads_pred, quads_gt))

    return float(max(alpha * s_object + (1.0 - alpha) * s_region, 0.0))


def _enhanced_value(g_bit: float, p_bit: float, mu_g: float, mu_p: float) -> float:
    a_g = g_bit - mu_g
    a_p = p_bit - mu_p
    align = 2.0 * a_g * a_p / (a_g * a_g + a_p * a_p + EPS)
    return (align + 1.0) ** 2 / 4.0


def e_measure_mean(s, g) -> float:
    s, gt = _as_maps(s, g)
    q = quantize(s)
    n = gt.size
    n_fg = int(gt.sum())
    tp, fp = _threshold_counts(q, gt if n_fg else np.ones_like(gt))
    if n_fg == 0:
        # All-background branch: score the fraction of predicted background.
        predicted = tp + fp
        return float(np.mean(1.0 - predicted / n))
    if n_fg == n:
        predicted = (tp + fp)[tp + fp > 0]
        return float(np.mean(predicted / n)) if predicted.size else 0.0

    mu_g = n_fg / n
    scores = []
    for tau in range(256):
        n_pred = int(tp[tau] + fp[tau])
        if n_pred == 0:
            continue
        mu_p = n_pred / n
        counts = {
            (1.0, 1.0): tp[tau],
            (1.0, 0.0): n_fg - tp[tau],
            (0.0, 1.0): fp[tau],
            (0.0, 0.0): (n - n_fg) - fp[tau],
        }
        total = sum(c * _enhanced_value(gb, pb, mu_g, mu_p)
                    for (gb, pb), c in counts.items())
        scores.append(total / n)
    if not scores:
        return 0.0
    return float(np.mean(scores))


def compute_all(s, g) -> dict[str, float]:
    return {
        "sm": s_measure(s, g),
        "fbeta_mean": f_measure_mean(s, g),
        "fbeta_weighted": f_measure_weighted(s, g),
        "em_mean": e_measure_mean(s, g),
        "mae": mae(s, g),
    }


# ---- directory evaluation -------------------------------------------------------

_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class MetricReport:
    per_image: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    attributes: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_image": self.per_image,
            "aggregate": self.aggregate,
            "attributes": self.attributes,
            "errors": self.errors,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _index_images(directory: Path) -> dict[str, Path]:
    found = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in _IMAGE_EXTS:
            found[path.stem] = path
    return found


def _load_gray(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64)


def _aggregate(records: list[dict]) -> dict:
    if not records:
        return {name: float("nan") for name in METRIC_NAMES}
    return {name: float(np.mean([r[name] for r in records])) for name in METRIC_NAMES}


def read_attributes(path: str | Path) -> dict[str, list[str]]:
    """CSV lines ``filename,attr1;attr2;...`` keyed by file stem."""
    tags: dict[str, list[str]] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, _, attrs = line.partition(",")
        stem = Path(name.strip()).stem
        tags[stem] = [a.strip() for a in attrs.split(";") if a.strip()]
    return tags


def evaluate_dirs(pred_dir: str | Path, gt_dir: str | Path,
                  attr_file: str | Path | None = None) -> MetricReport:
    """Score every filename-matched prediction/GT pair; per-file failures are
    recorded and evaluation continues."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds = _index_images(pred_dir)
    gts = _index_images(gt_dir)
    report = MetricReport()

    for stem in sorted(set(gts) - set(preds)):
        report.errors.append(f"missing prediction for {stem!r}")
    for stem in sorted(set(preds) - set(gts)):
        report.errors.append(f"prediction {stem!r} has no ground truth")

    for stem in sorted(set(gts) & set(preds)):
        try:
            gt_img = _load_gray(gts[stem])
            pred_img = _load_gray(preds[stem])
        except Exception as exc:
            report.errors.append(f"{stem!r}: unreadable image ({exc})")
            continue
        if gt_img.shape != pred_img.shape:
            report.errors.append(
                f"{stem!r}: size mismatch pred {pred_img.shape} vs gt {gt_img.shape}")
            continue
        record = {"name": stem}
        record.update(compute_all(pred_img / 255.0, gt_img > 127))
        report.per_image.append(record)

    report.aggregate = _aggregate(report.per_image)

    if attr_file is not None:
        tags = read_attributes(attr_file)
        by_tag: dict[str, list[dict]] = {}
        for record in report.per_image:
            for tag in tags.get(record["name"], []):
                by_tag.setdefault(tag, []).append(record)
        report.attributes = {
            tag: dict(_aggregate(records), count=len(records))
            for tag, records in sorted(by_tag.items())
        }
    return report
