"""Box-local heatmap extraction, self-encoding, integration metrics and quality scores."""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from obq.geometry import OrientedBox, contains
from obq.heatmap import Grid, Heatmap, phi_values, sample


class MetricKind(str, enum.Enum):
    VIOU = "viou"
    MAE = "mae"
    KLD = "kld"


class NoPixelsError(ValueError):
    pass


class DegenerateQualityError(ValueError):
    pass


@dataclass(frozen=True)
class PixelSet:
    """Row-major (row, col) indices of the pixel centers inside a box."""

    grid: Grid
    rows: np.ndarray
    cols: np.ndarray

    def __len__(self):
        return len(self.rows)

    def centers(self):
        return self.grid.centers(self.rows, self.cols)

    def values(self, heatmap: Heatmap) -> np.ndarray:
        return heatmap.values[self.rows, self.cols]


@dataclass
class QualityReport:
    box_id: object
    q: Optional[float]
    cls: Optional[float]
    cq: Optional[float]
    metric: MetricKind
    gt_iou: Optional[float] = None
    lite_bypass: bool = False
    error: Optional[str] = None

    def to_dict(self) -> dict:
        out = {"box_id": self.box_id, "q": self.q}
        if self.cls is not None:
            out["cls"] = self.cls
        if self.cq is not None:
            out["cq"] = self.cq
        if self.gt_iou is not None:
            out["gt_iou"] = self.gt_iou
        out["metric"] = self.metric.value
        if self.lite_bypass:
            out["lite_bypass"] = True
        if self.error is not None:
            out["error"] = self.error
        return out


@dataclass(frozen=True)
class LiteConfig:
    top_k: Union[int, str] = 1500
    gamma: float = 0.5

    def __post_init__(self):
        if self.top_k != "all":
            if isinstance(self.top_k, bool) or not isinstance(self.top_k, (int, np.integer)) or self.top_k < 1:
                raise ValueError(f"top_k must be a positive integer or 'all', got {self.top_k!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


def activated_pixels(box: OrientedBox, grid: Grid) -> PixelSet:
    win = grid.window(box)
    if win is not None:
        rs, cs = win
        x = grid.xs[cs][None, :]
        y = grid.ys[rs][:, None]
        mask = contains(box, x, y)
        r, c = np.nonzero(mask)
        if len(r):
            return PixelSet(grid, r + rs.start, c + cs.start)
    raise NoPixelsError("box covers no pixel centers")


def localized_heatmap(h: Heatmap, ps: PixelSet) -> Heatmap:
    out = Heatmap.zeros(h.grid)
    out.values[ps.rows, ps.cols] = ps.values(h)
    return out


def self_encoding_values(box: OrientedBox, ps: PixelSet) -> np.ndarray:
    x, y = ps.centers()
    return phi_values(box, x, y)


def self_encoding(box: OrientedBox, ps: PixelSet, grid: Grid) -> Heatmap:
    out = Heatmap.zeros(grid)
    out.values[ps.rows, ps.cols] = self_encoding_values(box, ps)
    return out


def integrate_values(h: np.ndarray, f: np.ndarray, metric: MetricKind) -> float:
    """Integration metric on the per-pixel values of H_i and F_i over P(b_i)."""
    metric = MetricKind(metric)
    if len(h) == 0:
        raise NoPixelsError("box covers no pixel centers")
    if metric is MetricKind.VIOU:
        num = float(np.sum(np.minimum(h, f)))
        den = float(np.sum(np.maximum(h, f)))
        if den <= 0.0:
            raise DegenerateQualityError("degenerate quality")
        return min(1.0, num / den)
    if metric is MetricKind.MAE:
        return min(1.0, max(0.0, 1.0 - float(np.mean(np.abs(h - f)))))
    # KLD between the two heatmaps normalized into distributions over P(b_i);
    # zero-mass pixels of the localized heatmap contribute nothing.
    sh = float(np.sum(h))
    if sh <= 0.0:
        return 0.0
    sf = float(np.sum(f))
    lp = h / sh
    gp = f / sf
    pos = lp > 0
    kl = float(np.sum(lp[pos] * np.log(lp[pos] / gp[pos])))
    return min(1.0, math.exp(-kl))


def integrate(h_i: Heatmap, f_i: Heatmap, ps: PixelSet, metric: MetricKind) -> float:
    return integrate_values(ps.values(h_i), ps.values(f_i), metric)


def lite_subsample(ps: PixelSet, gamma: float, seed: int = 0) -> PixelSet:
    """Deterministic strided subsample keeping ceil(gamma * len(ps)) pixels.

    Index k is kept iff ceil((k + 1) * gamma) > ceil(k * gamma). ``seed`` is
    accepted for interface symmetry; the selection does not depend on it.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        return ps
    k = np.arange(len(ps))
    keep = np.ceil((k + 1) * gamma - 1e-12) > np.ceil(k * gamma - 1e-12)
    return PixelSet(ps.grid, ps.rows[keep], ps.cols[keep])


def quality(
    box: OrientedBox,
    h: Heatmap,
    metric: MetricKind,
    box_id=None,
    gt_iou: Optional[float] = None,
    gamma: float = 1.0,
) -> QualityReport:
    """Quality score of one predicted box against heatmap ``h``.

    ``gamma`` < 1 integrates over a strided subset of the box's pixels.
    """
    metric = MetricKind(metric)
    ps = activated_pixels(box, h.grid)
    if gamma != 1.0:
        ps = lite_subsample(ps, gamma)
    q = integrate_values(ps.values(h), self_encoding_values(box, ps), metric)
    cls = box.score
    cq = cls * q if cls is not None else None
    return QualityReport(box_id, q, cls, cq, metric, gt_iou)


def lite_select(boxes: Sequence[OrientedBox], h: Heatmap, cfg: LiteConfig):
    """Rank boxes by the heatmap sampled at their centers.

    Returns (selected, bypassed): input indices of the top_k boxes, and
    (index, sampled value) pairs for the rest. Ties go to the lower index.
    """
    if len(boxes) == 0:
        raise ValueError("lite_select needs at least one box")
    probs = []
    for b in boxes:
        try:
            probs.append(sample(h, b.cx, b.cy))
        except ValueError:
            probs.append(0.0)
    if cfg.top_k == "all" or cfg.top_k >= len(boxes):
        return list(range(len(boxes))), []
    order = sorted(range(len(boxes)), key=lambda i: (-probs[i], i))
    selected = sorted(order[: cfg.top_k])
    bypassed = [(i, probs[i]) for i in sorted(order[cfg.top_k:])]
    return selected, bypassed


def lite_quality(
    boxes: Sequence[OrientedBox],
    h: Heatmap,
    metric: MetricKind,
    cfg: LiteConfig,
    ids=None,
    gt_ious=None,
):
    """Reports for every box in input order; boxes outside the top_k are scored by their center sample."""
    metric = MetricKind(metric)
    ids = list(range(len(boxes))) if ids is None else list(ids)
    gt_ious = [None] * len(boxes) if gt_ious is None else list(gt_ious)
    selected, bypassed = lite_select(boxes, h, cfg)
    reports = [None] * len(boxes)
    for i in selected:
        reports[i] = _quality_or_error(boxes[i], h, metric, ids[i], gt_ious[i], cfg.gamma)
    for i, p in bypassed:
        cls = boxes[i].score
        reports[i] = QualityReport(
            ids[i], p, cls, cls * p if cls is not None else None, metric, gt_ious[i], lite_bypass=True
        )
    return reports


def _quality_or_error(box, h, metric, box_id, gt_iou, gamma=1.0):
    try:
        return quality(box, h, metric, box_id, gt_iou, gamma)
    except (NoPixelsError, DegenerateQualityError) as exc:
        return QualityReport(box_id, None, box.score, None, metric, gt_iou, error=str(exc))


def batch_quality(boxes, h, metric, ids=None, gt_ious=None, lite: Optional[LiteConfig] = None, threads=1):
    """Reports for many boxes, ordered by input.

    A box that cannot be scored yields a report with q=None and ``error`` set.
    """
    metric = MetricKind(metric)
    if lite is not None:
        return lite_quality(boxes, h, metric, lite, ids, gt_ious)
    ids = list(range(len(boxes))) if ids is None else list(ids)
    gt_ious = [None] * len(boxes) if gt_ious is None else list(gt_ious)
    args = list(zip(boxes, ids, gt_ious))

    def one(a):
        return _quality_or_error(a[0], h, metric, a[1], a[2])

    if threads <= 1:
        return [one(a) for a in args]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, args))
