"""Oracle-mode studies: parameter sweeps, quality/IoU correlation, perturbation robustness.

Every study uses the analytic label of the GT box as the heatmap, so metric
behavior is isolated from any learned predictor. Outputs are deterministic
functions of their configuration and seed.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from obq.consistency import MetricKind, NoPixelsError, quality
from obq.geometry import OrientedBox, exact_iou
from obq.heatmap import Grid, Heatmap, global_label
from obq.seeding import derive_rng


class SweepKind(str, enum.Enum):
    ANGLE = "angle"
    CENTER_OFFSET = "offset"
    ASPECT_RATIO = "aspect"


DEFAULT_GT = OrientedBox(0.0, 0.0, 100.0, 50.0, 0.0)

DEFAULT_RANGES = {
    SweepKind.ANGLE: (-math.pi / 4, math.pi / 4),
    SweepKind.CENTER_OFFSET: (-0.5, 0.5),
    SweepKind.ASPECT_RATIO: (1.0 / 3.0, 3.0),
}

# default (delta1, delta2) rows of the robustness study
ROBUSTNESS_ROWS = ((0.0, 0.0), (0.1, 0.2), (0.2, 0.3), (0.3, 0.4))


def ordered_map(fn, items, threads):
    if threads is None or threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def oracle_heatmap(gt: OrientedBox, pred: OrientedBox, stride: float) -> Heatmap:
    """GT label on a grid anchored at the GT center that covers both boxes."""
    grid = Grid.covering([gt, pred], stride, anchor=(gt.cx, gt.cy))
    return global_label([gt], grid)


def score_pair(gt, pred, stride, metrics=tuple(MetricKind), gamma=1.0):
    h = oracle_heatmap(gt, pred, stride)
    return {MetricKind(m): quality(pred, h, m, gamma=gamma).q for m in metrics}


# ---------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepSpec:
    kind: SweepKind
    gt: OrientedBox = DEFAULT_GT
    range: Optional[tuple] = None
    steps: int = 25
    grid_stride: float = 1.0
    ar_mode: str = "height"

    def __post_init__(self):
        object.__setattr__(self, "kind", SweepKind(self.kind))
        if self.range is None:
            object.__setattr__(self, "range", DEFAULT_RANGES[self.kind])
        lo, hi = self.range
        if not lo < hi:
            raise ValueError(f"sweep range needs lo < hi, got {self.range}")
        if self.steps < 2:
            raise ValueError("a sweep needs at least 2 steps")
        if not self.grid_stride > 0:
            raise ValueError("grid_stride must be positive")
        if self.ar_mode not in ("height", "area"):
            raise ValueError(f"ar_mode must be 'height' or 'area', got {self.ar_mode!r}")

    def values(self) -> np.ndarray:
        return np.linspace(self.range[0], self.range[1], self.steps)

    def predicted(self, value: float) -> OrientedBox:
        """GT box with the swept parameter set to ``value``."""
        gt = self.gt
        if self.kind is SweepKind.ANGLE:
            return OrientedBox(gt.cx, gt.cy, gt.w, gt.h, gt.theta + value)
        if self.kind is SweepKind.CENTER_OFFSET:
            d = value * gt.w
            return OrientedBox(
                gt.cx + d * math.cos(gt.theta), gt.cy + d * math.sin(gt.theta), gt.w, gt.h, gt.theta
            )
        if value <= 0:
            raise ValueError("aspect ratio factor must be positive")
        if self.ar_mode == "height":
            return OrientedBox(gt.cx, gt.cy, gt.w * value, gt.h, gt.theta)
        r = math.sqrt(value)
        return OrientedBox(gt.cx, gt.cy, gt.w * r, gt.h / r, gt.theta)


SWEEP_COLUMNS = ("step", "param_value", "gt_iou", "q_viou", "q_mae", "q_kld")


def run_sweep(spec: SweepSpec, metrics: Sequence[MetricKind] = tuple(MetricKind), threads: int = 1):
    """One row per step: the swept value, exact IoU, and each metric's score.

    A step whose predicted box covers no pixel centers gets ``flagged=True``
    and empty scores instead of aborting the sweep.
    """
    metrics = [MetricKind(m) for m in metrics]

    def row(item):
        k, value = item
        pred = spec.predicted(float(value))
        out = {"step": k, "param_value": float(value), "gt_iou": exact_iou(spec.gt, pred), "flagged": False}
        try:
            qs = score_pair(spec.gt, pred, spec.grid_stride, metrics)
        except NoPixelsError:
            qs = {}
            out["flagged"] = True
        for m in MetricKind:
            out[f"q_{m.value}"] = qs.get(m)
        return out

    return ordered_map(row, list(enumerate(spec.values())), threads)


def sweep_errors(rows, metric: MetricKind) -> float:
    """Mean |Q - GT IoU| over the unflagged rows."""
    key = f"q_{MetricKind(metric).value}"
    errs = [abs(r[key] - r["gt_iou"]) for r in rows if not r["flagged"]]
    return float(np.mean(errs))


# ---------------------------------------------------------------- correlation


@dataclass(frozen=True)
class GenParams:
    """GT sampling ranges and the jitter that turns a GT box into a prediction.

    Center jitter is a fraction of the box size per axis, size jitter a
    log-uniform factor, angle jitter in radians.
    """

    center_range: tuple = (0.0, 512.0)
    w_range: tuple = (24.0, 96.0)
    h_range: tuple = (16.0, 64.0)
    center_jitter: float = 0.15
    size_jitter: float = 0.15
    angle_jitter: float = math.pi / 24
    stride: float = 1.0


def sample_pairs(n_pairs: int, seed: int, gen: GenParams = GenParams()):
    rng = derive_rng(seed, "correlation")
    lo, hi = gen.center_range
    cx = rng.uniform(lo, hi, n_pairs)
    cy = rng.uniform(lo, hi, n_pairs)
    w = rng.uniform(*gen.w_range, n_pairs)
    h = rng.uniform(*gen.h_range, n_pairs)
    th = rng.uniform(-math.pi / 2, math.pi / 2, n_pairs)
    j = rng.uniform(-1.0, 1.0, (5, n_pairs))
    pairs = []
    for i in range(n_pairs):
        gt = OrientedBox(cx[i], cy[i], w[i], h[i], th[i])
        pred = OrientedBox(
            cx[i] + j[0, i] * gen.center_jitter * w[i],
            cy[i] + j[1, i] * gen.center_jitter * h[i],
            w[i] * math.exp(j[2, i] * gen.size_jitter),
            h[i] * math.exp(j[3, i] * gen.size_jitter),
            th[i] + j[4, i] * gen.angle_jitter,
        )
        pairs.append((gt, pred))
    return pairs


@dataclass
class CorrelationReport:
    pearson: float
    spearman: float
    kendall_tau: float
    n: int
    metric: MetricKind
    degenerate: bool = False
    per_metric: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["metric"] = self.metric.value
        d["per_metric"] = {MetricKind(k).value: v for k, v in self.per_metric.items()}
        return d


def correlations(x, y):
    """(pearson, spearman, kendall, degenerate). Constant input is reported, not NaN."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("correlation needs at least 2 samples")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        same = bool(np.ptp(x) == 0 and np.ptp(y) == 0 and np.allclose(x, y))
        c = 1.0 if same else 0.0
        return c, c, c, True
    return (
        float(stats.pearsonr(x, y)[0]),
        float(stats.spearmanr(x, y)[0]),
        float(stats.kendalltau(x, y)[0]),
        False,
    )


def spearman(x, y) -> float:
    return correlations(x, y)[1]


def score_pairs(pairs, stride, metrics, gamma=1.0, threads=1):
    """Matrix of scores, shape (len(pairs), len(metrics)). Uncoverable pairs score 0."""

    def one(pair):
        gt, pred = pair
        try:
            qs = score_pair(gt, pred, stride, metrics, gamma)
            return [qs[m] for m in metrics]
        except NoPixelsError:
            return [0.0] * len(metrics)

    return np.array(ordered_map(one, pairs, threads), dtype=np.float64).reshape(len(pairs), len(metrics))


def run_correlation(
    n_pairs: int,
    seed: int,
    metric: MetricKind = MetricKind.VIOU,
    gen: GenParams = GenParams(),
    gamma: float = 1.0,
    threads: int = 1,
    pairs=None,
):
    """Correlation between oracle-mode quality scores and exact IoU.

    Returns (report, table) where table holds per-pair gt_iou and per-metric scores.
    """
    metric = MetricKind(metric)
    if pairs is None:
        if n_pairs < 100:
            raise ValueError("run_correlation needs n_pairs >= 100")
        pairs = sample_pairs(n_pairs, seed, gen)
    metrics = list(MetricKind)
    ious = np.array([exact_iou(g, p) for g, p in pairs])
    scores = score_pairs(pairs, gen.stride, metrics, gamma, threads)
    per_metric = {m: correlations(scores[:, k], ious)[1] for k, m in enumerate(metrics)}
    k = metrics.index(metric)
    pr, sp, kt, degenerate = correlations(scores[:, k], ious)
    report = CorrelationReport(pr, sp, kt, len(pairs), metric, degenerate, per_metric)
    table = {"gt_iou": ious, **{f"q_{m.value}": scores[:, i] for i, m in enumerate(metrics)}}
    return report, table


# ---------------------------------------------------------------- robustness


@dataclass(frozen=True)
class PerturbSpec:
    delta1: float = 0.0
    delta2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("delta1", "delta2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def _perturb_values(values: np.ndarray, delta1, delta2, rng, force_sign=None) -> np.ndarray:
    out = values.copy()
    n_sel = int(math.floor(delta1 * out.size))
    if n_sel == 0 or delta2 == 0.0:
        return out
    flat = out.reshape(-1)
    idx = rng.choice(flat.size, size=n_sel, replace=False)
    if force_sign is None:
        signs = rng.integers(0, 2, n_sel) * 2 - 1
    else:
        signs = np.full(n_sel, float(force_sign))
    flat[idx] = np.clip(flat[idx] * (1.0 + signs * delta2), 0.0, 1.0)
    return out


def perturb_heatmap(h: Heatmap, spec: PerturbSpec, stream: int = 0, force_sign: Optional[int] = None) -> Heatmap:
    """Scale a random delta1 fraction of pixels by (1 +/- delta2), clamped to [0, 1].

    ``stream`` picks an independent sub-stream of ``spec.seed`` (one per heatmap
    in a batch).
    """
    rng = derive_rng(spec.seed, "perturb", stream)
    return Heatmap(h.grid, _perturb_values(h.values, spec.delta1, spec.delta2, rng, force_sign))


def perturb_scalars(values, spec: PerturbSpec) -> np.ndarray:
    """Box-level counterpart: a delta1 fraction of scalars scaled by (1 +/- delta2)."""
    rng = derive_rng(spec.seed, "box_noise")
    return _perturb_values(np.asarray(values, dtype=np.float64), spec.delta1, spec.delta2, rng)


ROBUSTNESS_COLUMNS = ("delta1", "delta2", "pixel_spearman", "pixel_drop", "box_spearman", "box_drop")


def run_robustness(
    n_pairs: int,
    seed: int,
    rows: Sequence[PerturbSpec],
    gen: GenParams = GenParams(),
    metric: MetricKind = MetricKind.VIOU,
    baseline: bool = True,
    threads: int = 1,
):
    """Spearman-vs-GT-IoU under heatmap noise (pixel arm) and scalar IoU noise (box arm).

    The box arm stands in a predicted IoU with the exact IoU and perturbs it
    directly. Drops are measured against the unperturbed score of each arm.
    """
    if not rows:
        raise ValueError("run_robustness needs at least one row")
    metric = MetricKind(metric)
    pairs = sample_pairs(n_pairs, seed, gen)
    ious = np.array([exact_iou(g, p) for g, p in pairs])
    clean = score_pairs(pairs, gen.stride, [metric], threads=threads)[:, 0]
    pixel_base = spearman(clean, ious)
    box_base = spearman(ious, ious)

    def pixel_scores(spec):
        def one(item):
            i, (gt, pred) = item
            h = perturb_heatmap(oracle_heatmap(gt, pred, gen.stride), spec, stream=i)
            try:
                return quality(pred, h, metric).q
            except NoPixelsError:
                return 0.0

        return np.array(ordered_map(one, list(enumerate(pairs)), threads))

    out = []
    for spec in rows:
        if spec.delta1 == 0.0 or spec.delta2 == 0.0:
            pix = pixel_base
        else:
            pix = spearman(pixel_scores(spec), ious)
        row = {"delta1": spec.delta1, "delta2": spec.delta2, "pixel_spearman": pix, "pixel_drop": pixel_base - pix}
        if baseline:
            box = spearman(perturb_scalars(ious, spec), ious)
            row.update(box_spearman=box, box_drop=box_base - box)
        else:
            row.update(box_spearman=None, box_drop=None)
        out.append(row)
    return out


# ---------------------------------------------------------------- worked scenarios


def stretched_box_scenario(stride: float = 0.02):
    """GT with aspect 2:1 against a prediction stretched to 3:1 (same center, angle, height)."""
    gt = OrientedBox(0.0, 0.0, 2.0, 1.0, 0.0)
    pred = OrientedBox(0.0, 0.0, 3.0, 1.0, 0.0)
    qs = score_pair(gt, pred, stride)
    return {"gt_iou": exact_iou(gt, pred), **{f"q_{m.value}": q for m, q in qs.items()}}


def _solve(fn, target, lo, hi):
    return optimize.brentq(lambda t: fn(t) - target, lo, hi, xtol=1e-10)


def ranking_pair(gt: OrientedBox = DEFAULT_GT, q_a: float = 0.83, q_b: float = 0.62, stride: float = 1.0):
    """Two predictions of ``gt`` whose volume-IoU scores hit ``q_a`` and ``q_b``.

    (a) is offset along the width axis, (b) is rotated about the center. Returns
    dicts with the box, exact IoU and all metric scores for each.
    """
    spec_a = SweepSpec(SweepKind.CENTER_OFFSET, gt, (0.0, 0.5), grid_stride=stride)
    spec_b = SweepSpec(SweepKind.ANGLE, gt, (0.0, math.pi / 4), grid_stride=stride)

    def viou(spec):
        return lambda t: score_pair(gt, spec.predicted(t), stride, [MetricKind.VIOU])[MetricKind.VIOU]

    out = []
    for spec, target in ((spec_a, q_a), (spec_b, q_b)):
        t = _solve(viou(spec), target, *spec.range)
        pred = spec.predicted(t)
        qs = score_pair(gt, pred, stride)
        out.append({"box": pred, "param": t, "gt_iou": exact_iou(gt, pred), **{m: q for m, q in qs.items()}})
    return out[0], out[1]
