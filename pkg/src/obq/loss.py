"""Focal-style loss on the position heatmap, with analytic gradients.

For positive targets (y > 0) the per-pixel loss is

    -alpha * |y - x| * (y log x + (1 - y) log(1 - x))

For negatives (y == 0) two readings exist. The default ``"focal"`` form,
-(1 - alpha) * x**beta * log(1 - x), grows with the predicted value and
down-weights easy negatives. ``"literal"`` keeps -(1 - alpha) * (1 - x)**beta * log(x).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from obq.heatmap import Heatmap

CLAMP_EPS = 1e-6
NEGATIVE_BRANCHES = ("focal", "literal")


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.25
    beta: float = 2.0
    lam: float = 1.5
    negative: str = "focal"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")
        if self.negative not in NEGATIVE_BRANCHES:
            raise ValueError(f"negative must be one of {NEGATIVE_BRANCHES}, got {self.negative!r}")


def _check(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(~(x > 0.0) | ~(x < 1.0)):
        raise ValueError("predictions must lie strictly inside (0, 1)")
    if np.any(~(y >= 0.0) | ~(y <= 1.0)):
        raise ValueError("targets must lie in [0, 1]")
    return x, y


def _pointwise(x, y, cfg):
    a, b = cfg.alpha, cfg.beta
    pos = -a * np.abs(y - x) * (y * np.log(x) + (1 - y) * np.log1p(-x))
    if cfg.negative == "focal":
        neg = -(1 - a) * x**b * np.log1p(-x)
    else:
        neg = -(1 - a) * (1 - x) ** b * np.log(x)
    return np.where(y > 0, pos, neg)


def _grad(x, y, cfg):
    a, b = cfg.alpha, cfg.beta
    bce = y * np.log(x) + (1 - y) * np.log1p(-x)
    dbce = y / x - (1 - y) / (1 - x)
    pos = -a * (-np.sign(y - x) * bce + np.abs(y - x) * dbce)
    if cfg.negative == "focal":
        xb1 = b * x ** (b - 1) if b != 0 else np.zeros_like(x)
        neg = -(1 - a) * (xb1 * np.log1p(-x) - x**b / (1 - x))
    else:
        ob1 = b * (1 - x) ** (b - 1) if b != 0 else np.zeros_like(x)
        neg = -(1 - a) * (-ob1 * np.log(x) + (1 - x) ** b / x)
    # sign(0) = 0 makes the kink term vanish, but |y - x| * dbce does too at x == y
    return np.where(y > 0, np.where(x == y, 0.0, pos), neg)


def ld_pointwise(x, y, cfg: LossConfig = LossConfig()):
    x, y = _check(x, y)
    out = _pointwise(x, y, cfg)
    return float(out) if out.ndim == 0 else out


def ld_grad(x, y, cfg: LossConfig = LossConfig()):
    """d loss / d x of the active branch; 0 at the x == y kink."""
    x, y = _check(x, y)
    out = _grad(x, y, cfg)
    return float(out) if out.ndim == 0 else out


def _prepare(h: Heatmap, h_star: Heatmap):
    if h.grid != h_star.grid:
        raise ValueError("predicted and label heatmaps must share a grid")
    y = h_star.values.reshape(-1)
    norm = float(np.sum(y))
    if not norm > 0.0:
        raise ValueError("no positive supervision")
    x = np.clip(h.values.reshape(-1), CLAMP_EPS, 1.0 - CLAMP_EPS)
    _check(x, y)
    return x, y, norm


def ld_loss(h: Heatmap, h_star: Heatmap, cfg: LossConfig = LossConfig()) -> float:
    """Sum of per-pixel losses over the grid, divided by the label mass.

    Predictions are clamped to [1e-6, 1 - 1e-6] first. The reduction runs in
    row-major order so the result does not depend on anything but the inputs.
    """
    x, y, norm = _prepare(h, h_star)
    total = math.fsum(_pointwise(x, y, cfg).tolist())
    return total / norm


def ld_loss_grad(h: Heatmap, h_star: Heatmap, cfg: LossConfig = LossConfig()) -> Heatmap:
    """Per-pixel gradient of ld_loss with respect to the clamped prediction."""
    x, y, norm = _prepare(h, h_star)
    return Heatmap(h.grid, (_grad(x, y, cfg) / norm).reshape(h.grid.shape))


def total_loss(l_cls: float, l_loc: float, l_ld: float, cfg: LossConfig = LossConfig()) -> float:
    """Classification and localization losses are computed elsewhere and passed in."""
    for v in (l_cls, l_loc, l_ld):
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"loss terms must be finite and >= 0, got {v}")
    return l_cls + l_loc + cfg.lam * l_ld
