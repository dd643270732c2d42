"""Pixel grids, position-heatmap labels, and heatmap I/O."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from obq.geometry import EPS, OrientedBox

DEFAULT_GRID_CAP = 1 << 24


class GridCapError(ValueError):
    """Grid would exceed the configured cell cap."""


def grid_cap() -> int:
    env = os.environ.get("OBQ_GRID_CAP")
    return int(env) if env else DEFAULT_GRID_CAP


@dataclass(frozen=True)
class Grid:
    """Pixel lattice. Pixel (row j, col i) has its center at origin + (i, j) * stride."""

    width: int
    height: int
    origin_x: float = 0.0
    origin_y: float = 0.0
    stride: float = 1.0

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.stride > 0:
            raise ValueError(f"stride must be positive, got {self.stride}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "origin_x", float(self.origin_x))
        object.__setattr__(self, "origin_y", float(self.origin_y))
        object.__setattr__(self, "stride", float(self.stride))
        cap = grid_cap()
        if self.width * self.height > cap:
            raise GridCapError(f"grid {self.width}x{self.height} exceeds cap of {cap} cells")

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def xs(self) -> np.ndarray:
        return self.origin_x + np.arange(self.width) * self.stride

    @property
    def ys(self) -> np.ndarray:
        return self.origin_y + np.arange(self.height) * self.stride

    def centers(self, rows, cols):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        return self.origin_x + cols * self.stride, self.origin_y + rows * self.stride

    def window(self, box: OrientedBox):
        """Index slices (rows, cols) of pixel centers that can fall inside ``box``.

        Returns None when the box's bounding rectangle misses the grid.
        """
        x0, y0, x1, y1 = box.aabb()
        s = self.stride
        c0 = max(0, math.floor((x0 - self.origin_x) / s - 1e-9))
        c1 = min(self.width - 1, math.ceil((x1 - self.origin_x) / s + 1e-9))
        r0 = max(0, math.floor((y0 - self.origin_y) / s - 1e-9))
        r1 = min(self.height - 1, math.ceil((y1 - self.origin_y) / s + 1e-9))
        if c0 > c1 or r0 > r1:
            return None
        return slice(r0, r1 + 1), slice(c0, c1 + 1)

    @classmethod
    def covering(cls, boxes: Sequence[OrientedBox], stride: float, anchor=None, margin: int = 1):
        """Smallest grid of the given stride covering every box, plus ``margin`` pixels.

        With ``anchor`` = (x, y) the lattice passes through that point and extends
        symmetrically around it, which keeps mirror-symmetric setups symmetric.
        """
        x0 = min(b.aabb()[0] for b in boxes)
        y0 = min(b.aabb()[1] for b in boxes)
        x1 = max(b.aabb()[2] for b in boxes)
        y1 = max(b.aabb()[3] for b in boxes)
        if anchor is None:
            anchor = (0.5 * (x0 + x1), 0.5 * (y0 + y1))
        ax, ay = anchor
        kx = math.ceil(max(ax - x0, x1 - ax) / stride - 1e-9) + margin
        ky = math.ceil(max(ay - y0, y1 - ay) / stride - 1e-9) + margin
        return cls(2 * kx + 1, 2 * ky + 1, ax - kx * stride, ay - ky * stride, stride)


@dataclass
class Heatmap:
    """Dense scalar field, values[row, col] at the pixel centers of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, np.zeros(grid.shape))

    def copy(self):
        return Heatmap(self.grid, self.values.copy())


@dataclass(frozen=True)
class GaussianParams:
    mu: tuple
    sigma_sqrt: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return self.sigma_sqrt @ self.sigma_sqrt


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def gaussian_params(box: OrientedBox) -> GaussianParams:
    u = _rotation(box.theta)
    sqrt = u @ np.diag([box.w / 4, box.h / 4]) @ u.T
    # exact symmetry; the product above can differ in the last ulp off-diagonal
    sqrt = 0.5 * (sqrt + sqrt.T)
    return GaussianParams((box.cx, box.cy), sqrt)


def _inside_uv(box, u, v):
    return (np.abs(u) <= box.w / 2 + EPS) & (np.abs(v) <= box.h / 2 + EPS)


def phi_values(box: OrientedBox, x, y):
    """Gaussian position value, zero outside the box. Vectorized over points."""
    u, v = box.to_frame(x, y)
    d2 = 16.0 * ((u / box.w) ** 2 + (v / box.h) ** 2)
    return np.where(_inside_uv(box, u, v), np.exp(-0.5 * d2), 0.0)


def phi(p, box: OrientedBox) -> float:
    return float(phi_values(box, p[0], p[1]))


def centerness_values(box: OrientedBox, x, y):
    u, v = box.to_frame(x, y)
    hw, hh = box.w / 2, box.h / 2
    left = np.clip(hw + u, 0.0, None)
    right = np.clip(hw - u, 0.0, None)
    top = np.clip(hh + v, 0.0, None)
    bottom = np.clip(hh - v, 0.0, None)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio_u = np.minimum(left, right) / np.maximum(left, right)
        ratio_v = np.minimum(top, bottom) / np.maximum(top, bottom)
    val = np.sqrt(np.nan_to_num(ratio_u * ratio_v, nan=0.0))
    return np.where(_inside_uv(box, u, v), val, 0.0)


def centerness(p, box: OrientedBox) -> float:
    return float(centerness_values(box, p[0], p[1]))


def _rasterize_max(boxes, grid, field):
    if len(boxes) == 0:
        raise ValueError("at least one box is required to build a label")
    values = np.zeros(grid.shape)
    for box in boxes:
        win = grid.window(box)
        if win is None:
            continue
        rs, cs = win
        x = grid.xs[cs][None, :]
        y = grid.ys[rs][:, None]
        np.maximum(values[rs, cs], field(box, x, y), out=values[rs, cs])
    return Heatmap(grid, values)


def global_label(boxes: Sequence[OrientedBox], grid: Grid) -> Heatmap:
    """Per-pixel maximum of the masked Gaussian over all boxes."""
    return _rasterize_max(boxes, grid, phi_values)


def centerness_label(boxes: Sequence[OrientedBox], grid: Grid) -> Heatmap:
    """Per-pixel maximum of box-frame centerness over all boxes."""
    return _rasterize_max(boxes, grid, centerness_values)


def sample(heatmap: Heatmap, x: float, y: float) -> float:
    """Bilinear interpolation between the four surrounding pixel centers."""
    g = heatmap.grid
    fx = (x - g.origin_x) / g.stride
    fy = (y - g.origin_y) / g.stride
    tol = 1e-9
    if not (-tol <= fx <= g.width - 1 + tol and -tol <= fy <= g.height - 1 + tol):
        raise ValueError(f"point ({x}, {y}) lies outside the grid")
    fx = min(max(fx, 0.0), g.width - 1)
    fy = min(max(fy, 0.0), g.height - 1)
    i0 = min(int(math.floor(fx)), max(g.width - 2, 0))
    j0 = min(int(math.floor(fy)), max(g.height - 2, 0))
    tx, ty = fx - i0, fy - j0
    i1, j1 = min(i0 + 1, g.width - 1), min(j0 + 1, g.height - 1)
    v = heatmap.values
    top = (1 - tx) * v[j0, i0] + tx * v[j0, i1]
    bot = (1 - tx) * v[j1, i0] + tx * v[j1, i1]
    return min(1.0, max(0.0, float((1 - ty) * top + ty * bot)))


def write_csv(heatmap: Heatmap, path) -> None:
    """First line: width,height,origin_x,origin_y,stride; then one line per row."""
    g = heatmap.grid
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join([str(g.width), str(g.height), repr(g.origin_x), repr(g.origin_y), repr(g.stride)]))
        fh.write("\n")
        for row in heatmap.values:
            fh.write(",".join(f"{v:.9g}" for v in row))
            fh.write("\n")


def read_csv(path) -> Heatmap:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty heatmap file")
    head = lines[0].split(",")
    if len(head) != 5:
        raise ValueError(f"{path}: line 1: expected width,height,origin_x,origin_y,stride")
    try:
        grid = Grid(int(head[0]), int(head[1]), float(head[2]), float(head[3]), float(head[4]))
    except GridCapError:
        raise
    except ValueError as exc:
        raise ValueError(f"{path}: line 1: {exc}") from None
    rows = lines[1:]
    if len(rows) != grid.height:
        raise ValueError(f"{path}: expected {grid.height} value rows, found {len(rows)}")
    values = np.empty(grid.shape)
    for j, line in enumerate(rows):
        parts = line.split(",")
        if len(parts) != grid.width:
            raise ValueError(f"{path}: line {j + 2}: expected {grid.width} values, found {len(parts)}")
        try:
            values[j] = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"{path}: line {j + 2}: non-numeric value") from None
    return Heatmap(grid, values)


def write_pgm(heatmap: Heatmap, path) -> None:
    """16-bit binary PGM for viewing; values scaled by 65535."""
    g = heatmap.grid
    data = np.round(np.clip(heatmap.values, 0.0, 1.0) * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.width} {g.height}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
