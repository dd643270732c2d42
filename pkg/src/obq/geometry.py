"""Oriented boxes, containment, and rotated IoU (exact and Monte Carlo)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from obq.seeding import derive_rng

MIN_SIDE = 1e-6
EPS = 1e-9

_MC_CHUNK = 1 << 14


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [-pi/2, pi/2). A rectangle is symmetric under theta + pi."""
    if -math.pi / 2 <= theta < math.pi / 2:
        return theta
    t = math.fmod(theta + math.pi / 2, math.pi)
    if t < 0:
        t += math.pi
    t -= math.pi / 2
    if t >= math.pi / 2:
        t = -math.pi / 2
    return t


@dataclass(frozen=True)
class OrientedBox:
    """Rotated rectangle.

    ``w`` runs along the box axis rotated counterclockwise by ``theta`` from +x,
    ``h`` is perpendicular to it. ``score`` is the optional classification score.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0
    score: Optional[float] = None

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "theta"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"box field {name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.w < MIN_SIDE or self.h < MIN_SIDE:
            raise ValueError(f"box sides must be >= {MIN_SIDE}, got w={self.w}, h={self.h}")
        object.__setattr__(self, "theta", normalize_angle(self.theta))
        if self.score is not None:
            s = float(self.score)
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score must lie in [0, 1], got {s}")
            object.__setattr__(self, "score", s)

    @property
    def area(self) -> float:
        return self.w * self.h

    def with_score(self, score):
        return OrientedBox(self.cx, self.cy, self.w, self.h, self.theta, score)

    def to_frame(self, x, y):
        """Map world points into the box frame (u along width, v along height)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        dx = np.asarray(x, dtype=np.float64) - self.cx
        dy = np.asarray(y, dtype=np.float64) - self.cy
        return dx * c + dy * s, -dx * s + dy * c

    def aabb(self):
        """Axis-aligned bounds (xmin, ymin, xmax, ymax)."""
        c, s = abs(math.cos(self.theta)), abs(math.sin(self.theta))
        ex = 0.5 * (self.w * c + self.h * s)
        ey = 0.5 * (self.w * s + self.h * c)
        return self.cx - ex, self.cy - ey, self.cx + ex, self.cy + ey


def corners(box: OrientedBox) -> np.ndarray:
    """Four corners as a (4, 2) array, counterclockwise."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    hw, hh = box.w / 2, box.h / 2
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def contains(box: OrientedBox, x, y, tol: float = EPS):
    """Closed-rectangle inside test; works on scalars or arrays."""
    u, v = box.to_frame(x, y)
    inside = (np.abs(u) <= box.w / 2 + tol) & (np.abs(v) <= box.h / 2 + tol)
    if np.ndim(inside) == 0:
        return bool(inside)
    return inside


def polygon_area(poly) -> float:
    """Shoelace area (absolute) of a simple polygon given as an (n, 2) array."""
    poly = np.asarray(poly, dtype=np.float64)
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def prune_polygon(pts, eps: float = EPS):
    """Drop repeated vertices and collinear middle vertices."""
    pts = [tuple(p) for p in pts]
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        out = []
        n = len(pts)
        for i in range(n):
            prev, cur, nxt = pts[i - 1], pts[i], pts[(i + 1) % n]
            if math.hypot(cur[0] - prev[0], cur[1] - prev[1]) <= eps:
                changed = True
                continue
            if abs(_cross(prev, cur, nxt)) <= eps:
                changed = True
                continue
            out.append(cur)
        pts = out
    return pts if len(pts) >= 3 else []


def clip_convex(subject, clip, eps: float = EPS):
    """Clip a polygon against a counterclockwise convex polygon (Sutherland-Hodgman)."""
    output = [tuple(p) for p in subject]
    clip = [tuple(p) for p in clip]
    for k in range(len(clip)):
        if not output:
            return []
        a, b = clip[k - 1], clip[k]
        ex, ey = b[0] - a[0], b[1] - a[1]
        norm = math.hypot(ex, ey)

        def side(p):
            return (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / norm

        inp, output = output, []
        prev = inp[-1]
        d_prev = side(prev)
        for cur in inp:
            d_cur = side(cur)
            if d_cur >= -eps:
                if d_prev < -eps:
                    output.append(_lerp(prev, cur, d_prev, d_cur))
                output.append(cur)
            elif d_prev >= -eps:
                output.append(_lerp(prev, cur, d_prev, d_cur))
            prev, d_prev = cur, d_cur
    return output


def _lerp(p, q, dp, dq):
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def intersection_polygon(a: OrientedBox, b: OrientedBox) -> np.ndarray:
    """Intersection of two boxes as a pruned convex polygon, shape (k, 2) with k = 0 or 3..8."""
    poly = prune_polygon(clip_convex(corners(a), corners(b)))
    return np.array(poly, dtype=np.float64).reshape(-1, 2)


def exact_iou(a: OrientedBox, b: OrientedBox) -> float:
    inter = polygon_area(intersection_polygon(a, b))
    union = a.area + b.area - inter
    if inter <= 0.0 or union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def _inside_open(box, xs, ys):
    # in-place variant of contains() for the sampling hot loop
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = xs - box.cx
    dy = ys - box.cy
    u = dx * c
    u += dy * s
    np.abs(u, out=u)
    dx *= -s
    dy *= c
    dy += dx
    np.abs(dy, out=dy)
    return (u <= box.w / 2) & (dy <= box.h / 2)


def mc_iou(a: OrientedBox, b: OrientedBox, n_samples: int, seed: int) -> float:
    """Monte Carlo IoU over the union's bounding rectangle.

    Independent of the polygon clipper; only uses the inside test.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    ax0, ay0, ax1, ay1 = a.aabb()
    bx0, by0, bx1, by1 = b.aabb()
    x0, y0 = min(ax0, bx0), min(ay0, by0)
    x1, y1 = max(ax1, bx1), max(ay1, by1)
    rng = derive_rng(seed, "mc_iou")
    both = either = 0
    remaining = n_samples
    while remaining:
        m = min(remaining, _MC_CHUNK)
        u = rng.random((2, m))
        xs = x0 + (x1 - x0) * u[0]
        ys = y0 + (y1 - y0) * u[1]
        in_a = _inside_open(a, xs, ys)
        in_b = _inside_open(b, xs, ys)
        both += int(np.count_nonzero(in_a & in_b))
        either += int(np.count_nonzero(in_a | in_b))
        remaining -= m
    return both / either if either else 0.0
