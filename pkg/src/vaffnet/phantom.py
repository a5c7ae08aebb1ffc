"""Synthetic vascular phantoms with exact ground truth.

Vessel trees are grown from the image border toward the fovea as chains of
straight strokes. A tree splits into two children at a branch point, which
is recorded as a bifurcation (three segments meet). Strokes of different
trees may cross transversally; each such intersection is recorded as a
crossing (four segments meet). Strokes never enter the central avascular
disk, never touch their own tree except at shared endpoints, and keep a
minimum distance to every recorded junction so that junctions stay
isolated.

The three en-face layers are rendered from the same geometry with different
contrast profiles: the superficial layer shows vessels brightly, the deep
layer attenuates vessels near the center and shows a dark, sharply bounded
avascular zone, and the inner layer is their pixelwise maximum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .data import (
    BIFURCATION,
    CROSSING,
    AnnotationSet,
    EnfaceTriplet,
    Junction,
    Sample,
)
from .errors import GenerationError


@dataclass
class PhantomConfig:
    image_size: tuple[int, int] = (128, 128)
    n_trees: int = 4
    faz_radius: float = 14.0
    vessel_width_range: tuple[float, float] = (1.5, 3.5)
    branch_prob: float = 0.7
    rng_seed: int = 0
    segment_length: tuple[float, float] = (16.0, 32.0)
    max_depth: int = 5
    junction_separation: float = 12.0
    noise_std: float = 0.02
    min_junctions: int = 0

    def validate(self) -> None:
        h, w = self.image_size
        if h < 16 or w < 16:
            raise GenerationError("image_size must be at least 16x16")
        if not (0 < self.faz_radius < min(h, w) / 4):
            raise GenerationError(f"faz_radius must lie in (0, {min(h, w) / 4})")
        if self.n_trees < 1:
            raise GenerationError("at least one vessel tree is required")
        if not 0.0 <= self.branch_prob <= 1.0:
            raise GenerationError("branch_prob must be a probability")
        lo, hi = self.vessel_width_range
        if not 0 < lo <= hi:
            raise GenerationError("vessel_width_range must be positive and ordered")


class Stroke(NamedTuple):
    tree: int
    p0: tuple[float, float]  # (x, y)
    p1: tuple[float, float]
    width: float


# --------------------------------------------------------------------------
# planar geometry


def _cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


def segment_intersection(p0, p1, q0, q1, eps: float = 1e-9):
    """Interior intersection point of two segments, or None.

    Touching at endpoints and collinear overlap are not reported.
    """
    p0, p1, q0, q1 = (np.asarray(v, dtype=np.float64) for v in (p0, p1, q0, q1))
    r, s = p1 - p0, q1 - q0
    denom = _cross2(r, s)
    if abs(denom) < eps:
        return None
    qp = q0 - p0
    t = _cross2(qp, s) / denom
    u = _cross2(qp, r) / denom
    if eps < t < 1 - eps and eps < u < 1 - eps:
        return p0 + t * r
    return None


def point_segment_distance(pt, a, b) -> float:
    pt, a, b = (np.asarray(v, dtype=np.float64) for v in (pt, a, b))
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((pt - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(pt - (a + t * ab)))


def segment_distance(p0, p1, q0, q1) -> float:
    if segment_intersection(p0, p1, q0, q1) is not None:
        return 0.0
    return min(
        point_segment_distance(p0, q0, q1),
        point_segment_distance(p1, q0, q1),
        point_segment_distance(q0, p0, p1),
        point_segment_distance(q1, p0, p1),
    )


def _angle_between(d1, d2) -> float:
    """Acute angle between two directions, in degrees."""
    c = abs(float(np.dot(d1, d2)) / (np.linalg.norm(d1) * np.linalg.norm(d2)))
    return math.degrees(math.acos(min(1.0, c)))


# --------------------------------------------------------------------------
# tree growth


class _Forest:
    def __init__(self, cfg: PhantomConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        h, w = cfg.image_size
        self.h, self.w = h, w
        self.center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        self.strokes: list[Stroke] = []
        self.bifurcations: list[tuple[float, float]] = []
        self.crossings: list[tuple[float, float]] = []

    @property
    def junction_points(self) -> list[tuple[float, float]]:
        return self.bifurcations + self.crossings

    def _inside(self, p, margin: float) -> bool:
        return margin <= p[0] <= self.w - 1 - margin and margin <= p[1] <= self.h - 1 - margin

    def _clear_of_faz(self, p0, p1, width: float) -> bool:
        keep_out = self.cfg.faz_radius + width / 2 + 2.0
        return point_segment_distance(self.center, p0, p1) > keep_out

    def try_stroke(self, tree: int, p0, p1, width: float, parent: int | None, terminal_start: bool):
        """Validate a candidate stroke; returns the crossings it creates or None."""
        sep = self.cfg.junction_separation
        p0 = np.asarray(p0, dtype=np.float64)
        p1 = np.asarray(p1, dtype=np.float64)
        if not terminal_start and not self._inside(p0, 0):
            return None
        if not self._clear_of_faz(p0, p1, width):
            return None

        new_crossings = []
        for idx, st in enumerate(self.strokes):
            if st.tree == tree:
                if idx == parent or self._shares_endpoint(st, p0):
                    # siblings and parent meet at the branch point only
                    if self._overlaps_near_start(st, p0, p1):
                        return None
                    continue
                if segment_distance(p0, p1, st.p0, st.p1) < width + st.width + 2.0:
                    return None
                continue
            hit = segment_intersection(p0, p1, st.p0, st.p1)
            if hit is None:
                if segment_distance(p0, p1, st.p0, st.p1) < sep / 2:
                    return None
                continue
            if _angle_between(p1 - p0, np.subtract(st.p1, st.p0)) < 35.0:
                return None
            # crossing must sit inside both strokes, away from their ends
            for end in (p0, p1, st.p0, st.p1):
                if np.linalg.norm(hit - np.asarray(end)) < sep / 3:
                    return None
            new_crossings.append((float(hit[0]), float(hit[1])))

        # new crossings and the stroke end must keep clear of existing junctions
        existing = self.junction_points
        for c in new_crossings:
            if not self._inside(c, 3):
                return None
            if any(math.dist(c, j) < sep for j in existing):
                return None
        for a in range(len(new_crossings)):
            for b in range(a + 1, len(new_crossings)):
                if math.dist(new_crossings[a], new_crossings[b]) < sep:
                    return None
        for j in existing:
            if parent is not None and math.dist(j, p0) < 1e-9:
                continue
            if point_segment_distance(j, p0, p1) < sep / 2:
                return None
        return new_crossings

    @staticmethod
    def _shares_endpoint(st: Stroke, p0) -> bool:
        return math.dist(st.p1, p0) < 1e-9 or math.dist(st.p0, p0) < 1e-9

    @staticmethod
    def _overlaps_near_start(st: Stroke, p0, p1) -> bool:
        # siblings diverging at too small an angle merge visually
        other = np.subtract(st.p1, st.p0) if math.dist(st.p0, p0) < 1e-9 else np.subtract(st.p0, st.p1)
        mine = np.asarray(p1) - np.asarray(p0)
        c = float(np.dot(other, mine)) / (np.linalg.norm(other) * np.linalg.norm(mine))
        return c > math.cos(math.radians(25.0))

    def add(self, tree: int, p0, p1, width: float, crossings) -> int:
        self.strokes.append(Stroke(tree, tuple(map(float, p0)), tuple(map(float, p1)), float(width)))
        self.crossings.extend(crossings)
        return len(self.strokes) - 1

    def _root(self, tree: int):
        """Pick a start point on the border heading roughly toward the center."""
        rng = self.rng
        for _ in range(200):
            side = rng.integers(4)
            if side == 0:
                p0 = (rng.uniform(0, self.w - 1), 0.0)
            elif side == 1:
                p0 = (rng.uniform(0, self.w - 1), float(self.h - 1))
            elif side == 2:
                p0 = (0.0, rng.uniform(0, self.h - 1))
            else:
                p0 = (float(self.w - 1), rng.uniform(0, self.h - 1))
            # aim at a random point on a ring around the fovea so that trees
            # entering from different sides tend to cross
            phi = rng.uniform(0, 2 * math.pi)
            ring = self.center + 2.2 * self.cfg.faz_radius * np.array([math.cos(phi), math.sin(phi)])
            to_c = ring - np.asarray(p0)
            heading = math.atan2(to_c[1], to_c[0]) + rng.uniform(-0.2, 0.2)
            length = rng.uniform(*self.cfg.segment_length) * 1.3
            p1 = np.asarray(p0) + length * np.array([math.cos(heading), math.sin(heading)])
            width = self.cfg.vessel_width_range[1]
            if not self._inside(p1, 4):
                continue
            crossings = self.try_stroke(tree, p0, p1, width, None, terminal_start=True)
            if crossings is None:
                continue
            return self.add(tree, p0, p1, width, crossings), heading
        return None

    def grow_tree(self, tree: int) -> bool:
        root = self._root(tree)
        if root is None:
            return False
        cfg, rng = self.cfg, self.rng
        wmin, wmax = cfg.vessel_width_range
        frontier = [(root[0], root[1], 1)]
        while frontier:
            idx, heading, depth = frontier.pop(0)
            if depth >= cfg.max_depth:
                continue
            parent = self.strokes[idx]
            start = np.asarray(parent.p1)
            width = max(wmin, parent.width * 0.8)
            want_branch = rng.random() < cfg.branch_prob
            if want_branch:
                spread = rng.uniform(0.5, 0.9)
                headings = [heading - spread + rng.uniform(-0.1, 0.1), heading + spread + rng.uniform(-0.1, 0.1)]
            else:
                headings = [heading + rng.uniform(-0.35, 0.35)]
            children = []
            for hd in headings:
                placed = None
                for _ in range(6):
                    length = rng.uniform(*cfg.segment_length)
                    h2 = hd + rng.uniform(-0.15, 0.15)
                    end = start + length * np.array([math.cos(h2), math.sin(h2)])
                    if not self._inside(end, 3):
                        continue
                    if want_branch and any(math.dist(end, j) < cfg.junction_separation for j in self.junction_points):
                        continue
                    crossings = self.try_stroke(tree, start, end, width, idx, terminal_start=False)
                    if crossings is None:
                        continue
                    if want_branch and any(math.dist(start, c) < cfg.junction_separation for c in crossings):
                        continue
                    placed = (end, h2, crossings)
                    break
                if placed is not None:
                    end, h2, crossings = placed
                    if want_branch and len(children) == 0 and not self._branch_point_ok(start):
                        break
                    cid = self.add(tree, start, end, width, crossings)
                    children.append((cid, h2))
            if len(children) == 2:
                self.bifurcations.append((float(start[0]), float(start[1])))
            frontier.extend((cid, h2, depth + 1) for cid, h2 in children)
        return True

    def _branch_point_ok(self, p) -> bool:
        sep = self.cfg.junction_separation
        if not self._inside(p, 3):
            return False
        return all(math.dist(p, j) >= sep for j in self.junction_points)


def phantom_strokes(cfg: PhantomConfig) -> tuple[list[Stroke], list[tuple[float, float]], list[tuple[float, float]]]:
    """Grow the vessel forest for ``cfg``.

    Returns the strokes plus the continuous-coordinate bifurcation and
    crossing points recorded while growing.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    forest = _Forest(cfg, rng)
    for tree in range(cfg.n_trees):
        if not forest.grow_tree(tree):
            raise GenerationError(f"could not place vessel tree {tree} in a {cfg.image_size} frame")
    return forest.strokes, forest.bifurcations, forest.crossings


def _render_strokes(strokes: list[Stroke], h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    for st in strokes:
        r = st.width / 2.0
        x0, y0 = st.p0
        x1, y1 = st.p1
        xmin = max(int(math.floor(min(x0, x1) - r - 1)), 0)
        xmax = min(int(math.ceil(max(x0, x1) + r + 1)), w - 1)
        ymin = max(int(math.floor(min(y0, y1) - r - 1)), 0)
        ymax = min(int(math.ceil(max(y0, y1) + r + 1)), h - 1)
        if xmin > xmax or ymin > ymax:
            continue
        yy, xx = np.mgrid[ymin : ymax + 1, xmin : xmax + 1].astype(np.float64)
        dx, dy = x1 - x0, y1 - y0
        denom = dx * dx + dy * dy
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / denom, 0.0, 1.0) if denom else np.zeros_like(xx)
        dist2 = (xx - (x0 + t * dx)) ** 2 + (yy - (y0 + t * dy)) ** 2
        mask[ymin : ymax + 1, xmin : xmax + 1] |= dist2 <= r * r
    return mask


def _to_pixel_junctions(points, kind: str, h: int, w: int) -> list[Junction]:
    out = []
    for x, y in points:
        xi = int(min(max(round(x), 0), w - 1))
        yi = int(min(max(round(y), 0), h - 1))
        out.append(Junction(xi, yi, kind))
    return out


def generate_phantom(cfg: PhantomConfig, sample_id: str | None = None) -> Sample:
    """Render a phantom sample; identical configs give bitwise-identical output."""
    strokes, bifs, crossings = phantom_strokes(cfg)
    h, w = cfg.image_size
    junctions = _to_pixel_junctions(bifs, BIFURCATION, h, w) + _to_pixel_junctions(crossings, CROSSING, h, w)
    if len(junctions) < cfg.min_junctions:
        raise GenerationError(
            f"generated {len(junctions)} junctions, fewer than the required {cfg.min_junctions}"
        )

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    radius = np.hypot(xx - cx, yy - cy)
    faz = radius <= cfg.faz_radius
    vessel = _render_strokes(strokes, h, w) & ~faz

    # noise drawn from a stream derived from the seed, independent of growth
    noise_rng = np.random.default_rng([cfg.rng_seed, 1])
    vessel_f = ndimage.gaussian_filter(vessel.astype(np.float64), 0.5)
    texture = ndimage.gaussian_filter(noise_rng.standard_normal((h, w)), 1.5)
    texture = 0.05 * texture / (np.abs(texture).max() + 1e-12)

    svc = 0.12 + texture + 0.8 * vessel_f
    svc = np.where(faz, 0.08, svc)

    # deep layer: vessels fade toward the fovea, avascular zone sharply dark
    fade = np.clip((radius - cfg.faz_radius) / (2.0 * cfg.faz_radius), 0.0, 1.0)
    dvc = 0.35 + texture + 0.35 * vessel_f * fade
    dvc = np.where(faz, 0.03, dvc)

    svc = svc + cfg.noise_std * noise_rng.standard_normal((h, w))
    dvc = dvc + cfg.noise_std * noise_rng.standard_normal((h, w))
    svc = np.clip(svc, 0.0, 1.0).astype(np.float32)
    dvc = np.clip(dvc, 0.0, 1.0).astype(np.float32)
    ivc = np.maximum(svc, dvc)

    return Sample(
        id=sample_id or f"phantom_{cfg.rng_seed:05d}",
        triplet=EnfaceTriplet(ivc=ivc, svc=svc, dvc=dvc),
        annotations=AnnotationSet(
            vessel_mask=vessel.astype(np.uint8),
            faz_mask=faz.astype(np.uint8),
            junctions=junctions,
        ),
    )
