"""Junction target encoding (Gaussian heatmap, S x S grid) and decoding.

Grid tensors are laid out ``[S, S, 4]`` with channels
``(confidence, bifurcation, crossing, background)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .data import BIFURCATION, CROSSING, Junction

DEFAULT_SIGMA = 2.5
DEFAULT_CELL_SIZE = 8

CONF, BIF, CROSS, BG = range(4)
_CLASS_CHANNEL = {BIFURCATION: BIF, CROSSING: CROSS}


@dataclass(frozen=True)
class DecodeParams:
    peak_threshold: float = 0.4
    nms_radius: float = 3.0
    confidence_threshold: float = 0.5

    def __post_init__(self):
        if not (0 < self.peak_threshold < 1 and 0 < self.confidence_threshold < 1):
            raise ValueError("decode thresholds must lie in (0, 1)")
        if self.nms_radius < 1:
            raise ValueError("nms_radius must be at least 1")


def grid_size(height: int, width: int, cell_size: int = DEFAULT_CELL_SIZE) -> tuple[int, int]:
    return math.ceil(height / cell_size), math.ceil(width / cell_size)


def encode_heatmap(
    junctions: Sequence[Junction], height: int, width: int, sigma: float = DEFAULT_SIGMA
) -> np.ndarray:
    """Peak-1 Gaussian bump per junction, overlapping bumps combined by max."""
    heat = np.zeros((height, width), dtype=np.float32)
    if not junctions:
        return heat
    # bumps are negligible beyond a few sigma; evaluate locally
    radius = int(math.ceil(4 * sigma))
    for j in junctions:
        y0, y1 = max(j.y - radius, 0), min(j.y + radius + 1, height)
        x0, x1 = max(j.x - radius, 0), min(j.x + radius + 1, width)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        g = np.exp(-((xx - j.x) ** 2 + (yy - j.y) ** 2) / (2.0 * sigma * sigma))
        np.maximum(heat[y0:y1, x0:x1], g.astype(np.float32), out=heat[y0:y1, x0:x1])
    return heat


def encode_grid(
    junctions: Sequence[Junction], height: int, width: int, cell_size: int = DEFAULT_CELL_SIZE
) -> np.ndarray:
    """One-hot cell targets; a cell with several junctions keeps the one nearest its center."""
    rows, cols = grid_size(height, width, cell_size)
    grid = np.zeros((rows, cols, 4), dtype=np.float32)
    grid[..., BG] = 1.0
    owner: dict[tuple[int, int], tuple[float, Junction]] = {}
    for j in junctions:
        cell = (j.y // cell_size, j.x // cell_size)
        # center of the nominal cell, partial edge cells included
        cy = cell[0] * cell_size + (cell_size - 1) / 2.0
        cx = cell[1] * cell_size + (cell_size - 1) / 2.0
        d = (j.x - cx) ** 2 + (j.y - cy) ** 2
        if cell not in owner or d < owner[cell][0]:
            owner[cell] = (d, j)
    for (r, c), (_, j) in owner.items():
        grid[r, c] = 0.0
        grid[r, c, CONF] = 1.0
        grid[r, c, _CLASS_CHANNEL[j.kind]] = 1.0
    return grid


def extract_peaks(heatmap: np.ndarray, params: DecodeParams = DecodeParams()) -> list[tuple[int, int, float]]:
    """Strict 8-neighbour local maxima above threshold, thinned by greedy NMS.

    Returns ``(x, y, score)`` tuples in descending score order.
    """
    h = np.asarray(heatmap, dtype=np.float64)
    footprint = np.ones((3, 3), dtype=bool)
    footprint[1, 1] = False
    neigh = ndimage.maximum_filter(h, footprint=footprint, mode="constant", cval=-np.inf)
    ys, xs = np.nonzero((h > neigh) & (h >= params.peak_threshold))
    if len(ys) == 0:
        return []
    scores = h[ys, xs]
    # descending score; ties resolved in raster order
    order = np.lexsort((xs, ys, -scores))
    kept: list[tuple[int, int, float]] = []
    r2 = params.nms_radius ** 2
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if all((x - kx) ** 2 + (y - ky) ** 2 > r2 for kx, ky, _ in kept):
            kept.append((x, y, float(scores[i])))
    return kept


def assemble_junctions(
    peaks: Sequence[tuple[int, int, float]],
    grid_pred: np.ndarray,
    params: DecodeParams = DecodeParams(),
    cell_size: int = DEFAULT_CELL_SIZE,
) -> list[Junction]:
    """Type each peak by its containing grid cell; drop peaks the grid rejects."""
    grid_pred = np.asarray(grid_pred)
    out = []
    for x, y, _ in peaks:
        cell = grid_pred[y // cell_size, x // cell_size]
        if cell[CONF] < params.confidence_threshold:
            continue
        # np.argmax returns the first maximum: bifurcation wins ties
        cls = int(np.argmax(cell[BIF:BG + 1])) + BIF
        if cls == BIF:
            out.append(Junction(x, y, BIFURCATION))
        elif cls == CROSS:
            out.append(Junction(x, y, CROSSING))
    return out


def decode(
    heatmap: np.ndarray,
    grid_pred: np.ndarray,
    params: DecodeParams = DecodeParams(),
    cell_size: int = DEFAULT_CELL_SIZE,
) -> list[Junction]:
    return assemble_junctions(extract_peaks(heatmap, params), grid_pred, params, cell_size)


def round_trip(
    junctions: Sequence[Junction],
    height: int,
    width: int,
    sigma: float = DEFAULT_SIGMA,
    cell_size: int = DEFAULT_CELL_SIZE,
    params: DecodeParams = DecodeParams(),
) -> list[Junction]:
    heat = encode_heatmap(junctions, height, width, sigma)
    grid = encode_grid(junctions, height, width, cell_size)
    return decode(heat, grid, params, cell_size)
