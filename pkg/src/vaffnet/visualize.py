"""Static overlay of predictions on the inner-layer image."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .data import BIFURCATION, _read_gray, load_sample, read_junctions

VESSEL_TINT = (0, 200, 255)
FAZ_HIT_TINT = (255, 220, 0)
FAZ_OVER_TINT = (0, 220, 0)
FAZ_UNDER_TINT = (255, 40, 40)
BIFURCATION_COLOR = (255, 255, 0)
CROSSING_COLOR = (255, 0, 255)


def _tint(rgb: np.ndarray, mask: np.ndarray, color, alpha: float) -> None:
    rgb[mask] = (1 - alpha) * rgb[mask] + alpha * np.asarray(color, dtype=np.float64)


def render_overlay(
    ivc: np.ndarray,
    vessel_pred: np.ndarray,
    faz_pred: np.ndarray,
    faz_gt: np.ndarray,
    junctions,
    scale: int = 3,
) -> Image.Image:
    """Compose an RGB overlay.

    Predicted vessels are tinted cyan. FAZ pixels are tinted by agreement
    with the ground truth: yellow where both agree, green for
    over-segmentation, red for under-segmentation. Bifurcations are drawn
    as yellow circles and crossings as magenta squares.
    """
    gray = np.clip(np.asarray(ivc, dtype=np.float64), 0, 1) * 255
    rgb = np.repeat(gray[..., None], 3, axis=2)
    vessel_pred = np.asarray(vessel_pred, dtype=bool)
    faz_pred = np.asarray(faz_pred, dtype=bool)
    faz_gt = np.asarray(faz_gt, dtype=bool)
    _tint(rgb, vessel_pred, VESSEL_TINT, 0.6)
    _tint(rgb, faz_pred & faz_gt, FAZ_HIT_TINT, 0.35)
    _tint(rgb, faz_pred & ~faz_gt, FAZ_OVER_TINT, 0.6)
    _tint(rgb, ~faz_pred & faz_gt, FAZ_UNDER_TINT, 0.6)

    h, w = gray.shape
    im = Image.fromarray(rgb.astype(np.uint8), mode="RGB").resize((w * scale, h * scale), Image.NEAREST)
    draw = ImageDraw.Draw(im)
    r = 2 * scale
    for j in junctions:
        cx, cy = (j.x + 0.5) * scale, (j.y + 0.5) * scale
        box = [cx - r, cy - r, cx + r, cy + r]
        if j.kind == BIFURCATION:
            draw.ellipse(box, outline=BIFURCATION_COLOR, width=2)
        else:
            draw.rectangle(box, outline=CROSSING_COLOR, width=2)
    return im


def visualize(
    sample_dir: str | os.PathLike,
    pred_dir: str | os.PathLike,
    out_path: str | os.PathLike,
    threshold: float = 0.5,
    scale: int = 3,
) -> Path:
    """Write the overlay for a sample directory and a prediction directory."""
    sample = load_sample(sample_dir)
    pred = Path(pred_dir)
    cut = threshold * 255
    rv = _read_gray(pred / "rv_prob.png") >= cut
    faz = _read_gray(pred / "faz_prob.png") >= cut
    junctions = read_junctions(pred / "junctions.json")
    im = render_overlay(sample.triplet.ivc, rv, faz, sample.annotations.faz_mask, junctions, scale)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    im.save(out_path)
    return out_path
