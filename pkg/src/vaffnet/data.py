"""Sample representation, dataset layout on disk, normalization and augmentation.

A sample directory holds::

    ivc.png svc.png dvc.png     8-bit grayscale en-face images
    vessel.png faz.png          8-bit masks (binarized at 128)
    junctions.json              {"junctions": [{"x": .., "y": .., "kind": ..}]}

A dataset root holds one such directory per sample plus ``train.txt`` and
``test.txt`` listing sample ids, one per line.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import AnnotationError, GeometryError, IncompleteSampleError, RangeError

BIFURCATION = "bifurcation"
CROSSING = "crossing"
JUNCTION_KINDS = (BIFURCATION, CROSSING)

LAYERS = ("ivc", "svc", "dvc")
SAMPLE_FILES = ("ivc.png", "svc.png", "dvc.png", "vessel.png", "faz.png", "junctions.json")

# junctions closer than this to the border after a rotation lose part of
# their Gaussian support and are dropped
BORDER_MARGIN = 2


@dataclass(frozen=True)
class Junction:
    x: int  # column
    y: int  # row
    kind: str

    def __post_init__(self):
        if self.kind not in JUNCTION_KINDS:
            raise AnnotationError(f"unknown junction kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"x": int(self.x), "y": int(self.y), "kind": self.kind}


@dataclass
class EnfaceTriplet:
    ivc: np.ndarray
    svc: np.ndarray
    dvc: np.ndarray

    def __post_init__(self):
        shapes = {a.shape for a in (self.ivc, self.svc, self.dvc)}
        if len(shapes) != 1 or len(self.ivc.shape) != 2:
            raise GeometryError(f"triplet layers must be equal 2-D images, got {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.ivc.shape

    def stack(self) -> np.ndarray:
        """Layers as a ``[3, H, W]`` array in (ivc, svc, dvc) order."""
        return np.stack([self.ivc, self.svc, self.dvc])


@dataclass
class AnnotationSet:
    vessel_mask: np.ndarray
    faz_mask: np.ndarray
    junctions: list[Junction] = field(default_factory=list)

    def __post_init__(self):
        if self.vessel_mask.shape != self.faz_mask.shape:
            raise GeometryError("vessel and FAZ masks differ in shape")
        seen = set()
        for j in self.junctions:
            if (j.x, j.y) in seen:
                raise AnnotationError(f"duplicate junction at ({j.x}, {j.y})")
            seen.add((j.x, j.y))


@dataclass
class Sample:
    id: str
    triplet: EnfaceTriplet
    annotations: AnnotationSet

    def __post_init__(self):
        if self.triplet.shape != self.annotations.vessel_mask.shape:
            raise GeometryError(
                f"masks {self.annotations.vessel_mask.shape} do not match images {self.triplet.shape}"
            )
        check_junctions(self.annotations.junctions, *self.triplet.shape)

    @property
    def shape(self) -> tuple[int, int]:
        return self.triplet.shape


@dataclass
class AugmentParams:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation_range_deg: tuple[float, float] = (-10.0, 10.0)
    gamma_range: tuple[float, float] = (0.7, 1.9)

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(0.0, 0.0, (0.0, 0.0), (1.0, 1.0))


def check_junctions(junctions: Iterable[Junction], height: int, width: int) -> None:
    for j in junctions:
        if not (0 <= j.x < width and 0 <= j.y < height):
            raise AnnotationError(f"junction ({j.x}, {j.y}) outside {width}x{height} frame")


def normalize(raw: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Map 8-bit intensities in [0, 255] onto [0, 1]."""
    raw = np.asarray(raw)
    if raw.size and (raw.min() < 0 or raw.max() > 255):
        raise RangeError(f"pixel values must lie in [0, 255], got [{raw.min()}, {raw.max()}]")
    return (raw.astype(np.float64) / 255.0).astype(dtype)


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(mask) >= threshold).astype(np.uint8)


def _read_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"))


def _write_gray(path: Path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8), mode="L").save(path)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_junctions(path: str | os.PathLike) -> list[Junction]:
    with open(path) as fh:
        payload = json.load(fh)
    try:
        return [Junction(int(j["x"]), int(j["y"]), j["kind"]) for j in payload["junctions"]]
    except (KeyError, TypeError) as exc:
        raise AnnotationError(f"malformed junction file {path}: {exc}") from exc


def write_junctions(path: str | os.PathLike, junctions: Sequence[Junction]) -> None:
    with open(path, "w") as fh:
        json.dump({"junctions": [j.to_dict() for j in junctions]}, fh, indent=1)


def load_triplet(dir_path: str | os.PathLike) -> EnfaceTriplet:
    """Read only the three en-face layers of a sample directory."""
    d = Path(dir_path)
    missing = [f"{name}.png" for name in LAYERS if not (d / f"{name}.png").is_file()]
    if missing:
        raise IncompleteSampleError(f"incomplete sample {d}: missing {', '.join(missing)}")
    layers = {name: normalize(_read_gray(d / f"{name}.png")) for name in LAYERS}
    if len({img.shape for img in layers.values()}) != 1:
        raise GeometryError(f"layer sizes differ in {d}")
    return EnfaceTriplet(**layers)


def load_sample(dir_path: str | os.PathLike) -> Sample:
    """Read one sample directory; images come back normalized, masks binarized."""
    d = Path(dir_path)
    missing = [name for name in SAMPLE_FILES if not (d / name).is_file()]
    if missing:
        raise IncompleteSampleError(f"incomplete sample {d}: missing {', '.join(missing)}")

    layers = {name: normalize(_read_gray(d / f"{name}.png")) for name in LAYERS}
    shapes = {name: img.shape for name, img in layers.items()}
    if len(set(shapes.values())) != 1:
        raise GeometryError(f"layer sizes differ in {d}: {shapes}")
    vessel = binarize(normalize(_read_gray(d / "vessel.png")))
    faz = binarize(normalize(_read_gray(d / "faz.png")))
    if vessel.shape != layers["ivc"].shape or faz.shape != layers["ivc"].shape:
        raise GeometryError(f"mask size differs from image size in {d}")

    junctions = read_junctions(d / "junctions.json")
    return Sample(
        id=d.name,
        triplet=EnfaceTriplet(**layers),
        annotations=AnnotationSet(vessel, faz, junctions),
    )


def save_sample(sample: Sample, dir_path: str | os.PathLike) -> Path:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for name in LAYERS:
        _write_gray(d / f"{name}.png", to_uint8(getattr(sample.triplet, name)))
    _write_gray(d / "vessel.png", sample.annotations.vessel_mask.astype(np.uint8) * 255)
    _write_gray(d / "faz.png", sample.annotations.faz_mask.astype(np.uint8) * 255)
    write_junctions(d / "junctions.json", sample.annotations.junctions)
    return d


def read_split(root: str | os.PathLike, split: str) -> list[str]:
    path = Path(root) / f"{split}.txt"
    if not path.is_file():
        return []
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def write_split(root: str | os.PathLike, split: str, ids: Sequence[str]) -> None:
    Path(root, f"{split}.txt").write_text("".join(f"{i}\n" for i in ids))


def load_split(root: str | os.PathLike, split: str) -> list[Sample]:
    return [load_sample(Path(root) / sid) for sid in read_split(root, split)]


# --------------------------------------------------------------------------
# augmentation


def _rotation_matrix(angle_deg: float) -> np.ndarray:
    # rotation in (x, y) pixel coordinates; y points down, so a positive angle
    # turns the image clockwise on screen
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def rotate_image(img: np.ndarray, angle_deg: float, order: int) -> np.ndarray:
    """Rotate about the image center; ``order`` 1 is bilinear, 0 nearest."""
    if angle_deg == 0:
        return img.copy()
    h, w = img.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    # affine_transform maps output (row, col) to input (row, col); for the
    # forward rotation R in (x, y), the inverse in (row, col) order is R itself
    mat = _rotation_matrix(angle_deg)
    offset = center - mat @ center
    return ndimage.affine_transform(
        img, mat, offset=offset, order=order, mode="constant", cval=0.0, prefilter=False
    )


def rotate_points(xy: np.ndarray, angle_deg: float, height: int, width: int) -> np.ndarray:
    center = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return (np.asarray(xy, dtype=np.float64) - center) @ _rotation_matrix(angle_deg).T + center


def apply_transform(
    sample: Sample,
    hflip: bool = False,
    vflip: bool = False,
    angle_deg: float = 0.0,
    gamma: float = 1.0,
) -> Sample:
    """Apply one fully specified transform to images, masks and junctions alike."""
    h, w = sample.shape

    def geo(img: np.ndarray, order: int) -> np.ndarray:
        if hflip:
            img = img[:, ::-1]
        if vflip:
            img = img[::-1, :]
        return rotate_image(np.ascontiguousarray(img), angle_deg, order)

    layers = {}
    for name in LAYERS:
        img = geo(getattr(sample.triplet, name).astype(np.float64), order=1)
        if gamma != 1.0:
            img = np.power(np.clip(img, 0.0, 1.0), gamma)
        layers[name] = np.clip(img, 0.0, 1.0).astype(np.float32)

    ann = sample.annotations
    vessel = binarize(geo(ann.vessel_mask.astype(np.float64), order=0))
    faz = binarize(geo(ann.faz_mask.astype(np.float64), order=0))

    junctions = []
    seen = set()
    for j in ann.junctions:
        x, y = j.x, j.y
        if hflip:
            x = w - 1 - x
        if vflip:
            y = h - 1 - y
        if angle_deg != 0:
            xr, yr = rotate_points([[x, y]], angle_deg, h, w)[0]
            x, y = int(round(xr)), int(round(yr))
            if not (BORDER_MARGIN <= x < w - BORDER_MARGIN and BORDER_MARGIN <= y < h - BORDER_MARGIN):
                continue
        if (x, y) in seen:
            continue
        seen.add((x, y))
        junctions.append(Junction(int(x), int(y), j.kind))

    return Sample(
        id=sample.id,
        triplet=EnfaceTriplet(**layers),
        annotations=AnnotationSet(vessel, faz, junctions),
    )


def augment(sample: Sample, params: AugmentParams, rng: np.random.Generator) -> Sample:
    """Draw a random flip/rotation/gamma transform and apply it consistently."""
    hflip = bool(rng.random() < params.hflip_prob)
    vflip = bool(rng.random() < params.vflip_prob)
    lo, hi = params.rotation_range_deg
    angle = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    glo, ghi = params.gamma_range
    gamma = float(rng.uniform(glo, ghi)) if ghi > glo else float(glo)
    return apply_transform(sample, hflip=hflip, vflip=vflip, angle_deg=angle, gamma=gamma)


def with_id(sample: Sample, new_id: str) -> Sample:
    return replace(sample, id=new_id)
