import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vaffnet.data import (
    AnnotationSet,
    AugmentParams,
    BIFURCATION,
    CROSSING,
    EnfaceTriplet,
    Junction,
    Sample,
    apply_transform,
    augment,
    load_sample,
    normalize,
    save_sample,
)
from vaffnet.errors import AnnotationError, GeometryError, IncompleteSampleError, RangeError
from vaffnet.phantom import PhantomConfig, generate_phantom


def blank_sample(h=32, w=32, junctions=()):
    z = np.zeros((h, w), np.float32)
    return Sample("s", EnfaceTriplet(z, z, z), AnnotationSet(z.astype(bool), z.astype(bool), list(junctions)))


def test_normalize_examples():
    raw = np.array([[0, 255, 51]], dtype=np.uint8)
    out = normalize(raw)
    assert out.dtype == np.float32
    np.testing.assert_allclose(out, [[0.0, 1.0, 0.2]], rtol=1e-7)


def test_normalize_range_error():
    with pytest.raises(RangeError):
        normalize(np.array([[-1, 3]]))
    with pytest.raises(RangeError):
        normalize(np.array([[256]]))


@given(st.lists(st.integers(0, 255), min_size=2, max_size=50))
def test_normalize_preserves_argmax(vals):
    raw = np.array(vals)
    assert np.argmax(normalize(raw)) == np.argmax(raw)


def test_triplet_shape_mismatch():
    with pytest.raises(GeometryError):
        EnfaceTriplet(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((5, 4)))


def test_junction_bounds_and_duplicates():
    with pytest.raises(AnnotationError):
        blank_sample(junctions=[Junction(32, 0, BIFURCATION)])
    with pytest.raises(AnnotationError):
        blank_sample(junctions=[Junction(3, 3, BIFURCATION), Junction(3, 3, CROSSING)])


def test_sample_roundtrip_on_disk(tmp_path):
    s = generate_phantom(PhantomConfig(image_size=(64, 64), faz_radius=8, rng_seed=2))
    save_sample(s, tmp_path / "a")
    back = load_sample(tmp_path / "a")
    assert back.shape == (64, 64)
    assert back.annotations.junctions == s.annotations.junctions
    np.testing.assert_array_equal(back.annotations.vessel_mask, s.annotations.vessel_mask)
    # images pass through 8 bits
    assert np.max(np.abs(back.triplet.svc - s.triplet.svc)) <= 0.5 / 255 + 1e-6


def test_degenerate_sample_is_valid(tmp_path):
    save_sample(blank_sample(), tmp_path / "b")
    s = load_sample(tmp_path / "b")
    assert s.annotations.junctions == [] and not s.annotations.vessel_mask.any()


def test_missing_file_and_mismatch(tmp_path):
    s = blank_sample()
    d = save_sample(s, tmp_path / "c")
    (d / "dvc.png").unlink()
    with pytest.raises(IncompleteSampleError):
        load_sample(d)
    from PIL import Image

    d = save_sample(s, tmp_path / "d")
    Image.fromarray(np.zeros((48, 48), np.uint8)).save(d / "svc.png")
    with pytest.raises(GeometryError):
        load_sample(d)


def test_hflip_formula():
    s = blank_sample(h=20, w=30, junctions=[Junction(4, 7, BIFURCATION)])
    out = apply_transform(s, hflip=True)
    assert out.annotations.junctions == [Junction(30 - 1 - 4, 7, BIFURCATION)]


def test_identity_params_are_identity():
    s = generate_phantom(PhantomConfig(image_size=(64, 64), faz_radius=8, rng_seed=5))
    out = augment(s, AugmentParams.identity(), np.random.default_rng(0))
    for name in ("ivc", "svc", "dvc"):
        np.testing.assert_array_equal(getattr(out.triplet, name), getattr(s.triplet, name))
    np.testing.assert_array_equal(out.annotations.vessel_mask, s.annotations.vessel_mask)
    np.testing.assert_array_equal(out.annotations.faz_mask, s.annotations.faz_mask)
    assert out.annotations.junctions == s.annotations.junctions


def test_default_rotation_range_excludes_90():
    p = AugmentParams()
    assert tuple(p.rotation_range_deg) == (-10, 10) and tuple(p.gamma_range) == (0.7, 1.9)
    assert not (p.rotation_range_deg[0] <= 90 <= p.rotation_range_deg[1])


@settings(max_examples=60, deadline=None)
@given(
    st.booleans(),
    st.booleans(),
    st.floats(-10, 10),
    st.lists(st.tuples(st.integers(4, 59), st.integers(4, 59)), min_size=1, max_size=6, unique=True),
)
def test_augmentation_consistency(hflip, vflip, angle, pts):
    """Moving the junction list agrees with moving a dot mask to within 1 px."""
    h = w = 64
    junctions = [Junction(x, y, BIFURCATION) for x, y in pts]
    s = blank_sample(h, w, junctions)
    out = apply_transform(s, hflip=hflip, vflip=vflip, angle_deg=angle)
    moved = {(j.x, j.y) for j in out.annotations.junctions}
    for j in junctions:
        dot = np.zeros((h, w), np.float32)
        dot[j.y, j.x] = 1.0
        dot_sample = Sample("d", EnfaceTriplet(dot, dot, dot), AnnotationSet(dot > 0, dot > 0, []))
        img = apply_transform(dot_sample, hflip=hflip, vflip=vflip, angle_deg=angle).triplet.ivc
        if img.max() <= 0:
            continue
        ys, xs = np.nonzero(img == img.max())
        cy, cx = ys.mean(), xs.mean()
        near = [m for m in moved if abs(m[0] - cx) <= 1 and abs(m[1] - cy) <= 1]
        inside = 2 <= cx < w - 2 and 2 <= cy < h - 2
        if inside:
            assert near, (j, cx, cy, moved)


def test_augment_keeps_masks_binary(small_phantoms):
    out = augment(small_phantoms[0], AugmentParams(), np.random.default_rng(3))
    for m in (out.annotations.vessel_mask, out.annotations.faz_mask):
        assert set(np.unique(m)) <= {0, 1}
    for name in ("ivc", "svc", "dvc"):
        v = getattr(out.triplet, name)
        assert v.min() >= 0 and v.max() <= 1
