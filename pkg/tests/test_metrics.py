import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vaffnet.codec import encode_grid, encode_heatmap
from vaffnet.data import AnnotationSet, BIFURCATION, CROSSING, Junction
from vaffnet.errors import GeometryError
from vaffnet.metrics import (
    COLUMNS,
    MetricsReport,
    bacc,
    bacc_with_flag,
    classification_metrics,
    detection_metrics,
    dice,
    evaluate_sample,
    format_mean_std,
    match_greedy,
    match_junctions,
    read_report,
    summarize,
    write_report,
)
from vaffnet.network import NetworkOutput


def J(x, y, kind=BIFURCATION):
    return Junction(x, y, kind)


def test_dice_examples():
    a = np.zeros((6, 8), bool)
    a[1:3, 1:5] = True
    assert dice(a, a) == 1.0
    b = np.zeros_like(a)
    b[1:3, 3:7] = True
    assert dice(a, b) == 0.5
    c = np.zeros_like(a)
    c[4:, :] = True
    assert dice(a, c) == 0.0
    assert dice(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    with pytest.raises(GeometryError):
        dice(np.zeros((3, 3)), np.zeros((3, 4)))


def test_bacc_examples():
    gt = np.zeros((4, 4), bool)
    gt[0, :] = True
    pred = np.zeros_like(gt)
    pred[0, :2] = True
    pred[3, 3] = True
    assert bacc(pred, gt) == pytest.approx((0.5 + 11 / 12) / 2, abs=1e-12)
    assert bacc(pred, gt) == pytest.approx(0.7083, abs=1e-4)
    half = np.zeros((4, 4), bool)
    half[:2] = True
    assert bacc(np.zeros_like(half), half) == 0.5
    assert bacc(half, half) == 1.0


def test_bacc_conventions():
    empty = np.zeros((3, 3), bool)
    assert bacc_with_flag(empty, empty) == (1.0, False)
    pred = empty.copy()
    pred[0, 0] = True
    value, flagged = bacc_with_flag(pred, empty)
    assert flagged and value == pytest.approx(8 / 9)


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dice_bacc_pixel_oracle(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.random((16, 16)) < rng.random(), rng.random((16, 16)) < rng.random()
    tp = fp = tn = fn = 0
    for a, b in zip(p.ravel(), g.ravel()):
        tp += a and b
        fp += a and not b
        tn += (not a) and (not b)
        fn += (not a) and b
    if 2 * tp + fp + fn:
        assert dice(p, g) == 2 * tp / (2 * tp + fp + fn)
    if tp + fn and tn + fp:
        assert bacc(p, g) == (tp / (tp + fn) + tn / (tn + fp)) / 2


def test_match_examples():
    m = match_junctions([J(13, 14)], [J(10, 10)], 5)
    assert m.pairs == [(0, 0, 5.0)]
    m = match_junctions([], [J(1, 1), J(5, 5)])
    assert m.pairs == [] and m.unmatched_gt == [0, 1]
    for method in ("optimal", "greedy"):
        m = match_junctions([J(13, 10), J(7, 10)], [J(10, 10)], 5, method=method)
        assert [(i, j) for i, j, _ in m.pairs] == [(0, 0)] and m.unmatched_pred == [1]


def exhaustive(pred, gt, tol):
    """Best (cardinality, -distance) over all injective assignments."""
    d = np.array([[np.hypot(p.x - g.x, p.y - g.y) for g in gt] for p in pred]).reshape(len(pred), len(gt))
    best = (0, 0.0)
    small, big = (pred, gt) if len(pred) <= len(gt) else (gt, pred)
    for perm in itertools.permutations(range(len(big)), len(small)):
        pairs = [(i, j) if len(pred) <= len(gt) else (j, i) for i, j in enumerate(perm)]
        ok = [d[i, j] for i, j in pairs if d[i, j] <= tol]
        best = max(best, (len(ok), -sum(ok)))
    return best


def random_points(rng, n):
    return [J(int(rng.integers(0, 14)), int(rng.integers(0, 14))) for _ in range(n)]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matching_cardinality_is_optimal(seed):
    rng = np.random.default_rng(seed)
    pred = random_points(rng, int(rng.integers(0, 7)))
    gt = random_points(rng, int(rng.integers(0, 7)))
    m = match_junctions(pred, gt, 5)
    card, neg = exhaustive(pred, gt, 5)
    assert len(m.pairs) == card
    assert sum(d for _, _, d in m.pairs) == pytest.approx(-neg, abs=1e-9)
    assert len({i for i, _, _ in m.pairs}) == len(m.pairs) == len({j for _, j, _ in m.pairs})
    assert all(d <= 5 for _, _, d in m.pairs)


def test_greedy_can_lose_a_pair():
    # nearest-first greedily takes the middle pair and strands both ends
    pred = [J(0, 0), J(4, 0)]
    gt = [J(3, 0), J(7, 0)]
    assert len(match_greedy(pred, gt, 3).pairs) == 1
    assert len(match_junctions(pred, gt, 3).pairs) == 2


def test_detection_examples():
    m = match_junctions([J(1, 1), J(20, 20)], [J(1, 1), J(20, 20)])
    assert detection_metrics(m) == {"re": 1.0, "pr": 1.0, "f1": 1.0}
    m = match_junctions([J(1, 1), J(20, 20), J(40, 1)], [J(1, 1), J(20, 20), J(1, 40)])
    d = detection_metrics(m)
    assert d["re"] == pytest.approx(2 / 3) and d["f1"] == pytest.approx(2 / 3)
    assert detection_metrics(match_junctions([], [])) == {"re": None, "pr": None, "f1": None}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_detection_f1_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = random_points(rng, int(rng.integers(1, 6))), random_points(rng, int(rng.integers(1, 6)))
    f_ab = detection_metrics(match_junctions(a, b))["f1"]
    f_ba = detection_metrics(match_junctions(b, a))["f1"]
    assert f_ab == pytest.approx(f_ba)


def test_classification_examples():
    gt = [J(1, 1), J(20, 20)]
    assert classification_metrics(match_junctions(gt, gt), gt, gt)["re"] == 1.0
    pred, gt = [J(1, 1, CROSSING)], [J(1, 1)]
    assert classification_metrics(match_junctions(pred, gt), pred, gt)["re"] == 0.0
    gt = [J(1, 1), J(20, 20), J(40, 40)]
    pred = [J(1, 1), J(20, 20), J(40, 40, CROSSING)]
    c = classification_metrics(match_junctions(pred, gt), pred, gt)
    assert c["re"] == pytest.approx(2 / 3) and c["pr"] == 1.0 and c["f1"] == pytest.approx(0.8)


def perfect_output(ann, h, w):
    return NetworkOutput(
        rv_prob=ann.vessel_mask.astype(np.float32),
        faz_prob=ann.faz_mask.astype(np.float32),
        rvj_heatmap=encode_heatmap(ann.junctions, h, w),
        rvj_grid=encode_grid(ann.junctions, h, w),
        gates={},
    )


def test_evaluate_self_and_tie_rule(small_phantoms):
    s = small_phantoms[0]
    h, w = s.shape
    r = evaluate_sample(perfect_output(s.annotations, h, w), s.annotations)
    assert all(v == 1.0 for v in r.row().values() if v is not None)
    half = perfect_output(s.annotations, h, w)
    half.rv_prob = np.full((h, w), 0.5, np.float32)
    r = evaluate_sample(half, s.annotations)
    assert r.rv["dice"] == pytest.approx(dice(np.ones((h, w)), s.annotations.vessel_mask))


def test_report_file(tmp_path, small_phantoms):
    reports = []
    for s in small_phantoms:
        out = perfect_output(s.annotations, *s.shape)
        out.rv_prob = np.zeros(s.shape, np.float32)
        reports.append(evaluate_sample(out, s.annotations, sample_id=s.id))
    path = write_report(tmp_path / "r.tsv", reports)
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["sample", *COLUMNS]
    assert lines[-1].startswith("mean ± std (%)\t")
    rows = read_report(path)
    assert [r["rv_dice"] for r in rows] == [0.0, 0.0]
    assert summarize(reports)["faz_dice"] == (1.0, 0.0)


def test_mean_std_format():
    assert format_mean_std(0.7658, 0.0474) == "76.58 ± 4.74"
    assert format_mean_std(None, None) == "null"
    reps = [MetricsReport({"dice": v, "bacc": v}, {"dice": v, "bacc": v}, {"re": v, "f1": None}, {"re": None, "f1": None}) for v in (0.5, 1.0)]
    s = summarize(reps)
    assert s["rv_dice"] == pytest.approx((0.75, 0.25))
    assert s["rvj_det_f1"] == (None, None)
