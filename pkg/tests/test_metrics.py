import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_recall, cell_mask
from refrel.errors import ShapeMismatchError
from refrel.metrics import (
    MetricsConfig,
    box_to_mask,
    gt_union_mask,
    heatmap_iou,
    mean_iou_report,
    recall_at_k,
    role_report,
)


def test_config_defaults_and_validation():
    c = MetricsConfig()
    assert (c.heatmap_size, c.recall_iou_threshold, c.recall_ranks) == (14, 0.5, (1, 5, 50))
    with pytest.raises(ValueError):
        MetricsConfig(heatmap_size=0)
    with pytest.raises(ValueError):
        MetricsConfig(recall_iou_threshold=1.0)


def test_box_to_mask_examples():
    assert box_to_mask((0, 0, 64, 48), 64, 48, 14).all()
    m = box_to_mask((0, 0, 32, 24), 64, 48, 14)
    assert m[:7, :7].all() and m.sum() == 49


@given(st.integers(1, 20), st.floats(0, 60), st.floats(0, 60), st.floats(0.5, 64), st.floats(0.5, 64))
def test_box_to_mask_matches_cell_overlap_oracle(L, x, y, w, h):
    box = (x, y, min(x + w, 64.0), min(y + h, 64.0))
    if box[2] <= box[0] or box[3] <= box[1]:
        return
    np.testing.assert_array_equal(box_to_mask(box, 64, 64, L), cell_mask(box, 64, 64, L))


@given(st.integers(1, 30))
def test_full_image_mask_is_all_ones(L):
    assert box_to_mask((0, 0, 37, 23), 37, 23, L).all()


def test_heatmap_iou_hand_counts():
    full = np.ones((14, 14))
    half = np.zeros((14, 14))
    half[:7] = 1
    assert heatmap_iou(half, full) == 98 / 196 == 0.5
    assert heatmap_iou(full, full) == 1.0
    a, b = np.zeros((14, 14)), np.zeros((14, 14))
    a[:2, :2] = 1
    b[5:, 5:] = 1
    assert heatmap_iou(a, b) == 0.0
    a[1:3, 1:3] = 1  # 7 cells; c has 8; they share 6 of 9
    c = np.zeros((14, 14))
    c[0:3, 0:3] = 1
    c[0, 0] = 0
    assert heatmap_iou(a, c) == 6 / 9
    assert heatmap_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_heatmap_iou_size_mismatch():
    with pytest.raises(ShapeMismatchError):
        heatmap_iou(np.ones((14, 14)), np.ones((7, 7)))


@given(st.integers(0, 2**32 - 1))
def test_heatmap_iou_bounds(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((6, 6)) > 0.5
    b = rng.random((6, 6)) > 0.5
    v = heatmap_iou(a, b)
    assert 0.0 <= v <= 1.0 and v == heatmap_iou(b, a)
    if a.any():
        assert heatmap_iou(a, a) == 1.0


def test_recall_examples():
    gt = [(0, 0, 10, 10)]
    far = (50, 50, 60, 60)
    preds = [[gt[0]], [far, far, gt[0]], [far]]
    gts = [gt, gt, gt]
    assert recall_at_k(preds, gts, 1) == 1 / 3
    assert recall_at_k(preds, gts, 5) == 2 / 3
    for k in (1, 5, 50):
        assert recall_at_k([[gt[0]]], [gt], k) == 1.0


def test_recall_strict_at_threshold():
    # IoU of (0,0,2,2) with (0,0,2,1) is exactly 0.5
    assert recall_at_k([[(0, 0, 2, 1)]], [[(0, 0, 2, 2)]], 1, 0.5) == 0.0
    assert recall_at_k([[(0, 0, 2, 1)]], [[(0, 0, 2, 2)]], 1, 0.49) == 1.0


def test_recall_errors():
    with pytest.raises(ValueError):
        recall_at_k([[(0, 0, 1, 1)]], [[(0, 0, 1, 1)]], 0)
    with pytest.raises(ShapeMismatchError):
        recall_at_k([[(0, 0, 1, 1)]], [], 1)


def _random_case(rng, n_queries):
    preds, gts = [], []
    for _ in range(n_queries):
        def box():
            x, y = rng.integers(0, 20, 2)
            w, h = rng.integers(1, 12, 2)
            return (float(x), float(y), float(x + w), float(y + h))
        preds.append([box() for _ in range(rng.integers(1, 7))])
        gts.append([box() for _ in range(rng.integers(1, 3))])
    return preds, gts


def test_recall_matches_brute_force_on_50_cases():
    rng = np.random.default_rng(12)
    for _ in range(50):
        preds, gts = _random_case(rng, int(rng.integers(1, 6)))
        for k in (1, 2, 5, 50):
            for thr in (0.3, 0.5, 0.7):
                assert recall_at_k(preds, gts, k, thr) == brute_recall(preds, gts, k, thr)


@given(st.integers(0, 2**32 - 1))
def test_recall_monotone(seed):
    preds, gts = _random_case(np.random.default_rng(seed), 6)
    rs = [recall_at_k(preds, gts, k) for k in (1, 2, 3, 5, 50)]
    assert rs == sorted(rs)
    ts = [recall_at_k(preds, gts, 3, t) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert ts == sorted(ts, reverse=True)


def test_mean_iou_report_examples():
    gt = [(0, 0, 32, 32)]
    assert mean_iou_report([[gt[0]]], [gt], (64, 64)) == 1.0
    assert mean_iou_report([[(40, 40, 64, 64)]], [gt], (64, 64)) == 0.0
    # second query: prediction covers the top half of a gt covering the full image
    v = mean_iou_report([[gt[0]], [(0, 0, 64, 32)]], [gt, [(0, 0, 64, 64)]], (64, 64))
    assert v == 0.75


def test_mean_iou_uses_union_of_gt_and_top1_only():
    gts = [(0, 0, 32, 64), (32, 0, 64, 64)]
    assert mean_iou_report([[(0, 0, 64, 64), (0, 0, 1, 1)]], [gts], (64, 64)) == 1.0
    assert gt_union_mask(gts, 64, 64).all()


@given(st.permutations(range(5)))
def test_mean_iou_order_invariant(perm):
    preds, gts = _random_case(np.random.default_rng(3), 5)
    base = mean_iou_report(preds, gts, (32, 32))
    v = mean_iou_report([preds[i] for i in perm], [gts[i] for i in perm], (32, 32))
    assert v == pytest.approx(base, abs=1e-15)


def test_role_report_fields():
    r = role_report([[(0, 0, 10, 10)]], [[(0, 0, 10, 10)]], (64, 64))
    assert set(r) == {"mean_iou", "r@1", "r@5", "r@50", "query_count"}
    assert r["query_count"] == 1 and r["r@1"] == 1.0
