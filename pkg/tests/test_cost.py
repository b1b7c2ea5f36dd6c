import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lodloc.camera import Pose4
from lodloc.cost import (
    DICE_EPS, best_match, cost_area, cost_confidence, cost_semantic, dice, iou, merge_to_semantic,
    weighted_cost,
)
from lodloc.kernels import PreparedQuery, PreparedScene, evaluate_poses
from lodloc.masks import Mask, MaskSet
from lodloc.raster import InstanceMap, extract_hypothesis_masks, render_instance_map, semantic_silhouette

EPS = DICE_EPS


def rect(h, w, y0, x0, y1, x1):
    m = np.zeros((h, w), dtype=bool)
    m[y0:y1, x0:x1] = True
    return m


def mset(*masks, conf=None, size=(16, 16)):
    h, w = size
    conf = conf or [1.0] * len(masks)
    return MaskSet(w, h, tuple(Mask(m, c) for m, c in zip(masks, conf)))


def random_masks(rng, n, h, w, p=None):
    out = []
    for _ in range(n):
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            out.append(rect(h, w, y0, x0, rng.integers(y0, h + 1), rng.integers(x0, w + 1)))
        else:
            out.append(rng.random((h, w)) < (p if p is not None else rng.uniform(0.05, 0.6)))
    return out


# ---------------------------------------------------------------- hand cases


def test_dice_hand_case():
    a = rect(4, 4, 0, 0, 1, 4)  # 4 px
    b = rect(4, 4, 0, 2, 2, 4)  # 4 px, 2 shared
    assert dice(a, b) == pytest.approx(4 / (8 + EPS), abs=1e-9)
    assert dice(a, b) == pytest.approx(0.5, abs=1e-6)


def test_dice_identity_and_disjoint():
    a = rect(20, 20, 0, 0, 10, 10)
    assert dice(a, a) == pytest.approx(200 / (200 + EPS), abs=1e-12)
    assert dice(a, ~a) == 0.0
    assert dice(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 0.0


def test_dice_errors():
    with pytest.raises(ValueError):
        dice(np.zeros((3, 3), bool), np.zeros((3, 4), bool))
    with pytest.raises(ValueError):
        dice(np.ones((3, 3), bool), np.ones((3, 3), bool), epsilon=0.0)


def _hand_pair():
    # query 0 equals hypothesis 0 exactly (100 px); query 1 overlaps hypothesis 1 by 2 of 4 px
    q0 = rect(32, 32, 0, 0, 10, 10)
    q1 = rect(32, 32, 20, 20, 21, 24)
    h1 = rect(32, 32, 20, 22, 22, 24)
    d = [200 / (200 + EPS), 4 / (8 + EPS)]
    return q0, q1, h1, d


def test_confidence_cost_hand_case():
    q0, q1, h1, d = _hand_pair()
    query = mset(q0, q1, conf=[0.8, 0.2], size=(32, 32))
    hyp = mset(q0, h1, size=(32, 32))
    c = cost_confidence(query, hyp)
    assert c.total == pytest.approx(0.8 * d[0] + 0.2 * d[1], abs=1e-9)
    assert c.total == pytest.approx(0.9, abs=1e-6)
    assert [m.matched_index for m in c.per_query] == [0, 1]


def test_area_cost_hand_case():
    # bounding-box areas 100 and 300 with best Dice 1 and 0.5
    q0 = rect(40, 40, 0, 0, 10, 10)
    q1 = rect(40, 40, 20, 0, 30, 30)  # 300 px box
    h1 = rect(40, 40, 20, 15, 30, 30)  # 150 px, fully inside q1: Dice = 300 / 450
    hyp = mset(q0, h1, size=(40, 40))
    c = cost_area(mset(q0, q1, size=(40, 40)), hyp)
    d1 = 2 * 150 / (450 + EPS)
    assert d1 == pytest.approx(2 / 3, abs=1e-6)
    assert c.total == pytest.approx(0.25 * 200 / (200 + EPS) + 0.75 * d1, abs=1e-9)
    # a d* of exactly one half: query 300 px against a 300 px mask sharing 150 px
    shifted = np.zeros((40, 40), bool)
    shifted[20:30, 15:30] = True
    shifted[30:40, 0:15] = True  # 300 px, overlap with q1 is 150 px
    c2 = cost_area(mset(q0, q1, size=(40, 40)), mset(q0, shifted, size=(40, 40)))
    assert c2.total == pytest.approx(0.25 * 200 / (200 + EPS) + 0.75 * 300 / (600 + EPS), abs=1e-9)
    assert c2.total == pytest.approx(0.625, abs=1e-6)


def test_area_cost_uses_bbox_not_pixels():
    ring = rect(20, 20, 0, 0, 10, 10) & ~rect(20, 20, 1, 1, 9, 9)  # 36 px, bbox 100
    solid = rect(20, 20, 12, 12, 16, 16)  # 16 px, bbox 16
    q = mset(ring, solid, size=(20, 20))
    hyp = mset(ring, size=(20, 20))
    d0 = 72 / (72 + EPS)
    assert cost_area(q, hyp).total == pytest.approx(100 / 116 * d0, abs=1e-12)
    assert cost_area(q, hyp, area_mode="pixels").total == pytest.approx(36 / 52 * d0, abs=1e-12)
    with pytest.raises(ValueError):
        cost_area(q, hyp, area_mode="volume")


def test_semantic_hand_case():
    a = rect(4, 4, 0, 0, 1, 4)
    b = rect(4, 4, 0, 2, 2, 4)
    assert iou(a, b) == pytest.approx(2 / 6, abs=1e-9)
    assert cost_semantic(mset(a, size=(4, 4)), b) == pytest.approx(1 / 3, abs=1e-9)
    assert iou(a, a) == 1.0
    assert iou(a, ~a) == 0.0
    assert iou(np.zeros((2, 2), bool), np.zeros((2, 2), bool)) == 0.0


def test_semantic_unions_query_first():
    left = rect(8, 8, 0, 0, 8, 4)
    right = rect(8, 8, 0, 4, 8, 8)
    assert cost_semantic(mset(left, right, size=(8, 8)), np.ones((8, 8), bool)) == 1.0


def test_best_match_rules():
    q = rect(10, 10, 0, 0, 5, 5)
    assert best_match(q, MaskSet(10, 10, ())) == (0.0, None)
    hyp = mset(rect(10, 10, 5, 5, 10, 10), q, rect(10, 10, 0, 0, 2, 2), size=(10, 10))
    d, k = best_match(q, hyp)
    assert k == 1 and d == pytest.approx(1.0, abs=1e-6)
    # two equally good hypotheses: the first wins
    twin = mset(rect(10, 10, 9, 9, 10, 10), rect(10, 10, 0, 0, 5, 3), rect(10, 10, 0, 2, 5, 5), size=(10, 10))
    d, k = best_match(q, twin)
    assert k == 1
    assert d == pytest.approx(dice(q, twin[2].pixels), abs=0)
    with pytest.raises(ValueError):
        best_match(np.zeros((3, 3), bool), hyp)


def test_empty_query_is_degenerate():
    hyp = mset(rect(8, 8, 0, 0, 4, 4), size=(8, 8))
    for fn in (cost_confidence, cost_area):
        c = fn(MaskSet(8, 8, ()), hyp)
        assert c.total == 0.0 and c.degenerate
    zero_conf = mset(rect(8, 8, 0, 0, 4, 4), conf=[0.0], size=(8, 8))
    assert cost_confidence(zero_conf, hyp).degenerate


def test_all_perfect_matches_give_one_regardless_of_weights():
    masks = [rect(30, 30, 0, 0, 5, 5), rect(30, 30, 10, 10, 20, 30)]
    q = mset(*masks, conf=[0.9, 0.1], size=(30, 30))
    for c in (cost_confidence(q, q), cost_area(q, q)):
        assert c.total == pytest.approx(1.0, abs=1e-6)


def test_single_instance_area_weight_irrelevant():
    q = mset(rect(20, 20, 0, 0, 4, 9), size=(20, 20))
    h = mset(rect(20, 20, 2, 0, 6, 9), size=(20, 20))
    assert cost_area(q, h).total == pytest.approx(best_match(q[0].pixels, h)[0], abs=1e-15)


def test_equal_areas_give_plain_mean():
    q = mset(rect(20, 20, 0, 0, 4, 4), rect(20, 20, 10, 10, 14, 14), size=(20, 20))
    h = mset(rect(20, 20, 0, 2, 4, 6), size=(20, 20))
    ds = [best_match(m.pixels, h)[0] for m in q]
    assert cost_area(q, h).total == pytest.approx(np.mean(ds), abs=1e-12)


def test_size_mismatch():
    with pytest.raises(ValueError):
        cost_confidence(MaskSet(4, 4, ()), MaskSet(5, 4, ()))
    with pytest.raises(ValueError):
        cost_semantic(MaskSet(4, 4, ()), np.zeros((5, 5), bool))


# ---------------------------------------------------------------- merging


def test_merge_three_disjoint():
    ms = mset(rect(10, 10, 0, 0, 2, 2), rect(10, 10, 5, 5, 7, 8), rect(10, 10, 9, 0, 10, 10),
              conf=[0.2, 0.7, 0.5], size=(10, 10))
    m = merge_to_semantic(ms)
    assert len(m) == 1
    assert m[0].area == 4 + 6 + 10
    assert m[0].confidence == 0.7
    assert m[0].bbox == (0, 0, 9, 9)
    assert merge_to_semantic(m).equals(m)


def test_merge_edge_cases():
    assert len(merge_to_semantic(MaskSet(4, 4, ()))) == 0
    one = mset(rect(4, 4, 0, 0, 2, 2), conf=[0.3], size=(4, 4))
    assert merge_to_semantic(one).equals(one)


# ---------------------------------------------------------------- properties


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cost_invariants(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(4, 33, 2)
    q = MaskSet(w, h, tuple(Mask(m, float(rng.uniform(0.05, 1))) for m in random_masks(rng, rng.integers(1, 6), h, w)))
    hyp = MaskSet(w, h, tuple(Mask(m) for m in random_masks(rng, rng.integers(0, 6), h, w)))
    for c in (cost_confidence(q, hyp), cost_area(q, hyp)):
        assert 0.0 <= c.total <= 1.0
        if not c.degenerate:
            assert sum(m.weight for m in c.per_query) == pytest.approx(1.0, abs=1e-9)
            assert c.total == pytest.approx(sum(m.weight * m.best_dice for m in c.per_query), abs=1e-9)
    # extra unmatched hypothesis masks never lower the cost
    extra = MaskSet(w, h, hyp.masks + tuple(Mask(m) for m in random_masks(rng, 2, h, w)))
    assert cost_confidence(q, extra).total >= cost_confidence(q, hyp).total
    # confidences only matter relative to each other
    lam = float(rng.uniform(0.01, 1.0))
    assert cost_confidence(q.scaled_confidence(lam), hyp).total == pytest.approx(
        cost_confidence(q, hyp).total, abs=1e-9)
    assert 0.0 <= cost_semantic(q, hyp.union()) <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_best_match_equals_exhaustive_search(seed):
    rng = np.random.default_rng(seed)
    qs = random_masks(rng, rng.integers(1, 7), 16, 16)
    hs = random_masks(rng, rng.integers(0, 7), 16, 16)
    hyp = mset(*hs, size=(16, 16))
    for q in qs:
        scores = []
        for k, hm in enumerate(hs):
            inter = sum(int(a and b) for a, b in zip(q.reshape(-1), hm.reshape(-1)))
            scores.append((2 * inter / (q.sum() + hm.sum() + EPS), -k))
        if not scores:
            assert best_match(q, hyp) == (0.0, None)
            continue
        d, negk = max(scores)
        assert best_match(q, hyp) == (d, -negk)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fixpoint_on_id_maps(seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 6, size=(24, 24))
    hyp = extract_hypothesis_masks(InstanceMap(ids), 0)
    if len(hyp) == 0:
        return
    assert cost_confidence(hyp, hyp).total == pytest.approx(1.0, abs=1e-6)
    assert cost_area(hyp, hyp).total == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------- compiled scorer


@pytest.mark.parametrize("kind", ["confidence", "area", "semantic"])
def test_kernel_scores_match_reference(std_scene, std_intr, kind):
    _, model = std_scene
    scene = PreparedScene.from_model(model)
    gt = Pose4(-20, 15, 170, 75, pitch=-50)
    rng = np.random.default_rng(4)
    # a query with uneven confidences and one spurious mask
    base = extract_hypothesis_masks(render_instance_map(scene, std_intr, gt))
    junk = np.zeros((std_intr.height, std_intr.width), bool)
    junk[10:40, 500:600] = True
    query = MaskSet(base.width, base.height,
                    tuple(Mask(m.pixels, float(rng.uniform(0.2, 1))) for m in base) + (Mask(junk, 0.5),))
    pq = PreparedQuery.from_masks(query, kind)
    for _ in range(4):
        p = gt.moved(*rng.normal(0, 4, 3), dyaw=rng.normal(0, 4))
        got = evaluate_poses(scene, std_intr, pq, p.as_array()[None])[0]
        imap = render_instance_map(scene, std_intr, p)
        if kind == "semantic":
            want = cost_semantic(query, semantic_silhouette(imap))
        else:
            hyp = extract_hypothesis_masks(imap)
            want = (cost_confidence if kind == "confidence" else cost_area)(query, hyp).total
        assert got == pytest.approx(want, abs=1e-12)


def test_kernel_handles_degenerate_query(std_scene, std_intr):
    _, model = std_scene
    scene = PreparedScene.from_model(model)
    pq = PreparedQuery.from_masks(MaskSet(std_intr.width, std_intr.height, ()), "confidence")
    assert pq.degenerate
    assert evaluate_poses(scene, std_intr, pq, np.zeros((3, 6))).tolist() == [0.0, 0.0, 0.0]


def test_weighted_cost_generic():
    q = mset(rect(8, 8, 0, 0, 4, 4), rect(8, 8, 4, 4, 8, 8), size=(8, 8))
    c = weighted_cost(q, q, [3.0, 1.0])
    assert [m.weight for m in c.per_query] == [0.75, 0.25]
    assert list(itertools.chain(c.per_query))[0].matched_index == 0
