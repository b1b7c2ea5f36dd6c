"""Alignment costs between a query mask set and a rendered hypothesis.

The instance cost takes, for every query mask, its best Dice match among the
hypothesis masks (no exclusivity) and aggregates those scores with either
confidence or bounding-box-area weights. The semantic baseline is plain IoU
between the unioned query and the rendered silhouette.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .masks import Mask, MaskSet

DICE_EPS = 1e-6

COST_KINDS = ("confidence", "area", "semantic")


@dataclass(frozen=True)
class QueryMatch:
    best_dice: float
    matched_index: int | None
    weight: float


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    per_query: tuple = field(default=())
    degenerate: bool = False  # no usable evidence in the query


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValueError(f"mask dimensions differ: {a.shape} vs {b.shape}")


def dice(a: np.ndarray, b: np.ndarray, epsilon: float = DICE_EPS) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_dims(a, b)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    inter = int(np.count_nonzero(a & b))
    return 2.0 * inter / (int(a.sum()) + int(b.sum()) + epsilon)


def best_match(query_mask: np.ndarray, hyp: MaskSet, epsilon: float = DICE_EPS):
    """Highest-Dice hypothesis mask; ties go to the lowest index; (0.0, None) if empty."""
    q = np.asarray(query_mask, dtype=bool)
    if q.shape != (hyp.height, hyp.width):
        raise ValueError(f"mask dimensions differ: {q.shape} vs {(hyp.height, hyp.width)}")
    best, idx = 0.0, None
    for k, m in enumerate(hyp.masks):
        d = dice(q, m.pixels, epsilon)
        if idx is None or d > best:
            best, idx = d, k
    return best, idx


def weighted_cost(query: MaskSet, hyp: MaskSet, raw_weights, epsilon: float = DICE_EPS) -> CostBreakdown:
    if (query.width, query.height) != (hyp.width, hyp.height):
        raise ValueError("query and hypothesis mask sets differ in size")
    raw = np.asarray(raw_weights, dtype=float)
    denom = raw.sum() if raw.size else 0.0
    if len(query) == 0 or denom <= 0:
        return CostBreakdown(0.0, (), degenerate=True)
    weights = raw / denom
    per_query = []
    total = 0.0
    for m, w in zip(query.masks, weights):
        d, k = best_match(m.pixels, hyp, epsilon)
        per_query.append(QueryMatch(d, k, float(w)))
        total += w * d
    return CostBreakdown(float(total), tuple(per_query))


def cost_confidence(query: MaskSet, hyp: MaskSet, epsilon: float = DICE_EPS) -> CostBreakdown:
    return weighted_cost(query, hyp, query.confidences, epsilon)


def cost_area(query: MaskSet, hyp: MaskSet, epsilon: float = DICE_EPS,
              area_mode: str = "bbox") -> CostBreakdown:
    """Area-weighted instance cost; ``area_mode`` picks bbox area (default) or pixel count."""
    if area_mode == "bbox":
        areas = query.bbox_areas
    elif area_mode == "pixels":
        areas = query.pixel_areas
    else:
        raise ValueError(f"unknown area_mode {area_mode!r}")
    return weighted_cost(query, hyp, areas, epsilon)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_dims(a, b)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


def cost_semantic(query: MaskSet, hyp_silhouette: np.ndarray) -> float:
    hs = np.asarray(hyp_silhouette, dtype=bool)
    if hs.shape != (query.height, query.width):
        raise ValueError("silhouette size differs from the query")
    return iou(query.union(), hs)


def merge_to_semantic(query: MaskSet) -> MaskSet:
    """Collapse all query instances into one mask (confidence = max of inputs)."""
    if len(query) == 0:
        return query
    if len(query) == 1:
        return query
    union = query.union()
    conf = float(max(m.confidence for m in query.masks))
    return MaskSet(query.width, query.height, (Mask(union, conf),))

