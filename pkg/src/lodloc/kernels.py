"""Backend selection for the render/score hot loops.

The compiled extension (``lodloc._core``) is used when importable; otherwise,
or when ``LODLOC_BACKEND=python`` is set, the numpy fallback is used. Both
expose ``render`` and ``evaluate`` with identical signatures and results.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .camera import NEAR_PLANE, Intrinsics, extrinsics_batch
from .cost import DICE_EPS
from .masks import MaskSet, runs_of

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("LODLOC_BACKEND", "").lower() != "python":
    try:
        from . import _core as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        log.warning("compiled kernels unavailable; using the numpy fallback")

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled
DEFAULT_BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {sorted(BACKENDS)})") from None


def default_threads() -> int:
    env = os.environ.get("LODLOC_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True, eq=False)
class PreparedScene:
    """Flat triangle soup with dense 1-based labels, ready for the kernels."""

    tris: np.ndarray  # (F, 9) float64
    labels: np.ndarray  # (F,) int32
    instance_ids: np.ndarray  # label l -> instance_ids[l - 1]

    @property
    def n_labels(self) -> int:
        return len(self.instance_ids)

    @classmethod
    def from_model(cls, model) -> "PreparedScene":
        tris = np.ascontiguousarray(model.mesh.triangles().reshape(-1, 9), dtype=np.float64)
        labels = np.ascontiguousarray(model.face_labels(), dtype=np.int32)
        return cls(tris, labels, np.asarray(model.instance_ids, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class PreparedQuery:
    """Query masks as pixel runs plus normalized weights."""

    run_start: np.ndarray
    run_len: np.ndarray
    mask_ptr: np.ndarray
    q_area: np.ndarray
    weights: np.ndarray
    semantic: bool
    degenerate: bool

    @classmethod
    def from_masks(cls, query: MaskSet, cost_kind: str, area_mode: str = "bbox") -> "PreparedQuery":
        if cost_kind == "semantic":
            masks = [query.union()] if len(query) else []
            raw = np.ones(len(masks))
        else:
            masks = [m.pixels for m in query.masks]
            if cost_kind == "confidence":
                raw = query.confidences
            elif cost_kind == "area":
                raw = query.bbox_areas if area_mode == "bbox" else query.pixel_areas
            else:
                raise ValueError(f"unknown cost kind {cost_kind!r}")
        starts, lens, ptr, areas = [], [], [0], []
        for m in masks:
            s, l = runs_of(m)
            starts.append(s)
            lens.append(l)
            ptr.append(ptr[-1] + len(s))
            areas.append(float(l.sum()))
        denom = float(np.sum(raw)) if len(raw) else 0.0
        degenerate = len(masks) == 0 or denom <= 0 or sum(areas) == 0
        weights = np.zeros(len(masks)) if degenerate else np.asarray(raw, dtype=float) / denom
        cat = lambda xs: np.ascontiguousarray(np.concatenate(xs) if xs else np.zeros(0), dtype=np.int64)
        return cls(cat(starts), cat(lens), np.asarray(ptr, dtype=np.int64),
                   np.asarray(areas, dtype=np.float64), np.ascontiguousarray(weights, dtype=np.float64),
                   cost_kind == "semantic", degenerate)


def render_labels(scene: PreparedScene, intr: Intrinsics, pose_row, near: float = NEAR_PLANE,
                  backend: str | None = None):
    """Label buffer (H, W) int32 and depth (H, W) float32 for one pose row."""
    R, T = extrinsics_batch(np.asarray(pose_row, dtype=float)[None])
    be = get_backend(backend)
    return be.render(scene.tris, scene.labels, np.ascontiguousarray(R[0].reshape(9)),
                     np.ascontiguousarray(T[0]), intr.fx, intr.fy, intr.cx, intr.cy,
                     intr.width, intr.height, near)


def evaluate_poses(scene: PreparedScene, intr: Intrinsics, query: PreparedQuery, poses: np.ndarray,
                   min_area: int = 25, eps: float = DICE_EPS, n_threads: int | None = None,
                   near: float = NEAR_PLANE, backend: str | None = None) -> np.ndarray:
    """Cost of every pose row (x, y, z, yaw, pitch, roll) against the query."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    if len(poses) == 0:
        return np.zeros(0)
    if query.degenerate:
        return np.zeros(len(poses))
    R, T = extrinsics_batch(poses)
    be = get_backend(backend)
    threads = default_threads() if n_threads is None else max(1, int(n_threads))
    return be.evaluate(scene.tris, scene.labels, scene.n_labels,
                       np.ascontiguousarray(R.reshape(-1, 9)), np.ascontiguousarray(T),
                       intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, near,
                       query.run_start, query.run_len, query.mask_ptr, query.q_area, query.weights,
                       query.semantic, int(min_area), float(eps), threads)
