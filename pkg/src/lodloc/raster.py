"""Instance-map rendering of an instanced model and hypothesis mask extraction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import NEAR_PLANE, Intrinsics, Pose4
from .kernels import PreparedScene, render_labels
from .lod_model import InstancedModel, ids_to_rgb, rgb_to_ids
from .masks import Mask, MaskSet

DEFAULT_MIN_AREA = 25


@dataclass(frozen=True, eq=False)
class InstanceMap:
    ids: np.ndarray  # (H, W) int64, 0 = background
    pose: Pose4 | None = None

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    def to_rgb(self) -> np.ndarray:
        return ids_to_rgb(self.ids)

    @classmethod
    def from_rgb(cls, rgb: np.ndarray, pose: Pose4 | None = None) -> "InstanceMap":
        return cls(rgb_to_ids(rgb), pose)

    def save_png(self, path):
        from PIL import Image

        Image.fromarray(self.to_rgb(), mode="RGB").save(path)

    @classmethod
    def load_png(cls, path) -> "InstanceMap":
        from PIL import Image

        return cls.from_rgb(np.asarray(Image.open(path).convert("RGB")))


def render_instance_map(model: InstancedModel | PreparedScene, intr: Intrinsics, pose: Pose4,
                        near: float = NEAR_PLANE, backend: str | None = None,
                        with_depth: bool = False):
    """Z-buffered instance-ID render; each pixel holds the nearest face covering its centre."""
    scene = model if isinstance(model, PreparedScene) else PreparedScene.from_model(model)
    lab, depth = render_labels(scene, intr, pose.as_array(), near=near, backend=backend)
    lut = np.concatenate([[0], scene.instance_ids]).astype(np.int64)
    imap = InstanceMap(lut[lab], pose)
    if with_depth:
        # the kernels keep inverse depth; background pixels map to +inf
        with np.errstate(divide="ignore"):
            return imap, np.where(depth > 0, 1.0 / depth.astype(np.float64), np.inf)
    return imap


def semantic_silhouette(imap: InstanceMap) -> np.ndarray:
    return imap.ids != 0


def extract_hypothesis_masks(imap: InstanceMap, min_area: int = DEFAULT_MIN_AREA) -> MaskSet:
    """One mask per instance ID present (ascending ID), dropping those under ``min_area`` px."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    ids, counts = np.unique(imap.ids, return_counts=True)
    masks = []
    for iid, n in zip(ids.tolist(), counts.tolist()):
        if iid == 0 or n < min_area:
            continue
        masks.append(Mask(imap.ids == iid, 1.0, iid))
    return MaskSet(imap.width, imap.height, tuple(masks))
