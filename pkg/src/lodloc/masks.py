"""Binary instance masks, run-length encoding and the mask-set file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major run lengths alternating zeros/ones, starting with a zero run."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if flat.size == 0:
        return []
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return counts


def rle_decode(counts, width: int, height: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.sum() != width * height:
        raise ValueError(f"RLE covers {counts.sum()} pixels, expected {width * height}")
    vals = np.arange(len(counts)) % 2 == 1
    return np.repeat(vals, counts).reshape(height, width)


def runs_of(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(start, length) of the set-pixel runs of a mask in flat row-major order."""
    flat = np.asarray(mask, dtype=np.int8).reshape(-1)
    d = np.diff(np.concatenate([[0], flat, [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return starts.astype(np.int64), (ends - starts).astype(np.int64)


def tight_bbox(mask: np.ndarray):
    """Inclusive (x0, y0, x1, y1) of the set pixels, or None for an empty mask."""
    ys = np.flatnonzero(mask.any(axis=1))
    if ys.size == 0:
        return None
    xs = np.flatnonzero(mask.any(axis=0))
    return int(xs[0]), int(ys[0]), int(xs[-1]), int(ys[-1])


def bbox_area(bbox) -> int:
    if bbox is None:
        return 0
    x0, y0, x1, y1 = bbox
    return (x1 - x0 + 1) * (y1 - y0 + 1)


@dataclass(frozen=True, eq=False)
class Mask:
    pixels: np.ndarray  # (H, W) bool
    confidence: float = 1.0
    source_id: int = 0  # instance ID the mask was cut from; 0 when unknown

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=bool)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def area(self) -> int:
        return int(self.pixels.sum())

    @property
    def bbox(self):
        return tight_bbox(self.pixels)

    @property
    def bbox_area(self) -> int:
        return bbox_area(self.bbox)


@dataclass(frozen=True, eq=False)
class MaskSet:
    width: int
    height: int
    masks: tuple = field(default=())

    def __post_init__(self):
        masks = tuple(self.masks)
        for m in masks:
            if m.pixels.shape != (self.height, self.width):
                raise ValueError(
                    f"mask shape {m.pixels.shape} does not match {(self.height, self.width)}")
        object.__setattr__(self, "masks", masks)

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    def __getitem__(self, i) -> Mask:
        return self.masks[i]

    @property
    def confidences(self) -> np.ndarray:
        return np.array([m.confidence for m in self.masks], dtype=float)

    @property
    def bbox_areas(self) -> np.ndarray:
        return np.array([m.bbox_area for m in self.masks], dtype=float)

    @property
    def pixel_areas(self) -> np.ndarray:
        return np.array([m.area for m in self.masks], dtype=float)

    def union(self) -> np.ndarray:
        out = np.zeros((self.height, self.width), dtype=bool)
        for m in self.masks:
            out |= m.pixels
        return out

    def is_empty(self) -> bool:
        return all(m.area == 0 for m in self.masks)

    def scaled_confidence(self, factor: float) -> "MaskSet":
        return MaskSet(self.width, self.height,
                       tuple(Mask(m.pixels, m.confidence * factor, m.source_id) for m in self.masks))

    def equals(self, other: "MaskSet") -> bool:
        return (
            (self.width, self.height, len(self)) == (other.width, other.height, len(other))
            and all(a.confidence == b.confidence and np.array_equal(a.pixels, b.pixels)
                    for a, b in zip(self.masks, other.masks))
        )

    # file format -------------------------------------------------------
    def dumps(self) -> str:
        recs = []
        for m in self.masks:
            bb = m.bbox
            recs.append({
                "confidence": m.confidence,
                "bbox": list(bb) if bb is not None else None,
                "rle": rle_encode(m.pixels),
            })
        return json.dumps({"width": self.width, "height": self.height, "n": len(recs), "masks": recs}) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MaskSet":
        d = json.loads(text)
        w, h = int(d["width"]), int(d["height"])
        recs = d["masks"]
        if len(recs) != int(d["n"]):
            raise ValueError(f"header says {d['n']} masks, found {len(recs)}")
        masks = []
        for r in recs:
            px = rle_decode(r["rle"], w, h)
            bb = tight_bbox(px)
            stored = tuple(r["bbox"]) if r.get("bbox") is not None else None
            if bb != stored:
                raise ValueError(f"stored bbox {stored} disagrees with mask pixels {bb}")
            masks.append(Mask(px, float(r["confidence"])))
        return cls(w, h, tuple(masks))
