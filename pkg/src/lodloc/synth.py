"""Procedural LoD1 cities, oracle query masks and benchmark bundles."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .camera import Intrinsics, Pose4
from .lod_model import InstancedModel, Mesh, instancify, read_instanced_model, write_instanced_model
from .masks import Mask, MaskSet, tight_bbox
from .raster import DEFAULT_MIN_AREA, extract_hypothesis_masks, render_instance_map

DENSITY_MODES = ("sparse", "dense", "periodic")

# bottom, top, then four walls; each quad fan-split into two triangles
_PRISM_QUADS = ((0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4), (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7))


class InfeasibleSceneError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    extent: tuple = (300.0, 300.0)
    building_count: int = 30
    footprint_range: tuple = (10.0, 30.0)
    height_range: tuple = (10.0, 40.0)
    min_spacing: float = 8.0
    density_mode: str = "sparse"
    rng_seed: int = 0
    max_attempts: int = 2000

    def __post_init__(self):
        if self.density_mode not in DENSITY_MODES:
            raise ValueError(f"density_mode must be one of {DENSITY_MODES}")
        lo, hi = self.footprint_range
        hlo, hhi = self.height_range
        if not (0 < lo <= hi and 0 < hlo <= hhi and min(self.extent) > 0):
            raise ValueError("scene ranges must be positive and ordered")
        if self.building_count < 0 or self.min_spacing < 0:
            raise ValueError("building_count and min_spacing must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for k in ("extent", "footprint_range", "height_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def prism(x0, y0, x1, y1, height):
    v = np.array([(x0, y0, 0), (x1, y0, 0), (x1, y1, 0), (x0, y1, 0),
                  (x0, y0, height), (x1, y0, height), (x1, y1, height), (x0, y1, height)], dtype=float)
    f = []
    for a, b, c, d in _PRISM_QUADS:
        f += [(a, b, c), (a, c, d)]
    return v, np.array(f, dtype=np.int64)


def footprint_gap(a, b) -> float:
    """Euclidean distance between two axis-aligned rectangles (x0, y0, x1, y1)."""
    gx = max(0.0, max(a[0], b[0]) - min(a[2], b[2]))
    gy = max(0.0, max(a[1], b[1]) - min(a[3], b[3]))
    return math.hypot(gx, gy)


def _separated(r, placed, spacing) -> bool:
    for o in placed:
        gx = max(o[0] - r[2], r[0] - o[2])
        gy = max(o[1] - r[3], r[1] - o[3])
        if max(gx, gy) < spacing:
            return False
    return True


def _layout(spec: SceneSpec, rng: np.random.Generator):
    W, H = spec.extent
    lo, hi = spec.footprint_range
    n = spec.building_count
    rects = []
    if spec.density_mode == "periodic":
        cols = math.ceil(math.sqrt(n)) if n else 0
        rows = math.ceil(n / cols) if n else 0
        pitch = lo + spec.min_spacing
        if cols * pitch - spec.min_spacing > W or rows * pitch - spec.min_spacing > H:
            raise InfeasibleSceneError("periodic lattice does not fit the extent")
        ox = -(cols * pitch - spec.min_spacing) / 2.0
        oy = -(rows * pitch - spec.min_spacing) / 2.0
        for k in range(n):
            r, c = divmod(k, cols)
            x0, y0 = ox + c * pitch, oy + r * pitch
            rects.append((x0, y0, x0 + lo, y0 + lo))
    elif spec.density_mode == "dense":
        # street blocks: each building sits inside its own cell, shrunk by half the spacing
        cell = hi + spec.min_spacing
        nx, ny = int(W // cell), int(H // cell)
        if nx * ny < n:
            raise InfeasibleSceneError(f"{n} buildings do not fit {nx * ny} dense cells")
        chosen = np.sort(rng.choice(nx * ny, size=n, replace=False))
        ox, oy = -nx * cell / 2.0, -ny * cell / 2.0
        for k in chosen.tolist():
            r, c = divmod(k, nx)
            w, d = rng.uniform(lo, hi, size=2)
            free_x = cell - spec.min_spacing - w
            free_y = cell - spec.min_spacing - d
            x0 = ox + c * cell + spec.min_spacing / 2.0 + rng.uniform(0.0, free_x)
            y0 = oy + r * cell + spec.min_spacing / 2.0 + rng.uniform(0.0, free_y)
            rects.append((x0, y0, x0 + w, y0 + d))
    else:
        for _ in range(n):
            for _attempt in range(spec.max_attempts):
                w, d = rng.uniform(lo, hi, size=2)
                x0 = rng.uniform(-W / 2.0, W / 2.0 - w)
                y0 = rng.uniform(-H / 2.0, H / 2.0 - d)
                r = (x0, y0, x0 + w, y0 + d)
                if _separated(r, rects, spec.min_spacing):
                    rects.append(r)
                    break
            else:
                raise InfeasibleSceneError(
                    f"placed {len(rects)} of {n} buildings after {spec.max_attempts} attempts")
    heights = rng.uniform(*spec.height_range, size=len(rects))
    return rects, heights


def generate_scene(spec: SceneSpec) -> InstancedModel:
    """Axis-aligned flat-roofed prisms on z = 0; IDs follow placement order."""
    rng = np.random.default_rng(spec.rng_seed)
    rects, heights = _layout(spec, rng)
    verts, faces = [], []
    for k, (r, h) in enumerate(zip(rects, heights)):
        v, f = prism(*r, h)
        verts.append(v)
        faces.append(f + 8 * k)
    if not verts:
        return InstancedModel(Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), np.zeros(0))
    mesh = Mesh(np.concatenate(verts), np.concatenate(faces))
    return instancify(mesh, 0.0)


def scene_footprints(model: InstancedModel) -> list[tuple]:
    out = []
    for iid in model.instance_ids:
        v = model.mesh.vertices[np.unique(model.mesh.faces[model.faces_of(iid)])]
        out.append((v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()))
    return out


# --------------------------------------------------------------------------
# oracle queries


@dataclass(frozen=True)
class Corruption:
    drop_prob: float = 0.0
    erode_px: int = 0
    merge_adjacent: bool = False
    confidence_noise: float = 0.0

    def __post_init__(self):
        if not (0 <= self.drop_prob <= 1 and 0 <= self.confidence_noise <= 1):
            raise ValueError("corruption probabilities must lie in [0, 1]")
        if self.erode_px < 0:
            raise ValueError("erode_px must be >= 0")


@dataclass(frozen=True)
class PriorOffset:
    max_xy: float = 20.0
    max_z: float = 5.0
    max_yaw: float = 10.0


@dataclass(frozen=True)
class QuerySpec:
    gt_pose: Pose4
    intrinsics: Intrinsics
    corruption: Corruption = field(default_factory=Corruption)
    prior_offset: PriorOffset = field(default_factory=PriorOffset)
    rng_seed: int = 0
    min_area: int = DEFAULT_MIN_AREA  # per-ID threshold before the split
    min_component_area: int = 0  # optional threshold on split components


class OracleQuery(NamedTuple):
    masks: MaskSet
    prior: Pose4
    gt: Pose4
    empty: bool


CCA_STRUCTURE = np.ones((3, 3), dtype=bool)  # 8-connectivity


def cca_split(hyp: MaskSet, min_area: int = 0) -> MaskSet:
    """Split each mask into 8-connected components, dropping components under ``min_area``."""
    out = []
    for m in hyp.masks:
        lab, n = ndimage.label(m.pixels, structure=CCA_STRUCTURE)
        if n == 0:
            continue
        sizes = np.bincount(lab.reshape(-1), minlength=n + 1)
        for c in range(1, n + 1):
            if sizes[c] >= min_area:
                out.append(Mask(lab == c, m.confidence, m.source_id))
    return MaskSet(hyp.width, hyp.height, tuple(out))


def erode(mask: np.ndarray, px: int) -> np.ndarray:
    """Square-element erosion; the image border does not count as background."""
    if px <= 0:
        return mask
    return ndimage.binary_erosion(np.pad(mask, px, mode="edge"), CCA_STRUCTURE, iterations=px)[px:-px, px:-px]


def _bboxes_touch(a, b) -> bool:
    return a[0] <= b[2] + 1 and b[0] <= a[2] + 1 and a[1] <= b[3] + 1 and b[1] <= a[3] + 1


def merge_touching(masks: list[tuple[np.ndarray, int]]):
    """Union masks whose bounding boxes touch or overlap (transitively).

    Items are (pixels, key); the merged item keeps the smallest key.
    """
    n = len(masks)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    boxes = [tight_bbox(m) for m, _ in masks]
    for i in range(n):
        for j in range(i + 1, n):
            if _bboxes_touch(boxes[i], boxes[j]):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    out = []
    for root in sorted(groups):
        members = groups[root]
        px = np.zeros_like(masks[0][0])
        for i in members:
            px |= masks[i][0]
        out.append((px, masks[members[0]][1]))
    return out


def oracle_query(model: InstancedModel, qspec: QuerySpec) -> OracleQuery:
    """Ground-truth masks at ``gt_pose`` with corruption applied in fixed order.

    Random draws are made for every mask regardless of the corruption settings,
    so two specs sharing a seed retain the same masks where they overlap.
    """
    intr, gt = qspec.intrinsics, qspec.gt_pose
    hyp = extract_hypothesis_masks(render_instance_map(model, intr, gt), qspec.min_area)
    base = cca_split(hyp, qspec.min_component_area)
    rng = np.random.default_rng(qspec.rng_seed)
    n = len(base)
    u_drop = rng.random(n)
    u_conf = rng.random(n)
    u_prior = rng.random(4)
    c, off = qspec.corruption, qspec.prior_offset
    prior = Pose4(gt.x + (2 * u_prior[0] - 1) * off.max_xy,
                  gt.y + (2 * u_prior[1] - 1) * off.max_xy,
                  gt.z + (2 * u_prior[2] - 1) * off.max_z,
                  gt.yaw + (2 * u_prior[3] - 1) * off.max_yaw, gt.pitch, gt.roll)

    kept = [(m.pixels, i) for i, m in enumerate(base.masks) if u_drop[i] >= c.drop_prob]
    if c.erode_px:
        kept = [(erode(px, c.erode_px), i) for px, i in kept]
        kept = [(px, i) for px, i in kept if px.any()]
    if c.merge_adjacent and kept:
        kept = merge_touching(kept)
    masks = tuple(Mask(px, 1.0 - u_conf[i] * c.confidence_noise, base.masks[i].source_id)
                  for px, i in kept)
    ms = MaskSet(intr.width, intr.height, masks)
    return OracleQuery(ms, prior, gt, n == 0)


# --------------------------------------------------------------------------
# trajectories and bundles


@dataclass(frozen=True)
class TrajectorySpec:
    mode: str = "grid"  # grid | sequence
    heights: tuple = (150.0, 200.0)
    pitches: tuple = (-90.0, -45.0)
    margin: float = 40.0  # keep look-at targets this far inside the extent
    step: float = 25.0  # sequence mode: max distance between consecutive poses
    max_turn_deg: float = 15.0  # sequence mode: max heading change per pose
    n_waypoints: int = 6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectorySpec":
        d = dict(d)
        for k in ("heights", "pitches"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def _camera_from_target(tx, ty, height, yaw, pitch) -> Pose4:
    # place the camera so its optical axis meets the ground at (tx, ty)
    back = 0.0
    if -89.999 < pitch < 0.0:
        back = height / math.tan(math.radians(-pitch))
    a = math.radians(yaw)
    return Pose4(tx - back * math.cos(a), ty - back * math.sin(a), height, yaw, pitch, 0.0)


def trajectory(scene: SceneSpec, traj: TrajectorySpec, n: int, seed: int) -> list[Pose4]:
    if n < 1:
        raise ValueError("n_queries must be >= 1")
    rng = np.random.default_rng(seed)
    W, H = scene.extent
    hx, hy = max(W / 2.0 - traj.margin, 0.0), max(H / 2.0 - traj.margin, 0.0)
    poses = []
    if traj.mode == "grid":
        k = math.ceil(math.sqrt(n))
        xs = np.linspace(-hx, hx, k) if k > 1 else np.zeros(1)
        ys = np.linspace(-hy, hy, k) if k > 1 else np.zeros(1)
        yaws = rng.uniform(-180.0, 180.0, size=n)
        for i in range(n):
            r, c = divmod(i, k)
            h = traj.heights[i % len(traj.heights)]
            p = traj.pitches[(i // len(traj.heights)) % len(traj.pitches)]
            poses.append(_camera_from_target(xs[c], ys[r], h, float(yaws[i]), p))
    elif traj.mode == "sequence":
        way = rng.uniform([-hx, -hy], [hx, hy], size=(traj.n_waypoints, 2))
        h = float(rng.uniform(min(traj.heights), max(traj.heights)))
        pitch = traj.pitches[0]
        pos = way[0].copy()
        heading = math.degrees(math.atan2(*(way[1] - way[0])[::-1]))
        target = 1
        while len(poses) < n:
            goal = way[target % len(way)]
            delta = goal - pos
            dist = float(np.hypot(*delta))
            if dist < 1e-6:
                target += 1
                continue
            want = math.degrees(math.atan2(delta[1], delta[0]))
            turn = (want - heading + 180.0) % 360.0 - 180.0
            heading += max(-traj.max_turn_deg, min(traj.max_turn_deg, turn))
            a = math.radians(heading)
            stepv = min(traj.step, dist)
            poses.append(_camera_from_target(pos[0], pos[1], h, heading, pitch))
            pos = pos + stepv * np.array([math.cos(a), math.sin(a)])
            if dist <= traj.step:
                target += 1
    else:
        raise ValueError(f"unknown trajectory mode {traj.mode!r}")
    return poses


@dataclass(frozen=True)
class BundleQuery:
    name: str
    masks: MaskSet
    prior: Pose4
    gt: Pose4
    intrinsics: Intrinsics
    seed: int


@dataclass(frozen=True)
class Bundle:
    root: Path
    model: InstancedModel
    queries: tuple
    manifest: dict


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def generate_benchmark(scene_spec: SceneSpec, n_queries: int, traj: TrajectorySpec,
                       template: QuerySpec, out_dir, seed: int = 0) -> Bundle:
    """Write model, per-query masks/poses/intrinsics and a manifest under ``out_dir``."""
    out = Path(out_dir)
    (out / "queries").mkdir(parents=True, exist_ok=True)
    model = generate_scene(scene_spec)
    obj, inst = write_instanced_model(model)
    (out / "model.obj").write_text(obj)
    (out / "model.instances").write_text(inst)
    poses = trajectory(scene_spec, traj, n_queries, seed)
    entries = []
    for i, gt in enumerate(poses):
        name = f"q{i:04d}"
        qs = replace(template, gt_pose=gt, rng_seed=seed * 100_003 + i)
        oq = oracle_query(model, qs)
        qdir = out / "queries" / name
        qdir.mkdir(exist_ok=True)
        (qdir / "masks.rle").write_text(oq.masks.dumps())
        _write_json(qdir / "prior.pose", oq.prior.to_dict())
        _write_json(qdir / "gt.pose", oq.gt.to_dict())
        _write_json(qdir / "intrinsics", qs.intrinsics.to_dict())
        entries.append({"name": name, "seed": qs.rng_seed, "n_masks": len(oq.masks), "empty": oq.empty})
    manifest = {
        "scene": scene_spec.to_dict(),
        "trajectory": traj.to_dict(),
        "corruption": asdict(template.corruption),
        "prior_offset": asdict(template.prior_offset),
        "min_area": template.min_area,
        "min_component_area": template.min_component_area,
        "seed": seed,
        "queries": entries,
    }
    _write_json(out / "manifest", manifest)
    return load_bundle(out)


def load_bundle(root) -> Bundle:
    root = Path(root)
    manifest = json.loads((root / "manifest").read_text())
    model = read_instanced_model((root / "model.obj").read_text(), (root / "model.instances").read_text())
    queries = []
    for e in manifest["queries"]:
        qdir = root / "queries" / e["name"]
        queries.append(BundleQuery(
            e["name"],
            MaskSet.loads((qdir / "masks.rle").read_text()),
            Pose4.from_dict(json.loads((qdir / "prior.pose").read_text())),
            Pose4.from_dict(json.loads((qdir / "gt.pose").read_text())),
            Intrinsics.from_dict(json.loads((qdir / "intrinsics").read_text())),
            int(e["seed"]),
        ))
    return Bundle(root, model, tuple(queries), manifest)
