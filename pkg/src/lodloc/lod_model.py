"""Untextured LoD meshes: OBJ ingestion, per-building instancing, ID colours."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

MAX_INSTANCE_ID = 2**24 - 1
DEFAULT_WELD_TOLERANCE = 1e-6


class ObjParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class CapacityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if f.size and np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise ValueError("face with repeated vertex index")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """Per-face vertex coordinates, shape (F, 3, 3)."""
        return self.vertices[self.faces]


@dataclass(frozen=True, eq=False)
class InstancedModel:
    mesh: Mesh
    face_instance: np.ndarray  # (F,) int64, IDs in [1, 2^24 - 1]
    instance_ids: tuple = field(default=())

    def __post_init__(self):
        fi = np.asarray(self.face_instance, dtype=np.int64).reshape(-1)
        if len(fi) != self.mesh.n_faces:
            raise ValueError("face_instance length does not match face count")
        if fi.size and (fi.min() < 1 or fi.max() > MAX_INSTANCE_ID):
            raise ValueError("instance IDs must lie in [1, 2^24 - 1]")
        fi.setflags(write=False)
        object.__setattr__(self, "face_instance", fi)
        object.__setattr__(self, "instance_ids", tuple(int(i) for i in np.unique(fi)))

    @property
    def n_instances(self) -> int:
        return len(self.instance_ids)

    def face_labels(self) -> np.ndarray:
        """Dense 1-based label per face (position of its ID in instance_ids)."""
        ids = np.asarray(self.instance_ids, dtype=np.int64)
        return (np.searchsorted(ids, self.face_instance) + 1).astype(np.int32)

    def faces_of(self, instance_id: int) -> np.ndarray:
        return np.flatnonzero(self.face_instance == instance_id)


_INT = re.compile(r"^[+-]?\d+$")


def _read_obj(text, track_objects: bool = False):
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("ascii")
    verts: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    face_obj: list[str | None] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        tag = tok[0]
        if tag == "v":
            # optional trailing w / vertex colour values are tolerated
            if len(tok) < 4:
                raise ObjParseError(lineno, f"vertex needs 3 coordinates, got {len(tok) - 1}")
            try:
                verts.append((float(tok[1]), float(tok[2]), float(tok[3])))
            except ValueError:
                raise ObjParseError(lineno, "non-numeric vertex coordinate") from None
        elif tag == "f":
            if len(tok) < 4:
                raise ObjParseError(lineno, f"face needs at least 3 vertices, got {len(tok) - 1}")
            idx = []
            for t in tok[1:]:
                ref = t.split("/", 1)[0]
                if not _INT.match(ref):
                    raise ObjParseError(lineno, f"bad vertex reference {t!r}")
                i = int(ref)
                n = len(verts)
                if i > 0:
                    k = i - 1
                elif i < 0:
                    k = n + i
                else:
                    raise ObjParseError(lineno, "vertex index 0 is invalid")
                if not 0 <= k < n:
                    raise ObjParseError(lineno, f"vertex index {i} out of range ({n} vertices)")
                idx.append(k)
            for a, b in zip(idx[1:-1], idx[2:]):
                tri = (idx[0], a, b)
                if len(set(tri)) != 3:
                    raise ObjParseError(lineno, "degenerate face with repeated vertex")
                faces.append(tri)
                face_obj.append(current)
        elif tag in ("o", "g") and track_objects:
            current = tok[1] if len(tok) > 1 else None
    mesh = Mesh(np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))
    return mesh, face_obj


def parse_obj(text) -> Mesh:
    """Parse ASCII OBJ; only ``v`` and ``f`` records are interpreted.

    Polygons are fan-triangulated from their first vertex. Negative indices
    are resolved against the vertex count at the point of the face record.
    """
    return _read_obj(text)[0]


def weld_map(vertices: np.ndarray, tolerance: float) -> np.ndarray:
    """Representative vertex per vertex after merging points within ``tolerance``."""
    n = len(vertices)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if tolerance > 0:
        pairs = cKDTree(vertices).query_pairs(tolerance, output_type="ndarray")
    else:
        _, inv = np.unique(vertices, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        order = np.argsort(inv, kind="stable")
        same = inv[order][1:] == inv[order][:-1]
        pairs = np.stack([order[:-1][same], order[1:][same]], axis=1)
    if len(pairs) == 0:
        return np.arange(n)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(g, directed=False)
    return comp


def instancify(mesh: Mesh, weld_tolerance: float = DEFAULT_WELD_TOLERANCE) -> InstancedModel:
    """Partition faces into buildings by shared (welded) vertices.

    IDs run 1..M in order of each component's smallest face index.
    """
    if weld_tolerance < 0:
        raise ValueError("weld_tolerance must be >= 0")
    F = mesh.n_faces
    if F == 0:
        return InstancedModel(mesh, np.zeros(0, dtype=np.int64))
    rep = weld_map(mesh.vertices, weld_tolerance)
    nv = int(rep.max()) + 1
    # bipartite face/vertex graph: faces are nodes 0..F-1, welded vertices F..F+nv-1
    rows = np.repeat(np.arange(F), 3)
    cols = F + rep[mesh.faces.reshape(-1)]
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(F + nv, F + nv))
    _, comp = connected_components(g, directed=False)
    face_comp = comp[:F]
    # relabel by first appearance in face order
    _, first = np.unique(face_comp, return_index=True)
    order = np.argsort(first, kind="stable")
    relabel = np.empty(len(first), dtype=np.int64)
    relabel[order] = np.arange(1, len(first) + 1)
    uniq = np.unique(face_comp)
    ids = relabel[np.searchsorted(uniq, face_comp)]
    if len(first) > MAX_INSTANCE_ID:
        raise CapacityError(f"{len(first)} components exceed the 24-bit ID space")
    return InstancedModel(mesh, ids)


def id_to_color(instance_id: int) -> tuple[int, int, int]:
    if not 0 <= instance_id <= MAX_INSTANCE_ID:
        raise ValueError(f"instance ID {instance_id} outside [0, 2^24 - 1]")
    return (instance_id >> 16) & 0xFF, (instance_id >> 8) & 0xFF, instance_id & 0xFF


def color_to_id(rgb) -> int:
    r, g, b = (int(c) for c in rgb)
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise ValueError("colour channel outside [0, 255]")
    return (r << 16) | (g << 8) | b


def ids_to_rgb(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.uint32)
    if ids.size and ids.max() > MAX_INSTANCE_ID:
        raise ValueError("instance ID outside 24-bit range")
    return np.stack([(ids >> 16) & 0xFF, (ids >> 8) & 0xFF, ids & 0xFF], axis=-1).astype(np.uint8)


def rgb_to_ids(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.uint32)
    return ((rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]).astype(np.int64)


def write_instanced_model(model: InstancedModel) -> tuple[str, str]:
    """OBJ text with one ``o building_<id>`` group per instance, plus the JSON manifest."""
    lines = ["# instanced LoD model"]
    lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in model.mesh.vertices.tolist())
    manifest = []
    for iid in model.instance_ids:
        fidx = model.faces_of(iid)
        lines.append(f"o building_{iid}")
        for a, b, c in (model.mesh.faces[fidx] + 1).tolist():
            lines.append(f"f {a} {b} {c}")
        r, g, b = id_to_color(iid)
        manifest.append({"id": iid, "color_hex": f"#{r:02x}{g:02x}{b:02x}", "face_count": int(len(fidx))})
    obj = "\n".join(lines) + "\n"
    return obj, json.dumps({"instances": manifest}, indent=1) + "\n"


def read_instanced_model(obj_text, manifest_text: str | None = None) -> InstancedModel:
    """Inverse of :func:`write_instanced_model`."""
    mesh, face_obj = _read_obj(obj_text, track_objects=True)
    ids = np.zeros(mesh.n_faces, dtype=np.int64)
    for i, name in enumerate(face_obj):
        m = re.fullmatch(r"building_(\d+)", name or "")
        if m is None:
            raise ObjParseError(0, f"face {i} is not inside a building_<id> group")
        ids[i] = int(m.group(1))
    model = InstancedModel(mesh, ids)
    if manifest_text is not None:
        entries = json.loads(manifest_text)["instances"]
        for e in entries:
            r, g, b = id_to_color(int(e["id"]))
            if e["color_hex"].lower() != f"#{r:02x}{g:02x}{b:02x}":
                raise ValueError(f"manifest colour mismatch for ID {e['id']}")
            if int(e["face_count"]) != len(model.faces_of(int(e["id"]))):
                raise ValueError(f"manifest face count mismatch for ID {e['id']}")
        if sorted(int(e["id"]) for e in entries) != list(model.instance_ids):
            raise ValueError("manifest IDs do not match the OBJ groups")
    return model


def load_instanced(obj_path, weld_tolerance: float = DEFAULT_WELD_TOLERANCE) -> InstancedModel:
    """Load an OBJ; uses its building groups + manifest if present, else instancifies."""
    from pathlib import Path

    obj_path = Path(obj_path)
    text = obj_path.read_text()
    manifest = obj_path.with_suffix(".instances")
    if manifest.exists():
        return read_instanced_model(text, manifest.read_text())
    return instancify(parse_obj(text), weld_tolerance)
