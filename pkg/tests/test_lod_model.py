import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lodloc.lod_model import (
    MAX_INSTANCE_ID, CapacityError, InstancedModel, Mesh, ObjParseError, color_to_id, id_to_color,
    ids_to_rgb, instancify, load_instanced, parse_obj, read_instanced_model, rgb_to_ids,
    write_instanced_model,
)
from lodloc.synth import SceneSpec, generate_scene
from oracles import box, flood_fill_partition, obj_text, random_block_scene

CUBE_OBJ = """# unit cube
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
vn 0 0 1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
"""


def test_cube_parses_to_8_vertices_12_faces():
    m = parse_obj(CUBE_OBJ)
    assert m.vertices.shape == (8, 3)
    assert m.n_faces == 12


def test_quad_is_fan_triangulated():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_slash_references_and_negative_indices():
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf -3/1 -2/1/1 -1//1\n"
    assert parse_obj(text).faces.tolist() == [[0, 1, 2]]


def test_other_records_are_ignored():
    text = "mtllib a.mtl\no thing\ng grp\nusemtl m\ns off\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1 2 3\nl 1 2\n"
    assert parse_obj(text).n_faces == 1


@pytest.mark.parametrize("text, line", [
    ("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 99\n", 4),
    ("v 0 0 0\nv 1 0\n", 2),
    ("v 0 0 0\nv 1 0 x\n", 2),
    ("v 0 0 0\nv 1 0 0\nv 1 1 0\n\nf 1 2\n", 5),
    ("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 a\n", 4),
    ("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 0 1 2\n", 4),
])
def test_malformed_records_report_line(text, line):
    with pytest.raises(ObjParseError) as e:
        parse_obj(text)
    assert e.value.lineno == line
    assert f"line {line}" in str(e.value)


def test_mesh_rejects_bad_indices():
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 3)), [[0, 1, 1]])


def _merge(*parts):
    verts, faces, off = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + off)
        off += len(v)
    return Mesh(np.concatenate(verts), np.concatenate(faces))


def test_two_separate_cubes_are_two_instances():
    m = instancify(_merge(box(0, 0, 0, 1, 1, 1), box(10, 0, 0, 11, 1, 1)))
    assert m.instance_ids == (1, 2)
    assert (m.face_instance[:12] == 1).all() and (m.face_instance[12:] == 2).all()


def test_cubes_sharing_a_corner_are_one_instance():
    # the second cube repeats the corner coordinates; welding joins them
    m = instancify(_merge(box(0, 0, 0, 1, 1, 1), box(1, 1, 1, 2, 2, 2)))
    assert m.instance_ids == (1,)


def test_weld_tolerance():
    near = _merge(box(0, 0, 0, 1, 1, 1), box(1 + 5e-7, 1, 1, 2, 2, 2))
    assert instancify(near, 1e-6).n_instances == 1
    assert instancify(near, 1e-9).n_instances == 2
    assert instancify(near, 0.0).n_instances == 2
    with pytest.raises(ValueError):
        instancify(near, -1.0)


def test_per_face_vertex_copies_are_welded():
    v, f = box(0, 0, 0, 4, 4, 4, split_vertices=True)
    assert len(v) == 36
    assert instancify(Mesh(v, f)).n_instances == 1


def test_ids_follow_smallest_face_index():
    # the cube listed second in face order comes first in vertex order
    a_v, a_f = box(0, 0, 0, 1, 1, 1)
    b_v, b_f = box(5, 5, 5, 6, 6, 6)
    mesh = Mesh(np.concatenate([a_v, b_v]), np.concatenate([b_f + 8, a_f]))
    m = instancify(mesh)
    assert (m.face_instance[:12] == 1).all()


def test_fifty_building_scene_matches_flood_fill():
    model = generate_scene(SceneSpec(extent=(500.0, 500.0), building_count=50, rng_seed=7))
    assert model.n_instances == 50
    oracle = flood_fill_partition(model.mesh.vertices, model.mesh.faces)
    assert np.array_equal(model.face_instance, oracle)


@pytest.mark.parametrize("seed", range(5))
def test_attached_blocks_match_flood_fill(seed):
    rng = np.random.default_rng(seed)
    v, f = random_block_scene(rng, 30, attach_prob=0.5)
    got = instancify(Mesh(v, f), 1e-6)
    assert np.array_equal(got.face_instance, flood_fill_partition(v, f, tol=1e-6))


def test_empty_mesh_gives_no_instances():
    m = instancify(Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)))
    assert m.n_instances == 0


def test_capacity_error_class():
    assert issubclass(CapacityError, ValueError)


def test_instance_ids_validated():
    mesh = Mesh(*box(0, 0, 0, 1, 1, 1))
    with pytest.raises(ValueError):
        InstancedModel(mesh, np.zeros(12))
    with pytest.raises(ValueError):
        InstancedModel(mesh, np.full(12, MAX_INSTANCE_ID + 1))


@pytest.mark.parametrize("iid, rgb", [(0, (0, 0, 0)), (1, (0, 0, 1)), (65536, (1, 0, 0)),
                                      (256, (0, 1, 0)), (MAX_INSTANCE_ID, (255, 255, 255))])
def test_color_encoding(iid, rgb):
    assert id_to_color(iid) == rgb
    assert color_to_id(rgb) == iid


@pytest.mark.parametrize("bad", [-1, MAX_INSTANCE_ID + 1])
def test_color_domain(bad):
    with pytest.raises(ValueError):
        id_to_color(bad)


@given(st.integers(0, MAX_INSTANCE_ID))
def test_color_bijection(iid):
    assert color_to_id(id_to_color(iid)) == iid


def test_vectorised_colors_match_scalar(rng):
    ids = rng.integers(0, MAX_INSTANCE_ID + 1, size=(7, 5))
    rgb = ids_to_rgb(ids)
    assert rgb.dtype == np.uint8
    assert tuple(rgb[3, 2]) == id_to_color(int(ids[3, 2]))
    assert np.array_equal(rgb_to_ids(rgb), ids)


def test_write_read_roundtrip_two_buildings():
    model = instancify(_merge(box(0, 0, 0, 1, 1, 1), box(10, 0, 0, 11, 1, 1)))
    obj, manifest = write_instanced_model(model)
    assert obj.count("\no building_") == 2
    back = read_instanced_model(obj, manifest)
    assert back.instance_ids == model.instance_ids
    assert np.array_equal(back.mesh.vertices, model.mesh.vertices)
    # faces are regrouped per building; compare the face -> ID relation as a set
    before = {(tuple(f), i) for f, i in zip(model.mesh.faces.tolist(), model.face_instance.tolist())}
    after = {(tuple(f), i) for f, i in zip(back.mesh.faces.tolist(), back.face_instance.tolist())}
    assert before == after


def test_manifest_of_fifty_buildings():
    import json

    model = generate_scene(SceneSpec(extent=(500.0, 500.0), building_count=50, rng_seed=3))
    _, manifest = write_instanced_model(model)
    entries = json.loads(manifest)["instances"]
    assert len(entries) == 50
    assert sum(e["face_count"] for e in entries) == model.mesh.n_faces
    assert entries[0]["color_hex"] == "#000001"


def test_manifest_mismatch_is_rejected():
    model = instancify(_merge(box(0, 0, 0, 1, 1, 1), box(10, 0, 0, 11, 1, 1)))
    obj, manifest = write_instanced_model(model)
    with pytest.raises(ValueError):
        read_instanced_model(obj, manifest.replace('"face_count": 12', '"face_count": 11', 1))


def test_load_instanced_with_and_without_manifest(tmp_path):
    v, f = random_block_scene(np.random.default_rng(1), 8, attach_prob=0.0)
    raw = tmp_path / "raw.obj"
    raw.write_text(obj_text(v, f))
    plain = load_instanced(raw)
    assert plain.n_instances == 8
    obj, manifest = write_instanced_model(plain)
    (tmp_path / "m.obj").write_text(obj)
    (tmp_path / "m.instances").write_text(manifest)
    assert load_instanced(tmp_path / "m.obj").instance_ids == plain.instance_ids


def test_instancify_is_deterministic():
    v, f = random_block_scene(np.random.default_rng(9), 20)
    text = obj_text(v, f)
    a = instancify(parse_obj(text))
    b = instancify(parse_obj(text.encode()))
    assert np.array_equal(a.face_instance, b.face_instance)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_partition_property(seed):
    v, f = random_block_scene(np.random.default_rng(seed), 6)
    m = instancify(Mesh(v, f))
    # every face in exactly one instance, and the instance sets cover the mesh
    sizes = [len(m.faces_of(i)) for i in m.instance_ids]
    assert sum(sizes) == m.mesh.n_faces
    assert m.instance_ids == tuple(range(1, m.n_instances + 1))
