import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from openground.bundle import load_bundle
from openground.clients.vlm import Annotation, ViewImage, VlmRequest, ask
from openground.oracle import GroundTruth, OracleSeg, OracleVlm
from openground.scene import lift_mask, load_scene, project
from openground.synth import CameraRing, ObjectSpec, SceneSpec, cabinet_family_spec, generate, look_at


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_same_spec_same_bytes(tmp_path):
    spec = cabinet_family_spec(3, n_cabinets=2, max_queries=3)
    generate(spec, 3).write(tmp_path / "a")
    generate(spec, 3).write(tmp_path / "b")
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b and "cloud.ply" in a and "gt.json" in a


def test_withheld_handles_become_open_world_targets():
    spec = SceneSpec(
        "one_cabinet",
        [
            ObjectSpec("cab", "cabinet", (0, 0, 0.45), (0.8, 0.5, 0.9)),
            ObjectSpec("h0", "handle", (-0.2, 0.35, 0.6), (0.14, 0.035, 0.035), fill="volume", spacing=0.012,
                       attributes={"side": "left"}, parent="cab"),
            ObjectSpec("h1", "handle", (0.2, 0.35, 0.6), (0.14, 0.035, 0.035), fill="volume", spacing=0.012,
                       attributes={"side": "right"}, parent="cab"),
        ],
        [CameraRing((0, 0, 0.45), 1.5, 1.0, 4, (40, 140))],
        withhold=["handle"],
    )
    syn = generate(spec, 0)
    assert [e.label for e in syn.table] == ["cabinet"]
    assert len(syn.queries) == 2
    for q in syn.queries:
        assert q["chain"] == ["cabinet", "handle"]
        assert q["chain"][-1] not in {e.label for e in syn.table}
    assert syn.queries[0]["query"] == "Find the left handle on the cabinet."


def test_zero_object_scene(tmp_path):
    spec = SceneSpec("empty", [], [CameraRing((0, 0, 0), 2.0, 1.0, 2)])
    syn = generate(spec, 0)
    syn.write(tmp_path)
    scene = load_scene(tmp_path)
    assert len(scene.cloud) == 0 and len(scene.views) == 2
    b = load_bundle(tmp_path)
    assert len(b.table) == 0 and b.queries == []


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown parent"):
        SceneSpec.from_json({"objects": [{"name": "a", "label": "a", "center": [0, 0, 0], "size": [1, 1, 1], "parent": "zz"}]})
    with pytest.raises(ValueError, match="unique"):
        SceneSpec.from_json({"objects": [{"name": "a", "label": "a", "center": [0, 0, 0], "size": [1, 1, 1]}] * 2})


def test_spec_json_roundtrip():
    spec = cabinet_family_spec(1)
    assert SceneSpec.from_json(spec.to_json()) == spec


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 3))
def test_look_at_centres_target(x, y, h):
    v = look_at((x, y, h), (0.1, 0.2, 0.0), 64, 48, 50, 50, 0)
    u, w = project((0.1, 0.2, 0.0), v)
    assert u == pytest.approx(32, abs=1e-9) and w == pytest.approx(24, abs=1e-9)
    assert v.validate() == []


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000))
def test_oracle_masks_lift_inside_instances(seed):
    syn = generate(cabinet_family_spec(seed, n_cabinets=2, max_queries=1), seed)
    gt = GroundTruth.from_synthetic(syn)
    seg = OracleSeg(syn.scene, gt)
    for view in syn.scene.views[:: 3]:
        for label in ("drawer", "handle"):
            masks = seg.segment(view, label)
            insts = [i for i in gt.instances if i.label == label]
            for m in masks:
                lifted = lift_mask(syn.scene, m)
                assert len(lifted)
                assert any(np.isin(lifted, i.points).all() for i in insts)


def test_oracle_vlm_follows_ground_truth(cabinets):
    gt = GroundTruth.from_synthetic(cabinets)
    vlm = OracleVlm(gt)
    q = next(q for q in cabinets.queries if len(q["chain"]) == 3)
    parsed = ask(vlm, "objects_parsing", {"query": q["query"]})
    assert parsed.labels == tuple(q["chain"])
    by = gt.by_name
    target = by[q["target"]]
    rival = next(i for i in gt.instances if i.label == target.label and i.name != target.name and i.parent == target.parent)
    parent = by[target.parent]
    conds = [c["text"] for c in q["steps"][-1]["conditions"]]

    def ann(eid, inst, role):
        return Annotation(eid, inst.label, role, (0, 0, 1, 1), inst.box, inst.points)

    img = ViewImage(0, np.zeros((2, 2, 3), np.uint8), (ann(1, parent, "grounded"), ann(5, target, "candidate"), ann(6, rival, "candidate")))
    req = VlmRequest("reasoning", "p", (img,), {"query": q["query"]}, context={"candidates": [5, 6], "conditions": conds})
    from openground.clients.replies import parse_reply

    report = parse_reply("reasoning", vlm.complete(req))
    assert set(report[5]) == set(conds)
    assert len(report[6]) < len(conds)
