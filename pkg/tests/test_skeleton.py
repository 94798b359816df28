import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinelift.containers import Keypoints2D
from kinelift.skeleton import (
    CycleDetected,
    DuplicateAxis,
    InvalidLimitRange,
    InvalidRestDirection,
    MultipleRoots,
    OrphanJoint,
    SHIPPED,
    SkeletonSpec,
    default_hand_spec,
    default_upper_body_spec,
    load_skeleton,
    mirror_hand,
    save_skeleton,
    validate_skeleton,
)

from conftest import chain_spec


def spec_of(d):
    return SkeletonSpec.from_dict(d)


def test_chain_bfs_order(chain):
    assert list(chain.bfs_order) == [0, 1, 2]
    assert chain.total_dof == 3
    assert chain.n_bones == 2


def test_two_cycle_detected():
    d = chain_spec()
    d["joints"][1]["parent"] = "b"
    with pytest.raises(CycleDetected) as exc:
        validate_skeleton(spec_of(d))
    assert exc.value.joint in ("a", "b")


def test_self_parent_is_cycle():
    d = chain_spec()
    d["joints"][2]["parent"] = "b"
    with pytest.raises(CycleDetected):
        validate_skeleton(spec_of(d))


def test_orphan_parent_missing():
    d = chain_spec()
    d["joints"][2]["parent"] = "ghost"
    with pytest.raises(OrphanJoint) as exc:
        validate_skeleton(spec_of(d))
    assert exc.value.joint == "b"


def test_multiple_roots():
    d = chain_spec()
    d["joints"][2]["parent"] = None
    with pytest.raises(MultipleRoots):
        validate_skeleton(spec_of(d))


def test_duplicate_axis():
    d = chain_spec(dof_b=[{"axis": "X", "min_deg": -10, "max_deg": 10}, {"axis": "X", "min_deg": -5, "max_deg": 5}])
    with pytest.raises(DuplicateAxis) as exc:
        validate_skeleton(spec_of(d))
    assert exc.value.joint == "a"


@pytest.mark.parametrize("lo,hi", [(10, 10), (20, -20), (-200, 0)])
def test_invalid_limit_range(lo, hi):
    d = chain_spec(dof_b=[{"axis": "Z", "min_deg": lo, "max_deg": hi}])
    with pytest.raises(InvalidLimitRange):
        validate_skeleton(spec_of(d))


def test_root_needs_full_range():
    d = chain_spec()
    d["joints"][0]["dof"][0]["min_deg"] = -90
    with pytest.raises(InvalidLimitRange):
        validate_skeleton(spec_of(d))


def test_rest_direction_must_be_unit():
    d = chain_spec()
    d["joints"][1]["rest_direction"] = [2, 0, 0]
    with pytest.raises(InvalidRestDirection):
        validate_skeleton(spec_of(d))


def test_default_upper_body():
    sk = validate_skeleton(default_upper_body_spec())
    assert sk.n_joints == 19
    # the 19 body angles include the 3 root angles
    assert sk.total_dof == 19
    assert len(sk.joint_axes(sk.root_index)) == 3
    per_joint = {n: len(sk.joint_axes(n)) for n in sk.joint_names}
    assert per_joint["neck"] == 3  # hip-centre rotation of the trunk
    assert per_joint["left_shoulder"] == per_joint["right_shoulder"] == 1  # torso
    assert per_joint["left_elbow"] == per_joint["right_elbow"] == 3  # shoulder joints
    assert per_joint["left_wrist"] == per_joint["right_wrist"] == 1  # elbows
    assert per_joint["nose"] == 3  # head
    for satellite in ("left_eye", "right_eye", "left_ear", "right_ear", "mouth_left"):
        assert per_joint[satellite] == 0


def test_default_hand():
    sk = validate_skeleton(default_hand_spec())
    assert sk.n_joints == 21
    assert sk.total_dof == 26
    assert sk.joint_names[0] == "wrist"


@pytest.mark.parametrize("name,angles", [("body_panoptic29", 29), ("body_h36m31", 31)])
def test_other_shipped_skeletons(name, angles):
    assert load_skeleton(name).total_dof == angles


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_properties(name):
    sk = load_skeleton(name)
    pos = {j: k for k, j in enumerate(sk.bfs_order)}
    for i, p in enumerate(sk.parents):
        if p >= 0:
            assert pos[p] < pos[i]
    again = validate_skeleton(sk)
    assert np.array_equal(again.bfs_order, sk.bfs_order)
    assert again == sk
    assert sk.total_dof == sum(len(j.dof) for j in sk.spec.joints)
    assert np.all(sk.nominal_bones() > 0)
    root = sk.spec.joints[sk.root_index]
    assert [(d.min_deg, d.max_deg) for d in root.dof] == [(-180.0, 180.0)] * 3


def test_save_load_roundtrip(tmp_path, body):
    path = tmp_path / "sk.json"
    save_skeleton(body, path)
    assert load_skeleton(path) == body
    assert json.loads(path.read_text())["root"] == "hip_center"


def test_validated_is_immutable(body):
    with pytest.raises(ValueError):
        body.dof_min[0] = 0.0


def test_mirror_examples():
    assert np.array_equal(mirror_hand(np.array([0.5, 0.2])), [-0.5, 0.2])
    assert np.array_equal(mirror_hand(np.array([0.0, 0.7])), [0.0, 0.7])
    kp = Keypoints2D(np.array([[1.0, 2.0], [-3.0, 4.0]]), np.array([0.2, 0.9]))
    m = mirror_hand(kp)
    assert np.array_equal(m.confidence, kp.confidence)
    assert np.array_equal(m.points, [[-1.0, 2.0], [3.0, 4.0]])


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
def test_mirror_involution_and_y_distances(pts):
    P = np.array(pts, dtype=float)
    M = mirror_hand(P)
    assert np.array_equal(mirror_hand(M), P)
    assert np.array_equal(M[:, 1], P[:, 1])
    assert np.array_equal(np.abs(M[:, None, 1] - M[None, :, 1]), np.abs(P[:, None, 1] - P[None, :, 1]))
