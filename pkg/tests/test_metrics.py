import numpy as np
import pytest

import oracles
from speakanim.geometry import LandmarkSequence, pose_track
from speakanim.metrics import (
    MetricReport,
    MetricUndefined,
    aggregate,
    angle_difference,
    evaluate_clip,
    format_report,
    lip_metrics,
    parse_report,
    pose_metrics,
    shoelace_area,
)


def seq(frames):
    return LandmarkSequence(np.asarray(frames, dtype=np.float64), 62.5)


def moving_face(template, rng, t=5, jitter=0.01):
    return template[None] + rng.normal(0, jitter, (t, 68, 3))


def test_identical_sequences_score_zero(template, rng):
    s = seq(moving_face(template, rng))
    assert lip_metrics(s, s) == (0.0, 0.0, 0.0)
    assert pose_metrics(s, s, template) == (0.0, 0.0, 0.0, 0.0)
    assert all(v == 0.0 for v in evaluate_clip(s, s, template).values().values())


def test_constant_offset_on_jaw_and_lips(template, rng):
    ref = moving_face(template, rng)
    u = np.array([0.03, -0.04, 0.0])
    pred = ref.copy()
    pred[:, list(range(17)) + list(range(48, 68))] += u
    d_ll, d_vl, _ = lip_metrics(seq(pred), seq(ref))
    width = np.linalg.norm(ref[:, 54] - ref[:, 48], axis=-1).max()
    assert abs(d_ll - 0.05 / width) < 1e-12
    assert abs(d_vl) < 1e-15


def test_square_mouth_area_example(template):
    ref = np.repeat(template[None], 2, axis=0).copy()
    square = np.array([[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1], [0.5, 1], [0, 1], [0, 0.5]], float)
    ref[:, 60:68, :2] = square
    pred = ref.copy()
    pred[:, 60:68, :2] = 2 * square
    assert shoelace_area(ref[0, 60:68]) == 1.0
    assert abs(lip_metrics(seq(pred), seq(ref))[2] - 3.0) < 1e-12


def test_extra_yaw(template, rng):
    ref = moving_face(template, rng, t=4, jitter=0.0)
    yaw = oracles.rot_y(5.0)
    c = ref.mean(axis=1, keepdims=True)
    pred = (ref - c) @ yaw.T + c
    rot = lambda s: np.array([p.rotation for p in pose_track(seq(s), template)])
    delta = rot(pred) - rot(ref)
    assert np.allclose(delta, [[5.0, 0.0, 0.0]] * 4, atol=1e-6)
    # D-Rot is the mean over the three Euler angles
    d_rot = pose_metrics(seq(pred), seq(ref), template)[2]
    assert abs(d_rot - 5.0 / 3.0) < 1e-6


def test_angle_difference_wraps():
    assert np.allclose(angle_difference([179.0, -170.0], [-179.0, 170.0]), [2.0, 20.0])


def test_lip_metrics_match_oracle(template, rng):
    for t in (1, 2, 5):
        ref = moving_face(template, rng, t, 0.05)
        pred = moving_face(template, rng, t, 0.05)
        ours = lip_metrics(seq(pred), seq(ref))
        assert np.allclose(ours, oracles.lip_metrics(pred.tolist(), ref.tolist()), rtol=0, atol=1e-10)


def test_position_metrics_match_oracle(template, rng):
    for t in (1, 3, 5):
        ref = moving_face(template, rng, t, 0.05)
        pred = moving_face(template, rng, t, 0.05)
        d_l, d_v, _, _ = pose_metrics(seq(pred), seq(ref), template)
        assert np.allclose((d_l, d_v), oracles.position_metrics(pred.tolist(), ref.tolist()), rtol=0, atol=1e-10)


def test_d_ll_scale_covariance(template, rng):
    ref, pred = moving_face(template, rng), moving_face(template, rng)
    base = lip_metrics(seq(pred), seq(ref))
    for alpha in (0.1, 7.0):
        scaled = lip_metrics(seq(alpha * pred), seq(alpha * ref))
        assert np.allclose(scaled, base, rtol=1e-12)


def test_d_vl_ignores_clip_offset(template, rng):
    ref = moving_face(template, rng)
    assert lip_metrics(seq(ref + [0.2, -0.1, 0.3]), seq(ref))[1] < 1e-15


def test_degenerate_references(template, rng):
    flat = np.zeros((3, 68, 3))
    with pytest.raises(MetricUndefined):
        lip_metrics(seq(flat), seq(flat))
    closed = np.repeat(template[None], 3, axis=0).copy()
    closed[:, 60:68] = closed[:, 60:61]
    with pytest.raises(MetricUndefined):
        lip_metrics(seq(closed), seq(closed))
    with pytest.raises(MetricUndefined):
        pose_metrics(seq(flat), seq(flat), template)
    with pytest.raises(ValueError):
        lip_metrics(seq(closed[:2]), seq(closed))


def test_report_golden():
    rep = MetricReport(0.5, 0.25, 0.125, 1.0, 2.0, 3.0, 4.0, lip_width=1.0, mouth_area=0.5, face_width=2.0)
    text = format_report({"c1": rep})
    assert text == (
        "# metrics version=1 fields=d_ll,d_vl,d_a,d_l,d_v,d_rot,d_pos,lip_width,mouth_area,face_width\n"
        "clip c1 d_ll=0.5 d_vl=0.25 d_a=0.125 d_l=1.0 d_v=2.0 d_rot=3.0 d_pos=4.0 lip_width=1.0 mouth_area=0.5 face_width=2.0\n"
        "aggregate all d_ll=0.5 d_vl=0.25 d_a=0.125 d_l=1.0 d_v=2.0 d_rot=3.0 d_pos=4.0 lip_width=nan mouth_area=nan face_width=nan\n"
    )
    back = parse_report(text)
    assert back["c1"] == rep
    assert back["__aggregate__"].values() == rep.values()


def test_aggregate_is_mean():
    a = MetricReport(*[1.0] * 7)
    b = MetricReport(*[3.0] * 7)
    assert aggregate([a, b]).values() == {k: 2.0 for k in MetricReport.METRICS}
    with pytest.raises(ValueError):
        aggregate([])


def test_rotation_metrics_match_oracle(template, rng):
    from scipy.spatial.transform import Rotation

    for t in (1, 3, 5):
        ref = moving_face(template, rng, t, 0.02)
        pred = moving_face(template, rng, t, 0.02)
        for frames in (ref, pred):
            for f in frames:
                rot = Rotation.from_euler("YXZ", rng.uniform(-25, 25, 3), degrees=True).as_matrix()
                f[:] = f @ rot.T + rng.normal(0, 0.1, 3)
        _, _, d_rot, d_pos = pose_metrics(seq(pred), seq(ref), template)
        o_rot, o_pos = oracles.pose_metrics(pred.tolist(), ref.tolist(), template.tolist())
        assert abs(d_rot - o_rot) < 1e-10 and abs(d_pos - o_pos) < 1e-10
