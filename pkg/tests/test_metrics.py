import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

import oracles
from actionpose.metrics import (
    AUC_THRESHOLDS_MM,
    REPORT_KEYS,
    EvalReport,
    auc,
    evaluate_predictions,
    joint_errors,
    mpjpe,
    p_mpjpe,
    pck,
    pck_curve,
    procrustes_align,
)


def random_pose(rng, frames=1, joints=17):
    return rng.normal(scale=250.0, size=(frames, joints, 3))


def similarity(rng, pose, scale=None):
    R = Rotation.random(random_state=rng).as_matrix()
    s = scale if scale is not None else rng.uniform(0.5, 2.0)
    t = rng.normal(scale=500.0, size=3)
    return s * pose @ R.T + t


def test_mpjpe_identity_and_offset():
    rng = np.random.default_rng(0)
    gt = random_pose(rng, 4)
    assert mpjpe(gt, gt) == 0.0
    assert mpjpe(gt + np.array([3.0, 4.0, 0.0]), gt) == pytest.approx(5.0, abs=1e-12)


def test_mpjpe_averaging_order():
    rng = np.random.default_rng(1)
    a, b = random_pose(rng, 5), random_pose(rng, 5)
    per_frame = np.linalg.norm(a - b, axis=-1).mean(axis=1).mean()
    assert mpjpe(a, b) == pytest.approx(per_frame, rel=1e-12)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        mpjpe(np.zeros((2, 17, 3)), np.zeros((2, 16, 3)))
    with pytest.raises(ValueError):
        p_mpjpe(np.zeros((17, 3)), np.zeros((17, 2)))


def test_p_mpjpe_zero_on_similarity_copy_scaled_1_3():
    rng = np.random.default_rng(2)
    gt = random_pose(rng, 3)
    pred = np.stack([similarity(rng, f, scale=1.3) for f in gt])
    assert p_mpjpe(pred, gt) == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_p_mpjpe_invariant_to_similarity_of_pred(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_pose(rng), random_pose(rng)
    moved = similarity(rng, pred[0])[None]
    assert p_mpjpe(moved, gt) == pytest.approx(p_mpjpe(pred, gt), abs=1e-6)


def test_reflection_not_reached():
    rng = np.random.default_rng(3)
    gt = random_pose(rng)[0]
    mirrored = gt * np.array([-1.0, 1.0, 1.0])
    assert oracles.p_mpjpe_with_reflection(mirrored, gt) == pytest.approx(0.0, abs=1e-9)
    assert p_mpjpe(mirrored[None], gt[None]) > 1.0


def test_brute_force_alignment_j3():
    rng = np.random.default_rng(4)
    for _ in range(3):
        pred, gt = random_pose(rng, 1, 3), random_pose(rng, 1, 3)
        assert p_mpjpe(pred, gt) == pytest.approx(oracles.brute_force_p_mpjpe(pred[0], gt[0]), abs=1e-3)


def test_collinear_frame_falls_back_to_translation(caplog):
    line = np.outer(np.arange(17, dtype=float), [1.0, 2.0, 3.0])
    gt = np.random.default_rng(5).normal(size=(17, 3))
    with caplog.at_level("WARNING"):
        aligned, flags = procrustes_align(line[None], gt[None])
    assert flags.tolist() == [True]
    np.testing.assert_allclose(aligned[0] - aligned[0].mean(0), line - line.mean(0), atol=1e-9)
    assert "collinear" in caplog.text


def test_pck_counts():
    gt = np.zeros((1, 17, 3))
    assert pck(gt, gt) == 100.0
    pred = gt.copy()
    pred[0, 5, 0] = 200.0
    assert pck(pred, gt) == pytest.approx(16 / 17 * 100, abs=1e-9)
    assert round(pck(pred, gt), 2) == 94.12


def test_auc_counts():
    gt = np.zeros((2, 17, 3))
    assert auc(gt, gt) == 100.0
    pred = gt + np.array([151.0, 0.0, 0.0])
    assert auc(pred, gt) == 0.0
    assert len(AUC_THRESHOLDS_MM) == 31
    # every joint at 12 mm passes thresholds 15..150: 28 of 31
    pred = gt + np.array([0.0, 12.0, 0.0])
    assert auc(pred, gt) == pytest.approx(28 / 31 * 100, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pck_monotone_and_auc_bounded(seed):
    rng = np.random.default_rng(seed)
    gt = random_pose(rng, 2)
    pred = gt + rng.normal(scale=rng.uniform(1, 200), size=gt.shape)
    curve = pck_curve(pred, gt)
    assert np.all(np.diff(curve) >= 0)
    assert 0 <= auc(pred, gt) <= pck(pred, gt) <= 100


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mpjpe_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = random_pose(rng, 2), random_pose(rng, 2), random_pose(rng, 2)
    assert mpjpe(a, b) == pytest.approx(mpjpe(b, a), rel=1e-12)
    assert mpjpe(a, b) > 0
    assert mpjpe(a, c) <= mpjpe(a, b) + mpjpe(b, c) + 1e-9


def test_p_mpjpe_below_mpjpe_random():
    rng = np.random.default_rng(6)
    pred, gt = random_pose(rng, 1000), random_pose(rng, 1000)
    e = joint_errors(pred, gt).mean(axis=1)
    aligned, _ = procrustes_align(pred, gt)
    ea = joint_errors(aligned, gt).mean(axis=1)
    assert np.all(ea <= e + 1e-9)


def test_report_roundtrip_and_keys():
    rng = np.random.default_rng(7)
    gts = [random_pose(rng, 4), random_pose(rng, 6)]
    preds = [g + rng.normal(scale=20, size=g.shape) for g in gts]
    rep = evaluate_predictions(preds, gts, ["a", "b"])
    assert tuple(rep.as_dict()) == REPORT_KEYS
    assert rep.num_clips == 2 and rep.num_frames == 10
    assert [r["clip_id"] for r in rep.per_clip] == ["a", "b"]
    back = EvalReport.from_kv(rep.to_kv())
    assert back.as_dict() == rep.as_dict()
    assert rep.p_mpjpe_mm <= rep.mpjpe_mm + 1e-9
    assert "MPJPE (mm)" in rep.to_text()
