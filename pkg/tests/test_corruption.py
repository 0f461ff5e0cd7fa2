from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actionpose.corruption import (
    CONFIDENCE_FLOOR,
    MODES,
    CorruptionConfig,
    CorruptionRecord,
    add_noise,
    mask_body_part,
    mask_joint_frame,
    mask_time_window,
    replay,
    round_half_up,
    schedule_corruption,
)
from actionpose.skeleton import PART_NAMES, PoseSeq2D, h36m_layout, part_joints


def clean(T, seed=0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-0.9, 0.9, size=(T, 17, 2))
    return PoseSeq2D(np.concatenate([xy, np.ones((T, 17, 1))], axis=-1))


def test_round_half_up():
    assert round_half_up(0.15, 10) == 2   # 1.5 -> 2
    assert round_half_up(0.15, 30) == 5   # 4.5 -> 5
    assert round_half_up(0.05, 10) == 1   # 0.5 -> 1
    assert round_half_up(0.15, 27) == 4   # 4.05 -> 4


@settings(max_examples=80, deadline=None)
@given(st.integers(10, 243), st.integers(0, 2**31 - 1))
def test_joint_frame_counts(T, seed):
    out, rec = mask_joint_frame(clean(T), 0.05, 0.15, seed)
    n_frames = round_half_up(0.15, T)
    whole = rec.masked_entries.all(axis=1)
    assert whole.sum() == n_frames
    singles = rec.masked_entries[~whole].sum()
    assert singles == round_half_up(0.05, (T - n_frames) * 17)
    np.testing.assert_array_equal(out.data[rec.masked_entries], 0.0)
    assert np.all(out.data[~rec.masked_entries, 2] == 1.0)


def test_body_part_uniform():
    seq = clean(12)
    counts = Counter(mask_body_part(seq, s)[1].params["part_name"] for s in range(6000))
    assert set(counts) == set(PART_NAMES)
    assert all(850 <= n <= 1150 for n in counts.values())


def test_body_part_masks_exactly_the_part():
    lay = h36m_layout()
    out, rec = mask_body_part(clean(9), 11)
    joints = sorted(part_joints(lay, rec.params["part_name"]))
    assert rec.masked_entries[:, joints].all()
    assert rec.masked_entries.sum() == 9 * len(joints)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_time_window_length_range(seed):
    _, rec = mask_time_window(clean(100), 30, 80, seed)
    L = rec.params["window_len"]
    assert 30 <= L <= 80
    rows = np.flatnonzero(rec.masked_entries.all(axis=1))
    assert len(rows) == L and rows[-1] - rows[0] == L - 1
    assert rec.masked_entries.sum() == L * 17


def test_time_window_needs_long_sequence():
    with pytest.raises(ValueError):
        mask_time_window(clean(27), 30, 80, 0)
    with pytest.raises(ValueError):
        mask_time_window(clean(27), 9, 3, 0)


def test_noise_std_and_masked_untouched():
    seq = clean(200)
    seq.data[5] = 0.0
    out = add_noise(seq, 0.01, 0.0, 3)
    delta = (out.data[..., :2] - seq.data[..., :2])
    visible = seq.data[..., 2] > 0
    assert delta[visible].size >= 6000
    big = add_noise(clean(2942), 0.01, 0.0, 4)
    d = (big.data[..., :2] - clean(2942).data[..., :2]).ravel()
    assert d.size >= 100_000
    assert abs(d.std() / 0.01 - 1) < 0.02
    np.testing.assert_array_equal(out.data[5], 0.0)
    conf = out.data[visible][:, 2]
    assert np.all((conf >= CONFIDENCE_FLOOR) & (conf <= 1.0))


def test_noise_outliers_lower_confidence():
    seq = clean(50)
    out = add_noise(seq, 0.01, 1.0, 1)
    assert np.abs(out.data[..., :2] - seq.data[..., :2]).max() <= 0.3
    assert np.median(out.data[..., 2]) < 0.5


def test_schedule_frequencies():
    seq = clean(100)
    counts = Counter(schedule_corruption(seq, s)[1].mode for s in range(4000))
    for mode, p in zip(MODES, (0.5, 0.25, 0.25)):
        assert abs(counts[mode] / 4000 - p) <= 0.03


def test_replay_bit_exact(tmp_path):
    seq = clean(100)
    for s in range(30):
        out, rec = schedule_corruption(seq, s)
        again = replay(seq, rec)
        assert again.data.tobytes() == out.data.tobytes()
        rec.save(tmp_path / "r.bin")
        loaded = CorruptionRecord.load(tmp_path / "r.bin")
        assert loaded == rec
        assert replay(seq, loaded).data.tobytes() == out.data.tobytes()
    out, rec = mask_joint_frame(seq, 0.05, 0.15, 9)
    assert replay(seq, rec).data.tobytes() == out.data.tobytes()


def test_identity_pipeline():
    seq = clean(30)
    cfg = CorruptionConfig(joint_ratio=0.0, frame_ratio=0.0, sigma=0.0, outlier_prob=0.0, mode_probs=(1.0, 0.0, 0.0))
    out, rec = schedule_corruption(seq, 5, cfg)
    np.testing.assert_array_equal(out.data, seq.data)
    assert not rec.masked_entries.any() and not rec.noise_applied


def test_ratio_validation():
    with pytest.raises(ValueError):
        mask_joint_frame(clean(10), 1.0, 0.1, 0)
    with pytest.raises(ValueError):
        add_noise(clean(10), -0.1, 0.0, 0)
