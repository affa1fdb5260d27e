import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amgen.autodiff.tensor import ContractError, DimensionError
from amgen.body import DegeneracyError, default_template, generate_motion, posed_joints
from amgen.metrics import (
    EmbedVocab,
    Tracklet,
    clip_style_video_score,
    corr_matrix,
    extract_tracklets,
    joint_tracklets,
    motion_fidelity,
    motion_fidelity_raw,
    text_image_similarity,
    tracklet_corr,
    video_motion_fidelity,
)
from amgen.render import camera_trajectory, project_points


def _const(d, n=5):
    return Tracklet.from_displacements((0.0, 0.0), np.tile(d, (n, 1)))


# -- similarity --------------------------------------------------------------------

def test_similarity_examples():
    assert text_image_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(100.0)
    assert text_image_similarity([1, 0], [0, 4]) == 0.0
    assert text_image_similarity([1, 0], np.array([1, 1]) / np.sqrt(2)) == pytest.approx(70.71, abs=5e-3)


def test_similarity_zero_vector():
    with pytest.raises(DegeneracyError):
        text_image_similarity([0, 0], [1, 0])


def test_vocab_is_frozen_and_seeded():
    a, b = EmbedVocab(seed=3), EmbedVocab(seed=3)
    assert np.array_equal(a.vector("park"), b.vector("park"))
    assert not np.array_equal(a.vector("park"), EmbedVocab(seed=4).vector("park"))
    assert np.linalg.norm(a.vector("walking")) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        a.vector("park")[0] = 1.0


def test_caption_embedding(caplog):
    v = EmbedVocab()
    e = v.embed_text("a man walking zzz")
    expected = v.vector("a") + v.vector("man") + v.vector("walking")
    np.testing.assert_allclose(e, expected / np.linalg.norm(expected))
    assert "zzz" in caplog.text
    with pytest.raises(DegeneracyError):
        v.embed_text("zzz qqq")


def test_clip_style_score_identities():
    vocab = EmbedVocab()
    video = np.random.default_rng(0).random((4, 16, 16, 3))
    text = "a woman in a red top dancing on a beach"
    s = clip_style_video_score(video, text, vocab)
    assert -100 <= s <= 100
    assert clip_style_video_score(video[::-1], text, vocab) == pytest.approx(s, abs=1e-12)
    assert clip_style_video_score(video, text, vocab) == s
    frame_emb = vocab.embed_frame(video[0])
    assert text_image_similarity(frame_emb, frame_emb) == pytest.approx(100.0)


# -- tracker -----------------------------------------------------------------------

def _pattern(h=32, w=32, seed=0):
    return np.random.default_rng(seed).random((h, w))


def test_static_video_zero_displacement():
    video = np.repeat(_pattern()[None], 4, axis=0)
    tracks = extract_tracklets(video, grid_stride=8, window=2)
    assert len(tracks) == 16
    assert all(not t.displacements.any() for t in tracks)


def test_shift_oracle():
    base = _pattern(seed=1)
    video = np.stack([np.roll(base, k, axis=1) for k in range(5)])
    for t in extract_tracklets(video, grid_stride=8, window=2):
        np.testing.assert_allclose(t.displacements, np.tile([1.0, 0.0], (4, 1)), atol=1e-12)


def test_grid_count_and_mask():
    video = np.zeros((2, 32, 32, 3))
    assert len(extract_tracklets(video, 8, 2)) == 16
    mask = np.zeros((32, 32), bool)
    mask[:16] = True
    assert len(extract_tracklets(video, 8, 2, mask)) == 8


def test_subpixel_shift_is_refined():
    x = np.arange(64)
    row = np.sin(x / 3.0) + 0.5 * np.cos(x / 7.0)
    frames = [np.tile(np.interp(x - 0.4 * k, x, row, period=64), (64, 1)) for k in range(3)]
    tracks = extract_tracklets(np.stack(frames), 16, 2)
    dx = np.array([t.displacements[:, 0] for t in tracks])
    assert np.abs(dx - 0.4).max() < 0.15
    coarse = extract_tracklets(np.stack(frames), 16, 2, subpixel=False)
    assert set(np.unique([t.displacements[:, 0] for t in coarse])) <= {0.0, 1.0}


def test_tracker_errors():
    with pytest.raises(ContractError):
        extract_tracklets(np.zeros((1, 8, 8)), 4, 1)
    with pytest.raises(DimensionError):
        extract_tracklets(np.zeros((3, 8)), 4, 1)


def test_joint_tracklets_follow_projection():
    tpl = default_template()
    motion = generate_motion("wave", 4, seed=0)
    cams = camera_trajectory("static", {}, 4, resolution=(32, 32))
    tracks = joint_tracklets(tpl, motion, cams, joints=[0, 21])
    u, v, _ = project_points(cams[2], posed_joints(tpl, *motion.actor(2, 0))[[0, 21]])
    np.testing.assert_allclose(tracks[1].points[2], [u[1], v[1]])
    assert len(tracks) == 2 and tracks[0].points.shape == (4, 2)


# -- correlation and fidelity ---------------------------------------------------------

def test_corr_examples():
    tau = Tracklet.from_displacements((3, 4), np.random.default_rng(0).standard_normal((6, 2)))
    assert tracklet_corr(tau, tau) == pytest.approx(1.0)
    assert tracklet_corr(tau.displacements, -tau.displacements) == pytest.approx(-1.0)
    assert tracklet_corr(_const((1, 0)), _const((0, 1))) == 0.0


def test_corr_zero_frames_contribute_zero():
    a = np.array([[1.0, 0.0], [0.0, 0.0], [2.0, 0.0], [1.0, 1.0]])
    assert tracklet_corr(a, a) == pytest.approx(0.75)


def test_corr_scale_invariant():
    a = np.random.default_rng(1).standard_normal((5, 2))
    b = np.random.default_rng(2).standard_normal((5, 2))
    assert tracklet_corr(3.0 * a, b) == pytest.approx(tracklet_corr(a, b))


def test_corr_length_mismatch():
    with pytest.raises(ContractError):
        tracklet_corr(np.ones((3, 2)), np.ones((4, 2)))
    with pytest.raises(ContractError):
        corr_matrix([np.ones((3, 2))], [np.ones((4, 2))])


def test_fidelity_hand_examples():
    assert motion_fidelity([_const((1, 0))], [_const((0, 1))]) == 0.0
    T = [_const((1, 0)), _const((-1, 0))]
    assert motion_fidelity_raw(T, [_const((1, 0))]) == pytest.approx(1.0)
    assert motion_fidelity(T, [_const((1, 0))]) == pytest.approx(50.0)


def test_fidelity_tie_and_matrix_agree():
    T = [_const((1, 0)), _const((1, 0))]
    c = corr_matrix(T, [_const((1, 0))])
    assert c.shape == (2, 1) and np.allclose(c, 1.0)
    assert [tracklet_corr(a, b) for a in T for b in [_const((1, 0))]] == pytest.approx(c.ravel())


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 8), st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_fidelity_self_is_hundred(n, frames, seed):
    rng = np.random.default_rng(seed)
    disp = rng.standard_normal((n, frames - 1, 2)) + 0.1
    T = [Tracklet.from_displacements(rng.random(2), d) for d in disp]
    assert abs(motion_fidelity(T, T) - 100.0) < 1e-9


def test_fidelity_empty():
    with pytest.raises(ContractError):
        motion_fidelity([], [_const((1, 0))])
    with pytest.raises(ContractError):
        corr_matrix([_const((1, 0))], [])


def test_video_fidelity_against_itself():
    base = np.random.default_rng(3).random((16, 16, 3))
    video = np.stack([np.roll(base, k, axis=0) for k in range(4)])
    assert video_motion_fidelity(video, video) == pytest.approx(100.0)
