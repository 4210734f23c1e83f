import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from talkncelab.core import FrameLabels, active_indices, gather_frames, EmbeddingSequence
from talkncelab.gradcheck import fd_talknce, random_instance, rel_error
from talkncelab.talknce import (
    DENOMINATORS,
    DIRECTIONS,
    NotEnoughActiveFrames,
    TalkNCEConfig,
    ZeroNormError,
    similarity,
    talknce_grad,
    talknce_loss,
    talknce_oracle,
)

EXCL = TalkNCEConfig(denominator="exclusive_as_written")
INCL = TalkNCEConfig(denominator="inclusive_standard")
# hand summation over the engineered 2x2 matrix [[0.9, -0.2], [0.1, 0.5]]:
# 0.5 * (log(1 + e^-1.1) + log(1 + e^-0.4))
INCLUSIVE_2X2 = 0.4001752887576917


def test_similarity_examples():
    s = similarity([[3.0, 4.0]], [[0.6, 0.8]]).s
    assert s[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert similarity([[1.0, 0.0]], [[0.0, 1.0]]).s[0, 0] == 0.0


def test_similarity_matches_double_loop():
    rng = np.random.default_rng(0)
    v, a = rng.standard_normal((5, 8)), rng.standard_normal((7, 8))
    expected = np.empty((5, 7))
    for i in range(5):
        for j in range(7):
            expected[i, j] = sum(v[i, k] * a[j, k] for k in range(8)) / (
                math.sqrt(sum(x * x for x in v[i])) * math.sqrt(sum(x * x for x in a[j]))
            )
    np.testing.assert_allclose(similarity(v, a).s, expected, atol=1e-12, rtol=0)
    assert np.all(np.abs(similarity(v, a).s) <= 1 + 1e-6)


def test_similarity_errors():
    with pytest.raises(ZeroNormError, match="frame 1"):
        similarity(EmbeddingSequence(np.array([[1.0, 0.0], [0.0, 0.0]]), track_id="t7"), np.ones((2, 2)))
    with pytest.raises(ValueError, match="mismatch"):
        similarity(np.ones((2, 3)), np.ones((2, 4)))


def test_uniform_similarity_closed_forms():
    e = np.tile([0.6, 0.8], (3, 1))
    lab = [1, 1, 1]
    assert talknce_loss(e, e, lab, EXCL)[0] == pytest.approx(math.log(2), abs=1e-12)
    assert talknce_loss(e, e, lab, INCL)[0] == pytest.approx(math.log(3), abs=1e-12)
    assert talknce_oracle(e, e, lab, EXCL) == pytest.approx(0.693147, abs=1e-6)


def test_engineered_two_frame_case(engineered):
    v, a = engineered
    np.testing.assert_allclose(similarity(v, a).s, [[0.9, -0.2], [0.1, 0.5]], atol=1e-14)
    assert talknce_loss(v, a, [1, 1], EXCL)[0] == pytest.approx(-0.75, abs=1e-12)
    assert talknce_oracle(v, a, [1, 1], EXCL) == pytest.approx(-0.75, abs=1e-12)
    assert talknce_loss(v, a, [1, 1], INCL)[0] == pytest.approx(INCLUSIVE_2X2, abs=1e-12)


def test_selection_reported():
    rng = np.random.default_rng(1)
    v, a = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    lab = [1, 0, 1, 1, 0, 1]
    _, sel = talknce_loss(v, a, lab)
    assert sel.visual.tolist() == [0, 2, 3, 5] and sel.audio.tolist() == [0, 2, 3, 5]
    _, sel = talknce_loss(v, a, lab, TalkNCEConfig(sampling=("active", "all")))
    assert sel.audio.tolist() == list(range(6))


def test_not_enough_anchors():
    e = np.random.default_rng(0).standard_normal((4, 3))
    with pytest.raises(NotEnoughActiveFrames):
        talknce_loss(e, e, [0, 1, 0, 0], EXCL)
    assert math.isfinite(talknce_loss(e, e, [0, 1, 0, 0], INCL)[0])
    with pytest.raises(NotEnoughActiveFrames):
        talknce_loss(e, e, [0, 0, 0, 0], INCL)


@pytest.mark.parametrize("denominator", DENOMINATORS)
@pytest.mark.parametrize("direction", DIRECTIONS)
def test_oracle_agreement(denominator, direction):
    rng = np.random.default_rng(hash((denominator, direction)) % 2**32)
    for _ in range(50):
        T, C = int(rng.integers(3, 33)), int(rng.integers(1, 17))
        v, a = rng.standard_normal((T, C)), rng.standard_normal((T, C))
        lab = (rng.random(T) < 0.6).astype(int)
        lab[:2] = 1
        sampling = tuple(rng.choice(["active", "all"], size=2))
        cfg = TalkNCEConfig(denominator=denominator, direction=direction, sampling=sampling)
        assert abs(talknce_loss(v, a, lab, cfg)[0] - talknce_oracle(v, a, lab, cfg)) < 1e-9


def test_gradient_zero_rows_and_symmetry():
    rng = np.random.default_rng(2)
    v, a = rng.standard_normal((8, 4)), rng.standard_normal((8, 4))
    lab = np.array([1, 0, 1, 1, 0, 0, 1, 1])
    g_v, g_a = talknce_grad(v, a, lab, EXCL)
    assert np.all(g_v[lab == 0] == 0.0) and np.all(g_a[lab == 0] == 0.0)

    same = np.tile([1.0, 2.0, 0.5], (5, 1))
    g_v, g_a = talknce_grad(same, same, [1] * 5, EXCL)
    assert np.all(np.isfinite(g_v))
    np.testing.assert_allclose(g_v, np.broadcast_to(g_v[0], g_v.shape), atol=1e-15)
    np.testing.assert_allclose(g_a, np.broadcast_to(g_a[0], g_a.shape), atol=1e-15)


@pytest.mark.parametrize("cfg", [
    EXCL, INCL,
    TalkNCEConfig(direction="symmetric"),
    TalkNCEConfig(sampling=("all", "all"), denominator="inclusive_standard", direction="symmetric"),
    TalkNCEConfig(tau=0.05),
])
def test_gradient_vs_finite_differences(cfg):
    for seed in range(5):
        v, a, lab = random_instance(seed, T=6, C=4)
        g_v, g_a = talknce_grad(v, a, lab, cfg)
        n_v, n_a = fd_talknce(v, a, lab, cfg)
        assert rel_error(g_v, n_v).max() < 1e-4
        assert rel_error(g_a, n_a).max() < 1e-4


def _instance(seed, T=12, C=5):
    rng = np.random.default_rng(seed)
    lab = (rng.random(T) < 0.6).astype(int)
    lab[:3] = 1
    return rng.standard_normal((T, C)), rng.standard_normal((T, C)), lab, rng


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1e-3, 1.0, 1e3]), st.sampled_from([1e-3, 1.0, 1e3]),
       st.sampled_from(DENOMINATORS))
def test_scale_invariance(seed, alpha, beta, denominator):
    v, a, lab, _ = _instance(seed)
    cfg = TalkNCEConfig(denominator=denominator)
    assert talknce_loss(alpha * v, beta * a, lab, cfg)[0] == pytest.approx(
        talknce_loss(v, a, lab, cfg)[0], abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(DIRECTIONS))
def test_joint_permutation_invariance(seed, direction):
    v, a, lab, rng = _instance(seed)
    perm = rng.permutation(len(lab))
    cfg = TalkNCEConfig(direction=direction)
    assert talknce_loss(v[perm], a[perm], lab[perm], cfg)[0] == pytest.approx(
        talknce_loss(v, a, lab, cfg)[0], abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(DENOMINATORS))
def test_masking_equivalence(seed, denominator):
    v, a, lab, _ = _instance(seed)
    cfg = TalkNCEConfig(denominator=denominator)
    idx = active_indices(FrameLabels(lab))
    v_act = gather_frames(EmbeddingSequence(v), idx)
    a_act = gather_frames(EmbeddingSequence(a), idx)
    full = talknce_loss(v, a, lab, cfg)[0]
    assert talknce_loss(v_act, a_act, np.ones(idx.size, int), cfg)[0] == pytest.approx(full, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000))
def test_exclusive_below_inclusive_and_inclusive_nonnegative(seed):
    v, a, lab, _ = _instance(seed)
    incl = talknce_loss(v, a, lab, INCL)[0]
    excl = talknce_loss(v, a, lab, EXCL)[0]
    assert incl >= 0.0
    assert excl < incl


def test_inclusive_equals_log_tact_for_equal_similarities():
    e = np.ones((7, 3))
    lab = [1, 0, 1, 1, 1, 0, 1]
    assert talknce_loss(e, e, lab, INCL)[0] == pytest.approx(math.log(5), abs=1e-12)


def test_stability_small_tau():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((10, 4))
    a = v + 1e-3 * rng.standard_normal((10, 4))
    for tau in (1e-3, 1e-2):
        for cfg in (TalkNCEConfig(tau=tau), TalkNCEConfig(tau=tau, denominator="inclusive_standard")):
            loss = talknce_loss(v, a, [1] * 10, cfg)[0]
            g_v, g_a = talknce_grad(v, a, [1] * 10, cfg)
            assert math.isfinite(loss) and np.all(np.isfinite(g_v)) and np.all(np.isfinite(g_a))


def test_config_validation():
    with pytest.raises(ValueError):
        TalkNCEConfig(tau=0.0)
    with pytest.raises(ValueError):
        TalkNCEConfig(sampling=("active",))
    with pytest.raises(ValueError):
        TalkNCEConfig(denominator="other")
