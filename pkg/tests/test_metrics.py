import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from talkncelab.metrics import (
    ScoredFrames,
    average_precision,
    eer,
    evaluate_scores,
    read_predictions,
    roc_auc,
    write_predictions,
)

EXAMPLE = ScoredFrames([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1])


def ap_ranked(labels_in_rank_order) -> float:
    """All-points AP for an explicit ranking, computed by walking it."""
    hits, total = 0, 0.0
    for r, y in enumerate(labels_in_rank_order, start=1):
        if y:
            hits += 1
            total += hits / r
    return total / hits


def auc_pairwise(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    won = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return won / (len(pos) * len(neg))


def ap_tie_oracle(scores, labels) -> float:
    """Average AP over every ordering of the items inside each tied block."""
    scores, labels = np.asarray(scores), np.asarray(labels)
    values = sorted(set(scores.tolist()), reverse=True)
    blocks = [list(labels[scores == v]) for v in values]
    acc, count = 0.0, 0
    for combo in itertools.product(*[list(itertools.permutations(b)) for b in blocks]):
        acc += ap_ranked([y for block in combo for y in block])
        count += 1
    return acc / count


def test_ap_example():
    assert average_precision(EXAMPLE) == pytest.approx((1 + 2 / 3 + 3 / 4) / 3, abs=1e-12)
    assert abs(average_precision(EXAMPLE) - 0.805556) < 1e-6


def test_auc_example():
    assert abs(roc_auc(EXAMPLE) - 1 / 3) < 1e-12
    assert abs(roc_auc(EXAMPLE) - 0.333333) < 1e-6


def test_perfect_and_flipped():
    sf = ScoredFrames([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])
    assert average_precision(sf) == 1.0
    assert roc_auc(sf) == 1.0 and eer(sf) == 0.0
    flipped = ScoredFrames(sf.scores, 1 - sf.labels)
    assert roc_auc(flipped) == 0.0 and eer(flipped) == 1.0


def test_errors():
    with pytest.raises(ValueError):
        average_precision(ScoredFrames([0.1, 0.2], [0, 0]))
    with pytest.raises(ValueError):
        roc_auc(ScoredFrames([0.1, 0.2], [1, 1]))
    with pytest.raises(ValueError):
        eer(ScoredFrames([0.1, 0.2], [0, 0]))
    with pytest.raises(ValueError):
        ScoredFrames([0.1], [0, 1])


def test_ap_all_tied_matches_permutation_average():
    for n in range(2, 9):
        for k in range(1, n + 1):
            labels = [1] * k + [0] * (n - k)
            sf = ScoredFrames(np.full(n, 0.5), labels)
            assert average_precision(sf) == pytest.approx(ap_tie_oracle(sf.scores, labels), abs=1e-12)


def test_ap_partial_ties_match_permutation_average():
    rng = np.random.default_rng(3)
    for _ in range(60):
        n = int(rng.integers(2, 9))
        scores = rng.integers(0, 3, n) / 2.0
        labels = rng.integers(0, 2, n)
        labels[0] = 1
        sf = ScoredFrames(scores, labels)
        assert average_precision(sf) == pytest.approx(ap_tie_oracle(scores, labels), abs=1e-12)


def test_ap_untied_matches_ranking_walk():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(2, 200))
        scores = rng.random(n)
        labels = rng.integers(0, 2, n)
        labels[0] = 1
        ranked = labels[np.argsort(-scores)]
        assert average_precision(ScoredFrames(scores, labels)) == pytest.approx(ap_ranked(ranked), abs=1e-12)


def test_auc_matches_pairwise_counting():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n = int(rng.integers(2, 120))
        scores = np.round(rng.random(n), 1)  # force ties
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        assert abs(roc_auc(ScoredFrames(scores, labels)) - auc_pairwise(scores, labels)) < 1e-12


def _random_sf(rng, n=60):
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    return ScoredFrames(rng.standard_normal(n), labels)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(6)
    transforms = [np.exp, lambda s: 3 * s + 7, lambda s: 1 / (1 + np.exp(-s)), lambda s: s ** 3, np.arctan]
    for i in range(100):
        sf = _random_sf(rng)
        g = transforms[i % len(transforms)]
        ref = evaluate_scores(sf)
        got = evaluate_scores(ScoredFrames(g(sf.scores), sf.labels))
        assert got.map == pytest.approx(ref.map, abs=1e-12)
        assert got.auc == pytest.approx(ref.auc, abs=1e-12)
        assert got.eer == pytest.approx(ref.eer, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 80))
def test_eer_range_and_separability(seed, n):
    rng = np.random.default_rng(seed)
    sf = _random_sf(rng, n)
    e = eer(sf)
    assert 0.0 <= e <= 1.0
    separable = sf.scores[sf.labels == 1].min() > sf.scores[sf.labels == 0].max()
    assert (e == 0.0) == separable
    shifted = ScoredFrames(sf.scores + 100 * sf.labels, sf.labels)
    assert eer(shifted) == 0.0


def test_eer_interpolation_example():
    # FNR-FPR crosses between thresholds 0.8 and 0.7: (FPR, FNR) = (0, 1/2) then (1/2, 1/2)
    sf = ScoredFrames([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    assert eer(sf) == pytest.approx(0.5, abs=1e-12)
    sf = ScoredFrames([0.9, 0.8, 0.7, 0.6, 0.5, 0.4], [1, 1, 0, 1, 0, 0])
    assert eer(sf) == pytest.approx(1 / 3, abs=1e-12)


def test_prediction_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    ids = [("s00001", "spk0", t) for t in range(10)]
    sf = ScoredFrames(rng.random(10), rng.integers(0, 2, 10), ids)
    write_predictions(sf, tmp_path / "p.tsv")
    back = read_predictions(tmp_path / "p.tsv")
    np.testing.assert_array_equal(back.scores, sf.scores)
    np.testing.assert_array_equal(back.labels, sf.labels)
    assert back.ids == ids
    head = (tmp_path / "p.tsv").read_text().splitlines()[0]
    assert head == "scene_id\tspeaker_id\tframe_idx\tscore\tlabel"
