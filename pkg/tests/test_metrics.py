from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergbias.metrics import (ConfusionCounts, b_cubed, blanc, ceaf_e, confusion, macro_prf, max_similarity_alignment,
                             multiclass_counts, muc, phi4, prf_bias, score_coreference)


def brute_force_ceaf(gold, pred):
    gold, pred = [frozenset(c) for c in gold], [frozenset(c) for c in pred]
    small, big = (gold, pred) if len(gold) <= len(pred) else (pred, gold)
    best = 0.0
    for chosen in permutations(range(len(big)), len(small)):
        best = max(best, sum(phi4(small[i], big[j]) for i, j in enumerate(chosen)))
    return best / len(pred), best / len(gold)


def random_partition(rng, mentions, max_clusters):
    labels = rng.integers(max_clusters, size=len(mentions))
    return [frozenset(m for m, lab in zip(mentions, labels) if lab == c) for c in np.unique(labels)]


partitions = st.lists(st.integers(0, 4), min_size=1, max_size=8)


def to_clusters(labels):
    return [frozenset(i for i, lab in enumerate(labels) if lab == c) for c in sorted(set(labels))]


class TestBiasScores:
    def test_all_bias_basil_ratio(self):
        golds = [1] * 1623 + [0] * (7977 - 1623)
        p, r, f = prf_bias([1] * 7977, golds)
        assert (p, r, f) == pytest.approx((20.34, 100.0, 33.81), abs=0.01)

    def test_all_bias_biasedsents_ratio(self):
        golds = [1] * 290 + [0] * 552
        p, r, f = prf_bias([1] * 842, golds)
        assert (p, r, f) == pytest.approx((34.44, 100.0, 51.23), abs=0.01)

    def test_perfect(self):
        assert prf_bias([0, 1, 1], [0, 1, 1]) == (100.0, 100.0, 100.0)

    def test_no_positive_predictions(self):
        assert prf_bias([0, 0], [1, 0]) == (0.0, 0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            prf_bias([1], [1, 0])

    def test_non_binary(self):
        with pytest.raises(ValueError):
            confusion([2], [1])

    def test_counts_total(self):
        c = confusion([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
        assert c == ConfusionCounts(2, 1, 1, 1) and c.total == 5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=60).filter(any))
    def test_all_bias_recall_full_precision_ratio(self, golds):
        p, r, _ = prf_bias([1] * len(golds), golds)
        assert r == 100.0
        assert p == pytest.approx(100.0 * sum(golds) / len(golds))


class TestMacro:
    def test_one_and_zero(self):
        assert macro_prf([(3, 0, 0), (0, 2, 2)])[2] == pytest.approx(0.5)

    def test_identical(self):
        c = ConfusionCounts(2, 1, 1)
        assert macro_prf([c, c, c]) == pytest.approx(c.prf())

    def test_absent_class_contributes_zero(self):
        assert macro_prf([(4, 0, 0), (0, 0, 0)]) == pytest.approx((0.5, 0.5, 0.5))

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            macro_prf([(1, 0, 0)])

    def test_multiclass_counts(self):
        counts = multiclass_counts([0, 1, 2, 2], [0, 2, 2, 1], 3)
        assert [(c.tp, c.fp, c.fn) for c in counts] == [(1, 0, 0), (0, 1, 1), (1, 1, 1)]


class TestMuc:
    def test_split_cluster(self):
        p, r, f = muc([{"a", "b", "c"}], [{"a", "b"}, {"c"}])
        assert (p, r, f) == pytest.approx((1.0, 0.5, 2 / 3), abs=1e-6)

    def test_identity(self):
        g = [{1, 2}, {3}, {4, 5, 6}]
        assert muc(g, g) == (1.0, 1.0, 1.0)

    def test_all_singletons(self):
        assert muc([{1}, {2}], [{1}, {2}]) == (1.0, 1.0, 1.0)

    def test_singletons_against_merge(self):
        assert muc([{1}, {2}], [{1, 2}]) == (0.0, 0.0, 0.0)


class TestBCubed:
    def test_merge(self):
        p, r, _ = b_cubed([{"a", "b"}, {"c"}], [{"a", "b", "c"}])
        assert p == pytest.approx(5 / 9, abs=1e-6) and r == pytest.approx(1.0)

    @pytest.mark.parametrize("n", [1, 3, 7])
    def test_all_singleton_pred(self, n):
        p, r, _ = b_cubed([set(range(n))], [{i} for i in range(n)])
        assert p == 1.0 and r == pytest.approx(1 / n)


class TestCeaf:
    def test_crossed_pairs(self):
        p, r, f = ceaf_e([{"a", "b"}, {"c", "d"}], [{"a", "c"}, {"b", "d"}])
        assert (p, r, f) == pytest.approx((0.5, 0.5, 0.5), abs=1e-6)

    def test_identity(self):
        g = [{1}, {2, 3}]
        assert ceaf_e(g, g) == pytest.approx((1.0, 1.0, 1.0))

    def test_phi4(self):
        assert phi4(frozenset("ab"), frozenset("bc")) == 0.5

    def test_alignment_rectangular(self):
        sim = np.array([[0.1, 0.9, 0.0], [0.8, 0.7, 0.0]])
        pairs, total = max_similarity_alignment(sim)
        assert sorted(pairs) == [(0, 1), (1, 0)] and total == pytest.approx(1.7)
        assert max_similarity_alignment(np.zeros((0, 3))) == ([], 0.0)

    def test_brute_force_200_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            mentions = list(range(int(rng.integers(1, 13))))
            gold = random_partition(rng, mentions, 6)
            pred = random_partition(rng, mentions, 6)
            p, r, _ = ceaf_e(gold, pred)
            bp, br = brute_force_ceaf(gold, pred)
            assert p == pytest.approx(bp, abs=1e-12) and r == pytest.approx(br, abs=1e-12)


class TestBlanc:
    def test_split_pair(self):
        p, r, f = blanc([{"a", "b"}, {"c"}], [{"a"}, {"b"}, {"c"}])
        assert f == pytest.approx(0.4, abs=1e-6)
        # coref links: P 0, R 0; non-coref links: P 2/3, R 1
        assert p == pytest.approx(1 / 3) and r == pytest.approx(0.5)

    def test_single_mention(self):
        assert blanc([{"a"}], [{"a"}]) == (1.0, 1.0, 1.0)

    def test_all_singletons_both_sides(self):
        assert blanc([{1}, {2}, {3}], [{1}, {2}, {3}]) == (1.0, 1.0, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(partitions, st.randoms(use_true_random=False))
    def test_swap_exchanges_p_and_r(self, labels, rnd):
        other = [rnd.randint(0, 4) for _ in labels]
        g, p = to_clusters(labels), to_clusters(other)
        a, b = blanc(g, p), blanc(p, g)
        assert a[0] == pytest.approx(b[1]) and a[1] == pytest.approx(b[0]) and a[2] == pytest.approx(b[2])


class TestCommon:
    @pytest.mark.parametrize("metric", [muc, b_cubed, ceaf_e, blanc])
    def test_universe_mismatch(self, metric):
        with pytest.raises(ValueError, match="different mentions"):
            metric([{1, 2}], [{1}, {3}])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            muc([], [])

    def test_overlapping_clusters_rejected(self):
        with pytest.raises(ValueError, match="more than one cluster"):
            b_cubed([{1, 2}, {2}], [{1}, {2}])

    @settings(max_examples=80, deadline=None)
    @given(partitions, st.randoms(use_true_random=False))
    def test_perfect_iff_equal(self, labels, rnd):
        other = [rnd.randint(0, 4) for _ in labels]
        g, p = to_clusters(labels), to_clusters(other)
        same = set(g) == set(p)
        for name, score in score_coreference(g, p).items():
            assert all(0.0 <= x <= 1.0 + 1e-12 for x in score), name
            assert (tuple(score) == pytest.approx((1.0, 1.0, 1.0))) == same, name
            if name != "BLANC":
                pr, rc, f = score
                assert f == pytest.approx(2 * pr * rc / (pr + rc) if pr + rc else 0.0)

    def test_mention_order_irrelevant(self):
        g = [("x", 1), ("y", 2), ("z", 3)]
        gold = [{g[0], g[1]}, {g[2]}]
        pred = [{g[2], g[0]}, {g[1]}]
        a = score_coreference(gold, pred)
        b = score_coreference(list(reversed(gold)), list(reversed(pred)))
        assert a == b
