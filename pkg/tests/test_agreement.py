import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_starts, segmentations
from oracles import brute_force_agreement_oracle, naive_interval_iou, naive_intervals, naive_mean_iou
from storyseg.agreement import (AgreementGraph, brute_force_agreement, canonical, edge_weight_w1,
                                marginal_gain_w2, max_agreement)
from storyseg.core import AnnotationSet, Segmentation, mean_iou


def seg(starts, n, edges=None):
    return Segmentation.from_boundaries(starts, n, edges)


def random_annotations(rng, n, n_ann, k_range=(2, 5)):
    out = []
    for _ in range(n_ann):
        k = int(rng.integers(k_range[0], min(k_range[1], n) + 1))
        out.append(random_starts(rng, n, k))
    return out


def naive_coverage(path, annotations, n):
    """Coverage term of a path of stories from scratch."""
    total = 0.0
    A = naive_intervals(path, n)
    for s in annotations:
        S = naive_intervals(s, n)
        total += sum(max(naive_interval_iou(a, b) for a in A) for b in S) / len(S)
    return total


class TestEdgeWeights:
    def test_exact_story_single_annotation(self):
        S = AnnotationSet((seg([0, 3, 6], 9),))
        assert edge_weight_w1(3, 6, S, 1) == 1.0

    def test_two_annotations_halved(self):
        S = AnnotationSet((seg([0, 4], 8), seg([0, 2, 4], 8)))
        # [0,4) vs first annotation: 1.0; vs second: best 0.5
        assert edge_weight_w1(0, 4, S, 2) == 0.75

    def test_random_w1(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 12))
            anns = random_annotations(rng, n, int(rng.integers(1, 4)))
            S = AnnotationSet(tuple(seg(a, n) for a in anns))
            i = int(rng.integers(0, n))
            j = int(rng.integers(i + 1, n + 1))
            l = int(rng.integers(1, 5))
            expected = sum(max(naive_interval_iou((i, j), b) for b in naive_intervals(a, n)) for a in anns) / l
            assert edge_weight_w1(i, j, S, l) == pytest.approx(expected, abs=1e-12)

    def test_w1_rejects_empty_edge(self):
        with pytest.raises(ValueError):
            edge_weight_w1(2, 2, AnnotationSet((Segmentation.single(3),)), 1)

    def test_w2_disjoint_and_worse(self):
        S = AnnotationSet((seg([0, 3], 6),))
        # path already covers both stories perfectly
        assert marginal_gain_w2(np.array([1.0, 1.0]), (0, 2), S) == 0.0

    def test_w2_first_edge(self):
        S = AnnotationSet((seg([0, 3], 6), seg([0, 2, 4], 6)))
        expected = (naive_interval_iou((0, 4), (0, 3)) + naive_interval_iou((0, 4), (3, 6))) / 2
        expected += sum(naive_interval_iou((0, 4), b) for b in [(0, 2), (2, 4), (4, 6)]) / 3
        assert marginal_gain_w2(np.zeros(5), (0, 4), S) == pytest.approx(expected, abs=1e-15)

    def test_w2_from_scratch(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 12))
            anns = random_annotations(rng, n, int(rng.integers(1, 4)))
            S = AnnotationSet(tuple(seg(a, n) for a in anns))
            path = random_starts(rng, n)
            cut = int(rng.integers(1, len(path) + 1))
            prefix = path[:cut]
            x = prefix[-1]
            v = path[cut] if cut < len(path) else n
            prev = naive_intervals(prefix, x if cut > 1 else n)[:-1] if cut > 1 else []
            best = []
            for a in anns:
                for b in naive_intervals(a, n):
                    best.append(max([naive_interval_iou(p, b) for p in prev], default=0.0))
            before = sum(sum(best[pos:pos + len(a)]) / len(a)
                         for pos, a in zip(np.cumsum([0] + [len(a) for a in anns[:-1]]), anns))
            after = 0.0
            pos = 0
            for a in anns:
                S_int = naive_intervals(a, n)
                after += sum(max(best[pos + t], naive_interval_iou((x, v), b)) for t, b in enumerate(S_int)) / len(S_int)
                pos += len(S_int)
            assert marginal_gain_w2(np.array(best), (x, v), S) == pytest.approx(after - before, abs=1e-12)


class TestMaxAgreement:
    def test_self_agreement(self):
        a = seg([0, 2, 5], 8)
        res = max_agreement([a])
        assert res.segmentation == a and res.value == 1.0

    def test_duplicate(self):
        a = seg([0, 3], 7)
        assert max_agreement([a, a]).segmentation == a

    def test_empty(self):
        with pytest.raises(ValueError):
            max_agreement([])

    def test_value_is_exact_mean_iou(self, rng):
        for _ in range(20):
            n = int(rng.integers(3, 15))
            S = [seg(a, n) for a in random_annotations(rng, n, 3)]
            res = max_agreement(S)
            assert res.value == pytest.approx(mean_iou(res.segmentation, S), abs=1e-12)

    def test_frame_edges(self):
        edges = (0, 10, 20, 100, 110)
        S = [seg([0, 2], 4, edges), seg([0, 3], 4, edges)]
        res = max_agreement(S)
        assert res.segmentation.edges == edges
        assert res.value == pytest.approx(mean_iou(res.segmentation, S))

    @given(st.lists(segmentations(n=8), min_size=2, max_size=4), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, anns, rnd):
        shuffled = list(anns)
        rnd.shuffle(shuffled)
        assert max_agreement(anns).segmentation == max_agreement(shuffled).segmentation

    def test_canonical_order(self):
        a, b = seg([0, 3], 5), seg([0, 1], 5)
        assert canonical([a, b]).annotations == (b, a)

    def test_dp_never_beats_brute_force(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 13))
            S = [seg(a, n) for a in random_annotations(rng, n, int(rng.integers(2, 6)))]
            assert max_agreement(S).value <= brute_force_agreement(S).value + 1e-12

    def test_graph_shapes(self):
        S = AnnotationSet((seg([0, 2], 5), seg([0, 1, 3], 5)))
        g = AgreementGraph.build(S)
        assert g.n == 5 and g.iou.shape[2] == 5
        assert np.all((g.iou >= 0) & (g.iou <= 1))


class TestBruteForce:
    def test_one_shot(self):
        res = brute_force_agreement([Segmentation.single(1)])
        assert res.segmentation == Segmentation.single(1)

    def test_three_shots(self):
        a = seg([0, 2], 3)
        assert brute_force_agreement([a, a]).segmentation == a

    def test_bound(self):
        with pytest.raises(ValueError):
            brute_force_agreement([Segmentation.single(25)], max_n=20)

    def test_matches_naive_oracle(self, rng):
        for _ in range(25):
            n = int(rng.integers(1, 10))
            anns = random_annotations(rng, n, int(rng.integers(1, 4)), (1, 4))
            res = brute_force_agreement([seg(a, n) for a in anns])
            best, arg = brute_force_agreement_oracle(anns, n)
            assert res.value == pytest.approx(best, abs=1e-12)
            assert list(res.segmentation.boundaries) == arg
