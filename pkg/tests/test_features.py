import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from storyseg.core import ShotRecord
from storyseg.features import (BLOCK_ORDER, ConceptGroups, SemanticConfig, TranscriptTerm,
                               assemble_feature_vector, assemble_video_features, check_corpus_dims,
                               gaussian_weight, kmeans, normalized_laplacian, quantity_of_speech,
                               semantic_matrices, smallest_eigenpairs, spectral_cluster_terms,
                               temporal_max_pool, term_shot_probability, textual_semantic_vector,
                               time_features, visual_semantic_vector)


def make_shots(lengths, words=None, start=0):
    shots, pos = [], start
    for i, n in enumerate(lengths):
        shots.append(ShotRecord(i, pos, pos + n, 0 if words is None else words[i]))
        pos += n
    return shots


def random_video(rng, n_shots=6, n_terms=10, K=4):
    shots = make_shots(rng.integers(20, 200, n_shots).tolist(), rng.integers(0, 50, n_shots).tolist())
    end = shots[-1].end_frame
    terms = []
    for j in range(n_terms):
        probs = rng.random(n_shots) if rng.random() < 0.7 else None
        terms.append(TranscriptTerm(f"w{j % 7}", float(rng.uniform(0, end)), probs))
    groups = ConceptGroups(K, {f"w{j}": int(rng.integers(K)) for j in range(7)})
    return shots, terms, groups


def naive_semantic(shot, terms, groups, cfg, textual):
    out = [0.0] * groups.K
    for t in terms:
        w = math.exp(-((t.t_u - shot.midpoint) ** 2) / (2 * cfg.sigma_a ** 2))
        if not textual:
            w = 0.0 if t.svm_probs is None else w * float(t.svm_probs[shot.index])
        out[groups.assignment[t.unigram]] += w
    return np.array(out)


class TestTemporalMaxPool:
    def test_single_is_identity(self, rng):
        t = rng.random((2, 3, 4))
        assert np.array_equal(temporal_max_pool([t]), t)

    def test_zeros_and_ones(self):
        assert np.array_equal(temporal_max_pool([np.zeros((2, 2, 2)), np.ones((2, 2, 2))]), np.ones((2, 2, 2)))

    def test_scalar_loop_oracle(self, rng):
        ts = [rng.normal(size=(2, 2, 2)) for _ in range(3)]
        got = temporal_max_pool(ts)
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    assert got[i, j, k] == max(t[i, j, k] for t in ts)

    def test_errors(self):
        with pytest.raises(ValueError):
            temporal_max_pool([])
        with pytest.raises(ValueError):
            temporal_max_pool([np.zeros((2, 2, 2)), np.zeros((2, 2, 3))])


class TestQuantityOfSpeech:
    @pytest.mark.parametrize("counts, expected", [([4, 8, 2], [0.5, 1.0, 0.25]), ([0, 0], [0.0, 0.0]), ([7], [1.0])])
    def test_examples(self, counts, expected):
        assert quantity_of_speech(counts).tolist() == expected

    @given(st.lists(st.integers(0, 1000), min_size=1, max_size=30))
    def test_range(self, counts):
        q = quantity_of_speech(counts)
        assert np.all((q >= 0) & (q <= 1))
        if max(counts) > 0:
            assert q.max() == 1.0


class TestTimeFeatures:
    def test_two_equal_shots(self):
        assert time_features(make_shots([50, 50])).tolist() == [[0.0, 0.5], [0.5, 0.5]]

    def test_one_shot(self):
        assert time_features(make_shots([37])).tolist() == [[0.0, 1.0]]

    def test_recomputation(self, rng):
        for _ in range(20):
            lengths = rng.integers(1, 300, rng.integers(1, 15)).tolist()
            start = int(rng.integers(0, 1000))
            tf = time_features(make_shots(lengths, start=start))
            total = sum(lengths)
            assert tf[:, 1].sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(np.diff(tf[:, 0]) > 0)
            assert tf[:, 0] == pytest.approx(np.concatenate([[0], np.cumsum(lengths)[:-1]]) / total, abs=1e-12)


class TestGaussianTerms:
    def test_zero_distance(self):
        term = TranscriptTerm("a", 50.0, np.array([1.0]))
        assert term_shot_probability(term, ShotRecord(0, 0, 100), SemanticConfig(10.0)) == 1.0

    def test_zero_probability(self):
        term = TranscriptTerm("a", 5000.0, np.array([0.0]))
        assert term_shot_probability(term, ShotRecord(0, 0, 100), SemanticConfig(10.0)) == 0.0

    def test_one_sigma(self):
        term = TranscriptTerm("a", 60.0, np.array([0.5]))
        got = term_shot_probability(term, ShotRecord(0, 0, 100), SemanticConfig(10.0))
        assert got == pytest.approx(0.5 * math.exp(-0.5), abs=1e-15)
        assert got == pytest.approx(0.30327, abs=1e-5)

    def test_visual_without_probabilities_is_zero(self):
        term = TranscriptTerm("a", 50.0)
        shot, cfg = ShotRecord(0, 0, 100), SemanticConfig(10.0)
        assert term_shot_probability(term, shot, cfg) == 0.0
        assert term_shot_probability(term, shot, cfg, textual=True) == 1.0

    @given(st.floats(0.1, 1e4))
    def test_half_maximum_at_half_width(self, sigma):
        half_width = 2.0 * math.sqrt(2.0 * math.log(2.0)) * sigma / 2.0
        assert gaussian_weight(half_width, 0.0, sigma) == pytest.approx(0.5, abs=1e-12)

    def test_twenty_second_default(self):
        assert SemanticConfig.for_fps(25.0).sigma_a == 500.0

    def test_probabilities_validated(self):
        with pytest.raises(ValueError):
            TranscriptTerm("a", 0.0, np.array([1.5]))
        with pytest.raises(ValueError):
            SemanticConfig(0.0)


class TestSemanticVectors:
    cfg = SemanticConfig(sigma_a=50.0, K=4)

    def test_no_terms(self):
        shot, groups = ShotRecord(0, 0, 100), ConceptGroups(4, {})
        assert np.array_equal(visual_semantic_vector(shot, [], groups, self.cfg), np.zeros(4))
        assert np.array_equal(textual_semantic_vector(shot, [], groups, self.cfg), np.zeros(4))

    def test_single_visual_term(self):
        shot, groups = ShotRecord(0, 0, 100), ConceptGroups(4, {"a": 0})
        v = visual_semantic_vector(shot, [TranscriptTerm("a", 50.0, np.array([0.7]))], groups, self.cfg)
        assert v.tolist() == [0.7, 0.0, 0.0, 0.0]

    def test_single_textual_term(self):
        shot, groups = ShotRecord(0, 0, 100), ConceptGroups(4, {"a": 2})
        v = textual_semantic_vector(shot, [TranscriptTerm("a", 50.0)], groups, self.cfg)
        assert v.tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_missing_group(self):
        with pytest.raises(KeyError):
            visual_semantic_vector(ShotRecord(0, 0, 10), [TranscriptTerm("zz", 5.0)], ConceptGroups(2, {}), self.cfg)

    def test_naive_loop_oracle(self, rng):
        for _ in range(10):
            shots, terms, groups = random_video(rng)
            vis, txt = semantic_matrices(shots, terms, groups, self.cfg)
            for s in shots:
                ov = naive_semantic(s, terms, groups, self.cfg, textual=False)
                ot = naive_semantic(s, terms, groups, self.cfg, textual=True)
                assert visual_semantic_vector(s, terms, groups, self.cfg) == pytest.approx(ov, abs=1e-12)
                assert textual_semantic_vector(s, terms, groups, self.cfg) == pytest.approx(ot, abs=1e-12)
                assert vis[s.index] == pytest.approx(ov, abs=1e-12)
                assert txt[s.index] == pytest.approx(ot, abs=1e-12)

    def test_bounds(self, rng):
        shots, terms, groups = random_video(rng, n_terms=25)
        vis, txt = semantic_matrices(shots, terms, groups, self.cfg)
        counts = np.bincount([groups.assignment[t.unigram] for t in terms], minlength=groups.K)
        assert np.all(vis >= 0) and np.all(txt >= 0)
        assert np.all(txt <= counts + 1e-12)
        assert np.all(vis <= txt + 1e-12)

    def test_repeated_unigram_counts_each_occurrence(self):
        shot, groups = ShotRecord(0, 0, 100), ConceptGroups(1, {"a": 0})
        terms = [TranscriptTerm("a", 50.0), TranscriptTerm("a", 50.0)]
        assert textual_semantic_vector(shot, terms, groups, SemanticConfig(10.0, 1)).tolist() == [2.0]


class TestSpectralClustering:
    def test_two_bundles(self, rng):
        emb = {}
        for i in range(5):
            emb[f"a{i}"] = np.array([1.0, 0.0, 0.0]) + 0.01 * rng.normal(size=3)
            emb[f"b{i}"] = np.array([0.0, 1.0, 0.0]) + 0.01 * rng.normal(size=3)
        g = spectral_cluster_terms(emb, 2)
        assert len({g.assignment[f"a{i}"] for i in range(5)}) == 1
        assert len({g.assignment[f"b{i}"] for i in range(5)}) == 1
        assert g.assignment["a0"] != g.assignment["b0"]

    def test_single_group(self, rng):
        emb = {f"t{i}": rng.normal(size=4) for i in range(6)}
        assert set(spectral_cluster_terms(emb, 1).assignment.values()) == {0}

    def test_too_few_terms(self):
        with pytest.raises(ValueError, match="smaller K"):
            spectral_cluster_terms({"a": np.ones(2)}, 2)

    def test_three_gaussians_on_sphere(self):
        correct = total = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            centres = np.linalg.qr(rng.normal(size=(8, 3)))[0].T
            emb, truth = {}, {}
            for c in range(3):
                for i in range(10):
                    v = centres[c] + 0.15 * rng.normal(size=8)
                    emb[f"c{c}_{i}"] = v / np.linalg.norm(v)
                    truth[f"c{c}_{i}"] = c
            g = spectral_cluster_terms(emb, 3, seed=seed)
            # majority relabeling is a valid matching when every cluster keeps its majority
            for c in range(3):
                labels = [g.assignment[t] for t in emb if truth[t] == c]
                correct += np.bincount(labels).max()
            total += len(emb)
        assert correct / total >= 0.95

    def test_deterministic(self, rng):
        emb = {f"t{i}": rng.normal(size=5) for i in range(20)}
        assert spectral_cluster_terms(emb, 4, seed=3) == spectral_cluster_terms(emb, 4, seed=3)

    def test_eigen_residual(self, rng):
        X = rng.normal(size=(25, 6))
        U = X / np.linalg.norm(X, axis=1, keepdims=True)
        L = normalized_laplacian(np.clip(U @ U.T, 0, None))
        vals, vecs = smallest_eigenpairs(L, 5)
        for lam, v in zip(vals, vecs.T):
            assert np.linalg.norm(L @ v - lam * v) < 1e-8
        assert np.all(np.diff(vals) >= 0)

    def test_kmeans_separated(self):
        pts = np.vstack([np.zeros((5, 2)), np.full((5, 2), 10.0)])
        labels = kmeans(pts, 2)
        assert len(set(labels[:5])) == 1 and len(set(labels[5:])) == 1 and labels[0] != labels[5]


class TestAssembly:
    def test_block_sizes(self):
        blocks = {"visual": np.ones(4), "audio": np.ones(3), "qos": [0.5], "time": [0, 1],
                  "visual_semantic": [1, 2], "textual_semantic": [3, 4]}
        fv = assemble_feature_vector(blocks)
        assert fv.dim == 14
        assert fv.block_map == {"visual": (0, 4), "audio": (4, 7), "qos": (7, 8), "time": (8, 10),
                                "visual_semantic": (10, 12), "textual_semantic": (12, 14)}
        assert tuple(fv.block_map) == BLOCK_ORDER

    def test_optional_blocks_absent(self):
        K = 5
        fv = assemble_feature_vector({"qos": [1.0], "time": [0, 1], "visual_semantic": np.zeros(K),
                                      "textual_semantic": np.zeros(K)})
        assert fv.dim == 1 + 2 + 2 * K
        assert fv.block_map["visual"] == (0, 0) and fv.block_map["audio"] == (0, 0)

    def test_required_block_missing(self):
        with pytest.raises(ValueError):
            assemble_feature_vector({"qos": [1.0], "time": [0, 1], "visual_semantic": [0.0]})

    def test_inconsistent_dimensions(self):
        a = assemble_feature_vector({"qos": [1.0], "time": [0, 1], "visual_semantic": [0.0],
                                     "textual_semantic": [0.0]})
        b = assemble_feature_vector({"visual": [1.0], "qos": [1.0], "time": [0, 1], "visual_semantic": [0.0],
                                     "textual_semantic": [0.0]})
        with pytest.raises(ValueError):
            check_corpus_dims([a, b])

    def test_video_assembly(self, rng):
        shots, terms, groups = random_video(rng)
        shots = [ShotRecord(s.index, s.start_frame, s.end_frame, s.word_count,
                            keyframe_tensors=(rng.random((2, 2, 2)), rng.random((2, 2, 2))))
                 for s in shots]
        cfg = SemanticConfig(50.0, groups.K)
        rows = assemble_video_features(shots, terms, groups, cfg)
        assert all(r.dim == 8 + 1 + 2 + 2 * groups.K for r in rows)
        assert np.array_equal(rows[2].block("visual"), temporal_max_pool(shots[2].keyframe_tensors).ravel())
        assert rows[0].block("time").tolist() == time_features(shots)[0].tolist()
