import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from amqf.dictionary import (
    DegenerateScoreWarning,
    cosine_score,
    decorrelation_loss,
    fuse_factor_scores,
    init_dictionary,
    normalize_features,
    pool_responses,
    respond,
)
from amqf.errors import ValidationError
from amqf.numgrad import check_gradients


def brute_force_respond(f, v):
    b, h, w, d = f.shape
    out = np.zeros((b, h, w, v.shape[0]))
    for n in range(b):
        for i in range(h):
            for j in range(w):
                for k in range(v.shape[0]):
                    out[n, i, j, k] = sum(f[n, i, j, c] * v[k, c] for c in range(d))
    return out


def numpy_decov(x):
    c = np.atleast_2d(np.cov(x, rowvar=False, bias=True))
    return math.sqrt((c ** 2).sum()) - math.sqrt((np.diag(c) ** 2).sum() + 1e-6)


def score(feat_ref, feat_dist, words):
    p_ref = pool_responses(respond(normalize_features(feat_ref), words))
    p_dist = pool_responses(respond(normalize_features(feat_dist), words))
    return cosine_score(p_ref, p_dist)


class TestInit:
    def test_full_scale_shape(self):
        assert tuple(init_dictionary(1024, 512, 0).words.shape) == (1024, 512)

    def test_deterministic(self):
        assert torch.equal(init_dictionary(32, 8, 5).words, init_dictionary(32, 8, 5).words)
        assert not torch.equal(init_dictionary(32, 8, 5).words, init_dictionary(32, 8, 6).words)

    def test_kaiming_statistics(self):
        w = init_dictionary(4096, 64, 3, dtype=torch.float64).words.numpy()
        assert abs(w.std() / math.sqrt(2 / 64) - 1) < 0.05
        assert abs(w.mean()) < 0.01

    @pytest.mark.parametrize("n,d", [(0, 4), (4, 0), (-1, 3)])
    def test_bad_sizes(self, n, d):
        with pytest.raises(ValidationError):
            init_dictionary(n, d, 0)


class TestNormalize:
    def test_three_four_five(self):
        out = normalize_features(torch.tensor([3.0, 4.0], dtype=torch.float64))
        np.testing.assert_allclose(out.numpy(), [0.6, 0.8], atol=1e-15)

    def test_zero_passes_through(self):
        assert torch.equal(normalize_features(torch.zeros(3)), torch.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 16))
    def test_unit_norm(self, seed, d):
        v = torch.from_numpy(np.random.default_rng(seed).normal(size=(d,)) + 1e-3)
        assert abs(float(torch.linalg.vector_norm(normalize_features(v))) - 1.0) < 1e-9


class TestRespond:
    def test_unit_axes(self):
        f = torch.tensor([[[[0.6, 0.8]]]], dtype=torch.float64)
        r = respond(f, torch.eye(2, dtype=torch.float64))
        np.testing.assert_allclose(r.reshape(-1).numpy(), [0.6, 0.8])

    def test_orthogonal(self):
        f = torch.tensor([[[[0.0, 0.0, 1.0]]]])
        assert torch.count_nonzero(respond(f, torch.eye(3)[:2])) == 0

    def test_brute_force_oracle(self, rng):
        f = rng.normal(size=(2, 4, 4, 8))
        v = rng.normal(size=(16, 8))
        got = respond(torch.from_numpy(f), torch.from_numpy(v)).numpy()
        np.testing.assert_allclose(got, brute_force_respond(f, v), atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValidationError):
            respond(torch.zeros(1, 2, 2, 4), torch.zeros(3, 5))

    def test_accepts_dictionary(self, rng):
        d = init_dictionary(5, 3, 0, dtype=torch.float64)
        f = torch.from_numpy(rng.normal(size=(1, 2, 2, 3)))
        assert torch.equal(respond(f, d), respond(f, d.words))


class TestPool:
    def test_constant(self):
        assert torch.equal(pool_responses(torch.full((1, 3, 5, 4), 2.5)), torch.full((1, 4), 2.5))

    def test_mean(self):
        maps = torch.tensor([[1.0, 3.0], [5.0, 7.0]]).reshape(1, 2, 2, 1)
        assert float(pool_responses(maps)[0, 0]) == 4.0

    @pytest.mark.parametrize("shape", [(1, 1, 1, 7), (3, 4, 2, 7), (2, 9, 9, 7)])
    def test_length(self, shape):
        assert pool_responses(torch.ones(shape)).shape == (shape[0], 7)


class TestCosine:
    def test_examples(self):
        p = torch.tensor([0.3, -2.0, 1.0], dtype=torch.float64)
        assert float(cosine_score(p, p)) == pytest.approx(1.0, abs=1e-15)
        assert float(cosine_score(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))) == 0.0
        q = cosine_score(torch.tensor([1.0, 1.0], dtype=torch.float64), torch.tensor([1.0, 0.0], dtype=torch.float64))
        assert abs(float(q) - 0.70710678) < 1e-8

    def test_degenerate_warns_and_returns_zero(self):
        with pytest.warns(DegenerateScoreWarning):
            q = cosine_score(torch.zeros(4), torch.ones(4))
        assert float(q) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            cosine_score(torch.ones(3), torch.ones(4))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), alpha=st.floats(1e-3, 1e3))
    def test_scaling(self, seed, alpha):
        p = torch.from_numpy(np.random.default_rng(seed).normal(size=(6,)))
        assert float(cosine_score(p, alpha * p)) == pytest.approx(1.0, abs=1e-12)
        assert float(cosine_score(p, -alpha * p)) == pytest.approx(-1.0, abs=1e-12)


class TestDecorrelation:
    def test_identity_covariance(self):
        x = torch.tensor([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=torch.float64)
        expected = math.sqrt(2) - math.sqrt(2 + 1e-6)
        assert abs(float(decorrelation_loss(x)) - expected) < 1e-12
        assert abs(expected - (-3.5355e-7)) < 1e-10

    def test_correlated_pair(self):
        a = np.array([1.0, 1.0, -1.0, -1.0])
        z = np.array([1.0, -1.0, 1.0, -1.0])
        x = np.stack([a, 0.5 * a + math.sqrt(0.75) * z], axis=1)
        np.testing.assert_allclose(np.cov(x, rowvar=False, bias=True), [[1, 0.5], [0.5, 1]], atol=1e-15)
        got = float(decorrelation_loss(torch.from_numpy(x)))
        assert got == pytest.approx(numpy_decov(x), abs=1e-12)
        assert abs(got - 0.16690) < 1e-4

    def test_constant_columns(self):
        x = torch.full((5, 3), 2.0, dtype=torch.float64)
        assert float(decorrelation_loss(x)) == pytest.approx(-1e-3, abs=1e-15)

    def test_needs_two_samples(self):
        with pytest.raises(ValidationError):
            decorrelation_loss(torch.ones(1, 3))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), m=st.integers(2, 12), d=st.integers(1, 6))
    def test_matches_numpy_and_bounds(self, seed, m, d):
        x = np.random.default_rng(seed).normal(size=(m, d))
        got = float(decorrelation_loss(torch.from_numpy(x)))
        assert got == pytest.approx(numpy_decov(x), abs=1e-12)
        assert got >= -1e-3 - 1e-15
        c = np.cov(x, rowvar=False, bias=True).reshape(d, d)
        off = (c ** 2).sum() - (np.diag(c) ** 2).sum()
        if off > 1e-6 * (1 + 1e-9):
            assert got > 0


class TestFuse:
    def test_examples(self):
        assert fuse_factor_scores({"l": 1, "c": 1, "s": 1}) == pytest.approx(1.0)
        assert fuse_factor_scores({"l": 0.9, "c": 0.6, "s": 0.3}) == pytest.approx(0.6)
        assert fuse_factor_scores({"l": 0.9, "c": 0.6, "s": 0.3}, {"l": 1, "c": 0, "s": 0}) == 0.9

    def test_errors(self):
        with pytest.raises(ValidationError):
            fuse_factor_scores({"l": 1}, {"c": 1})
        with pytest.raises(ValidationError):
            fuse_factor_scores({"l": 1}, {"l": 0})
        with pytest.raises(ValidationError):
            fuse_factor_scores({"l": 1, "c": 1}, {"l": -1, "c": 2})


class TestInvariances:
    def test_feature_scale(self, rng):
        f1 = torch.from_numpy(rng.normal(size=(1, 4, 4, 8)))
        f2 = torch.from_numpy(rng.normal(size=(1, 4, 4, 8)))
        v = torch.from_numpy(rng.normal(size=(16, 8)))
        base = float(score(f1, f2, v))
        for alpha in (0.1, 1.0, 10.0):
            assert abs(float(score(alpha * f1, f2, v)) - base) < 1e-9
            assert abs(float(score(f1, alpha * f2, v)) - base) < 1e-9

    def test_word_permutation(self, rng):
        f1 = torch.from_numpy(rng.normal(size=(1, 4, 4, 8)))
        f2 = torch.from_numpy(rng.normal(size=(1, 4, 4, 8)))
        v = torch.from_numpy(rng.normal(size=(16, 8)))
        base = float(score(f1, f2, v))
        for _ in range(10):
            perm = torch.from_numpy(rng.permutation(16))
            assert abs(float(score(f1, f2, v[perm])) - base) < 1e-9


def test_chain_gradients(rng):
    f1 = torch.from_numpy(rng.normal(size=(1, 4, 4, 8))).requires_grad_()
    f2 = torch.from_numpy(rng.normal(size=(1, 4, 4, 8))).requires_grad_()
    v = torch.from_numpy(rng.normal(size=(16, 8))).requires_grad_()
    errs = check_gradients(lambda: score(f1, f2, v).sum(), [f1, f2, v])
    assert max(errs) < 1e-4, errs


def test_decorrelation_gradient(rng):
    x = torch.from_numpy(rng.normal(size=(16, 8))).requires_grad_()
    assert check_gradients(lambda: decorrelation_loss(x), [x])[0] < 1e-4
