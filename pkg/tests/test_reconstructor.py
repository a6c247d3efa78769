import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from amqf.errors import ValidationError
from amqf.numgrad import check_gradients
from amqf.reconstructor import FactorDecoder, decode_factor, factor_target_maps, reconstruction_loss


class TestTargets:
    def test_constant_image(self):
        maps = factor_target_maps(np.full((24, 24, 3), 0.37))
        np.testing.assert_allclose(maps.luminance_map, 0.37, atol=1e-12)
        np.testing.assert_allclose(maps.contrast_map, 0.0, atol=1e-6)
        np.testing.assert_allclose(maps.structure_map, 0.0, atol=1e-6)

    def test_horizontal_ramp(self):
        w = 48
        ramp = np.tile(np.arange(w) / w, (w, 1))
        maps = factor_target_maps(ramp)
        inner = (slice(5, -5), slice(5, -5))
        # a symmetric normalised window reproduces a linear function exactly
        np.testing.assert_allclose(maps.luminance_map[inner], ramp[inner], atol=1e-12)
        assert np.abs(maps.structure_map[inner]).max() <= 4.0
        assert maps.contrast_map.min() >= 0.0

    def test_checkerboard_contrast(self):
        yy, xx = np.mgrid[0:40, 0:40]
        board = ((yy + xx) % 2).astype(float)
        c = factor_target_maps(board).contrast_map[8:-8, 8:-8]
        np.testing.assert_allclose(c, 0.5, rtol=0.05)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValidationError):
            factor_target_maps(np.zeros((4, 4, 2)))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_structure_antisymmetric(self, seed):
        x = np.random.default_rng(seed).normal(size=(16, 16))
        a = factor_target_maps(x).structure_map
        b = factor_target_maps(-x).structure_map
        np.testing.assert_allclose(b, -a, atol=1e-12)


class TestDecoder:
    def test_shape(self):
        torch.manual_seed(0)
        dec = FactorDecoder(32, 8)
        assert tuple(decode_factor(torch.randn(2, 8, 8, 32), dec).shape) == (2, 64, 64, 1)

    def test_zero_in_zero_out(self):
        dec = FactorDecoder(16, 8)
        with torch.no_grad():
            for conv in dec.stages:
                conv.bias.zero_()
            out = decode_factor(torch.zeros(1, 4, 4, 16), dec)
        assert torch.count_nonzero(out) == 0

    def test_deterministic(self):
        dec = FactorDecoder(8, 4).eval()
        x = torch.randn(1, 2, 2, 8)
        with torch.no_grad():
            assert torch.equal(decode_factor(x, dec), decode_factor(x, dec))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            decode_factor(torch.zeros(1, 4, 4, 8), FactorDecoder(16, 8))


class TestLoss:
    def test_identical(self, rng):
        x = torch.from_numpy(rng.uniform(size=(5, 7)))
        assert [float(v) for v in reconstruction_loss(x, x)] == [0.0, 0.0, 0.0]

    def test_constant_offset(self):
        total, grad, inten = reconstruction_loss(torch.zeros(2, 2), torch.full((2, 2), 0.5))
        assert (float(total), float(grad), float(inten)) == (0.5, 0.0, 0.5)

    def test_hand_evaluated_stencil(self):
        i1 = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
        total, grad, inten = reconstruction_loss(i1, torch.zeros(2, 2))
        assert (float(total), float(grad), float(inten)) == (1.0, 0.5, 0.5)

    def test_batched_channel_last(self, rng):
        a = torch.from_numpy(rng.uniform(size=(3, 6, 6, 1)))
        b = torch.from_numpy(rng.uniform(size=(3, 6, 6, 1)))
        assert float(reconstruction_loss(a, b)[0]) == pytest.approx(float(reconstruction_loss(a[..., 0], b[..., 0])[0]))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            reconstruction_loss(torch.zeros(2, 2), torch.zeros(2, 3))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), alpha=st.floats(0.01, 100))
    def test_symmetry_and_homogeneity(self, seed, alpha):
        rng = np.random.default_rng(seed)
        a = torch.from_numpy(rng.normal(size=(6, 5)))
        b = torch.from_numpy(rng.normal(size=(6, 5)))
        ab = [float(v) for v in reconstruction_loss(a, b)]
        ba = [float(v) for v in reconstruction_loss(b, a)]
        assert ab == pytest.approx(ba, rel=1e-12)
        assert ab[0] >= 0
        scaled = float(reconstruction_loss(alpha * a, alpha * b)[0])
        assert scaled == pytest.approx(alpha * ab[0], rel=1e-10)

    def test_gradient_matches_finite_differences(self, rng):
        a = torch.from_numpy(rng.uniform(size=(6, 6))).requires_grad_()
        # keep every difference (pixels and forward gradients) away from the |.| kink
        b = a.detach() + torch.from_numpy(rng.choice([-1, 1], size=(6, 6)) * rng.uniform(0.05, 0.3, size=(6, 6)))
        errs = check_gradients(lambda: reconstruction_loss(a, b)[0], [a], eps=1e-7)
        assert errs[0] < 1e-4
