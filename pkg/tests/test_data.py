import filecmp

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amqf.data import (
    DistortionSpec,
    ImagePair,
    apply_distortion,
    center_crop,
    load_image,
    load_manifest,
    paired_random_crop,
    procedural_reference,
    save_image,
    synth_dataset,
)
from amqf.errors import ConfigError, ValidationError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestManifest:
    def test_rescales_mos(self, tmp_path):
        p = write(tmp_path / "m.csv", "ref_path,dist_path,mos\na.png,b.png,1\na.png,c.png,3\na.png,d.png,5\n")
        m = load_manifest(p, mos_scale=(1, 5))
        assert len(m) == 3
        assert [e.mos for e in m] == [0.0, 0.5, 1.0]
        assert m.entries[0].ref_path == tmp_path / "a.png"

    def test_invert_for_dmos(self, tmp_path):
        p = write(tmp_path / "m.csv", "ref_path,dist_path,mos\na.png,b.png,20\n")
        m = load_manifest(p, mos_scale=(0, 100), invert=True)
        assert m.entries[0].mos == pytest.approx(0.8)

    def test_optional_columns(self, tmp_path):
        p = write(tmp_path / "m.csv", "ref_path,dist_path,mos,kind,level\na.png,b.png,0.5,blur,2\n")
        e = load_manifest(p).entries[0]
        assert (e.kind, e.level) == ("blur", 2)

    @pytest.mark.parametrize("text", ["", "ref_path,dist_path,mos\n"])
    def test_empty(self, tmp_path, text):
        p = write(tmp_path / "m.csv", text)
        with pytest.raises(ValidationError, match="empty manifest"):
            load_manifest(p)

    def test_mos_out_of_scale_names_line(self, tmp_path):
        p = write(tmp_path / "m.csv", "ref_path,dist_path,mos\na.png,b.png,2\na.png,c.png,9\n")
        with pytest.raises(ValidationError, match=r"m\.csv:3"):
            load_manifest(p, mos_scale=(1, 5))

    def test_malformed_row_names_line(self, tmp_path):
        p = write(tmp_path / "m.csv", "ref_path,dist_path,mos\na.png,b.png,abc\n")
        with pytest.raises(ValidationError, match=r"m\.csv:2"):
            load_manifest(p)
        p = write(tmp_path / "m.csv", "ref_path,dist_path,mos\na.png,b.png\n")
        with pytest.raises(ValidationError, match=r"m\.csv:2"):
            load_manifest(p)

    def test_missing_header_column(self, tmp_path):
        p = write(tmp_path / "m.csv", "ref,dist_path,mos\na.png,b.png,1\n")
        with pytest.raises(ValidationError, match="ref_path"):
            load_manifest(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope.csv")


class TestImages:
    def test_png_roundtrip_is_8bit(self, tmp_path, rng):
        img = np.round(rng.uniform(size=(5, 7, 3)) * 255) / 255
        save_image(tmp_path / "x.png", img)
        back = load_image(tmp_path / "x.png")
        np.testing.assert_array_equal(back, img)
        assert back.min() >= 0.0 and back.max() <= 1.0

    def test_pair_validation(self, rng):
        a = rng.uniform(size=(4, 4, 3))
        with pytest.raises(ValidationError):
            ImagePair(a, rng.uniform(size=(4, 5, 3)), 0.5)
        with pytest.raises(ValidationError):
            ImagePair(a, a, 1.5)
        with pytest.raises(ValidationError):
            ImagePair(a * 2, a, 0.5)


class TestDistortion:
    @pytest.mark.parametrize("kind", ["gaussian_blur", "gaussian_noise", "contrast_reduction",
                                      "brightness_shift", "block_quantization"])
    def test_level_zero_is_identity(self, kind, rng):
        img = rng.uniform(size=(16, 16, 3))
        out = apply_distortion(img, DistortionSpec(kind, 0), seed=3)
        assert out.tobytes() == img.tobytes()

    @pytest.mark.parametrize("kind", ["gaussian_blur", "gaussian_noise", "contrast_reduction",
                                      "brightness_shift", "block_quantization"])
    def test_range_and_shape(self, kind, rng):
        img = rng.uniform(size=(20, 12, 3))
        for level in range(1, 9):
            out = apply_distortion(img, DistortionSpec(kind, level), seed=level)
            assert out.shape == img.shape
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            DistortionSpec("jpeg2000", 1)

    def test_level_bounds(self):
        with pytest.raises(ValidationError):
            DistortionSpec("blur", 9)

    def test_noise_variance(self):
        # mid-gray keeps the clamp 5 sigma away
        img = np.full((600, 600, 3), 0.5)
        out = apply_distortion(img, DistortionSpec("gaussian_noise", 1, {"std": 0.1}), seed=0)
        msd = np.mean((out - img) ** 2)
        assert abs(msd - 0.01) < 0.001

    def test_blur_reduces_gradient_energy(self):
        img = procedural_reference(96, np.random.default_rng(5))

        def grad_mag(x):
            gy, gx = np.gradient(x.mean(axis=2))
            return np.hypot(gx, gy).mean()

        mags = [grad_mag(apply_distortion(img, DistortionSpec("blur", lv))) for lv in range(0, 9)]
        assert all(a > b for a, b in zip(mags, mags[1:]))

    @settings(max_examples=25, deadline=None)
    @given(kind=st.sampled_from(["blur", "noise", "contrast", "brightness", "block"]),
           level=st.integers(0, 8), seed=st.integers(0, 2 ** 32 - 1))
    def test_deterministic(self, kind, level, seed):
        img = np.random.default_rng(0).uniform(size=(12, 12, 3))
        spec = DistortionSpec(kind, level)
        a = apply_distortion(img, spec, seed)
        b = apply_distortion(img, spec, seed)
        assert a.tobytes() == b.tobytes()
        assert a.min() >= 0.0 and a.max() <= 1.0


class TestSynth:
    def test_counts_and_mos(self, tmp_path):
        m = synth_dataset(2, ["blur", "noise"], 3, tmp_path, seed=1, size=24)
        assert len(m) == 12
        by_level = {e.level: e.mos for e in m}
        assert by_level[3] == 0.0
        assert by_level[1] == pytest.approx(2 / 3)
        for e in m:
            assert load_image(e.dist_path).shape == (24, 24, 3)

    def test_mos_strictly_decreasing_in_level(self, synth_dir):
        m = load_manifest(synth_dir / "manifest.csv")
        groups = {}
        for e in m:
            groups.setdefault((e.ref_path, e.kind), []).append((e.level, e.mos))
        for rows in groups.values():
            rows.sort()
            assert all(a[1] > b[1] for a, b in zip(rows, rows[1:]))

    def test_same_seed_same_bytes(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        synth_dataset(2, ["blur", "noise", "block"], 2, a, seed=9, size=24)
        synth_dataset(2, ["blur", "noise", "block"], 2, b, seed=9, size=24)
        files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        for f in files:
            assert filecmp.cmp(a / f, b / f, shallow=False), f

    def test_images_in_unit_range(self, synth_dir):
        for p in (synth_dir / "images").glob("*.png"):
            img = load_image(p)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_bad_arguments(self, tmp_path):
        with pytest.raises(ValidationError):
            synth_dataset(0, ["blur"], 2, tmp_path)
        with pytest.raises(ConfigError):
            synth_dataset(1, ["sepia"], 2, tmp_path)


def coordinate_image(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return np.stack([yy / (h - 1), xx / (w - 1), np.zeros((h, w))], axis=-1)


class TestCrop:
    def test_same_window_in_both(self):
        ref = coordinate_image(256, 256)
        pair = ImagePair(ref, 1.0 - ref, 0.3)
        out = paired_random_crop(pair, 224, seed=11)
        assert out.ref.shape == out.dist.shape == (224, 224, 3)
        np.testing.assert_array_equal(out.dist, 1.0 - out.ref)

    def test_exact_size_is_identity(self, rng):
        img = rng.uniform(size=(64, 64, 3))
        out = paired_random_crop(ImagePair(img, img, 0.0), 64, seed=5)
        np.testing.assert_array_equal(out.ref, img)

    def test_too_small(self, rng):
        img = rng.uniform(size=(200, 200, 3))
        with pytest.raises(ValidationError):
            paired_random_crop(ImagePair(img, img, 0.0), 224, seed=0)
        with pytest.raises(ValidationError):
            center_crop(img, 224)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), h=st.integers(8, 40), w=st.integers(8, 40))
    def test_offsets_equal_for_all_seeds(self, seed, h, w):
        ref = coordinate_image(h, w)
        dist = ref[..., [1, 0, 2]]
        out = paired_random_crop(ImagePair(ref, dist, 0.5), 8, seed)
        np.testing.assert_array_equal(out.ref[..., [1, 0, 2]], out.dist)
        again = paired_random_crop(ImagePair(ref, dist, 0.5), 8, seed)
        np.testing.assert_array_equal(out.ref, again.ref)
