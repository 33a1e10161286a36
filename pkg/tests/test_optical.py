"""Tests for specklekernel.optical module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specklekernel.optical import (
    _FRAME_BATCH_BYTES,
    DmdFrame,
    _default_batch,
    bin_output,
    decode_dmd,
    detect,
    device_features,
    encode_dmd,
    encoded_gram,
    encoded_inner_product,
    expand_frame,
    frames_matrix,
    quantize_grey,
    speckle_field,
)
from specklekernel.rng import complex_gaussian_rows
from specklekernel.types import DetectorSpec, TransmissionSpec

from tests.conftest import make_images

# 8x8 images -> 32x32 frames (1024 mirrors) -> 40x40 camera (100 bins)
SMALL = TransmissionSpec(seed=21, input_dim=1024, output_dim=1600, block_rows=64)
CLEAN = DetectorSpec()


def small_images(n: int = 3) -> np.ndarray:
    return make_images(np.arange(n) % 10 + 1, side=8, seed=5)


def oracle_features(images, spec, detector, n_features, noise_seed=0):
    """Dense reference: materialise H and follow each stage literally."""
    H = complex_gaussian_rows(spec.seed, 0, spec.output_dim, spec.input_dim)
    out = []
    for i, img in enumerate(images):
        x = encode_dmd(quantize_grey(img)).as_vector()
        grid = detect(H @ x, detector, noise_seed=noise_seed, stream=i)
        out.append(np.sqrt(bin_output(grid))[:n_features])
    return np.array(out)


class TestQuantizeGrey:
    """Tests for grey-level quantisation."""

    def test_endpoints(self):
        """Should map 0 to 0 and 255 to 16."""
        assert quantize_grey([0, 255]).tolist() == [0, 16]

    def test_rounding(self):
        """Should round g*16/255 to the nearest level."""
        assert quantize_grey([7, 8, 24, 128]).tolist() == [0, 1, 2, 8]

    def test_matches_float_rounding(self):
        """Should agree with floating round-half-up on every grey level."""
        g = np.arange(256)
        expected = np.floor(g * 16 / 255 + 0.5).astype(int)
        assert np.array_equal(quantize_grey(g), expected)

    def test_out_of_range(self):
        """Should reject values outside [0, 255]."""
        with pytest.raises(ValueError, match=r"\[0, 255\]"):
            quantize_grey([256])
        with pytest.raises(ValueError):
            quantize_grey([-1])


class TestDmdEncoding:
    """Tests for DMD frame encoding and decoding."""

    def test_fill_order(self):
        """Should light the first q mirrors of a block in row-major order."""
        bits = encode_dmd([[5]]).bits
        assert bits.tolist() == [[1, 1, 1, 1], [1, 0, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]

    def test_full_and_empty(self):
        """Should light all or none of the mirrors for 16 and 0."""
        bits = encode_dmd([[16, 0]]).bits
        assert bits[:, :4].sum() == 16
        assert bits[:, 4:].sum() == 0

    def test_frame_shape(self):
        """Should give a 112x112 frame for a 28x28 image."""
        frame = encode_dmd(np.zeros((28, 28), dtype=int), provenance=7)
        assert frame.bits.shape == (112, 112)
        assert frame.provenance == 7

    @given(arrays(np.int64, (5, 6), elements=st.integers(0, 16)))
    @settings(max_examples=100, deadline=None)
    def test_round_trip(self, q):
        """Should decode to the original levels."""
        assert np.array_equal(decode_dmd(encode_dmd(q)), q)

    def test_level_out_of_range(self):
        """Should reject levels above 16."""
        with pytest.raises(ValueError, match=r"\[0, 16\]"):
            encode_dmd([[17]])

    def test_frame_validation(self):
        """Should reject non-binary or misaligned frames."""
        with pytest.raises(ValueError, match="0 or 1"):
            DmdFrame(bits=np.full((4, 4), 2))
        with pytest.raises(ValueError, match="4x4"):
            DmdFrame(bits=np.zeros((4, 6)))

    def test_encoded_inner_product(self, rng):
        """Should equal the dot product of the encoded frames."""
        a, b = rng.integers(0, 17, size=(2, 6, 6))
        direct = encode_dmd(a).as_vector() @ encode_dmd(b).as_vector()
        assert encoded_inner_product(a, b) == int(direct)

    def test_encoded_inner_product_broadcasts(self, rng):
        """Should compare one image against a stack, and fill a Gram matrix."""
        q = rng.integers(0, 17, size=(4, 3, 3))
        row = encoded_inner_product(q[0], q)
        assert row.tolist() == [encoded_inner_product(q[0], q[j]) for j in range(4)]
        G = encoded_gram(q)
        frames = frames_matrix(q)
        np.testing.assert_array_equal(G, frames @ frames.T)


class TestExpandFrame:
    """Tests for the full-resolution DMD image."""

    def test_full_hd(self):
        """Should produce a 1080x1920 image from a 112x112 frame."""
        frame = DmdFrame(bits=np.zeros((112, 112), dtype=np.uint8))
        assert expand_frame(frame).shape == (1080, 1920)

    def test_single_mirror(self):
        """Should draw mirror (0, 0) as a 9-row by 16-column patch after the border."""
        bits = np.zeros((112, 112), dtype=np.uint8)
        bits[0, 0] = 1
        image = expand_frame(DmdFrame(bits=bits))
        assert image[36:45, 64:80].all()
        assert image.sum() == 9 * 16


class TestSpeckleField:
    """Tests for the streamed transmission matrix."""

    def test_matches_dense_matrix(self):
        """Should equal H x with H materialised from the same seed."""
        frame = encode_dmd(quantize_grey(small_images(1)[0]))
        H = complex_gaussian_rows(SMALL.seed, 0, SMALL.output_dim, SMALL.input_dim)
        np.testing.assert_allclose(
            speckle_field(frame, SMALL), H @ frame.as_vector(), rtol=1e-12, atol=1e-10
        )

    def test_workers_bitwise_identical(self):
        """Should not depend on the number of workers."""
        frame = encode_dmd(quantize_grey(small_images(1)[0]))
        assert np.array_equal(
            speckle_field(frame, SMALL, workers=1), speckle_field(frame, SMALL, workers=4)
        )

    def test_gaussian_statistics(self):
        """Should have mean intensity 2‖x‖² over the output modes."""
        frame = encode_dmd(quantize_grey(small_images(1)[0]))
        x = frame.as_vector()
        intensity = np.abs(speckle_field(frame, SMALL)) ** 2
        expected = 2 * (x @ x)
        # exponential statistics: standard error is mean / sqrt(M)
        assert abs(intensity.mean() - expected) < 5 * expected / np.sqrt(intensity.size)

    def test_dimension_mismatch(self):
        """Should reject frames of the wrong size."""
        frame = encode_dmd(np.zeros((4, 4), dtype=int))
        with pytest.raises(ValueError, match="mirrors"):
            speckle_field(frame, SMALL)

    def test_mean_intensity_tracks_lit_mirrors(self):
        """Should scale the mean intensity with ‖x‖² across nested mirror patterns."""
        spec = TransmissionSpec(seed=3, input_dim=64, output_dim=10000, block_rows=512)
        means = []
        for lit in (4, 20, 40, 64):
            bits = np.zeros(64, dtype=np.uint8)
            bits[:lit] = 1
            y = speckle_field(DmdFrame(bits=bits.reshape(8, 8)), spec)
            mean = float(np.mean(np.abs(y) ** 2))
            assert mean == pytest.approx(2 * lit, rel=0.05)
            means.append(mean)
        assert means == sorted(means)

    @pytest.mark.slow
    def test_binning_reduces_contrast(self):
        """Should cut the speckle CV² by the 16 pixels of a bin on the canonical camera."""
        spec = TransmissionSpec(seed=8, input_dim=64)
        frame = encode_dmd(quantize_grey(np.array([[255, 128], [64, 200]])))
        grid = detect(speckle_field(frame, spec, workers=4), CLEAN)
        binned = bin_output(grid)
        cv2_raw = grid.var() / grid.mean() ** 2
        cv2_binned = binned.var() / binned.mean() ** 2
        assert 0.9 <= 16 * cv2_binned / cv2_raw <= 1.1


class TestDetect:
    """Tests for the camera model."""

    def test_clean_intensity(self, rng):
        """Should record |y|² on a square grid."""
        y = rng.normal(size=16) + 1j * rng.normal(size=16)
        np.testing.assert_allclose(detect(y, CLEAN), (np.abs(y) ** 2).reshape(4, 4))

    def test_non_square(self):
        """Should reject fields that are not a square grid."""
        with pytest.raises(ValueError, match="square"):
            detect(np.ones(15, dtype=complex), CLEAN)

    def test_smear_keeps_constant_field(self):
        """Should leave a uniform frame unchanged under the 2x2 box smear."""
        grid = detect(np.full(16, 2.0 + 0j), DetectorSpec(correlation_mode="smear"))
        np.testing.assert_allclose(grid, 4.0)

    def test_shot_noise_statistics(self, rng):
        """Should preserve the mean and scale variance with the photon budget."""
        y = np.full(160000, 1.0 + 0j)
        spec = DetectorSpec(shot_noise=True, photon_budget=100.0)
        grid = detect(y, spec, noise_seed=3)
        assert grid.mean() == pytest.approx(1.0, abs=5 * 0.1 / 400)
        assert grid.var() == pytest.approx(1.0 / 100.0, rel=0.05)

    def test_shot_noise_keyed(self, rng):
        """Should reproduce noise per (noise_seed, stream) and vary across streams."""
        y = rng.normal(size=64) + 1j * rng.normal(size=64)
        spec = DetectorSpec(shot_noise=True, photon_budget=50.0)
        a = detect(y, spec, noise_seed=1, stream=0)
        assert np.array_equal(a, detect(y, spec, noise_seed=1, stream=0))
        assert not np.array_equal(a, detect(y, spec, noise_seed=1, stream=1))
        assert not np.array_equal(a, detect(y, spec, noise_seed=2, stream=0))

    def test_zero_frame_stays_zero(self):
        """Should return zeros for a dark frame under noise and quantisation."""
        spec = DetectorSpec(shot_noise=True, quantize_bits=8)
        assert not detect(np.zeros(16, dtype=complex), spec).any()

    def test_quantisation_levels(self, rng):
        """Should snap intensities to 256 levels of the frame maximum."""
        y = rng.normal(size=400) + 1j * rng.normal(size=400)
        grid = detect(y, DetectorSpec(quantize_bits=8))
        peak = (np.abs(y) ** 2).max()
        levels = grid / peak * 255
        np.testing.assert_allclose(levels, np.round(levels), atol=1e-9)
        assert grid.max() == pytest.approx(peak)


class TestBinOutput:
    """Tests for 4x4 binning."""

    def test_canonical_size(self):
        """Should turn a 400x400 grid into 10000 bins."""
        assert bin_output(np.ones((400, 400))).shape == (10000,)

    def test_patch_means(self):
        """Should average each 4x4 patch in row-major patch order."""
        grid = np.zeros((8, 8))
        grid[0:4, 4:8] = 2.0
        grid[4:8, 0:4] = 1.0
        assert bin_output(grid).tolist() == [0.0, 2.0, 1.0, 0.0]

    def test_batch_axes(self, rng):
        """Should bin every grid of a stack independently."""
        grids = rng.random((3, 8, 12))
        out = bin_output(grids)
        assert out.shape == (3, 6)
        np.testing.assert_allclose(out[1], bin_output(grids[1]))

    def test_misaligned(self):
        """Should reject grids whose sides are not multiples of 4."""
        with pytest.raises(ValueError, match="multiple"):
            bin_output(np.ones((6, 8)))


class TestDeviceFeatures:
    """Tests for the end-to-end simulated device."""

    def test_clean_matches_dense_oracle(self):
        """Should match the stage-by-stage dense computation."""
        images = small_images(3)
        X = device_features(images, SMALL, CLEAN, 100)
        assert X.dtype == np.float32
        np.testing.assert_allclose(X, oracle_features(images, SMALL, CLEAN, 100), rtol=1e-5)

    def test_full_frame_matches_dense_oracle(self):
        """Should match the oracle when whole-frame detection is required."""
        images = small_images(3)
        smear = DetectorSpec(correlation_mode="smear")
        X = device_features(images, SMALL, smear, 60)
        np.testing.assert_allclose(X, oracle_features(images, SMALL, smear, 60), rtol=1e-5)

    def test_prefix_property(self):
        """Should return the leading columns of a larger N exactly."""
        images = small_images(2)
        small = device_features(images, SMALL, CLEAN, 25)
        large = device_features(images, SMALL, CLEAN, 100)
        assert np.array_equal(small, large[:, :25])

    def test_workers_bitwise_identical(self):
        """Should give identical bits for 1, 2 and 8 workers."""
        images = small_images(4)
        noisy = DetectorSpec(shot_noise=True, quantize_bits=8)
        for detector in (CLEAN, noisy):
            runs = [
                device_features(images, SMALL, detector, 100, noise_seed=4, workers=w)
                for w in (1, 2, 8)
            ]
            assert np.array_equal(runs[0], runs[1])
            assert np.array_equal(runs[0], runs[2])

    def test_image_batching(self):
        """Should not depend on how images are batched through H."""
        images = small_images(4)
        smear = DetectorSpec(correlation_mode="smear")
        whole = device_features(images, SMALL, smear, 100)
        single = device_features(images, SMALL, smear, 100, image_batch=1)
        np.testing.assert_allclose(whole, single, rtol=1e-6)

    def test_clean_path_batching(self):
        """Should not depend on the image batch on the clean path."""
        images = small_images(5)
        whole = device_features(images, SMALL, CLEAN, 60)
        single = device_features(images, SMALL, CLEAN, 60, image_batch=1)
        pairs = device_features(images, SMALL, CLEAN, 60, image_batch=2)
        np.testing.assert_allclose(whole, single, rtol=1e-6)
        np.testing.assert_allclose(whole, pairs, rtol=1e-6)

    def test_default_batch_fits_buffer_cap(self):
        """Should size canonical batches from the stripes or frames each image needs."""
        canonical = TransmissionSpec()
        clean = _default_batch(canonical, CLEAN, 4096)
        noisy = _default_batch(canonical, DetectorSpec(shot_noise=True), 4096)
        assert clean == _FRAME_BATCH_BYTES // (8 * (12544 + 41 * 100))
        assert noisy == _FRAME_BATCH_BYTES // (8 * (12544 + 160000 + 4096))
        assert 1 <= noisy < clean

    def test_noise_moves_features_moderately(self):
        """Should perturb features without destroying them at a 1e4 photon budget."""
        images = small_images(3)
        clean = device_features(images, SMALL, CLEAN, 100)
        noisy = device_features(
            images, SMALL, DetectorSpec(shot_noise=True, photon_budget=1e4), 100
        )
        rel = np.linalg.norm(noisy - clean) / np.linalg.norm(clean)
        assert 0 < rel < 0.1

    def test_too_many_features(self):
        """Should reject N above the number of bins."""
        with pytest.raises(ValueError, match=r"\[1, 100\]"):
            device_features(small_images(1), SMALL, CLEAN, 101)

    def test_image_size_mismatch(self):
        """Should reject images that do not fill the DMD frame."""
        with pytest.raises(ValueError, match="mirrors"):
            device_features(np.zeros((1, 4, 4), dtype=np.uint8), SMALL, CLEAN, 10)

    def test_frames_matrix(self):
        """Should stack encoded frames as rows."""
        q = quantize_grey(small_images(2))
        M = frames_matrix(q)
        assert M.shape == (2, 1024)
        assert np.array_equal(M[1], encode_dmd(q[1]).as_vector())
