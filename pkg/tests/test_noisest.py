"""Noise map and PSD estimation from tail principal components."""

import numpy as np
import pytest

from bm4dpc import (
    DwiDataset,
    NoiseEstParams,
    Volume3,
    clamp_sigma,
    estimate_noise,
    estimate_noise_map,
    estimate_psd,
    kernel_to_psd,
    make_colored_kernel,
)
from bm4dpc.simulate import default_gfactor

from _util import pearson, radial_profile, rel_rmse, synth_colored


def _white_volumes(rng, count, dims):
    return [Volume3(rng.standard_normal(dims)) for _ in range(count)]


class TestParams:
    def test_defaults(self):
        params = NoiseEstParams()
        assert params.tail_count == 3
        assert params.map_window == 5
        assert params.psd_window == 16
        assert params.chunk_size == 5
        assert params.chunk_step == 3
        assert params.window_step == 8

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseEstParams(tail_count=0)
        with pytest.raises(ValueError):
            NoiseEstParams(map_window=4)
        with pytest.raises(ValueError):
            NoiseEstParams(psd_window=-1)


class TestClampSigma:
    def test_floors_relative_to_median_positive(self):
        sigma = np.array([0.0, 0.001, 1.0, 2.0, 3.0])
        out = clamp_sigma(sigma, 0.01)
        floor = 0.01 * np.median([0.001, 1.0, 2.0, 3.0])
        assert out[0] == floor
        assert np.array_equal(out[2:], sigma[2:])

    def test_fraction_range(self):
        with pytest.raises(ValueError):
            clamp_sigma(np.ones(3), 0.0)
        with pytest.raises(ValueError):
            clamp_sigma(np.ones(3), 1.0)

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            clamp_sigma(np.zeros(5))


class TestNoiseMap:
    def test_all_zero_pc(self):
        out = estimate_noise_map([Volume3(np.zeros((8, 8, 8)))])
        assert np.all(out.data == 0.0)

    def test_iid_unit_noise_mean(self):
        rng = np.random.default_rng(20)
        pc = Volume3(rng.standard_normal((32, 32, 32)))
        out = estimate_noise_map([pc])
        assert 0.95 <= out.data.mean() <= 1.05

    def test_bump_map_recovered(self):
        # three tail components, as the estimator sees by default
        dims = (32, 32, 32)
        truth = default_gfactor(dims)
        rng = np.random.default_rng(21)
        pcs = [Volume3(rng.standard_normal(dims) * truth) for _ in range(3)]
        out = estimate_noise_map(pcs)
        assert pearson(out.data, truth) >= 0.9

    def test_averages_tail_pcs(self):
        rng = np.random.default_rng(22)
        pcs = _white_volumes(rng, 3, (16, 16, 16))
        separate = [estimate_noise_map([pc]).data for pc in pcs]
        combined = estimate_noise_map(pcs).data
        assert np.allclose(combined, np.mean(separate, axis=0), atol=1e-12)

    def test_scale_equivariance_exact(self):
        rng = np.random.default_rng(23)
        pc = rng.standard_normal((12, 12, 12))
        base = estimate_noise_map([Volume3(pc)]).data
        scaled = estimate_noise_map([Volume3(2.0 * pc)]).data
        assert np.array_equal(scaled, 2.0 * base)

    def test_window_validation(self):
        pc = Volume3(np.zeros((8, 8, 8)))
        with pytest.raises(ValueError):
            estimate_noise_map([pc], window=4)
        with pytest.raises(ValueError):
            estimate_noise_map([pc], window=9)
        with pytest.raises(ValueError):
            estimate_noise_map([])


class TestPsd:
    def test_white_noise_stays_flat(self):
        rng = np.random.default_rng(24)
        pcs = _white_volumes(rng, 3, (64, 64, 16))
        psd = estimate_psd(pcs)
        rms_dev = np.sqrt(np.mean((psd.data - 1.0) ** 2))
        assert rms_dev <= 0.10

    def test_unit_mean_always(self):
        rng = np.random.default_rng(25)
        pcs = [Volume3(3.0 * rng.standard_normal((32, 32, 8)))]
        psd = estimate_psd(pcs)
        assert abs(psd.data.mean() - 1.0) <= 1e-6

    def test_colored_radial_profile_recovered(self):
        dims = (64, 64, 16)
        kernel = make_colored_kernel()
        truth = kernel_to_psd(kernel, dims)
        rng = np.random.default_rng(26)
        pcs = [Volume3(synth_colored(rng, dims, truth.data)) for _ in range(3)]
        est = estimate_psd(pcs)

        _, prof_est = radial_profile(est.data)
        _, prof_true = radial_profile(truth.data)
        assert pearson(prof_est, prof_true) >= 0.9

    def test_constant_along_slice_frequency(self):
        rng = np.random.default_rng(27)
        psd = estimate_psd(_white_volumes(rng, 1, (32, 32, 12)))
        assert np.allclose(psd.data, psd.data[:, :, :1], atol=1e-12)

    def test_window_and_chunk_validation(self):
        rng = np.random.default_rng(28)
        small = [Volume3(rng.standard_normal((8, 8, 8)))]
        with pytest.raises(ValueError):
            estimate_psd(small)  # 16 x 16 window cannot fit
        thin = [Volume3(rng.standard_normal((32, 32, 3)))]
        with pytest.raises(ValueError):
            estimate_psd(thin)  # fewer slices than one chunk
        with pytest.raises(ValueError):
            estimate_psd([])


class TestEstimateNoise:
    def test_sigma_accuracy_on_colored_phantom(
        self, colored_stabilized, colored_arm, support
    ):
        sigma, _ = estimate_noise(colored_stabilized)
        err = rel_rmse(sigma.data, colored_arm["sigma"].data, support)
        assert err <= 0.15

    def test_highest_shell_selected(self, colored_stabilized, colored_arm):
        """Estimating from the full dataset equals estimating from the
        b=2000 subset alone: only the highest shell is used."""
        members = [
            i for i, b in enumerate(colored_stabilized.bvals) if b == 2000.0
        ]
        subset = DwiDataset(
            tuple(colored_stabilized.volumes[i] for i in members),
            colored_stabilized.bvals[members],
        )
        full_sigma, full_psd = estimate_noise(colored_stabilized)
        sub_sigma, sub_psd = estimate_noise(subset)
        assert np.array_equal(full_sigma.data, sub_sigma.data)
        assert np.array_equal(full_psd.data, sub_psd.data)

    def test_scale_equivariance(self, colored_stabilized):
        sigma, psd = estimate_noise(colored_stabilized)
        doubled = colored_stabilized.with_volumes(
            [Volume3(2.0 * v.data) for v in colored_stabilized.volumes]
        )
        sigma2, psd2 = estimate_noise(doubled)
        assert np.allclose(sigma2.data, 2.0 * sigma.data, rtol=1e-12, atol=0)
        assert np.max(np.abs(psd2.data - psd.data)) <= 1e-10

    def test_complex_input_rejected(self, colored_arm):
        with pytest.raises(ValueError):
            estimate_noise(colored_arm["noisy"])

    def test_small_highest_shell_rejected(self):
        rng = np.random.default_rng(29)
        vols = tuple(Volume3(rng.standard_normal((16, 16, 8))) for _ in range(5))
        ds = DwiDataset(vols, [0.0, 0.0, 2000.0, 2000.0, 2000.0])
        with pytest.raises(ValueError):
            estimate_noise(ds)  # 3 volumes in the tail shell, tail_count 3
