"""Phase stabilization: rotation to the real axis, slice by slice."""

import numpy as np
import pytest

from bm4dpc import (
    DwiDataset,
    PhaseFilterParams,
    Volume3,
    stabilize_phase,
    stabilize_volume,
)

from _util import pearson


def _positive_field(rng, dims):
    return 1.0 + np.abs(rng.standard_normal(dims))


def _complex_dataset(arrays):
    vols = tuple(Volume3(np.asarray(a, dtype=complex)) for a in arrays)
    return DwiDataset(vols, np.zeros(len(vols)))


class TestParams:
    def test_sigma_must_be_positive(self):
        PhaseFilterParams(lowpass_sigma=2.0)
        with pytest.raises(ValueError):
            PhaseFilterParams(lowpass_sigma=0.0)
        with pytest.raises(ValueError):
            PhaseFilterParams(lowpass_sigma=-1.0)


class TestStabilize:
    def test_rejects_real_input(self):
        rng = np.random.default_rng(0)
        vols = tuple(Volume3(rng.standard_normal((8, 8, 4))) for _ in range(2))
        ds = DwiDataset(vols, np.zeros(2))
        with pytest.raises(ValueError):
            stabilize_phase(ds)

    def test_real_cast_to_complex_is_identity(self):
        rng = np.random.default_rng(1)
        fields = [_positive_field(rng, (12, 12, 4)) for _ in range(2)]
        out = stabilize_phase(_complex_dataset(fields))
        assert not out.is_complex
        for field, vol in zip(fields, out.volumes):
            assert np.max(np.abs(vol.data - field)) <= 1e-12

    def test_constant_global_phase_recovers_magnitude(self):
        rng = np.random.default_rng(2)
        mag = _positive_field(rng, (16, 16, 4))
        phased = mag * np.exp(1j * np.pi / 3.0)
        out = stabilize_phase(_complex_dataset([phased, phased]))
        for vol in out.volumes:
            assert np.max(np.abs(vol.data - mag)) <= 1e-10

    def test_output_real_dims_and_gradients_preserved(self):
        rng = np.random.default_rng(3)
        vols = tuple(
            Volume3(
                _positive_field(rng, (10, 8, 6))
                * np.exp(1j * rng.uniform(0, 2 * np.pi))
            )
            for _ in range(3)
        )
        ds = DwiDataset(vols, [0.0, 1000.0, 1000.0],
                        [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
        out = stabilize_phase(ds)
        assert not out.is_complex
        assert out.dims == ds.dims
        assert np.array_equal(out.bvals, ds.bvals)
        assert np.array_equal(out.bvecs, ds.bvecs)

    def test_global_phase_invariance(self):
        rng = np.random.default_rng(4)
        arrays = [
            _positive_field(rng, (12, 12, 6))
            * np.exp(1j * 0.3 * rng.standard_normal((12, 12, 6)))
            for _ in range(2)
        ]
        base = stabilize_phase(_complex_dataset(arrays))
        rotated = stabilize_phase(
            _complex_dataset([a * np.exp(1j * 0.9) for a in arrays])
        )
        for v0, v1 in zip(base.volumes, rotated.volumes):
            assert np.max(np.abs(v0.data - v1.data)) <= 1e-10

    def test_correlation_beats_plain_real_part(self, phantom, colored_arm,
                                               colored_stabilized, gt_real):
        """Smooth phase plus noise: rotation must recover more signal
        than just taking the real part."""
        noisy = colored_arm["noisy"]
        for i in (0, 5, 20):
            truth = gt_real.volumes[i].data
            corr_stab = pearson(colored_stabilized.volumes[i].data, truth)
            corr_real = pearson(noisy.volumes[i].data.real, truth)
            assert corr_stab > corr_real

    def test_noise_power_roughly_halved(self):
        """Pure complex white noise: the retained real channel carries
        about half the complex noise power (a bit less near DC where
        the low-pass phase estimate locks onto the noise)."""
        rng = np.random.default_rng(5)
        noise = rng.standard_normal((64, 64, 64)) + 1j * rng.standard_normal(
            (64, 64, 64)
        )
        out = stabilize_volume(Volume3(noise), PhaseFilterParams())
        ratio = out.data.var() / (noise.real.var() + noise.imag.var())
        assert 0.4 <= ratio <= 0.6
