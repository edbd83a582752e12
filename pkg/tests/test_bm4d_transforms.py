"""Separable orthonormal group transforms."""

import numpy as np
import pytest
import scipy.fft

from bm4dpc.bm4d import group_inverse, group_transform, haar_matrix
from bm4dpc.bm4d.transforms import block_basis, dct_matrix

SQ2 = np.sqrt(2.0)


class TestDctMatrix:
    def test_orthonormal(self):
        for n in (2, 3, 4, 8):
            mat = dct_matrix(n)
            assert np.max(np.abs(mat @ mat.T - np.eye(n))) <= 1e-12

    def test_matches_scipy_dct(self):
        rng = np.random.default_rng(0)
        for n in (4, 7):
            x = rng.standard_normal(n)
            ours = dct_matrix(n) @ x
            ref = scipy.fft.dct(x, type=2, norm="ortho")
            assert np.allclose(ours, ref, atol=1e-12)

    def test_first_row_is_dc(self):
        mat = dct_matrix(4)
        assert np.allclose(mat[0], 0.5, atol=1e-12)

    def test_size_validated(self):
        with pytest.raises(ValueError):
            dct_matrix(0)


class TestHaarMatrix:
    def test_known_small_sizes(self):
        assert np.array_equal(haar_matrix(1), np.ones((1, 1)))
        assert np.allclose(
            haar_matrix(2), np.array([[1, 1], [1, -1]]) / SQ2, atol=1e-12
        )
        expected4 = np.array(
            [
                [0.5, 0.5, 0.5, 0.5],
                [0.5, 0.5, -0.5, -0.5],
                [1 / SQ2, -1 / SQ2, 0, 0],
                [0, 0, 1 / SQ2, -1 / SQ2],
            ]
        )
        assert np.allclose(haar_matrix(4), expected4, atol=1e-12)

    def test_orthonormal(self):
        for m in (1, 2, 4, 8, 16, 32):
            mat = haar_matrix(m)
            assert np.max(np.abs(mat @ mat.T - np.eye(m))) <= 1e-12

    def test_row_zero_is_dc(self):
        for m in (2, 8):
            assert np.allclose(haar_matrix(m)[0], 1.0 / np.sqrt(m), atol=1e-12)

    def test_power_of_two_required(self):
        with pytest.raises(ValueError):
            haar_matrix(3)
        with pytest.raises(ValueError):
            haar_matrix(0)


class TestGroupTransform:
    def test_zeros_single_block(self):
        coeffs = group_transform(np.zeros((1, 4, 4, 4)))
        assert np.all(coeffs == 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        for m in (1, 2, 8, 16):
            group = rng.standard_normal((m, 4, 4, 4))
            back = group_inverse(group_transform(group))
            assert np.max(np.abs(back - group)) <= 1e-10

    def test_parseval(self):
        rng = np.random.default_rng(2)
        group = rng.standard_normal((8, 4, 4, 4))
        coeffs = group_transform(group)
        assert np.linalg.norm(coeffs) == pytest.approx(
            np.linalg.norm(group), rel=1e-10
        )

    def test_leading_channel_axis(self):
        rng = np.random.default_rng(3)
        stack = rng.standard_normal((3, 4, 4, 4, 4))
        coeffs = group_transform(stack)
        assert coeffs.shape == stack.shape
        for c in range(3):
            assert np.allclose(
                coeffs[c], group_transform(stack[c]), atol=1e-12
            )
        assert np.max(np.abs(group_inverse(coeffs) - stack)) <= 1e-10

    def test_single_member_group_is_block_transform(self):
        """With M = 1 the Haar factor is the identity, so the 4D
        transform reduces to the separable 3D block transform."""
        rng = np.random.default_rng(4)
        block = rng.standard_normal((4, 4, 4))
        coeffs = group_transform(block[None])[0]
        basis = block_basis((4, 4, 4))
        direct = np.tensordot(basis, block, axes=3).reshape(4, 4, 4)
        assert np.allclose(coeffs, direct, atol=1e-12)

    def test_non_power_of_two_group_rejected(self):
        with pytest.raises(ValueError):
            group_transform(np.zeros((3, 4, 4, 4)))

    def test_rank_validated(self):
        with pytest.raises(ValueError):
            group_transform(np.zeros((4, 4, 4)))


class TestBlockBasis:
    def test_shape_and_orthonormality(self):
        basis = block_basis((4, 4, 4))
        assert basis.shape == (64, 4, 4, 4)
        flat = basis.reshape(64, -1)
        assert np.max(np.abs(flat @ flat.T - np.eye(64))) <= 1e-12

    def test_non_cubic_blocks(self):
        basis = block_basis((2, 3, 4))
        flat = basis.reshape(24, -1)
        assert np.max(np.abs(flat @ flat.T - np.eye(24))) <= 1e-12
