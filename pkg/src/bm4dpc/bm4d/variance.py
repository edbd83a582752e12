"""Exact transform-domain noise variances for grouped blocks.

For stationary noise with PSD psi, the variance of every 4D transform
coefficient of a block group has a closed form that accounts for
inter-block correlation (blocks in a group overlap and share noise).
Rewriting that form through the autocorrelation function reduces each
group to table lookups at the pairwise block offsets, so the spectral
work is done once per PSD rather than once per group.
"""

from dataclasses import dataclass

import numpy as np

from ..core import NoisePsd
from .transforms import block_basis, haar_matrix


@dataclass(frozen=True)
class CoeffVariances:
    """Noise variance of each 4D coefficient, shape (M, b0, b1, b2)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError("expected (M, b0, b1, b2) variances")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("variances must be finite and nonnegative")
        object.__setattr__(self, "data", data)


def working_dims(dims, block, search_radius) -> tuple:
    """Aliased grid edges: min(dim, 2 * (2 * radius + block)) per axis.

    Large enough that every lag reachable within one group (offsets up
    to 2 * radius plus the block extent) stays unaliased; axes already
    at or below that size keep their true extent, which makes the fold
    exact there.
    """
    return tuple(
        min(d, 2 * (2 * r + b)) for d, b, r in zip(dims, block, search_radius)
    )


def fold_psd(psd_data: np.ndarray, work: tuple) -> np.ndarray:
    """Fold a full-grid PSD onto the working grid.

    Implemented as centered truncation of the autocorrelation: short
    lags keep their exact covariances and the zero lag (total power) is
    preserved. Residual negative values from the truncation are clipped
    to zero.
    """
    dims = psd_data.shape
    if any(e > d for e, d in zip(work, dims)):
        raise ValueError("working grid cannot exceed the PSD grid")
    if tuple(work) == tuple(dims):
        return np.array(psd_data, dtype=np.float64)

    acorr = np.fft.ifftn(psd_data)
    index = [
        np.asarray([(t if t < (e + 1) // 2 else t - e) % d for t in range(e)])
        for e, d in zip(work, dims)
    ]
    kept = acorr[np.ix_(*index)]
    return np.clip(np.fft.fftn(kept).real, 0.0, None)


def basis_autocorr(psi_work: np.ndarray, block: tuple) -> np.ndarray:
    """Per-basis noise autocorrelation fields on the working grid.

    Entry p is ifftn(psi_work * |DFT(basis_p)|^2).real: the covariance
    of the p-th 3D block coefficient between two blocks, as a function
    of their corner offset.
    """
    work = psi_work.shape
    if any(b > e for b, e in zip(block, work)):
        raise ValueError("block does not fit in the working grid")
    basis = block_basis(block)
    pad = np.zeros((basis.shape[0],) + tuple(work))
    pad[:, : block[0], : block[1], : block[2]] = basis
    spectra = np.abs(np.fft.fftn(pad, axes=(1, 2, 3))) ** 2
    return np.fft.ifftn(spectra * psi_work, axes=(1, 2, 3)).real


def variances_from_fields(
    c_fields: np.ndarray, offsets: np.ndarray, haar: np.ndarray
) -> np.ndarray:
    """Coefficient variances (M, P) from precomputed autocorr fields.

    var(c_{k,p}) = sum_{i,j} haar[k,i] * haar[k,j] * c_p[off_i - off_j],
    the quadratic form of the k-th Haar row over the pairwise-offset
    covariance table of basis p.
    """
    work = c_fields.shape[1:]
    diff = (offsets[:, None, :] - offsets[None, :, :]) % np.asarray(work)
    table = c_fields[:, diff[..., 0], diff[..., 1], diff[..., 2]]  # (P, M, M)
    return np.einsum("ki,pij,kj->kp", haar, table, haar, optimize=True)


def coeff_variances(
    psd: NoisePsd, positions, block=(4, 4, 4), search_radius=(5, 5, 5)
) -> CoeffVariances:
    """Exact noise variances of all 4D coefficients for one group.

    `positions` are the member block corners, reference first, as
    produced by the matcher.
    """
    positions = np.asarray(positions, dtype=np.int64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ValueError("positions must be (M, 3) block corners")
    highs = np.asarray(psd.dims) - np.asarray(block)
    if np.any(positions < 0) or np.any(positions > highs):
        raise ValueError("block corner falls outside the volume")
    m = positions.shape[0]
    work = working_dims(psd.dims, block, search_radius)
    psi_work = fold_psd(psd.data, work)
    fields = basis_autocorr(psi_work, block)
    var = variances_from_fields(fields, positions - positions[0], haar_matrix(m))
    return CoeffVariances(np.clip(var, 0.0, None).reshape((m,) + tuple(block)))
