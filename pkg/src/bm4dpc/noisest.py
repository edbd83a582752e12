"""Noise map and noise PSD estimation from tail principal components.

The last few PCs of the highest shell carry almost no anatomy, so their
local statistics expose the noise: a windowed standard deviation gives
the spatial map, and windowed 2D periodograms (minimum across slice
chunks, to reject residual signal) give the in-plane power spectrum.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DwiDataset, NoiseMap, NoisePsd, Volume3, vectorize
from .dataio import group_shells
from .gpca import forward_pca


@dataclass(frozen=True)
class NoiseEstParams:
    """Windowing choices for the map and PSD estimators."""

    tail_count: int = 3
    map_window: int = 5
    psd_window: int = 16
    chunk_size: int = 5
    chunk_step: int = 3
    window_step: int = 8

    def __post_init__(self):
        fields = (
            self.tail_count, self.map_window, self.psd_window,
            self.chunk_size, self.chunk_step, self.window_step,
        )
        if any(int(v) != v or v < 1 for v in fields):
            raise ValueError("all estimation parameters must be positive integers")
        if self.map_window % 2 != 1:
            raise ValueError("map_window must be odd")


def clamp_sigma(sigma: np.ndarray, fraction: float = 0.01) -> np.ndarray:
    """Floor a sigma map at `fraction` of its median positive value.

    Keeps the subsequent voxel-wise division from exploding in
    background voxels where the estimate collapses to ~0. Relative
    flooring keeps the estimators scale equivariant.
    """
    if not 0 < fraction < 1:
        raise ValueError("clamp fraction must lie in (0, 1)")
    positive = sigma[sigma > 0]
    if positive.size == 0:
        raise ValueError("sigma map has no positive entries to clamp against")
    return np.maximum(sigma, fraction * np.median(positive))


def _starts(extent: int, size: int, step: int) -> np.ndarray:
    """Strided starts plus a clamped final start covering the end."""
    if size > extent:
        raise ValueError("window does not fit in the extent")
    starts = list(range(0, extent - size + 1, step))
    if starts[-1] != extent - size:
        starts.append(extent - size)
    return np.asarray(starts)


def estimate_noise_map(tail_pcs, window: int = 5) -> NoiseMap:
    """Voxel-wise noise sigma from windowed sample standard deviations.

    Each tail PC yields a local std map (mean-subtracted, divisor n-1,
    window shrunk at the borders); the final map is their arithmetic
    mean.
    """
    if not tail_pcs:
        raise ValueError("need at least one tail PC")
    if window % 2 != 1:
        raise ValueError("window must be odd")
    dims = tail_pcs[0].dims
    if window > min(dims):
        raise ValueError("window larger than the volume")

    kernel = np.ones((window,) * 3)
    counts = ndimage.correlate(np.ones(dims), kernel, mode="constant", cval=0.0)
    maps = []
    for pc in tail_pcs:
        x = pc.data
        if np.iscomplexobj(x):
            raise ValueError("tail PCs must be real")
        s1 = ndimage.correlate(x, kernel, mode="constant", cval=0.0)
        s2 = ndimage.correlate(x * x, kernel, mode="constant", cval=0.0)
        var = (s2 - s1 * s1 / counts) / (counts - 1.0)
        maps.append(np.sqrt(np.clip(var, 0.0, None)))
    return NoiseMap(np.mean(maps, axis=0))


def _psd_for_pc(x: np.ndarray, params: NoiseEstParams) -> np.ndarray:
    m, n, o = x.shape
    w = params.psd_window
    if w > min(m, n):
        raise ValueError("psd window exceeds the slice dims")
    if params.chunk_size > o:
        raise ValueError("fewer slices than one chunk")

    xs = _starts(m, w, params.window_step)
    ys = _starts(n, w, params.window_step)
    chunk_psds = []
    for z0 in _starts(o, params.chunk_size, params.chunk_step):
        sub = x[:, :, z0:z0 + params.chunk_size]
        view = np.lib.stride_tricks.sliding_window_view(sub, (w, w), axis=(0, 1))
        wins = view[np.ix_(xs, ys)].astype(np.float64)  # (nx, ny, chunk, w, w)
        wins = wins - wins.mean(axis=(-2, -1), keepdims=True)
        pgrams = np.abs(np.fft.fft2(wins)) ** 2 / (w * w)
        chunk_psds.append(pgrams.mean(axis=(0, 1, 2)))
    local = np.min(chunk_psds, axis=0)  # signal leaks inflate, so take min

    # Upsample w x w -> m x n by zero-padding the autocorrelation: the
    # known lags [-w/2, w/2) keep their values, all longer lags are 0.
    acorr = np.fft.ifft2(local)
    full = np.zeros((m, n), dtype=np.complex128)
    half = w // 2
    for dx in range(-half, w - half):
        for dy in range(-half, w - half):
            full[dx % m, dy % n] = acorr[dx % w, dy % w]
    plane = np.clip(np.fft.fft2(full).real, 0.0, None)

    psi = np.repeat(plane[:, :, None], o, axis=2)  # slice-independent noise
    return psi / psi.mean()


def estimate_psd(tail_pcs_normalized, params: NoiseEstParams = None) -> NoisePsd:
    """Noise PSD from sigma-normalized tail PCs.

    Per PC: windowed mean-subtracted 2D periodograms are averaged
    within chunks of consecutive slices, the voxel-wise minimum across
    chunks rejects residual signal, and autocorrelation zero-padding
    upsamples the window-sized spectrum to the full in-plane grid
    (constant along the through-slice frequency). The per-PC spectra
    are averaged and scaled to unit grid mean.
    """
    if params is None:
        params = NoiseEstParams()
    if not tail_pcs_normalized:
        raise ValueError("need at least one tail PC")
    spectra = [_psd_for_pc(pc.data, params) for pc in tail_pcs_normalized]
    psi = np.mean(spectra, axis=0)
    return NoisePsd(psi / psi.mean())


def estimate_noise(
    dataset: DwiDataset,
    params: NoiseEstParams = None,
    clamp_fraction: float = 0.01,
):
    """Estimate (sigma map, PSD) from the highest shell of a real dataset.

    The highest-shell volumes are decomposed by PCA; the last
    `tail_count` PC images feed the map estimator, then, normalized by
    the clamped map, the PSD estimator.

    Returns
    -------
    (NoiseMap, NoisePsd)
    """
    if params is None:
        params = NoiseEstParams()
    if dataset.is_complex:
        raise ValueError("noise estimation expects real (phase-stabilized) data")

    shells = group_shells(dataset.bvals)
    members = shells.highest
    if len(members) <= params.tail_count:
        raise ValueError("highest shell has too few volumes for the tail")

    subset = [dataset.volumes[i] for i in members]
    matrix = vectorize(DwiDataset(
        tuple(subset), np.asarray([dataset.bvals[i] for i in members])
    ))
    stack = forward_pca(matrix, dims=dataset.dims)
    tail = list(stack.pcs[-params.tail_count:])

    sigma = estimate_noise_map(tail, params.map_window)
    clamped = clamp_sigma(sigma.data, clamp_fraction)
    normalized = [Volume3(pc.data / clamped) for pc in tail]
    psd = estimate_psd(normalized, params)
    return sigma, psd
