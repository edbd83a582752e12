"""Two-stage collaborative filtering over grouped blocks.

Stage 1 hard-thresholds grouped 4D spectra against their exact noise
variances; stage 2 re-runs the grouping on the stage-1 pilot and
applies empirical Wiener gains. Multiple channels (principal
components) ride along the same matched positions, so matching happens
once per reference corner.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..core import NoisePsd, Volume3
from .profile import Bm4dProfile, StageParams
from .transforms import group_inverse, group_transform, haar_matrix
from .variance import basis_autocorr, fold_psd, variances_from_fields, working_dims

WEIGHT_FLOOR = 1e-12
CORNERS_PER_CHUNK = 32


@dataclass(frozen=True)
class BlockGroup:
    """Matched block corners (reference first) and their samples."""

    positions: np.ndarray  # (M, 3) int corners
    samples: np.ndarray    # (M, b0, b1, b2)

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.int64)
        samples = np.asarray(self.samples, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValueError("positions must be (M, 3)")
        m = positions.shape[0]
        if m < 1 or m & (m - 1):
            raise ValueError("group size must be a power of two")
        if samples.ndim != 4 or samples.shape[0] != m:
            raise ValueError("samples must be (M, b0, b1, b2)")
        if len(np.unique(positions, axis=0)) != m:
            raise ValueError("positions must be unique")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "samples", samples)

    @property
    def reference(self) -> np.ndarray:
        return self.positions[0]


def _starts(extent: int, size: int, step: int) -> list:
    """Strided starts plus a clamped final start covering the end."""
    if size > extent:
        raise ValueError("volume smaller than the block")
    starts = list(range(0, extent - size + 1, step))
    if starts[-1] != extent - size:
        starts.append(extent - size)
    return starts


def _match_from_view(view, dims, ref_pos, params: StageParams) -> np.ndarray:
    block = params.block
    lows = [max(r - s, 0) for r, s in zip(ref_pos, params.search_radius)]
    highs = [
        min(r + s, d - b)
        for r, s, d, b in zip(ref_pos, params.search_radius, dims, block)
    ]
    sub = view[lows[0]:highs[0] + 1, lows[1]:highs[1] + 1, lows[2]:highs[2] + 1]
    ref_block = view[tuple(ref_pos)]
    dist = ((sub - ref_block) ** 2).mean(axis=(-3, -2, -1)).ravel()

    ref_flat = np.ravel_multi_index(
        [r - lo for r, lo in zip(ref_pos, lows)], sub.shape[:3]
    )
    dist[ref_flat] = -np.inf  # reference always ranks first
    order = np.argsort(dist, kind="stable")  # ties fall back to corner order

    count = min(order.size, params.max_group)
    count = 1 << (count.bit_length() - 1)  # Haar needs a power of two
    picked = np.stack(np.unravel_index(order[:count], sub.shape[:3]), axis=1)
    return picked + np.asarray(lows, dtype=np.int64)


def match_blocks(guide: Volume3, ref_pos, params: StageParams) -> np.ndarray:
    """Corners of the blocks most similar to the reference block.

    Candidates are every corner in the search window around `ref_pos`
    (clamped so blocks stay inside the volume), ranked by mean squared
    difference with lexicographic tie-breaking; the reference is always
    first. The result length is the largest power of two not exceeding
    min(candidate count, max group size).
    """
    if guide.is_complex:
        raise ValueError("matching guide must be real")
    dims = guide.dims
    block = params.block
    if any(r < 0 or r > d - b for r, d, b in zip(ref_pos, dims, block)):
        raise ValueError("reference block falls outside the volume")
    view = np.lib.stride_tricks.sliding_window_view(guide.data, block)
    return _match_from_view(view, dims, tuple(ref_pos), params)


def _ht_core(coeffs, variances, lam):
    keep = np.abs(coeffs) > lam * np.sqrt(variances)
    keep[..., 0, 0, 0, 0] = True  # group DC always survives
    return np.where(keep, coeffs, 0.0), keep


def hard_threshold(coeffs: np.ndarray, variances: np.ndarray, lam: float):
    """Zero coefficients whose magnitude is within lam * sigma.

    Returns the shrunk coefficients and the number retained. The group
    DC coefficient (first Haar row, first block basis) is always kept.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    shrunk, keep = _ht_core(coeffs, np.asarray(variances, dtype=np.float64), lam)
    return shrunk, int(keep.sum())


def wiener_shrink(noisy: np.ndarray, pilot: np.ndarray, variances: np.ndarray):
    """Empirical Wiener gains from pilot energies.

    gain = pilot^2 / (pilot^2 + var), applied to the noisy
    coefficients; the returned weight is 1 / sum(gain^2 * var), floored
    to stay finite, one weight per leading channel.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    pilot = np.asarray(pilot, dtype=np.float64)
    var = np.asarray(variances, dtype=np.float64)
    energy = pilot * pilot
    denom = energy + var
    gain = np.where(denom > 0, energy / np.where(denom > 0, denom, 1.0), 0.0)
    shrunk = gain * noisy
    axes = tuple(range(shrunk.ndim - 4, shrunk.ndim))
    weight = 1.0 / np.maximum((gain * gain * var).sum(axis=axes), WEIGHT_FLOOR)
    return shrunk, weight


def aggregate(groups, dims, fallback: Volume3 = None) -> Volume3:
    """Weighted overlap-average of denoised groups onto a volume.

    `groups` yields (BlockGroup, weight) pairs. Voxels no block covers
    keep the fallback value (zero when no fallback volume is given).
    """
    num = np.zeros(dims)
    den = np.zeros(dims)
    for group, weight in groups:
        edges = group.samples.shape[1:]
        for pos, blk in zip(group.positions, group.samples):
            sl = tuple(slice(p, p + e) for p, e in zip(pos, edges))
            num[sl] += weight * blk
            den[sl] += weight
    covered = den > 0
    base = fallback.data if fallback is not None else np.zeros(dims)
    out = np.where(covered, num / np.where(covered, den, 1.0), base)
    return Volume3(out)


def _stage_params(profile: Bm4dProfile, stage: int) -> StageParams:
    if stage == 1:
        return profile.ht
    if stage == 2:
        return profile.wiener
    raise ValueError("stage must be 1 or 2")


def bm4d_stage(
    channels,
    psd: NoisePsd,
    profile: Bm4dProfile,
    stage: int,
    pilot_channels=None,
    threads: int = 1,
):
    """One filtering pass over all channels with shared matching.

    Stage 1 matches on channel 0 of the noisy data and hard-thresholds;
    stage 2 matches on channel 0 of the pilot (stage-1 output) and
    Wiener-filters every channel against its own pilot spectrum.
    Deterministic for any thread count: reference corners are processed
    in fixed chunks whose partial sums are merged in order.
    """
    params = _stage_params(profile, stage)
    if not channels:
        raise ValueError("need at least one channel")
    dims = channels[0].dims
    if any(c.dims != dims for c in channels):
        raise ValueError("channels must share dims")
    if any(c.is_complex for c in channels):
        raise ValueError("channels must be real")
    if any(b > d for b, d in zip(params.block, dims)):
        raise ValueError("volume smaller than the block")
    if psd.dims != dims:
        raise ValueError("PSD dims must match the channels")
    if stage == 2:
        if pilot_channels is None or len(pilot_channels) != len(channels):
            raise ValueError("stage 2 needs one pilot per channel")
        if any(p.dims != dims or p.is_complex for p in pilot_channels):
            raise ValueError("pilot channels must be real with matching dims")
    elif pilot_channels is not None:
        raise ValueError("stage 1 takes no pilot")

    block = params.block
    stacked = np.stack([c.data for c in channels])
    view = np.lib.stride_tricks.sliding_window_view(stacked, block, axis=(1, 2, 3))
    if stage == 2:
        pilot_stack = np.stack([p.data for p in pilot_channels])
        pilot_view = np.lib.stride_tricks.sliding_window_view(
            pilot_stack, block, axis=(1, 2, 3)
        )
        guide_view = pilot_view[0]
    else:
        pilot_view = None
        guide_view = view[0]

    work = working_dims(dims, block, params.search_radius)
    fields = basis_autocorr(fold_psd(psd.data, work), block)
    haars = {}
    size = 1
    while size <= params.max_group:
        haars[size] = haar_matrix(size)
        size *= 2

    corners = list(itertools.product(*(
        _starts(d, b, params.step) for d, b in zip(dims, block)
    )))
    chunks = [
        corners[i:i + CORNERS_PER_CHUNK]
        for i in range(0, len(corners), CORNERS_PER_CHUNK)
    ]
    var_cache = {}
    nchan = len(channels)

    def process_chunk(chunk):
        num = np.zeros((nchan,) + dims)
        den = np.zeros((nchan,) + dims)
        for ref in chunk:
            positions = _match_from_view(guide_view, dims, ref, params)
            offsets = positions - positions[0]
            key = offsets.tobytes()
            var = var_cache.get(key)
            if var is None:
                var = variances_from_fields(
                    fields, offsets, haars[positions.shape[0]]
                ).reshape((positions.shape[0],) + block)
                var = np.clip(var, 0.0, None)
                var_cache[key] = var
            px, py, pz = positions[:, 0], positions[:, 1], positions[:, 2]
            group = view[:, px, py, pz]  # (C, M, b0, b1, b2)
            coeffs = group_transform(group)
            if stage == 1:
                shrunk, keep = _ht_core(coeffs, var, params.threshold)
                weight = 1.0 / np.maximum(
                    (keep * var).sum(axis=(1, 2, 3, 4)), WEIGHT_FLOOR
                )
            else:
                pilot_group = pilot_view[:, px, py, pz]
                shrunk, weight = wiener_shrink(
                    coeffs, group_transform(pilot_group), var
                )
            blocks = group_inverse(shrunk)
            wcol = weight[:, None, None, None]
            for j in range(positions.shape[0]):
                sl = (
                    slice(None),
                    slice(px[j], px[j] + block[0]),
                    slice(py[j], py[j] + block[1]),
                    slice(pz[j], pz[j] + block[2]),
                )
                num[sl] += wcol * blocks[:, j]
                den[sl] += wcol
        return num, den

    total_num = np.zeros((nchan,) + dims)
    total_den = np.zeros((nchan,) + dims)
    if threads <= 1:
        partials = map(process_chunk, chunks)
    else:
        executor = ThreadPoolExecutor(max_workers=threads)
        partials = executor.map(process_chunk, chunks)
    for num, den in partials:  # fixed chunk order keeps float sums stable
        total_num += num
        total_den += den
    if threads > 1:
        executor.shutdown()

    if not np.all(total_den > 0):
        raise AssertionError("aggregation left uncovered voxels")
    out = total_num / total_den
    return [Volume3(out[c]) for c in range(nchan)]


def bm4d_multichannel(channels, psd: NoisePsd, profile: Bm4dProfile = None,
                      threads: int = 1):
    """Full two-stage filtering of a channel stack; no channel dropped."""
    if profile is None:
        profile = Bm4dProfile()
    pilots = bm4d_stage(channels, psd, profile, stage=1, threads=threads)
    return bm4d_stage(
        channels, psd, profile, stage=2, pilot_channels=pilots, threads=threads
    )
