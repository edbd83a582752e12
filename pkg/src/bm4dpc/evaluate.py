"""Quality metrics, a DTI fit, and the random-matrix baseline denoiser.

PSNR and SSIM are reported per shell against a noise-free reference;
FA and MD from a weighted least-squares tensor fit support derived-map
error comparisons; mppca_denoise provides the patchwise eigenvalue
shrinkage baseline.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .core import DwiDataset, Volume3
from .dataio import group_shells

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5


def _data(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x
    return np.asarray(getattr(x, "data", x))


def psnr(gt: Volume3, test: Volume3) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the volumes agree.

    Peak = max of the reference volume; mean squared error over all
    voxels.
    """
    a, b = _data(gt), _data(test)
    if a.shape != b.shape:
        raise ValueError("dims mismatch")
    peak = float(np.abs(a).max())
    if peak == 0:
        raise ValueError("reference volume is all zero")
    mse = float(np.mean(np.abs(a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_window_filter(x: np.ndarray) -> np.ndarray:
    # truncate=2.0 with sigma=1.5 gives a radius-3 (7-point) kernel
    return ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=2.0, mode="nearest")


def ssim(gt: Volume3, test: Volume3, data_range: Optional[float] = None) -> float:
    """Mean structural similarity over valid 7x7x7 window centers.

    Gaussian weighting (sigma 1.5), uncorrected local moments, dynamic
    range from the reference unless given. Borders within half a window
    of the edge are excluded from the mean.
    """
    a, b = _data(gt), _data(test)
    if a.shape != b.shape:
        raise ValueError("dims mismatch")
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        raise ValueError("SSIM expects real volumes")
    if data_range is None:
        data_range = float(a.max() - a.min())
    if data_range == 0:
        raise ValueError("reference has zero dynamic range")
    a = a.astype(np.float64)
    b = b.astype(np.float64)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _ssim_window_filter(a)
    mu_b = _ssim_window_filter(b)
    var_a = _ssim_window_filter(a * a) - mu_a * mu_a
    var_b = _ssim_window_filter(b * b) - mu_b * mu_b
    cov = _ssim_window_filter(a * b) - mu_a * mu_b

    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    pad = SSIM_WINDOW // 2
    if any(d <= 2 * pad for d in a.shape):
        raise ValueError("volume too small for the SSIM window")
    core = smap[pad:-pad, pad:-pad, pad:-pad]
    return float(core.mean())


def rmse_map(gt_map, test_map, mask) -> float:
    """Root mean squared difference over the masked voxels."""
    a, b = _data(gt_map), _data(test_map)
    m = _data(mask).astype(bool)
    if a.shape != b.shape or a.shape != m.shape:
        raise ValueError("dims mismatch")
    if not m.any():
        raise ValueError("empty mask")
    diff = a[m] - b[m]
    return float(np.sqrt(np.mean(diff * diff)))


def fit_dti(dataset: DwiDataset, mask, max_bval: float = 1000.0):
    """Weighted least-squares diffusion tensor fit (low-b subset).

    Uses volumes with b <= max_bval. Per masked voxel the log-signal
    model ln S = ln S0 - b g^T D g is solved with weights S^2, the
    tensor eigenvalues are clipped at zero, and FA and MD follow from
    them. Masked voxels with nonpositive signals yield zeros.

    Returns
    -------
    (fa, md) : pair of Volume3
    """
    if dataset.bvecs is None:
        raise ValueError("tensor fit needs b-vectors")
    mask = _data(mask).astype(bool)
    if mask.shape != dataset.dims:
        raise ValueError("mask dims mismatch")
    sel = np.flatnonzero(dataset.bvals <= max_bval)
    if sel.size < 7:
        raise ValueError("need at least 7 low-b volumes")

    bvals = dataset.bvals[sel]
    bvecs = dataset.bvecs[sel]
    gx, gy, gz = bvecs[:, 0], bvecs[:, 1], bvecs[:, 2]
    design = np.stack([
        np.ones_like(bvals),
        -bvals * gx * gx,
        -bvals * gy * gy,
        -bvals * gz * gz,
        -2.0 * bvals * gx * gy,
        -2.0 * bvals * gx * gz,
        -2.0 * bvals * gy * gz,
    ], axis=1)
    if np.linalg.matrix_rank(design) < 7:
        raise ValueError("rank-deficient design (need 6 non-collinear directions)")

    signals = np.stack(
        [np.real(dataset.volumes[i].data)[mask] for i in sel], axis=1
    )  # (voxels, volumes)
    usable = signals.min(axis=1) > 0
    fa_flat = np.zeros(signals.shape[0])
    md_flat = np.zeros(signals.shape[0])
    if usable.any():
        s = signals[usable]
        w = s * s
        y = np.log(s)
        lhs = np.einsum("vi,nv,vj->nij", design, w, design)
        rhs = np.einsum("vi,nv,nv->ni", design, w, y)
        beta = np.linalg.solve(lhs, rhs[..., None])[..., 0]  # (n, 7)

        tensors = np.empty((beta.shape[0], 3, 3))
        tensors[:, 0, 0] = beta[:, 1]
        tensors[:, 1, 1] = beta[:, 2]
        tensors[:, 2, 2] = beta[:, 3]
        tensors[:, 0, 1] = tensors[:, 1, 0] = beta[:, 4]
        tensors[:, 0, 2] = tensors[:, 2, 0] = beta[:, 5]
        tensors[:, 1, 2] = tensors[:, 2, 1] = beta[:, 6]
        evals = np.clip(np.linalg.eigvalsh(tensors), 0.0, None)

        md = evals.mean(axis=1)
        norm2 = (evals * evals).sum(axis=1)
        dev2 = ((evals - md[:, None]) ** 2).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            fa = np.sqrt(1.5 * dev2 / norm2)
        fa[norm2 == 0] = 0.0
        fa_flat[usable] = fa
        md_flat[usable] = md

    fa_map = np.zeros(dataset.dims)
    md_map = np.zeros(dataset.dims)
    fa_map[mask] = fa_flat
    md_map[mask] = md_flat
    return Volume3(fa_map), Volume3(md_map)


def _patch_starts(extent: int, size: int, step: int):
    starts = list(range(0, extent - size + 1, step))
    if starts[-1] != extent - size:
        starts.append(extent - size)
    return starts


def mppca_denoise(dataset: DwiDataset, kernel: int = 5, step: int = 3) -> DwiDataset:
    """Patchwise PCA denoising with an automatic eigenvalue cutoff.

    Each kernel^3 patch forms a voxels-by-volumes matrix whose centered
    covariance spectrum is cut where the tail becomes consistent with
    pure-noise eigenvalue spread; only leading components are kept.
    Overlapping patch estimates are averaged uniformly.
    """
    n = len(dataset.volumes)
    if kernel**3 < n:
        raise ValueError("patch smaller than the volume count")
    dims = dataset.dims
    if any(d < kernel for d in dims):
        raise ValueError("volume smaller than the patch")

    stack = dataset.stack()  # (m, n, o, N)
    num = np.zeros(dims + (n,), dtype=stack.dtype)
    den = np.zeros(dims)
    m_rows = kernel**3

    for x0 in _patch_starts(dims[0], kernel, step):
        for y0 in _patch_starts(dims[1], kernel, step):
            for z0 in _patch_starts(dims[2], kernel, step):
                sl = (
                    slice(x0, x0 + kernel),
                    slice(y0, y0 + kernel),
                    slice(z0, z0 + kernel),
                )
                patch = stack[sl].reshape(m_rows, n)
                means = patch.mean(axis=0, keepdims=True)
                centered = patch - means
                cov = centered.conj().T @ centered / m_rows
                evals, evecs = np.linalg.eigh(cov)
                evals = evals[::-1]
                evecs = evecs[:, ::-1]

                rank = n
                for p in range(n):
                    tail = evals[p:]
                    spread = 4.0 * math.sqrt((n - p) / m_rows) * tail.mean()
                    if evals[p] - evals[-1] < spread:
                        rank = p
                        break
                if rank >= n:
                    recon = patch
                else:
                    top = evecs[:, :rank]
                    recon = centered @ (top @ top.conj().T) + means

                num[sl] += recon.reshape(kernel, kernel, kernel, n)
                den[sl] += 1.0

    out = num / den[..., None]
    volumes = [Volume3(out[..., i]) for i in range(n)]
    return dataset.with_volumes(volumes)


@dataclass(frozen=True)
class MetricReport:
    """Per-shell image metrics plus optional derived-map errors."""

    shell_psnr: dict
    shell_ssim: dict
    shell_counts: dict
    mask_voxels: int
    rmse_fa: Optional[float] = None
    rmse_md: Optional[float] = None

    def __post_init__(self):
        for value in self.shell_ssim.values():
            if not -1.0 <= value <= 1.0:
                raise ValueError("SSIM out of [-1, 1]")

    def to_dict(self) -> dict:
        def shell_key(center):
            return f"{center:g}"

        return {
            "shells": {
                shell_key(c): {
                    "psnr_db": self.shell_psnr[c],
                    "ssim": self.shell_ssim[c],
                    "volumes": self.shell_counts[c],
                }
                for c in sorted(self.shell_psnr)
            },
            "mask_voxels": self.mask_voxels,
            "rmse_fa": self.rmse_fa,
            "rmse_md": self.rmse_md,
        }


def report_metrics(
    gt: DwiDataset, test: DwiDataset, mask=None
) -> MetricReport:
    """Shell-wise PSNR/SSIM of `test` against `gt`.

    When both datasets carry b-vectors, FA and MD maps are fitted on
    each and their RMSE over the mask (or everywhere) is included.
    """
    if len(gt.volumes) != len(test.volumes) or gt.dims != test.dims:
        raise ValueError("datasets must share volume count and dims")
    if not np.array_equal(gt.bvals, test.bvals):
        raise ValueError("datasets must share b-values")

    shells = group_shells(gt.bvals)
    shell_psnr, shell_ssim, shell_counts = {}, {}, {}
    for center, members in zip(shells.centers, shells.members):
        vals_p = [psnr(gt.volumes[i], test.volumes[i]) for i in members]
        vals_s = [ssim(gt.volumes[i], test.volumes[i]) for i in members]
        shell_psnr[center] = float(np.mean(vals_p))
        shell_ssim[center] = float(np.mean(vals_s))
        shell_counts[center] = len(members)

    mask_arr = (
        _data(mask).astype(bool) if mask is not None else np.ones(gt.dims, bool)
    )
    rmse_fa = rmse_md = None
    if gt.bvecs is not None and test.bvecs is not None:
        try:
            fa_gt, md_gt = fit_dti(gt, mask_arr)
            fa_t, md_t = fit_dti(test, mask_arr)
        except ValueError:
            pass  # too few low-b volumes for a tensor fit
        else:
            rmse_fa = rmse_map(fa_gt, fa_t, mask_arr)
            rmse_md = rmse_map(md_gt, md_t, mask_arr)

    return MetricReport(
        shell_psnr=shell_psnr,
        shell_ssim=shell_ssim,
        shell_counts=shell_counts,
        mask_voxels=int(mask_arr.sum()),
        rmse_fa=rmse_fa,
        rmse_md=rmse_md,
    )
