"""Desk-scale in-silico data with known ground truth.

A lightweight tensor phantom (nested ellipsoids, monoexponential
signal), smooth synthetic phase, and spatially varying white or colored
complex noise whose exact sigma map and PSD are returned alongside the
data.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DwiDataset, NoiseMap, NoisePsd, SpatialKernel, Volume3

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def fibonacci_directions(count: int, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform unit directions on the sphere.

    A seeded azimuthal offset decorrelates direction sets drawn for
    different shells.
    """
    if count < 1:
        raise ValueError("need at least one direction")
    rng = np.random.default_rng([int(seed), 0x0D15])
    offset = rng.uniform(0.0, 2.0 * math.pi)
    i = np.arange(count)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = GOLDEN_ANGLE * i + offset
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Ellipsoid:
    """One tissue compartment: region, diffusion tensor, proton density."""

    semiaxes: tuple          # fractions of each dim
    tensor: np.ndarray       # SPD, mm^2/s
    s0: float
    center: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        tensor = np.asarray(self.tensor, dtype=np.float64)
        if tensor.shape != (3, 3) or np.max(np.abs(tensor - tensor.T)) > 1e-12:
            raise ValueError("tensor must be symmetric 3x3")
        if np.any(np.linalg.eigvalsh(tensor) <= 0):
            raise ValueError("tensor must be positive definite")
        if not self.s0 > 0:
            raise ValueError("S0 must be positive")
        object.__setattr__(self, "tensor", tensor)

    def mask(self, dims) -> np.ndarray:
        grids = np.meshgrid(
            *(np.arange(d, dtype=np.float64) for d in dims), indexing="ij"
        )
        r2 = np.zeros(dims)
        for g, d, c, a in zip(grids, dims, self.center, self.semiaxes):
            r2 += ((g - c * (d - 1)) / (a * d)) ** 2
        return r2 <= 1.0


def _default_tissue() -> tuple:
    # gel-filled FOV (keeps signal, and hence a stable phase estimate,
    # in every voxel), cortex-like shell, anisotropic core, CSF center
    wm = _rotation_z(math.radians(30.0)) @ np.diag([1.7e-3, 0.3e-3, 0.3e-3]) \
        @ _rotation_z(math.radians(30.0)).T
    return (
        Ellipsoid((10.0, 10.0, 10.0), 0.3e-3 * np.eye(3), 0.3),
        Ellipsoid((0.44, 0.42, 0.42), 0.8e-3 * np.eye(3), 0.8),
        Ellipsoid((0.30, 0.26, 0.30), wm, 0.7),
        Ellipsoid((0.11, 0.11, 0.16), 3.0e-3 * np.eye(3), 1.0),
    )


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom geometry, acquisition shells, and seed."""

    dims: tuple = (32, 32, 16)
    shells: tuple = ((0.0, 3), (1000.0, 15), (2000.0, 15))
    tissue: tuple = field(default_factory=_default_tissue)
    seed: int = 7

    def __post_init__(self):
        if any(d < 1 for d in self.dims) or len(self.dims) != 3:
            raise ValueError("dims must be three positive voxel counts")
        if not self.tissue:
            raise ValueError("need at least one tissue compartment")
        if not any(b == 0 and c > 0 for b, c in self.shells):
            raise ValueError("need at least one b=0 volume")


def _smooth_slice_phase(rng, m, n):
    """Sum of 3 low-frequency 2D sinusoids, values in radians."""
    x = np.arange(m)[:, None] / m
    y = np.arange(n)[None, :] / n
    phase = np.zeros((m, n))
    for _ in range(3):
        fx, fy = rng.integers(-2, 3, size=2)
        amp = rng.uniform(0.2, 0.8)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        phase += amp * np.sin(2.0 * math.pi * (fx * x + fy * y) + theta)
    return phase


def make_phantom(spec: PhantomSpec = None):
    """Simulate a noise-free complex dataset with known tensors.

    Per voxel and volume the magnitude is S0 * exp(-b * g^T D g); each
    volume then receives a smooth per-slice phase and one random global
    phase.

    Returns
    -------
    dataset : DwiDataset (complex)
    tensors : ndarray (m, n, o, 3, 3)
        Ground-truth diffusion tensor per voxel (zero outside support).
    support : ndarray (m, n, o) of bool
        Union of the tissue compartments.
    """
    if spec is None:
        spec = PhantomSpec()
    m, n, o = spec.dims

    s0_map = np.zeros(spec.dims)
    tensors = np.zeros(spec.dims + (3, 3))
    support = np.zeros(spec.dims, dtype=bool)
    for comp in spec.tissue:  # later compartments overwrite earlier ones
        inside = comp.mask(spec.dims)
        s0_map[inside] = comp.s0
        tensors[inside] = comp.tensor
        support |= inside

    bvals, bvecs = [], []
    for shell_idx, (b, count) in enumerate(spec.shells):
        if b == 0:
            bvals.extend([0.0] * count)
            bvecs.extend([np.zeros(3)] * count)
        else:
            dirs = fibonacci_directions(count, seed=spec.seed + shell_idx)
            bvals.extend([float(b)] * count)
            bvecs.extend(list(dirs))
    bvals = np.asarray(bvals)
    bvecs = np.asarray(bvecs)

    volumes = []
    for i, (b, g) in enumerate(zip(bvals, bvecs)):
        if b == 0:
            mag = s0_map.copy()
        else:
            # g^T D g per voxel via the tensor's upper triangle
            gdg = (
                g[0] * g[0] * tensors[..., 0, 0]
                + g[1] * g[1] * tensors[..., 1, 1]
                + g[2] * g[2] * tensors[..., 2, 2]
                + 2.0 * g[0] * g[1] * tensors[..., 0, 1]
                + 2.0 * g[0] * g[2] * tensors[..., 0, 2]
                + 2.0 * g[1] * g[2] * tensors[..., 1, 2]
            )
            mag = s0_map * np.exp(-b * gdg)
        rng = np.random.default_rng([int(spec.seed), 1, i])
        phase = np.empty(spec.dims)
        for k in range(o):
            phase[:, :, k] = _smooth_slice_phase(rng, m, n)
        phase += rng.uniform(0.0, 2.0 * math.pi)  # global per-volume shift
        volumes.append(Volume3(mag * np.exp(1j * phase)))

    dataset = DwiDataset(tuple(volumes), bvals, bvecs)
    return dataset, tensors, support


def make_colored_kernel(sigma_inner: float = 0.8, sigma_outer: float = 2.0) -> SpatialKernel:
    """In-plane difference-of-Gaussians band-pass kernel, unit l2 norm.

    Truncated at 4 * sigma_outer; depth 1, so no through-slice
    correlation.
    """
    if not 0 < sigma_inner < sigma_outer:
        raise ValueError("need 0 < sigma_inner < sigma_outer")
    radius = int(math.ceil(4.0 * sigma_outer))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    r2 = xx * xx + yy * yy

    def unit_sum_gaussian(sigma):
        g = np.exp(-0.5 * r2 / sigma**2)
        return g / g.sum()

    dog = unit_sum_gaussian(sigma_inner) - unit_sum_gaussian(sigma_outer)
    dog /= np.linalg.norm(dog)
    return SpatialKernel(dog[:, :, None], center=(radius, radius, 0))


def _embed_kernel(kernel: SpatialKernel, dims) -> np.ndarray:
    """Zero-pad the kernel into `dims` with its center at the origin."""
    if any(k > d for k, d in zip(kernel.data.shape, dims)):
        raise ValueError("kernel does not fit in the requested dims")
    pad = np.zeros(dims)
    k0, k1, k2 = kernel.data.shape
    pad[:k0, :k1, :k2] = kernel.data
    return np.roll(pad, [-c for c in kernel.center], axis=(0, 1, 2))


def kernel_to_psd(kernel: SpatialKernel, dims) -> NoisePsd:
    """Exact PSD of noise colored by circular convolution with `kernel`.

    psi(f) = |DFT(g)|^2 on the full grid; its grid mean equals the
    squared l2 norm of the kernel (Parseval).
    """
    spectrum = np.fft.fftn(_embed_kernel(kernel, dims))
    psi = np.abs(spectrum) ** 2
    unit = abs(psi.mean() - 1.0) <= 1e-6
    return NoisePsd(psi, unit_variance=unit)


def default_gfactor(dims, amplitude: float = 0.5) -> np.ndarray:
    """Smooth positive field: 1 + amplitude * centered 3D Gaussian bump."""
    grids = np.meshgrid(
        *(np.arange(d, dtype=np.float64) for d in dims), indexing="ij"
    )
    r2 = np.zeros(dims)
    for g, d in zip(grids, dims):
        r2 += ((g - 0.5 * (d - 1)) / (0.25 * d)) ** 2
    return 1.0 + amplitude * np.exp(-0.5 * r2)


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level, correlation kernel (None for white), spatial profile."""

    level: float
    kernel: Optional[SpatialKernel] = None
    gfactor: Optional[np.ndarray] = None  # None -> default bump
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be nonnegative")
        if self.kernel is not None and abs(self.kernel.l2_norm - 1.0) > 1e-9:
            raise ValueError("colored-noise kernel must have unit l2 norm")
        if self.gfactor is not None:
            gf = np.asarray(self.gfactor, dtype=np.float64)
            if np.any(gf <= 0):
                raise ValueError("gfactor map must be positive")
            object.__setattr__(self, "gfactor", gf)

    @property
    def kind(self) -> str:
        return "white" if self.kernel is None else "colored"


def add_noise(dataset: DwiDataset, spec: NoiseSpec):
    """Add spatially varying (optionally colored) complex Gaussian noise.

    The base level is sigma0 = level * max |b=0 signal|; the voxel-wise
    standard deviation sigma(x) = sigma0 * gfactor(x) applies to the
    real and imaginary channels independently. Colored noise is built
    by circularly convolving unit-variance white draws with the kernel,
    so the returned PSD is exact.

    Returns
    -------
    noisy : DwiDataset (complex)
    sigma_map : NoiseMap
        The exact per-channel sigma(x).
    psd : NoisePsd
        kernel_to_psd of the kernel (flat for white noise).
    """
    if not dataset.is_complex:
        raise ValueError("noise synthesis expects a complex dataset")
    dims = dataset.dims

    gfactor = spec.gfactor if spec.gfactor is not None else default_gfactor(dims)
    if gfactor.shape != dims:
        raise ValueError("gfactor dims must match the dataset")

    b0_max = max(
        float(np.abs(v.data).max())
        for v, b in zip(dataset.volumes, dataset.bvals)
        if b == 0
    )
    sigma0 = spec.level * b0_max
    sigma = sigma0 * gfactor

    if spec.kernel is None:
        psd = NoisePsd(np.ones(dims))
        spectrum = None
    else:
        psd = kernel_to_psd(spec.kernel, dims)
        spectrum = np.fft.fftn(_embed_kernel(spec.kernel, dims))

    if spec.level == 0:
        return dataset, NoiseMap(sigma), psd

    volumes = []
    for i, vol in enumerate(dataset.volumes):
        rng = np.random.default_rng([int(spec.seed), i])
        draws = rng.standard_normal((2,) + dims)
        if spectrum is not None:
            for c in range(2):
                draws[c] = np.fft.ifftn(np.fft.fftn(draws[c]) * spectrum).real
        noise = sigma * (draws[0] + 1j * draws[1])
        volumes.append(Volume3(vol.data + noise))
    noisy = dataset.with_volumes(volumes)
    return noisy, NoiseMap(sigma), psd
