"""File I/O: NIfTI-1 volumes, FSL bval/bvec text files, shell grouping.

Only single-file little-endian NIfTI-1 (.nii) is supported, with
float32 payloads for real data and complex64 for complex data. Noise
maps and PSDs are serialized as plain volumes in the same format.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .core import DwiDataset, NoiseMap, NoisePsd, Volume3

HEADER_SIZE = 348
VOX_OFFSET = 352
DT_FLOAT32 = 16
DT_COMPLEX64 = 32

DEFAULT_SHELL_TOLERANCE = 50.0  # s/mm^2, typical scanner b-value jitter


class NiftiError(ValueError):
    """Malformed or unsupported NIfTI file."""


# ---------------------------------------------------------------------------
# NIfTI-1
# ---------------------------------------------------------------------------

def _pack_header(dims, n_volumes, datatype, bitpix):
    """Build a minimal 348-byte NIfTI-1 header plus the 4-byte extender."""
    dim = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1]
    if n_volumes is not None:
        dim[0] = 4
        dim[4] = n_volumes
    pixdim = [0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]

    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)          # sizeof_hdr
    struct.pack_into("<c", hdr, 38, b"r")                # regular
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, bitpix)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))  # vox_offset
    struct.pack_into("<f", hdr, 112, 1.0)                # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)                # scl_inter
    descrip = b"bm4dpc"
    struct.pack_into(f"<{len(descrip)}s", hdr, 148, descrip)
    struct.pack_into("<h", hdr, 254, 1)                  # sform_code
    struct.pack_into("<4f", hdr, 280, 1.0, 0.0, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 296, 0.0, 1.0, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, 1.0, 0.0)
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")
    return bytes(hdr) + b"\x00\x00\x00\x00"              # no extensions


def write_nifti(data, path) -> None:
    """Write a volume, dataset, noise map, or PSD as single-file NIfTI-1.

    Real samples are stored as float32, complex samples as complex64.
    """
    if isinstance(data, DwiDataset):
        payload = data.stack()
        n_volumes = data.n_volumes
    elif isinstance(data, (Volume3, NoiseMap, NoisePsd)):
        payload = data.data
        n_volumes = None
    else:
        payload = np.asarray(data)
        if payload.ndim == 4:
            n_volumes = payload.shape[3]
        elif payload.ndim == 3:
            n_volumes = None
        else:
            raise ValueError("expected 3D or 4D data")

    if np.iscomplexobj(payload):
        raw = np.asarray(payload, dtype=np.complex64)
        datatype, bitpix = DT_COMPLEX64, 64
    else:
        raw = np.asarray(payload, dtype=np.float32)
        datatype, bitpix = DT_FLOAT32, 32

    header = _pack_header(raw.shape[:3], n_volumes, datatype, bitpix)
    with open(path, "wb") as fh:
        fh.write(header)
        # NIfTI stores x fastest, matching the core flattening convention
        fh.write(raw.tobytes(order="F"))


def read_nifti(path):
    """Read a single-file little-endian NIfTI-1 volume or 4D series.

    Returns a Volume3 for 3D files (or 4D files holding a single
    volume) and a DwiDataset for 4D files; the dataset carries zero
    b-values until gradients are attached (`attach_gradients`).
    """
    with open(path, "rb") as fh:
        hdr = fh.read(VOX_OFFSET)
        if len(hdr) < HEADER_SIZE:
            raise NiftiError(f"{path}: truncated header ({len(hdr)} bytes)")
        (sizeof_hdr,) = struct.unpack_from("<i", hdr, 0)
        if sizeof_hdr != HEADER_SIZE:
            if struct.unpack_from(">i", hdr, 0)[0] == HEADER_SIZE:
                raise NiftiError(f"{path}: big-endian NIfTI is not supported")
            raise NiftiError(f"{path}: not a NIfTI-1 file (sizeof_hdr={sizeof_hdr})")
        magic = struct.unpack_from("<4s", hdr, 344)[0]
        if magic[:3] != b"n+1":
            raise NiftiError(f"{path}: bad magic {magic!r} (expected 'n+1')")
        dim = struct.unpack_from("<8h", hdr, 40)
        (datatype,) = struct.unpack_from("<h", hdr, 70)
        (vox_offset,) = struct.unpack_from("<f", hdr, 108)
        (scl_slope,) = struct.unpack_from("<f", hdr, 112)
        (scl_inter,) = struct.unpack_from("<f", hdr, 116)

        ndim = dim[0]
        if ndim not in (3, 4):
            raise NiftiError(f"{path}: unsupported dimensionality {ndim}")
        m, n, o = dim[1], dim[2], dim[3]
        n_volumes = dim[4] if ndim == 4 else 1
        if min(m, n, o, n_volumes) < 1:
            raise NiftiError(f"{path}: invalid dims {dim[1:5]}")

        if datatype == DT_FLOAT32:
            dtype = np.dtype("<f4")
        elif datatype == DT_COMPLEX64:
            dtype = np.dtype("<c8")
        else:
            raise NiftiError(f"{path}: unsupported datatype code {datatype}")

        count = m * n * o * n_volumes
        fh.seek(int(vox_offset))
        buf = fh.read(count * dtype.itemsize)
        if len(buf) < count * dtype.itemsize:
            raise NiftiError(
                f"{path}: truncated payload ({len(buf)} of "
                f"{count * dtype.itemsize} bytes)"
            )

    flat = np.frombuffer(buf, dtype=dtype, count=count)
    data = flat.reshape((m, n, o, n_volumes), order="F")
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        data = data * scl_slope + scl_inter

    if n_volumes == 1:
        return Volume3(data[..., 0])
    volumes = [Volume3(data[..., i]) for i in range(n_volumes)]
    return DwiDataset(tuple(volumes), np.zeros(n_volumes))


# ---------------------------------------------------------------------------
# FSL bval/bvec text files
# ---------------------------------------------------------------------------

def read_bvals_bvecs(bval_path, bvec_path=None):
    """Parse FSL-style b-value and direction files.

    The bval file is whitespace-separated b-values; the bvec file has
    three rows of direction components. Directions with norm > 1e-8
    are normalized to unit length, others are left as zero vectors.

    Returns
    -------
    bvals : array (N,)
    bvecs : array (N, 3) or None
    """
    with open(bval_path) as fh:
        tokens = fh.read().split()
    try:
        bvals = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{bval_path}: non-numeric b-value token: {exc}") from exc
    if bvals.size == 0:
        raise ValueError(f"{bval_path}: empty b-value file")

    if bvec_path is None:
        return bvals, None

    with open(bvec_path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != 3:
        raise ValueError(f"{bvec_path}: expected 3 rows, got {len(rows)}")
    if any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{bvec_path}: ragged rows")
    if len(rows[0]) != bvals.size:
        raise ValueError(
            f"{bvec_path}: {len(rows[0])} directions but {bvals.size} b-values"
        )
    try:
        bvecs = np.array([[float(t) for t in r] for r in rows], dtype=np.float64).T
    except ValueError as exc:
        raise ValueError(f"{bvec_path}: non-numeric token: {exc}") from exc

    norms = np.linalg.norm(bvecs, axis=1)
    keep = norms > 1e-8
    bvecs[keep] /= norms[keep, None]
    bvecs[~keep] = 0.0
    return bvals, bvecs


def attach_gradients(dataset: DwiDataset, bvals, bvecs=None) -> DwiDataset:
    """Return the dataset with b-values (and optionally bvecs) attached."""
    bvals = np.asarray(bvals, dtype=np.float64)
    if bvals.shape != (dataset.n_volumes,):
        raise ValueError(
            f"got {bvals.size} b-values for {dataset.n_volumes} volumes"
        )
    return DwiDataset(dataset.volumes, bvals, bvecs)


# ---------------------------------------------------------------------------
# Shell grouping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShellTable:
    """b-value shells: centers sorted ascending, member volume indices."""

    centers: tuple
    members: tuple
    tolerance: float

    def __post_init__(self):
        seen = [i for shell in self.members for i in shell]
        if len(seen) != len(set(seen)):
            raise ValueError("a volume index appears in more than one shell")
        if list(self.centers) != sorted(self.centers):
            raise ValueError("shell centers must be ascending")

    @property
    def highest(self) -> tuple:
        """Member indices of the highest-b shell."""
        return self.members[-1]


def group_shells(bvals, tolerance: float = DEFAULT_SHELL_TOLERANCE) -> ShellTable:
    """Greedy shell clustering of b-values.

    Values are scanned in ascending order; a new shell starts when a
    value exceeds the running shell center (mean of members so far) by
    more than `tolerance`.
    """
    if tolerance < 0:
        raise ValueError("tolerance must be nonnegative")
    bvals = np.asarray(bvals, dtype=np.float64)
    order = np.argsort(bvals, kind="stable")

    centers, members = [], []
    cur_sum, cur_idx = 0.0, []
    for i in order:
        b = bvals[i]
        if cur_idx and b - cur_sum / len(cur_idx) > tolerance:
            centers.append(cur_sum / len(cur_idx))
            members.append(tuple(sorted(cur_idx)))
            cur_sum, cur_idx = 0.0, []
        cur_sum += b
        cur_idx.append(int(i))
    if cur_idx:
        centers.append(cur_sum / len(cur_idx))
        members.append(tuple(sorted(cur_idx)))
    return ShellTable(tuple(centers), tuple(members), float(tolerance))
