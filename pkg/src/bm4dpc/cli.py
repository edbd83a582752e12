"""Command-line interface for simulation, denoising, and evaluation.

Exit codes: 0 success, 2 argument error, 3 I/O error, 4 numerical
failure. All diagnostics go to stderr; metric reports are JSON with
stable key order.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .bm4d import Bm4dProfile
from .core import DwiDataset, NoiseMap, NoisePsd, Volume3
from .dataio import NiftiError, attach_gradients, read_bvals_bvecs, read_nifti, write_nifti
from .evaluate import fit_dti, mppca_denoise, report_metrics
from .noisest import NoiseEstParams, estimate_noise
from .phasestab import stabilize_phase
from .pipeline import PipelineOptions, denoise_bm4dpc
from .simulate import NoiseSpec, PhantomSpec, add_noise, make_colored_kernel, make_phantom

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _log(args, message):
    if args.verbose:
        print(message, file=sys.stderr)


def _err(message):
    print(f"error: {message}", file=sys.stderr)


def _default_threads():
    env = os.environ.get("BM4DPC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _parse_shells(text):
    shells = []
    for part in text.split(","):
        b, _, count = part.partition(":")
        shells.append((float(b), int(count)))
    if any(c < 1 for _, c in shells):
        raise ValueError("shell volume counts must be positive")
    return tuple(shells)


def _load_dataset(path, bval_path=None, bvec_path=None):
    loaded = read_nifti(path)
    if isinstance(loaded, Volume3):
        raise ValueError(f"{path} holds a single volume; need a 4D series")
    if bval_path is not None:
        bvals, bvecs = read_bvals_bvecs(bval_path, bvec_path)
        loaded = attach_gradients(loaded, bvals, bvecs)
    return loaded


def _as_real(dataset):
    """Phase-stabilize complex input so metrics and fits see real data."""
    if dataset.is_complex:
        return stabilize_phase(dataset)
    return dataset


def _load_volume(path):
    loaded = read_nifti(path)
    if isinstance(loaded, DwiDataset):
        raise ValueError(f"{path} holds a 4D series; need a single volume")
    return loaded


def _write_gradients(out_dir, bvals, bvecs):
    with open(os.path.join(out_dir, "bvals"), "w") as fh:
        fh.write(" ".join(f"{b:g}" for b in bvals) + "\n")
    with open(os.path.join(out_dir, "bvecs"), "w") as fh:
        for axis in range(3):
            fh.write(" ".join(f"{v:.8f}" for v in bvecs[:, axis]) + "\n")


def _cmd_simulate(args):
    spec = PhantomSpec(
        dims=tuple(args.size), shells=_parse_shells(args.shells), seed=args.seed
    )
    clean, _tensors, support = make_phantom(spec)
    kernel = make_colored_kernel() if args.noise_type == "colored" else None
    noisy, sigma, psd = add_noise(
        clean, NoiseSpec(level=args.noise_level, kernel=kernel, seed=args.seed)
    )

    os.makedirs(args.out, exist_ok=True)
    magnitude = clean.with_volumes(
        [Volume3(np.abs(v.data)) for v in clean.volumes]
    )
    write_nifti(magnitude, os.path.join(args.out, "gt.nii"))
    write_nifti(noisy, os.path.join(args.out, "noisy.nii"))
    write_nifti(sigma, os.path.join(args.out, "sigma_true.nii"))
    write_nifti(psd, os.path.join(args.out, "psd_true.nii"))
    write_nifti(
        Volume3(support.astype(np.float64)), os.path.join(args.out, "mask.nii")
    )
    _write_gradients(args.out, clean.bvals, clean.bvecs)
    _log(args, f"simulated {len(clean.volumes)} volumes into {args.out}")
    return EXIT_OK


def _cmd_denoise(args):
    dataset = _load_dataset(args.input, args.bval, args.bvec)

    provided_map = provided_psd = None
    if args.noise_map:
        provided_map = NoiseMap(_load_volume(args.noise_map).data)
    if args.psd:
        data = _load_volume(args.psd).data
        provided_psd = NoisePsd(data / data.mean())  # re-unitize after float32 I/O
    if provided_map is not None and provided_psd is not None:
        print("noise estimation skipped (map and PSD provided)", file=sys.stderr)

    options = PipelineOptions(
        provided_noise_map=provided_map,
        provided_psd=provided_psd,
        bm4d_profile=Bm4dProfile.named(args.profile),
        skip_phase_stabilization=args.real_input,
    )
    denoised, used_map, used_psd = denoise_bm4dpc(
        dataset, options, threads=args.threads
    )
    write_nifti(denoised, args.out)
    if args.save_noise_estimates:
        os.makedirs(args.save_noise_estimates, exist_ok=True)
        write_nifti(
            used_map, os.path.join(args.save_noise_estimates, "sigma_est.nii")
        )
        write_nifti(
            used_psd, os.path.join(args.save_noise_estimates, "psd_est.nii")
        )
    _log(args, f"denoised {len(denoised.volumes)} volumes -> {args.out}")
    return EXIT_OK


def _cmd_estimate_noise(args):
    dataset = _as_real(_load_dataset(args.input, args.bval))
    sigma, psd = estimate_noise(dataset, NoiseEstParams())
    write_nifti(sigma, args.out_map)
    write_nifti(psd, args.out_psd)
    return EXIT_OK


def _cmd_metrics(args):
    ref = _as_real(_load_dataset(args.ref, args.bval))
    test = _as_real(_load_dataset(args.test, args.bval))
    mask = _load_volume(args.mask).data > 0.5 if args.mask else None
    report = report_metrics(ref, test, mask)
    with open(args.out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
    _log(args, f"metrics written to {args.out}")
    return EXIT_OK


def _cmd_dti(args):
    dataset = _as_real(_load_dataset(args.input, args.bval, args.bvec))
    if dataset.bvecs is None:
        raise ValueError("dti requires --bvec")
    mask = (
        _load_volume(args.mask).data > 0.5
        if args.mask
        else np.ones(dataset.dims, bool)
    )
    fa, md = fit_dti(dataset, mask)
    write_nifti(fa, args.out_fa)
    write_nifti(md, args.out_md)
    return EXIT_OK


def _cmd_baseline_mppca(args):
    dataset = _load_dataset(args.input)
    denoised = mppca_denoise(dataset, kernel=args.kernel, step=args.step)
    write_nifti(denoised, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bm4dpc",
        description="PCA-spectral collaborative denoising for diffusion MRI",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "--threads", type=int, default=_default_threads(),
        help="worker threads (env BM4DPC_THREADS); results do not depend on it",
    )
    parser.add_argument("--seed", type=int, default=0, help="simulation seed")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a phantom acquisition")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, nargs=3, default=[32, 32, 16],
                   metavar=("M", "N", "O"))
    p.add_argument("--shells", default="0:3,1000:15,2000:15",
                   help="b:count[,b:count...]")
    p.add_argument("--noise-level", type=float, default=0.05)
    p.add_argument("--noise-type", choices=["white", "colored"],
                   default="colored")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("denoise", help="run the full denoising pipeline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--bval", required=True)
    p.add_argument("--bvec")
    p.add_argument("--out", required=True)
    p.add_argument("--noise-map", help="NIfTI sigma map overriding estimation")
    p.add_argument("--psd", help="NIfTI noise PSD overriding estimation")
    p.add_argument("--profile", default="np")
    p.add_argument("--real-input", action="store_true",
                   help="input is already real; skip phase stabilization")
    p.add_argument("--save-noise-estimates", metavar="DIR")
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("estimate-noise", help="noise map and PSD only")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--bval", required=True)
    p.add_argument("--out-map", required=True)
    p.add_argument("--out-psd", required=True)
    p.set_defaults(func=_cmd_estimate_noise)

    p = sub.add_parser("metrics", help="shell-wise PSNR/SSIM report")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--bval", required=True)
    p.add_argument("--mask")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("dti", help="FA and MD maps from a tensor fit")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--bval", required=True)
    p.add_argument("--bvec", required=True)
    p.add_argument("--mask")
    p.add_argument("--out-fa", required=True)
    p.add_argument("--out-md", required=True)
    p.set_defaults(func=_cmd_dti)

    p = sub.add_parser("baseline-mppca", help="patchwise PCA baseline")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", type=int, default=5)
    p.add_argument("--step", type=int, default=3)
    p.set_defaults(func=_cmd_baseline_mppca)

    return parser


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports and exits; keep the code
        return int(exc.code or 0)

    if args.threads < 1:
        _err("--threads must be positive")
        return EXIT_USAGE

    try:
        return args.func(args)
    except NiftiError as exc:
        _err(str(exc))
        return EXIT_IO
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    except np.linalg.LinAlgError as exc:
        _err(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except ValueError as exc:
        message = str(exc)
        _err(message)
        return EXIT_NUMERIC if "finite" in message else EXIT_USAGE


def main() -> int:
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
