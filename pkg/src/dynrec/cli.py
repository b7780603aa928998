"""Batch command-line interface: ``dynrec <subcommand> [options]``.

Every subcommand reads and writes files only; progress goes to stderr.
Settings may come from a flat config file (``--config``) holding
``key = value`` lines under ``[subcommand]`` sections; flags win over the
file.  Failures print one ``dynrec: error: <kind>: <message>`` line and exit
with status 1 (usage errors exit with 2).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import tensor
from .cg import CGConfig, cg_refine, cs_reconstruct
from .diffusion import DCConfig, acs_block, cosine_schedule, sample
from .encoding import EncodingOperator, SamplingMask, adjoint, forward, to_image, to_kspace
from .grog import GrogOperators, calibrate_grog, grid_radial
from .metrics import evaluate
from .phantom import PhantomSpec, dynamic_phantom, phantom_frame, synth_coilmaps
from .priors import KtKernel, OraclePredictor, PriorStack, XfSoftPrior, ZeroPredictor, fit_kt_kernel
from .sampling import (
    BinPlan,
    MaskSpec,
    RadialAcquisition,
    RadialTrajectory,
    acquire_radial,
    bin_spokes,
    estimate_motion_signal,
    make_vd_mask,
    read_trajectory_csv,
    sort_bin_to_kspace,
    write_trajectory_csv,
)
from .tensor import load_cplx, load_header, save_cplx

log = logging.getLogger("dynrec")

SEED_ENV = "DYNREC_SEED"


class CliError(Exception):
    """User-facing failure with a short machine-readable kind."""

    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


def progress(msg):
    print(f"dynrec: {msg}", file=sys.stderr, flush=True)


# ---------------------------------------------------------------- config file


def read_config(path) -> dict:
    """Parse ``[section]`` headers and ``key = value`` lines into nested dicts."""
    sections = {}
    current = None
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError("config", f"cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise CliError("config", f"{path}:{lineno}: expected 'key = value'")
        if current is None:
            raise CliError("config", f"{path}:{lineno}: key outside a [section]")
        sections[current][key.strip().replace("-", "_")] = value.strip()
    return sections


def _apply_config(parser: argparse.ArgumentParser, values: dict, where: str):
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None:
            raise CliError("config", f"unknown key {key!r} in [{where}]")
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise CliError("config", f"[{where}] {key}: expected a boolean, got {raw!r}")
            defaults[key] = raw.lower() in ("true", "1", "yes")
            continue
        try:
            val = act.type(raw) if act.type else raw
        except (TypeError, ValueError):
            raise CliError("config", f"[{where}] {key}: invalid value {raw!r}") from None
        if act.choices is not None and val not in act.choices:
            raise CliError("config", f"[{where}] {key}: {val!r} not in {sorted(act.choices)}")
        defaults[key] = val
    parser.set_defaults(**defaults)


# ------------------------------------------------------------------- helpers


def resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise CliError("seed", f"{SEED_ENV}={env!r} is not an integer") from None


def _tensor_files(stem):
    stem = str(stem)
    return [Path(stem + ".hdr"), Path(stem + ".cplx")]


def _guard(paths, force):
    for p in paths:
        if Path(p).exists() and not force:
            raise CliError("exists", f"{p} exists (use --force to overwrite)")


def _save(arr, stem, args, meta=None):
    save_cplx(arr, stem, meta)
    progress(f"wrote {stem} dims {','.join(str(d) for d in np.shape(arr))}")


def _load(stem, what):
    try:
        return load_cplx(stem)
    except tensor.MissingFileError as exc:
        raise CliError("missing", f"{what}: {exc}") from None


def save_mask(m: SamplingMask, stem):
    meta = {"kind": "mask", "acs_start": m.acs_rows[0], "acs_stop": m.acs_rows[1]}
    save_cplx(m.mask[None].astype(np.complex64), stem, meta)


def load_mask(stem) -> SamplingMask:
    arr = _load(stem, "mask")
    meta = load_header(stem).meta
    acs = (int(meta.get("acs_start", 0)), int(meta.get("acs_stop", 0)))
    if arr.shape[0] != 1:
        raise CliError("shape", f"mask {stem} must have a single coil slot, got {arr.shape}")
    return SamplingMask(np.abs(arr[0]) > 0.5, acs)


def load_maps(stem):
    arr = _load(stem, "coil maps")
    if arr.shape[1] != 1:
        raise CliError("shape", f"coil maps {stem} must be [coil,1,row,col], got {arr.shape}")
    return arr[:, 0].astype(np.complex128)


def load_radial(stem) -> RadialAcquisition:
    arr = _load(stem, "radial data")
    meta = load_header(stem).meta
    traj_path = Path(f"{stem}.traj.csv")
    if not traj_path.exists():
        raise CliError("missing", f"trajectory file {traj_path} not found")
    traj = read_trajectory_csv(traj_path, arr.shape[3])
    if arr.shape[1] != 1 or arr.shape[2] != traj.n_spokes:
        raise CliError("shape", f"radial data {arr.shape} do not match {traj.n_spokes} spokes")
    traj.kmax = float(meta.get("kmax", traj.kmax))
    return RadialAcquisition(traj, arr[:, 0].astype(np.complex128), meta.get("ortho", "0") == "1")


def to_pgm(img, peak) -> bytes:
    """8-bit binary PGM of a magnitude image scaled so ``peak`` maps to 255."""
    mag = np.abs(np.asarray(img, dtype=np.complex128))
    h, w = mag.shape
    if peak > 0:
        pix = np.clip(np.rint(255.0 * mag / peak), 0, 255).astype(np.uint8)
    else:
        pix = np.zeros((h, w), dtype=np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()


# --------------------------------------------------------------- subcommands


def cmd_phantom(args):
    _guard(_tensor_files(args.out), args.force)
    seed = resolve_seed(args.seed)
    spec = PhantomSpec(args.rows, args.cols, args.frames, args.mode, args.amplitude, args.period, seed=seed)
    x = dynamic_phantom(spec)
    progress(f"phantom {spec.mode} seed {seed}")
    _save(x, args.out, args, {"kind": "image", "mode": spec.mode, "seed": seed})


def cmd_coilmaps(args):
    _guard(_tensor_files(args.out), args.force)
    seed = resolve_seed(args.seed)
    maps = synth_coilmaps(args.rows, args.cols, args.coils, seed)
    progress(f"coil maps seed {seed}")
    _save(maps[:, None], args.out, args, {"kind": "coilmaps", "seed": seed})


def cmd_mask(args):
    _guard(_tensor_files(args.out), args.force)
    seed = resolve_seed(args.seed)
    spec = MaskSpec(
        args.rows, args.frames, args.accel, args.acs_frac, args.density_power,
        not args.shared, seed, args.cols,
    )
    m = make_vd_mask(spec)
    save_mask(m, args.out)
    progress(f"mask {spec.budget} rows/frame acs {m.acs_rows} seed {seed}")
    progress(f"wrote {args.out} dims 1,{','.join(str(d) for d in m.shape)}")


def cmd_acquire(args):
    _guard(_tensor_files(args.out), args.force)
    seed = resolve_seed(args.seed)
    if args.scheme == "cartesian":
        for name in ("image", "maps", "mask"):
            if getattr(args, name) is None:
                raise CliError("usage", f"acquire cartesian needs --{name}")
        x = _load(args.image, "image").astype(np.complex128)
        op = EncodingOperator(load_maps(args.maps), load_mask(args.mask))
        y = forward(op, x)
        if args.noise_sd > 0:
            rng = np.random.default_rng(seed)
            noise = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) / np.sqrt(2.0)
            y = np.where(op.mask.mask[None], y + args.noise_sd * noise, 0)
        _save(y, args.out, args, {"kind": "kspace", "seed": seed})
        return
    traj_path = Path(f"{args.out}.traj.csv")
    _guard([traj_path], args.force)
    if args.maps is not None:
        sens = load_maps(args.maps)
        n_row, n_col = sens.shape[1:]
    else:
        n_row, n_col = args.rows, args.cols
        sens = synth_coilmaps(n_row, n_col, args.coils, seed)
    spec = PhantomSpec(n_row, n_col, 1, args.mode, args.amplitude, args.period, seed=seed)
    traj = RadialTrajectory(args.spokes, args.readout or max(n_row, n_col))
    progress(f"simulating {traj.n_spokes} spokes ({spec.mode}, period {spec.period} spokes)")
    acq = acquire_radial(lambda ts: phantom_frame(spec, ts), traj, sens, args.noise_sd, seed, ortho=True)
    save_cplx(acq.samples[:, None], args.out, {"kind": "radial", "ortho": 1, "kmax": traj.kmax, "seed": seed})
    write_trajectory_csv(traj, traj_path)
    progress(f"wrote {args.out} dims {acq.n_coil},1,{traj.n_spokes},{traj.n_readout} and {traj_path}")


def cmd_bin(args):
    _guard([args.out] + ([args.signal] if args.signal else []), args.force)
    acq = load_radial(args.data)
    sig = estimate_motion_signal(acq, args.smooth)
    plan = bin_spokes(sig.values, args.states, args.window, args.mode)
    plan.save(args.out)
    if args.signal:
        with open(args.signal, "w") as fh:
            fh.write("spoke,signal\n")
            for i, v in enumerate(sig.values):
                fh.write(f"{i},{float(v)!r}\n")
    sizes = ",".join(str(len(s)) for _, s in plan.bins)
    progress(f"{len(plan.bins)} bins ({plan.mode}) sizes {sizes}; wrote {args.out}")


def cmd_grog(args):
    outs = [f"{args.out}{suffix}" for suffix in ("", ".mask", ".hits", ".ops.gx", ".ops.gy")]
    _guard([p for o in outs for p in _tensor_files(o)], args.force)
    acq = load_radial(args.data)
    n_grid = args.grid or acq.trajectory.n_readout
    ops = calibrate_grog(acq, args.ridge, n_grid)
    if args.bins:
        groups = [s for _, s in BinPlan.load(args.bins).bins]
    else:
        groups = [list(range(acq.n_spokes))]
    grids, hits, dropped = [], [], 0
    for i, spokes in enumerate(groups):
        g = grid_radial(sort_bin_to_kspace(acq, spokes), ops, n_grid)
        grids.append(g.grid[:, 0])
        hits.append(g.hit_count)
        dropped += g.dropped
        progress(f"bin {i}: {len(spokes)} spokes, {int(np.count_nonzero(g.hit_count))} cells hit")
    grid = np.stack(grids, axis=1)
    hit = np.stack(hits)[None].astype(np.complex128)
    save_cplx(grid, args.out, {"kind": "kspace", "dropped": dropped})
    save_mask(SamplingMask(np.stack(hits) > 0), f"{args.out}.mask")
    save_cplx(hit, f"{args.out}.hits", {"kind": "hits"})
    ops.save(f"{args.out}.ops")
    progress(f"wrote {args.out} dims {','.join(str(d) for d in grid.shape)}; dropped {dropped} samples")


def _predictor(spec, sched, sens, shape):
    if spec == "zero":
        return ZeroPredictor()
    kind, sep, path = spec.partition(":")
    if kind != "oracle" or not sep or not path:
        raise CliError("usage", f"--predictor must be 'zero' or 'oracle:<path>', got {spec!r}")
    ref = _load(path, "oracle reference").astype(np.complex128)
    if ref.shape[0] == 1 and shape[0] != 1:
        ref = to_kspace(ref, sens)
    if ref.shape != shape:
        raise CliError("shape", f"oracle reference {ref.shape} does not match data {shape}")
    return OraclePredictor(ref, sched)


def _kernel(spec, y, m):
    if spec == "none":
        return None
    if spec == "acs":
        kern = fit_kt_kernel(acs_block(y, m))
        progress(f"k-t kernel fitted on ACS rows {m.acs_rows}")
        return kern
    try:
        return KtKernel.load(spec)
    except (KeyError, json.JSONDecodeError) as exc:
        raise CliError("kernel", f"cannot read kernel {spec}: {exc}") from exc


def cmd_recon(args):
    outs = _tensor_files(args.out) + ([Path(args.diagnostics)] if args.diagnostics else [])
    _guard(outs, args.force)
    y = _load(args.data, "measurement").astype(np.complex128)
    m = load_mask(args.mask)
    sens = load_maps(args.maps)
    op = EncodingOperator(sens, m)
    if y.shape != op.kspace_shape:
        raise CliError("shape", f"measurement {y.shape} does not match maps/mask {op.kspace_shape}")
    if args.method == "zero-filled":
        x = adjoint(op, y)
    elif args.method == "cg":
        cfg = CGConfig(max_iters=args.iters, lambda_td=args.lambda_td)
        if args.diagnostics:
            res = cg_refine(np.where(m.mask[None], y, 0), y, m, sens, cfg)
            res.write_history(args.diagnostics)
            x = to_image(res.y, sens)
        else:
            x = cs_reconstruct(y, m, sens, cfg)
    else:
        seed = resolve_seed(args.seed)
        sched = cosine_schedule(args.steps)
        xt = None
        if args.xt == "xf-soft":
            xt = XfSoftPrior(args.tau, sched, args.noise_gain)
        kt = _kernel(args.kt, y, m)
        priors = PriorStack(_predictor(args.predictor, sched, sens, y.shape), xt, kt)
        cfg = CGConfig(max_iters=args.cg_iters, lambda_td=args.lambda_td)
        reference = None
        if args.reference:
            reference = _load(args.reference, "reference").astype(np.complex128)
            if reference.shape[0] == 1:
                reference = to_kspace(reference, sens)
        progress(f"diffusion T={args.steps} seed {seed}")
        y0 = sample(
            y, op, priors, sched, DCConfig(args.lambda_dc), cfg, seed,
            reference=reference, diagnostics=args.diagnostics,
        )
        x = to_image(y0, sens)
    _save(x, args.out, args, {"kind": "image", "method": args.method})


def cmd_metrics(args):
    _guard([args.out], args.force)
    x = _load(args.image, "image")
    ref = _load(args.reference, "reference")
    report = evaluate(x.astype(np.complex128), ref.astype(np.complex128))
    report.write_csv(args.out)
    s = report.summary()
    progress(f"psnr {s['psnr'][0]:.3f} ssim {s['ssim'][0]:.4f} nmse {s['nmse'][0]:.3g}; wrote {args.out}")


def cmd_export(args):
    x = _load(args.image, "image")
    if x.shape[0] != 1:
        raise CliError("shape", f"export needs a coil-combined image [1,time,row,col], got {x.shape}")
    frames = np.abs(x[0].astype(np.complex128))
    n_time, n_row, n_col = frames.shape
    outdir = Path(args.out_dir)
    names = [outdir / f"{args.prefix}_{t:03d}.pgm" for t in range(n_time)]
    names.append(outdir / f"{args.prefix}_xt.pgm")
    if args.profile_col is not None:
        if not 0 <= args.profile_col < n_col:
            raise CliError("range", f"profile column {args.profile_col} outside 0..{n_col - 1}")
        profile = frames[:, :, args.profile_col].T  # [row, time]
    else:
        row = n_row // 2 if args.profile_row is None else args.profile_row
        if not 0 <= row < n_row:
            raise CliError("range", f"profile row {row} outside 0..{n_row - 1}")
        profile = frames[:, row, :].T  # [col, time]
    _guard(names, args.force)
    outdir.mkdir(parents=True, exist_ok=True)
    peak = float(frames.max())
    for t in range(n_time):
        names[t].write_bytes(to_pgm(frames[t], peak))
    names[-1].write_bytes(to_pgm(profile, peak))
    progress(f"wrote {n_time} frames and an x-t profile to {outdir}")


# -------------------------------------------------------------------- parser


def _seed_arg(p):
    p.add_argument("--seed", type=int, default=None, help=f"random seed (fallback: ${SEED_ENV}, then 0)")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file with [subcommand] sections of key = value lines")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads (results do not depend on it)")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dynrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="synthetic dynamic phantom")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--mode", choices=("cardiac", "respiratory"), default="cardiac")
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--period", type=float, default=None)
    _seed_arg(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("coilmaps", parents=[common], help="synthetic normalized coil maps")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--coils", type=int, default=4)
    _seed_arg(p)
    p.set_defaults(func=cmd_coilmaps)

    p = sub.add_parser("mask", parents=[common], help="1D variable-density Cartesian mask")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--accel", type=float, default=4.0)
    p.add_argument("--acs-frac", type=float, default=0.08)
    p.add_argument("--density-power", type=float, default=3.0)
    p.add_argument("--shared", action="store_true", help="one pattern for every frame")
    _seed_arg(p)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("acquire", parents=[common], help="simulate Cartesian or golden-angle radial data")
    p.add_argument("scheme", choices=("cartesian", "radial"))
    p.add_argument("--out", required=True)
    p.add_argument("--image")
    p.add_argument("--maps")
    p.add_argument("--mask")
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--cols", type=int, default=64)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--spokes", type=int, default=1700)
    p.add_argument("--readout", type=int, default=None)
    p.add_argument("--mode", choices=("cardiac", "respiratory"), default="respiratory")
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--period", type=float, default=200.0, help="motion period in spokes")
    _seed_arg(p)
    p.set_defaults(func=cmd_acquire)

    p = sub.add_parser("bin", parents=[common], help="motion signal and spoke binning")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--states", type=int, default=6)
    p.add_argument("--window", type=int, default=283)
    p.add_argument("--mode", choices=("sliding", "fixed"), default="sliding")
    p.add_argument("--smooth", type=int, default=1)
    p.add_argument("--signal", help="optional CSV of the motion signal")
    p.set_defaults(func=cmd_bin)

    p = sub.add_parser("grog", parents=[common], help="GROG calibration and gridding")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--ridge", type=float, default=1e-6)
    p.set_defaults(func=cmd_grog)

    p = sub.add_parser("recon", parents=[common], help="zero-filled, CG or diffusion reconstruction")
    p.add_argument("method", choices=("zero-filled", "cg", "diffusion"))
    p.add_argument("--data", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--maps", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="CSV of per-iteration (cg) or per-step (diffusion) values")
    p.add_argument("--iters", type=int, default=30, help="CG iterations (cg method)")
    p.add_argument("--lambda-td", type=float, default=0.015)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lambda-dc", type=float, default=1.0)
    p.add_argument("--xt", choices=("identity", "xf-soft"), default="xf-soft")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--noise-gain", type=float, default=3.0)
    p.add_argument("--kt", default="none", help="'none', 'acs' (fit on the measured ACS rows) or a kernel stem")
    p.add_argument("--predictor", default="zero", help="'zero' or 'oracle:<tensor>'")
    p.add_argument("--cg-iters", type=int, default=2, help="CG iterations per diffusion step")
    p.add_argument("--reference", help="ground-truth image or k-space for the NMSE diagnostic")
    _seed_arg(p)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("metrics", parents=[common], help="PSNR/SSIM/NMSE/Tenengrad report")
    p.add_argument("--image", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export", parents=[common], help="PGM frames plus an x-t profile")
    p.add_argument("--image", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="frame")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--profile-row", type=int, default=None)
    g.add_argument("--profile-col", type=int, default=None)
    p.set_defaults(func=cmd_export)
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sections = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        _apply_config(subparser, sections.get(args.command, {}), args.command)
        unknown = set(sections) - set(parser._subparsers._group_actions[0].choices)
        if unknown:
            raise CliError("config", f"unknown section(s) {sorted(unknown)}")
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
        if args.threads < 1:
            raise CliError("usage", "--threads must be >= 1")
        tensor.set_workers(args.threads)
        args.func(args)
    except CliError as exc:
        print(f"dynrec: error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, np.linalg.LinAlgError, FloatingPointError) as exc:
        msg = " ".join(str(exc).split())
        print(f"dynrec: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0
