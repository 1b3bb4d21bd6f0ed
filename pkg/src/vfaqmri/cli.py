"""Command-line entry point ``vfaqmri``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 solver divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import pipeline
from .gamp import GampDivergence
from .io import BundleError
from .metrics import MetricsTable, render_pgm

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("vfaqmri")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _shape(text):
    parts = text.lower().replace("x", ",").split(",")
    try:
        vals = [int(v) for v in parts]
    except ValueError:
        vals = []
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"shape must look like 128,128, got {text!r}")
    return vals


def _add_config(p):
    p.add_argument("--config", help="JSON config file; flags override it")


def _add_sampling(p, seed_flag="--mask-seed"):
    p.add_argument("--rate", type=float, help="sampling rate within the elliptical support")
    p.add_argument("--scheme", help="u1, u2, u3 or u4")
    p.add_argument("--pattern", help="vd or pd")
    p.add_argument("--calib", type=int, help="calibration square size")
    p.add_argument(seed_flag, dest="mask_seed", type=int, help="base seed of the masks")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vfaqmri", description="Joint T1, T2* and proton-density mapping from undersampled VFA data.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="phantom truth and fully sampled noisy k-space",
                       description="The noise variance is mean(|z|^2 over the phantom mask) / 10^(snr_db/10), "
                                   "taken over all echo images; with a unitary FFT it is the same in k-space.")
    _add_config(p)
    p.add_argument("--preset", help="phantom preset (default)")
    p.add_argument("--shape", type=_shape, metavar="ROWS,COLS")
    p.add_argument("--snr-db", dest="snr", type=float, help="SNR in dB")
    p.add_argument("--seed", type=int, help="phantom phase and noise seed")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="undersampling masks for one scheme")
    _add_config(p)
    _add_sampling(p, seed_flag="--seed")
    p.add_argument("--shape", type=_shape, metavar="ROWS,COLS")
    p.add_argument("--fa", type=int, help="number of flip angles (default: from the acquisition)")
    p.add_argument("--echoes", type=int, help="number of echoes (default: from the acquisition)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="images and maps from undersampled data")
    _add_config(p)
    _add_sampling(p)
    p.add_argument("--data", required=True, help="directory written by simulate")
    p.add_argument("--masks", help="directory written by sample (generated from the config otherwise)")
    p.add_argument("--method", help="lsq, l1 or amp-pe")
    p.add_argument("--damping", type=float, help="linear-stage damping rate for amp-pe")
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="NRMSE table of reconstructions against the truth")
    p.add_argument("--est", required=True, nargs="+", help="reconstruction directories")
    p.add_argument("--ref", required=True, help="truth directory")
    p.add_argument("--out", required=True, help="CSV file")

    p = sub.add_parser("render", help="8-bit PGM rendering of one map bundle")
    p.add_argument("--in", dest="inp", required=True, help="bundle path without extension")
    p.add_argument("--min", dest="vmin", type=float, required=True)
    p.add_argument("--max", dest="vmax", type=float, required=True)
    p.add_argument("--ref", help="reference bundle for the error image")
    p.add_argument("--out", required=True)

    p = sub.add_parser("trends", help="factorial sweep over methods, schemes, rates and patterns")
    _add_config(p)
    p.add_argument("--data", help="directory written by simulate (simulated into OUT/data otherwise)")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--schemes", nargs="+")
    p.add_argument("--rates", type=float, nargs="+")
    p.add_argument("--patterns", nargs="+")
    p.add_argument("--shape", type=_shape, metavar="ROWS,COLS")
    p.add_argument("--calib", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    return ap


_FLAG_PATHS = {
    "preset": "phantom.preset",
    "seed": "phantom.seed",
    "shape": "phantom.shape",
    "snr": "phantom.snr_db",
    "rate": "sampling.rate",
    "scheme": "sampling.scheme",
    "pattern": "sampling.pattern",
    "calib": "sampling.calib",
    "mask_seed": "sampling.seed",
    "method": "solver.method",
    "damping": "solver.amp_pe.damping",
    "methods": "trends.methods",
    "schemes": "trends.schemes",
    "rates": "trends.rates",
    "patterns": "trends.patterns",
    "workers": "trends.workers",
}


def resolve_args(args) -> dict:
    file_cfg = cfgmod.load(args.config) if getattr(args, "config", None) else {}
    overrides = {path: getattr(args, flag) for flag, path in _FLAG_PATHS.items() if hasattr(args, flag)}
    return cfgmod.resolve(file_cfg, overrides)


def _cmd_simulate(args):
    pipeline.simulate(resolve_args(args), args.out)
    print(f"wrote {args.out}")


def _cmd_sample(args):
    cfg = resolve_args(args)
    pipeline.sample(cfg, args.out, n_flip=args.fa, n_echo=args.echoes)
    print(f"wrote {args.out}")


def _cmd_reconstruct(args):
    cfg = resolve_args(args)
    pipeline.reconstruct(cfg, args.data, args.out, masks_dir=args.masks)
    print(f"wrote {args.out}")


def _cmd_evaluate(args):
    table = MetricsTable()
    for est in args.est:
        pipeline.evaluate(est, args.ref, table)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    table.write(args.out)
    sys.stdout.write(table.to_csv())


def _cmd_render(args):
    a = pipeline._read(args.inp)
    ref = pipeline._read(args.ref) if args.ref else None
    if a.ndim != 2 or np.iscomplexobj(a):
        raise pipeline.DataError(f"{args.inp} is not a real 2-D map (shape {a.shape}, {a.dtype})")
    a = a.astype(float)
    ref = ref.astype(float) if ref is not None else None
    if ref is not None and ref.shape != a.shape:
        raise pipeline.DataError("reference shape mismatch")
    for p in render_pgm(np.asarray(a), args.out, args.vmin, args.vmax, ref=ref):
        print(f"wrote {p}")


def _cmd_trends(args):
    cfg = resolve_args(args)
    res = pipeline.trends(cfg, args.out, data_dir=args.data)
    failed = [k for k, v in res["cells"].items() if v["status"] != "ok"]
    print(f"{len(res['cells'])} cells, {res['computed']} computed, {len(failed)} failed")
    for name in failed:
        print(f"FAILED {name}: {res['cells'][name].get('error', '')}")
    for pattern, checks in sorted(res["reversal"].items()):
        for col, c in sorted(checks.items()):
            print(f"scheme ordering {pattern} {col}: {c['status']}")


def _origin(exc) -> str:
    """Name of the innermost package module the exception passed through."""
    name = "cli"
    tb = exc.__traceback__
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("vfaqmri."):
            name = mod.split(".", 1)[1]
        tb = tb.tb_next
    return name


COMMANDS = {
    "simulate": _cmd_simulate,
    "sample": _cmd_sample,
    "reconstruct": _cmd_reconstruct,
    "evaluate": _cmd_evaluate,
    "render": _cmd_render,
    "trends": _cmd_trends,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except cfgmod.ConfigError as exc:
        print(f"vfaqmri[{_origin(exc)}]: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (pipeline.DataError, BundleError, FileNotFoundError) as exc:
        print(f"vfaqmri[{_origin(exc)}]: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GampDivergence as exc:
        print(f"vfaqmri[{_origin(exc)}]: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"vfaqmri[{_origin(exc)}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
