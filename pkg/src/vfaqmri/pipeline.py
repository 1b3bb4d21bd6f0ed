"""End-to-end steps behind the command-line tool.

Each step reads and writes directories of bundles (see :mod:`vfaqmri.io`)
and echoes its resolved configuration as ``config.json``. Output directories
are assembled under a temporary name and renamed into place at the end, so a
failed step never leaves partial results behind.
"""

from __future__ import annotations

import contextlib
import json
import logging
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .amppe import AmpPeConfig, run_amp_pe
from .baselines import FistaConfig, decoupled_fit, fista_l1, lsq_recon
from .data import AcqParams, QuantMaps
from .gamp import GampConfig, GampDivergence
from .io import BundleError, read_bundle, write_bundle
from .metrics import MAP_NAMES, MetricsTable, map_errors, r2star, render_pgm
from .phantom import PhantomSpec, make_phantom, simulate_acquisition, simulate_images, snr_to_tau
from .sampling import MaskParams, coverage_stats, gen_scheme
from .signal import build_dictionary, make_grid

__all__ = [
    "DataError",
    "acquisition",
    "dictionary",
    "simulate",
    "sample",
    "reconstruct",
    "evaluate",
    "trends",
    "reversal_check",
    "load_maps",
    "save_maps",
]

log = logging.getLogger(__name__)

RENDER_RANGES = {"t1": (0.0, 5000.0), "r2s": (0.0, 150.0), "z0": (0.0, 1.2)}


class DataError(RuntimeError):
    """Missing or malformed input data."""


# --- config helpers --------------------------------------------------------

def acquisition(cfg: dict) -> AcqParams:
    a = cfg["acquisition"]
    return AcqParams(a["flip_angles"], a["echo_times"], a["tr"])


def dictionary(cfg: dict, acq: AcqParams):
    g = cfg["grids"]
    return build_dictionary(
        make_grid(g["t1_min"], g["t1_max"], g["t1_count"]),
        make_grid(g["t2s_min"], g["t2s_max"], g["t2s_count"]),
        acq,
    )


def _mask_params(cfg: dict, shape) -> MaskParams:
    s = cfg["sampling"]
    return MaskParams(tuple(shape), s["rate"], s["calib"], s["seed"], s["pattern"].upper())


def _gamp_config(cfg: dict) -> GampConfig:
    g = cfg["solver"]["gamp"]
    return GampConfig(max_iters=g["max_iters"], tol=g["tol"], alpha=g["alpha"], lambda_init=g["lambda_init"],
                      tau_w_init=g["tau_w_init"], estimate_params=g["estimate_params"])


def _amp_config(cfg: dict) -> AmpPeConfig:
    a = cfg["solver"]["amp_pe"]
    return AmpPeConfig(outer_iters=a["outer_iters"], inner_iters=a["inner_iters"], outer_tol=a["outer_tol"],
                       damping=a["damping"], init=a["init"], gamp=_gamp_config(cfg))


# --- directory plumbing ----------------------------------------------------

@contextlib.contextmanager
def _staged(out):
    """Yield a temporary directory that replaces ``out`` on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def _write_config(directory, cfg, extra=None):
    doc = dict(cfg)
    if extra:
        doc = {**doc, **extra}
    (Path(directory) / "config.json").write_text(cfgmod.dumps(doc))


def _read(path):
    try:
        return read_bundle(path)[0]
    except FileNotFoundError as exc:
        raise DataError(f"missing input {exc.filename or path}") from exc
    except BundleError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _require_dir(path, what):
    if path is None:
        raise DataError(f"no {what} directory given")
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{what} directory {path} does not exist")
    return path


def save_maps(maps: QuantMaps, directory) -> None:
    d = Path(directory)
    write_bundle(maps.z0, d / "z0", role="z0")
    write_bundle(maps.t1, d / "t1", role="t1_ms")
    write_bundle(maps.t2s, d / "t2s", role="t2s_ms")
    write_bundle(maps.mask, d / "mask", role="mask")
    if maps.degenerate is not None:
        write_bundle(maps.degenerate, d / "degenerate", role="degenerate")


def load_maps(directory) -> QuantMaps:
    d = _require_dir(directory, "maps")
    mask = _read(d / "mask").astype(bool)
    z0, t1, t2 = (_read(d / n).astype(float) for n in ("z0", "t1", "t2s"))
    try:
        return QuantMaps(z0, t1, t2, mask)
    except ValueError as exc:
        raise DataError(f"{d}: {exc}") from exc


# --- steps -----------------------------------------------------------------

def simulate(cfg: dict, out) -> Path:
    """Phantom truth maps, clean echo images and fully sampled noisy k-space."""
    acq = acquisition(cfg)
    p = cfg["phantom"]
    spec = PhantomSpec(shape=tuple(p["shape"]), seed=p["seed"], phase_order=p["phase_order"])
    maps = make_phantom(spec)
    clean = simulate_images(maps, acq, spec).images
    tau = snr_to_tau(clean, maps.mask, p["snr_db"])
    k = simulate_acquisition(maps, acq, replace(spec, noise_tau=tau)).samples
    with _staged(out) as tmp:
        save_maps(maps, tmp)
        write_bundle(clean, tmp / "images", role="echo_stack", meta={"acquisition": acq.as_dict()})
        write_bundle(k, tmp / "kspace", role="kspace_full", meta={"noise_tau": tau})
        _write_config(tmp, cfg, {"derived": {"noise_tau": tau}})
    return Path(out)


def _masks_for(cfg, shape, n_flip, n_echo):
    return gen_scheme(cfg["sampling"]["scheme"], n_flip, n_echo, _mask_params(cfg, shape)).masks


def sample(cfg: dict, out, shape=None, n_flip=None, n_echo=None) -> Path:
    """Scheme masks for all flip angles and echoes plus coverage statistics.

    ``n_flip`` and ``n_echo`` default to the acquisition's counts.
    """
    acq = acquisition(cfg)
    shape = tuple(shape or cfg["phantom"]["shape"])
    n_flip, n_echo = n_flip or acq.n_flip, n_echo or acq.n_echo
    if n_flip < 1 or n_echo < 1:
        raise cfgmod.ConfigError("flip-angle and echo counts must be >= 1")
    masks = _masks_for(cfg, shape, n_flip, n_echo)
    stats = coverage_stats(masks)
    with _staged(out) as tmp:
        write_bundle(masks, tmp / "masks", role="masks")
        summary = {"rates": np.round(stats["rates"], 6).tolist(), "union_rate": round(stats["union_rate"], 6)}
        (tmp / "coverage.json").write_text(json.dumps(summary, indent=2) + "\n")
        _write_config(tmp, cfg)
    return Path(out)


def run_method(method, y, masks, acq, d, mask, cfg):
    """Dispatch one reconstruction; returns (maps, stack, log)."""
    logd = {"method": method}
    s = cfg["solver"]
    if method == "lsq":
        hist = []
        stack = lsq_recon(y, masks, max_iters=s["lsq"]["max_iters"], tol=s["lsq"]["tol"], history=hist)
        logd["residual"] = hist
        maps = decoupled_fit(stack, d, mask)
    elif method == "l1":
        hist = []
        fc = FistaConfig(kappa=s["l1"]["kappa"], max_iters=s["l1"]["max_iters"], normalize=s["l1"]["normalize"])
        stack = fista_l1(y, masks, fc, history=hist)
        logd["objective"] = hist
        maps = decoupled_fit(stack, d, mask)
    elif method == "amp-pe":
        hist = {}
        maps, stack = run_amp_pe(y, masks, acq, d, _amp_config(cfg), mask=mask, history=hist)
        logd.update(hist)
    else:
        raise ValueError(f"unknown method {method!r}")
    return maps, stack, logd


def _load_inputs(cfg, data_dir, masks_dir):
    data_dir = _require_dir(data_dir, "data")
    k = _read(data_dir / "kspace").astype(np.complex128)
    if k.ndim != 4:
        raise DataError(f"k-space must be (I, J, rows, cols), got {k.shape}")
    acq = acquisition(cfg)
    if k.shape[:2] != (acq.n_flip, acq.n_echo):
        raise DataError(f"k-space holds {k.shape[:2]} images, acquisition expects {(acq.n_flip, acq.n_echo)}")
    if masks_dir is not None:
        masks = _read(_require_dir(masks_dir, "masks") / "masks").astype(bool)
        if masks.shape != k.shape:
            raise DataError(f"masks {masks.shape} do not match k-space {k.shape}")
    else:
        masks = _masks_for(cfg, k.shape[2:], acq.n_flip, acq.n_echo)
    mpath = data_dir / "mask"
    mask = _read(mpath).astype(bool) if Path(f"{mpath}.bin").exists() else np.ones(k.shape[2:], dtype=bool)
    return k * masks, masks, mask, acq


def reconstruct(cfg: dict, data_dir, out, masks_dir=None) -> dict:
    """Reconstruct images and maps with ``cfg['solver']['method']``."""
    y, masks, mask, acq = _load_inputs(cfg, data_dir, masks_dir)
    d = dictionary(cfg, acq)
    t0 = time.perf_counter()
    maps, stack, logd = run_method(cfg["solver"]["method"], y, masks, acq, d, mask, cfg)
    elapsed = time.perf_counter() - t0
    with _staged(out) as tmp:
        write_bundle(stack.images, tmp / "images", role="echo_stack")
        save_maps(maps, tmp)
        (tmp / "log.json").write_text(json.dumps(_jsonable(logd), indent=1, sort_keys=True) + "\n")
        _write_config(tmp, cfg)
    log.info("%s reconstruction took %.1f s", cfg["solver"]["method"], elapsed)
    return logd


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def evaluate(est_dir, ref_dir, table: MetricsTable | None = None) -> MetricsTable:
    """NRMSE of a reconstruction directory against a truth directory.

    Scheme, rate and method are read from the reconstruction's echoed config.
    """
    est_dir = _require_dir(est_dir, "estimate")
    cpath = est_dir / "config.json"
    if not cpath.exists():
        raise DataError(f"{est_dir} has no config.json")
    ecfg = json.loads(cpath.read_text())
    est, ref = load_maps(est_dir), load_maps(ref_dir)
    if est.shape != ref.shape:
        raise DataError(f"map shapes differ: {est.shape} vs {ref.shape}")
    table = table or MetricsTable()
    errs = map_errors(est, ref)
    table.add_errors(errs, ecfg["sampling"]["scheme"], ecfg["sampling"]["rate"], ecfg["solver"]["method"])
    return table


# --- trends sweep ----------------------------------------------------------

def _cell_cfg(cfg, pattern, rate, scheme, method):
    c = cfgmod.set_path(cfg, "sampling.pattern", pattern)
    c = cfgmod.set_path(c, "sampling.rate", rate)
    c = cfgmod.set_path(c, "sampling.scheme", scheme)
    return cfgmod.set_path(c, "solver.method", method)


def _cell_key(cell_cfg):
    # the sweep list and worker budget do not affect a cell's result
    c = {k: v for k, v in cell_cfg.items() if k != "trends"}
    return cfgmod.config_hash(c)


def _run_cell(args):
    cell_cfg, data_dir, cell_dir = args
    result = {"status": "ok"}
    try:
        truth = load_maps(data_dir)
        reconstruct(cell_cfg, data_dir, cell_dir)
        est = load_maps(cell_dir)
        result["errors"] = map_errors(est, truth)
        for name in MAP_NAMES:
            lo, hi = RENDER_RANGES[name]
            if name == "r2s":
                a, r = r2star(est), r2star(truth)
            else:
                a, r = getattr(est, name), getattr(truth, name)
            render_pgm(a, Path(cell_dir) / f"{name}.pgm", lo, hi, ref=r)
    except GampDivergence as exc:
        result = {"status": "failed", "kind": "divergence", "error": str(exc)}
    except Exception as exc:  # a failed cell is recorded and the sweep continues
        result = {"status": "failed", "kind": type(exc).__name__, "error": str(exc)}
    Path(cell_dir).mkdir(parents=True, exist_ok=True)
    (Path(cell_dir) / "result.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    return result


def _read_result(cell_dir):
    p = Path(cell_dir) / "result.json"
    if not p.exists():
        return None
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError:
        return None


def trends(cfg: dict, out, data_dir=None) -> dict:
    """Factorial sweep over patterns, rates, schemes and methods.

    Cells are stored under ``out/cells/<name>-<hash>``; a cell whose
    ``result.json`` reports success is reused on later runs, failed cells
    are retried. One ``table_<pattern>.csv`` per pattern is written (failed
    cells appear as ``failed``) together with ``cells.json`` and
    ``reversal.json``.

    Returns a dict with the tables, cell results and the number of cells
    computed in this call.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if data_dir is None:
        data_dir = out / "data"
        dcfg = {k: v for k, v in cfg.items() if k in ("acquisition", "phantom")}
        stamp = data_dir / "data.hash"
        if not (stamp.exists() and stamp.read_text() == cfgmod.config_hash(dcfg)):
            simulate(cfg, data_dir)
            stamp.write_text(cfgmod.config_hash(dcfg))
    data_dir = _require_dir(data_dir, "data")
    t = cfg["trends"]
    jobs, names = [], []
    for pattern in t["patterns"]:
        for rate in t["rates"]:
            for scheme in t["schemes"]:
                for method in t["methods"]:
                    c = _cell_cfg(cfg, pattern, rate, scheme, method)
                    name = f"{pattern}-{rate:g}-{scheme}-{method}-{_cell_key(c)}"
                    names.append((name, pattern, rate, scheme, method))
                    cell_dir = out / "cells" / name
                    res = _read_result(cell_dir)
                    if res is None or res.get("status") != "ok":
                        jobs.append((c, data_dir, cell_dir))
    if t["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=t["workers"]) as ex:
            list(ex.map(_run_cell, jobs))
    else:
        for job in jobs:
            _run_cell(job)

    tables = {p: MetricsTable() for p in t["patterns"]}
    cells = {}
    for name, pattern, rate, scheme, method in names:
        res = _read_result(out / "cells" / name) or {"status": "failed", "error": "no result"}
        cells[name] = res
        if res["status"] == "ok":
            tables[pattern].add_errors(res["errors"], scheme, rate, method)
        else:
            tables[pattern].mark_failed(scheme, rate, method)
    for pattern, table in tables.items():
        table.write(out / f"table_{pattern}.csv")
    checks = {p: reversal_check(tb) for p, tb in tables.items()}
    (out / "cells.json").write_text(json.dumps(
        {k: {"status": v["status"], **({"error": v["error"]} if "error" in v else {})} for k, v in sorted(cells.items())},
        indent=1, sort_keys=True) + "\n")
    (out / "reversal.json").write_text(json.dumps(checks, indent=1, sort_keys=True) + "\n")
    _write_config(out, cfg)
    return {"tables": tables, "cells": cells, "computed": len(jobs), "reversal": checks}


def reversal_check(table: MetricsTable) -> dict:
    """Soft check of the scheme ordering per (rate, method).

    PASS when U3/U4 beat U1/U2 on T1 on average while U1/U2 beat U3/U4 on
    R2*; INVESTIGATE otherwise (or when a scheme is missing).
    """
    out = {}
    for rate, method in table.columns:
        key = f"{rate:g}:{method}"
        try:
            def avg(m, schemes):
                return float(np.mean([table.get(m, s, rate, method) for s in schemes]))
            t1_a, t1_b = avg("t1", ("U1", "U2")), avg("t1", ("U3", "U4"))
            r2_a, r2_b = avg("r2s", ("U1", "U2")), avg("r2s", ("U3", "U4"))
        except (KeyError, TypeError):
            out[key] = {"status": "INVESTIGATE", "reason": "incomplete scheme set"}
            continue
        ok = t1_b < t1_a and r2_a < r2_b
        out[key] = {
            "status": "PASS" if ok else "INVESTIGATE",
            "t1_U12": t1_a, "t1_U34": t1_b, "r2s_U12": r2_a, "r2s_U34": r2_b,
        }
    return out
