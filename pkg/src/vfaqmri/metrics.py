"""Error metrics, comparison tables and 8-bit map renderings."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import QuantMaps

__all__ = [
    "nrmse",
    "r2star",
    "map_errors",
    "render_pgm",
    "to_gray",
    "MetricsTable",
    "MAP_NAMES",
    "R2S_MAX",
]

MAP_NAMES = ("t1", "r2s", "z0")
R2S_MAX = 1000.0


def nrmse(est, ref, mask=None) -> float:
    """``||(est - ref) * mask|| / ||ref * mask||``.

    Raises
    ------
    ValueError
        On shape mismatch or a zero reference norm over the mask.
    """
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {ref.shape}")
    m = np.ones(ref.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if m.shape != ref.shape:
        raise ValueError(f"mask shape {m.shape} does not match {ref.shape}")
    den = np.linalg.norm(ref[m])
    if den == 0:
        raise ValueError("reference has zero norm over the mask")
    return float(np.linalg.norm((est - ref)[m]) / den)


def r2star(maps: QuantMaps) -> np.ndarray:
    """R2* in 1/s from T2* in ms, clamped to [0, 1000] and zero off the mask."""
    t2 = np.asarray(maps.t2s, dtype=float)
    with np.errstate(divide="ignore"):
        r = np.where(t2 > 0, 1000.0 / np.where(t2 > 0, t2, 1.0), R2S_MAX)
    return np.where(maps.mask, np.clip(r, 0.0, R2S_MAX), 0.0)


def map_errors(est: QuantMaps, ref: QuantMaps, mask=None) -> dict:
    """NRMSE of the T1, R2* and z0 maps over ``mask`` (the reference mask by default)."""
    m = ref.mask if mask is None else mask
    return {
        "t1": nrmse(np.where(est.mask, est.t1, 0.0), ref.t1, m),
        "r2s": nrmse(r2star(est), r2star(ref), m),
        "z0": nrmse(est.z0, ref.z0, m),
    }


def to_gray(a, vmin: float, vmax: float) -> np.ndarray:
    """Linear window onto 0..255; the window midpoint maps to 128."""
    if not (np.isfinite(vmin) and np.isfinite(vmax)) or vmax <= vmin:
        raise ValueError(f"invalid display range [{vmin}, {vmax}]")
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {a.shape}")
    x = (np.nan_to_num(a, nan=vmin) - vmin) / (vmax - vmin)
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _write_pgm(gray: np.ndarray, path) -> None:
    rows, cols = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray).tobytes())


def render_pgm(a, path, vmin: float, vmax: float, ref=None) -> list:
    """Write a binary 8-bit PGM of ``a`` windowed to [vmin, vmax].

    With a reference map, an error image ``|a - ref|`` windowed to
    ``[0, (vmax - vmin) / 4]`` is written next to it as ``<stem>_err.pgm``.
    Returns the written paths.
    """
    path = Path(path)
    _write_pgm(to_gray(a, vmin, vmax), path)
    out = [path]
    if ref is not None:
        ref = np.asarray(ref, dtype=float)
        if ref.shape != np.shape(a):
            raise ValueError("reference shape mismatch")
        err_path = path.with_name(path.stem + "_err" + path.suffix)
        _write_pgm(to_gray(np.abs(np.asarray(a, float) - ref), 0.0, (vmax - vmin) / 4.0), err_path)
        out.append(err_path)
    return out


@dataclass
class MetricsTable:
    """NRMSE cells keyed by (map, scheme) rows and (rate, method) columns.

    Runs that failed are kept in ``failed`` and written as ``failed`` in the
    CSV so they are never silently dropped.
    """

    cells: dict = field(default_factory=dict)
    failed: set = field(default_factory=set)

    def add(self, map_name: str, scheme: str, rate: float, method: str, value: float) -> None:
        if map_name not in MAP_NAMES:
            raise ValueError(f"unknown map {map_name!r}")
        if not value >= 0:
            raise ValueError(f"NRMSE must be >= 0, got {value}")
        key = (map_name, scheme.upper(), round(float(rate), 6), method)
        self.cells[key] = float(value)
        self.failed.discard(key)

    def mark_failed(self, scheme: str, rate: float, method: str) -> None:
        for name in MAP_NAMES:
            key = (name, scheme.upper(), round(float(rate), 6), method)
            self.cells.pop(key, None)
            self.failed.add(key)

    def add_errors(self, errors: dict, scheme: str, rate: float, method: str) -> None:
        for name in MAP_NAMES:
            self.add(name, scheme, rate, method, errors[name])

    def get(self, map_name, scheme, rate, method) -> float:
        return self.cells[(map_name, scheme.upper(), round(float(rate), 6), method)]

    @property
    def rows(self) -> list:
        keys = {(m, s) for m, s, _, _ in list(self.cells) + list(self.failed)}
        return sorted(keys, key=lambda k: (MAP_NAMES.index(k[0]), k[1]))

    @property
    def columns(self) -> list:
        return sorted({(r, meth) for _, _, r, meth in list(self.cells) + list(self.failed)})

    def is_complete(self) -> bool:
        return len(self.cells) == len(self.rows) * len(self.columns)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.columns
        w.writerow(["map", "scheme"] + [f"{r:g}:{m}" for r, m in cols])
        for m, s in self.rows:
            row = [m, s]
            for r, meth in cols:
                v = self.cells.get((m, s, r, meth))
                if (m, s, r, meth) in self.failed:
                    row.append("failed")
                else:
                    row.append("" if v is None else f"{v:.6f}")
            w.writerow(row)
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "MetricsTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][:2] != ["map", "scheme"]:
            raise ValueError("not a metrics table")
        cols = []
        for h in rows[0][2:]:
            r, meth = h.split(":", 1)
            cols.append((float(r), meth))
        t = cls()
        for row in rows[1:]:
            for (r, meth), v in zip(cols, row[2:]):
                if v == "failed":
                    t.failed.add((row[0], row[1].upper(), round(r, 6), meth))
                elif v != "":
                    t.add(row[0], row[1], r, meth, float(v))
        return t
