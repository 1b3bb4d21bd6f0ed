"""Flat binary bundles with a JSON sidecar.

A bundle ``<path>`` is the pair ``<path>.bin`` / ``<path>.json``. The payload
is little-endian and row-major; complex data is interleaved real/imag
float32, real data float32 and boolean masks one byte per element.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

__all__ = ["write_bundle", "read_bundle", "BundleError"]

_DTYPES = {
    "c64": np.dtype("<c8"),
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
}


class BundleError(ValueError):
    """Malformed or inconsistent bundle."""


def _dtype_tag(a: np.ndarray) -> str:
    if a.dtype == bool or a.dtype == np.uint8:
        return "u8"
    if np.iscomplexobj(a):
        return "c64"
    if np.issubdtype(a.dtype, np.number):
        return "f32"
    raise BundleError(f"unsupported dtype {a.dtype}")


def write_bundle(array, path, role: str = "", meta: dict | None = None) -> None:
    """Write ``array`` to ``<path>.bin`` and its sidecar ``<path>.json``.

    Raises
    ------
    BundleError
        If the array holds NaN or infinite values.
    OSError
        If the destination is not writable.
    """
    a = np.asarray(array)
    tag = _dtype_tag(a)
    if tag != "u8" and not np.all(np.isfinite(a)):
        raise BundleError("refusing to write non-finite values")
    payload = np.ascontiguousarray(a, dtype=_DTYPES[tag])
    if payload.nbytes != int(np.prod(a.shape, dtype=np.int64)) * _DTYPES[tag].itemsize:
        raise BundleError("payload size does not match shape")
    header = {
        "shape": list(a.shape),
        "dtype": tag,
        "order": "row-major",
        "endian": "little",
        "role": role,
    }
    if meta:
        header["meta"] = meta
    path = Path(path)
    with open(f"{path}.bin", "wb") as fh:
        fh.write(payload.tobytes(order="C"))
    with open(f"{path}.json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_header(path) -> dict:
    sidecar = f"{path}.json"
    if not os.path.exists(sidecar):
        raise FileNotFoundError(sidecar)
    with open(sidecar) as fh:
        return json.load(fh)


def read_bundle(path) -> tuple[np.ndarray, str]:
    """Read a bundle, returning ``(array, role)``.

    Complex payloads come back as complex64, reals as float32 and byte
    payloads as uint8 (cast masks with ``.astype(bool)``).
    """
    header = read_header(path)
    tag = header.get("dtype")
    if tag not in _DTYPES:
        raise BundleError(f"unknown dtype {tag!r}")
    if header.get("order", "row-major") != "row-major" or header.get("endian", "little") != "little":
        raise BundleError("only row-major little-endian bundles are supported")
    shape = tuple(int(s) for s in header["shape"])
    dt = _DTYPES[tag]
    binfile = f"{path}.bin"
    if not os.path.exists(binfile):
        raise FileNotFoundError(binfile)
    raw = Path(binfile).read_bytes()
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(raw) != expected:
        raise BundleError(
            f"{binfile}: payload has {len(raw)} bytes, header implies {expected}"
        )
    a = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return a, header.get("role", "")
