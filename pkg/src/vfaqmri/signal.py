"""Spoiled-GRE steady-state signal, dictionaries and the voxel-wise tissue fit."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import AcqParams, QuantMaps

__all__ = [
    "gre_signal",
    "make_grid",
    "default_t1_grid",
    "default_t2s_grid",
    "Dictionary",
    "DictionaryBank",
    "VoxelFit",
    "build_dictionary",
    "build_dictionary_bank",
    "fit_voxel",
    "fit_maps",
    "fit_weighted",
    "model_magnitudes",
    "snap_to_grid",
]

MAX_ROUNDS = 20
_CHUNK = 4096


def gre_signal(z0, t1, t2s, theta_deg, te, tr):
    """Steady-state spoiled gradient-echo magnitude.

    ``z0 * sin(theta) * (1 - E) / (1 - cos(theta) * E) * exp(-te / t2s)``
    with ``E = exp(-tr / t1)``. All arguments broadcast; times in ms.
    """
    t1 = np.asarray(t1, dtype=float)
    t2s = np.asarray(t2s, dtype=float)
    tr = np.asarray(tr, dtype=float)
    if np.any(t1 <= 0) or np.any(t2s <= 0) or np.any(tr <= 0):
        raise ValueError("t1, t2s and tr must be positive")
    theta = np.deg2rad(theta_deg)
    e1 = np.exp(-tr / t1)
    return (
        np.asarray(z0, dtype=float)
        * np.sin(theta)
        * (1.0 - e1)
        / (1.0 - np.cos(theta) * e1)
        * np.exp(-np.asarray(te, dtype=float) / t2s)
    )


def make_grid(lo: float, hi: float, count: int, spacing: str = "log") -> np.ndarray:
    """Strictly increasing search grid between ``lo`` and ``hi`` inclusive."""
    if count < 1:
        raise ValueError("grid needs at least one point")
    if not 0 < lo <= hi:
        raise ValueError(f"invalid grid bounds ({lo}, {hi})")
    if count == 1:
        return np.array([float(lo)])
    if hi == lo:
        raise ValueError("a grid of several points needs lo < hi")
    if spacing == "log":
        return np.geomspace(lo, hi, count)
    if spacing == "linear":
        return np.linspace(lo, hi, count)
    raise ValueError(f"unknown spacing {spacing!r}")


def default_t1_grid() -> np.ndarray:
    return make_grid(100.0, 5000.0, 256, "log")


def default_t2s_grid() -> np.ndarray:
    return make_grid(1.0, 200.0, 256, "log")


@dataclass(frozen=True)
class Dictionary:
    """Unit-density signal atoms on a (T1, T2*) grid for one flip-angle scale.

    The model factorises, so the atoms are stored both in full,
    ``atoms[a, b]`` of length ``I*J`` in flip-major order, and as the two
    factor tables ``t1_part`` (|t1_grid|, I) and ``t2s_part`` (|t2s_grid|, J).
    """

    t1_grid: np.ndarray
    t2s_grid: np.ndarray
    t1_part: np.ndarray
    t2s_part: np.ndarray
    flip_scale: float = 1.0
    atoms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        atoms = self.t1_part[:, None, :, None] * self.t2s_part[None, :, None, :]
        atoms = atoms.reshape(len(self.t1_grid), len(self.t2s_grid), -1)
        for a in (self.t1_grid, self.t2s_grid, self.t1_part, self.t2s_part, atoms):
            a.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def n_flip(self) -> int:
        return self.t1_part.shape[1]

    @property
    def n_echo(self) -> int:
        return self.t2s_part.shape[1]

    def atom(self, i1: int, i2: int) -> np.ndarray:
        return self.atoms[i1, i2]


def _check_grid(g, name):
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D grid")
    if np.any(g <= 0) or np.any(np.diff(g) <= 0):
        raise ValueError(f"{name} must be positive and strictly increasing")
    return g.copy()


def build_dictionary(t1_grid, t2s_grid, acq: AcqParams, flip_scale: float = 1.0) -> Dictionary:
    t1_grid = _check_grid(t1_grid, "t1_grid")
    t2s_grid = _check_grid(t2s_grid, "t2s_grid")
    theta = float(flip_scale) * np.asarray(acq.flip_angles)
    if np.any(theta <= 0) or np.any(theta > 180):
        raise ValueError("scaled flip angles out of range")
    t1_part = gre_signal(1.0, t1_grid[:, None], 1.0, theta[None, :], 0.0, acq.tr)
    t2s_part = np.exp(-np.asarray(acq.echo_times)[None, :] / t2s_grid[:, None])
    return Dictionary(t1_grid, t2s_grid, t1_part, t2s_part, float(flip_scale))


@dataclass(frozen=True)
class DictionaryBank:
    """One dictionary per flip-scale bin plus the voxel-to-bin assignment."""

    dictionaries: tuple
    bin_index: np.ndarray


def build_dictionary_bank(
    t1_grid, t2s_grid, acq: AcqParams, n_bins: int = 32, mask=None
) -> DictionaryBank:
    """Quantise ``acq.flip_scale`` into ``n_bins`` bins over its observed range."""
    if acq.flip_scale is None:
        raise ValueError("acquisition has no flip_scale map")
    s = np.asarray(acq.flip_scale, dtype=float)
    vals = s[mask] if mask is not None else s.ravel()
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        centres = np.array([lo])
        idx = np.zeros(s.shape, dtype=int)
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
        centres = 0.5 * (edges[:-1] + edges[1:])
        idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_bins - 1)
    dicts = tuple(build_dictionary(t1_grid, t2s_grid, acq, c) for c in centres)
    return DictionaryBank(dicts, idx)


@dataclass(frozen=True)
class VoxelFit:
    z0: float
    t1: float
    t2s: float
    residual: float
    degenerate: bool = False


def _profiled_argmin(p_tab, q_tab, mw, w):
    """Best grid row of ``p_tab`` with the other factor ``q_tab`` fixed.

    Minimises ``sum_ij w (z0 p_i q_j - m_ij)^2`` over grid rows of ``p_tab``
    with z0 at its closed-form optimum: maximise num^2 / den.
    p_tab: (G, I); q_tab: (V, J); mw = w*m and w: (V, I, J).
    """
    num_c = np.sum(mw * q_tab[:, None, :], axis=-1)  # (V, I)
    den_c = np.sum(w * (q_tab * q_tab)[:, None, :], axis=-1)  # (V, I)
    num = np.sum(num_c[:, None, :] * p_tab[None, :, :], axis=-1)  # (V, G)
    den = np.sum(den_c[:, None, :] * (p_tab * p_tab)[None, :, :], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.where(den > 0, num * num / den, -np.inf)
    return np.argmax(score, axis=-1)


def _z0_closed(g, m, w):
    den = np.sum(w * g * g, axis=(-2, -1))
    num = np.sum(w * g * m, axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        z0 = np.where(den > 0, num / den, 0.0)
    return np.maximum(z0, 0.0)


def _objective(z0, g, m, w):
    r = z0[:, None, None] * g - m
    return np.sum(w * r * r, axis=(-2, -1))


def _fit_block(m, w, d: Dictionary, check_monotone=False):
    """Alternating fit for a block of voxels; m and w have shape (V, I, J)."""
    A, B = d.t1_part, d.t2s_part
    V = m.shape[0]
    g1, g2 = len(d.t1_grid), len(d.t2s_grid)
    i1 = np.full(V, (g1 - 1) // 2)
    i2 = np.full(V, (g2 - 1) // 2)
    active = np.ones(V, dtype=bool)
    mw = w * m
    z0 = np.zeros(V)

    def atoms(a, b):
        return A[a][:, :, None] * B[b][:, None, :]

    def obj(idx, zz, a, b):
        return _objective(zz, atoms(a, b), m[idx], w[idx])

    for _ in range(MAX_ROUNDS):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        a, b = i1[idx], i2[idx]
        prev_a, prev_b = a.copy(), b.copy()
        zz = _z0_closed(atoms(a, b), m[idx], w[idx])
        if check_monotone:
            trace = [obj(idx, zz, a, b)]
        a = _profiled_argmin(A, B[b], mw[idx], w[idx])
        if check_monotone:
            zz = _z0_closed(atoms(a, b), m[idx], w[idx])
            trace.append(obj(idx, zz, a, b))
        b = _profiled_argmin(B, A[a], np.swapaxes(mw[idx], 1, 2), np.swapaxes(w[idx], 1, 2))
        zz = _z0_closed(atoms(a, b), m[idx], w[idx])
        if check_monotone:
            trace.append(obj(idx, zz, a, b))
            for before, after in zip(trace, trace[1:]):
                tol = 1e-12 * np.maximum(before, np.sum(w[idx] * m[idx] ** 2, axis=(1, 2)))
                if np.any(after > before + tol):
                    raise AssertionError("alternating objective increased")
        i1[idx], i2[idx] = a, b
        z0[idx] = zz
        active[idx] = (a != prev_a) | (b != prev_b)
    # voxels that hit the round cap keep z0 consistent with their final pair
    if np.any(active):
        idx = np.flatnonzero(active)
        z0[idx] = _z0_closed(atoms(i1[idx], i2[idx]), m[idx], w[idx])
    residual = _objective(z0, atoms(i1, i2), m, w)
    return z0, i1, i2, residual


def fit_weighted(m, d: Dictionary, weights=None, check_monotone: bool = False):
    """Vectorised alternating fit.

    Parameters
    ----------
    m : ndarray, shape (V, I, J)
        Non-negative magnitudes for V voxels.
    d : Dictionary
    weights : ndarray, optional
        Per-term weights broadcastable to (V, I, J); ``inf`` variances should
        be passed as zero weights.

    Returns
    -------
    z0, t1_index, t2s_index, residual, degenerate : ndarrays of length V
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 3 or m.shape[1:] != (d.n_flip, d.n_echo):
        raise ValueError(f"magnitudes must have shape (V, {d.n_flip}, {d.n_echo}), got {m.shape}")
    if np.any(np.isnan(m)):
        raise ValueError("NaN in magnitudes")
    if np.any(m < 0):
        raise ValueError("magnitudes must be non-negative")
    w = np.ones(m.shape) if weights is None else np.broadcast_to(np.asarray(weights, float), m.shape)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    V = m.shape[0]
    degenerate = ~np.any((m * w) > 0, axis=(1, 2))
    z0 = np.zeros(V)
    i1 = np.full(V, (len(d.t1_grid) - 1) // 2)
    i2 = np.full(V, (len(d.t2s_grid) - 1) // 2)
    res = np.zeros(V)
    live = np.flatnonzero(~degenerate)
    for start in range(0, live.size, _CHUNK):
        sel = live[start:start + _CHUNK]
        zb, ab, bb, rb = _fit_block(m[sel], np.ascontiguousarray(w[sel]), d, check_monotone)
        z0[sel], i1[sel], i2[sel], res[sel] = zb, ab, bb, rb
    return z0, i1, i2, res, degenerate


def fit_voxel(m, d: Dictionary, weights=None) -> VoxelFit:
    """Fit one voxel's I*J magnitudes (flip-major order) against ``d``.

    An all-zero voxel is flagged degenerate with z0 = 0 and the grid
    midpoints for (T1, T2*).
    """
    m = np.asarray(m, dtype=float).reshape(1, d.n_flip, d.n_echo)
    w = None if weights is None else np.asarray(weights, float).reshape(1, d.n_flip, d.n_echo)
    z0, a, b, res, deg = fit_weighted(m, d, w)
    return VoxelFit(float(z0[0]), float(d.t1_grid[a[0]]), float(d.t2s_grid[b[0]]), float(res[0]), bool(deg[0]))


def _voxel_rows(magnitudes, mask):
    mag = np.asarray(magnitudes, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mag.ndim != 4 or mag.shape[2:] != mask.shape:
        raise ValueError(f"magnitudes {mag.shape} do not match mask {mask.shape}")
    rows = np.moveaxis(mag, (0, 1), (-2, -1))[mask]  # (V, I, J)
    return rows, mask


def fit_maps(magnitudes, d, mask, weights=None) -> QuantMaps:
    """Fit every masked voxel of an (I, J, rows, cols) magnitude stack.

    ``d`` is a :class:`Dictionary` or a :class:`DictionaryBank`; with a bank
    each voxel uses the dictionary of its flip-scale bin. ``weights`` has
    shape (I, J) and is shared by all voxels. Unmasked voxels are zero.
    """
    rows, mask = _voxel_rows(magnitudes, mask)
    V = rows.shape[0]
    z0 = np.zeros(V)
    t1 = np.zeros(V)
    t2 = np.zeros(V)
    deg = np.zeros(V, dtype=bool)
    w = None if weights is None else np.asarray(weights, float)[None]
    if isinstance(d, DictionaryBank):
        bins = np.asarray(d.bin_index)[mask]
        groups = [(dd, np.flatnonzero(bins == k)) for k, dd in enumerate(d.dictionaries)]
    else:
        groups = [(d, np.arange(V))]
    for dd, sel in groups:
        if sel.size == 0:
            continue
        zb, ab, bb, _, db = fit_weighted(rows[sel], dd, w)
        z0[sel], t1[sel], t2[sel], deg[sel] = zb, dd.t1_grid[ab], dd.t2s_grid[bb], db
    n_deg = int(deg.sum())
    if n_deg:
        warnings.warn(f"{n_deg} masked voxel(s) had zero signal and were flagged degenerate", stacklevel=2)
    out = {}
    for name, vals in (("z0", z0), ("t1", t1), ("t2s", t2)):
        full = np.zeros(mask.shape)
        full[mask] = vals
        out[name] = full
    degen = np.zeros(mask.shape, dtype=bool)
    degen[mask] = deg
    return QuantMaps(out["z0"], out["t1"], out["t2s"], mask, degenerate=degen)


def model_magnitudes(maps: QuantMaps, acq: AcqParams) -> np.ndarray:
    """Signal-model magnitudes f_ij(maps), shape (I, J, rows, cols); zero off-mask."""
    fa = np.asarray(acq.flip_angles)[:, None, None, None]
    if acq.flip_scale is not None:
        fa = fa * np.asarray(acq.flip_scale)[None, None]
    te = np.asarray(acq.echo_times)[None, :, None, None]
    mask = maps.mask
    t1 = np.where(mask, maps.t1, 1.0)
    t2 = np.where(mask, maps.t2s, 1.0)
    f = gre_signal(maps.z0, t1, t2, fa, te, acq.tr)
    return np.where(mask, f, 0.0)


def snap_to_grid(maps: QuantMaps, t1_grid: Sequence[float], t2s_grid: Sequence[float]) -> QuantMaps:
    """Replace T1 and T2* by their nearest grid values (log distance)."""
    t1_grid = np.asarray(t1_grid, float)
    t2s_grid = np.asarray(t2s_grid, float)

    def snap(vals, grid):
        out = np.zeros_like(vals)
        v = vals[maps.mask]
        k = np.argmin(np.abs(np.log(v)[:, None] - np.log(grid)[None, :]), axis=1)
        out[maps.mask] = grid[k]
        return out

    return QuantMaps(maps.z0.copy(), snap(maps.t1, t1_grid), snap(maps.t2s, t2s_grid), maps.mask)

