"""k-space undersampling masks and the U1-U4 multi-contrast schemes.

Masks live in the centred 2-D phase-encode plane (DC at ``(rows//2, cols//2)``)
and are restricted to the inscribed ellipse. The sampling rate is measured
against the number of points inside that ellipse.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MaskParams",
    "SchemeMasks",
    "SCHEMES",
    "elliptical_support",
    "calibration_region",
    "gen_mask",
    "gen_scheme",
    "coverage_stats",
    "RATE_TOL",
]

SCHEMES = ("U1", "U2", "U3", "U4")
RATE_TOL = 0.005


@dataclass(frozen=True)
class MaskParams:
    shape: tuple
    rate: float
    calib: int = 24
    seed: int = 0
    pattern: str = "VD"
    vd_power: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "pattern", self.pattern.upper())
        if len(self.shape) != 2:
            raise ValueError("shape must be (rows, cols)")
        if not 0 < self.rate <= 1:
            raise ValueError(f"rate must be in (0, 1], got {self.rate}")
        if self.pattern not in ("VD", "PD"):
            raise ValueError(f"pattern must be VD or PD, got {self.pattern!r}")
        if self.calib < 0 or self.calib > min(self.shape):
            raise ValueError(f"calib={self.calib} exceeds the matrix {self.shape}")


@dataclass(frozen=True)
class SchemeMasks:
    masks: np.ndarray  # (I, J, rows, cols) bool
    scheme: str


def _radius(shape):
    R, C = shape
    ky = (np.arange(R) - R // 2) / (R / 2)
    kx = (np.arange(C) - C // 2) / (C / 2)
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)


def elliptical_support(shape) -> np.ndarray:
    """Points of the centred ellipse with semi-axes rows/2 and cols/2."""
    return _radius(shape) <= 1.0


def calibration_region(shape, calib: int) -> np.ndarray:
    R, C = shape
    m = np.zeros(shape, dtype=bool)
    if calib > 0:
        r0, c0 = R // 2 - calib // 2, C // 2 - calib // 2
        m[r0:r0 + calib, c0:c0 + calib] = True
    return m


def _targets(p: MaskParams):
    support = elliptical_support(p.shape)
    calib = calibration_region(p.shape, p.calib)
    if np.any(calib & ~support):
        raise ValueError(f"calibration square {p.calib} does not fit inside the support")
    n_support = int(support.sum())
    target = int(round(p.rate * n_support))
    n_calib = int(calib.sum())
    if target < n_calib:
        raise ValueError(
            f"rate {p.rate} gives {target} samples, fewer than the {n_calib}-point calibration square"
        )
    return support, calib, target


def _vd_draw(p, support, calib, need, rng):
    cand = np.flatnonzero(support & ~calib)
    if need >= cand.size:
        return cand
    w = np.maximum(1.0 - _radius(p.shape).ravel()[cand], 0.0) ** p.vd_power
    # weighted sampling without replacement (exponential keys)
    u = rng.random(cand.size)
    with np.errstate(divide="ignore"):
        keys = np.where(w > 0, np.log(u) / np.where(w > 0, w, 1.0), -np.inf)
    order = np.argsort(-keys, kind="stable")
    return cand[order[:need]]


def _dart_throw(order_yx, shape, r2):
    """Greedy acceptance in the given order with squared min distance ``r2``."""
    R, C = shape
    rad = int(np.ceil(np.sqrt(r2)))
    pad = rad + 1
    W = C + 2 * pad
    grid = bytearray((R + 2 * pad) * W)
    offsets = [
        dy * W + dx
        for dy in range(-rad, rad + 1)
        for dx in range(-rad, rad + 1)
        if dy * dy + dx * dx < r2
    ]
    accepted = []
    for k, (y, x) in enumerate(order_yx):
        base = (y + pad) * W + x + pad
        if any(grid[base + o] for o in offsets):
            continue
        grid[base] = 1
        accepted.append(k)
    return accepted


def _pd_draw(p, support, calib, need, rng):
    cand = np.flatnonzero(support & ~calib)
    if need >= cand.size:
        return cand
    if need == 0:
        return cand[:0]
    perm = cand[rng.permutation(cand.size)]
    yx = [divmod(int(k), p.shape[1]) for k in perm]
    span = int(np.ceil(np.sqrt(p.shape[0] * p.shape[1] / max(need, 1)))) + 2
    radii2 = sorted({a * a + b * b for a in range(span + 1) for b in range(span + 1)} - {0})
    # bisection over candidate squared radii for the largest one that still
    # yields at least ``need`` points
    lo, hi = 0, len(radii2) - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        acc = _dart_throw(yx, p.shape, radii2[mid])
        if len(acc) >= need:
            best = (radii2[mid], acc)
            lo = mid + 1
        else:
            hi = mid - 1
    if best is None:
        best = (0, list(range(len(yx))))
    acc = np.asarray(best[1])
    if acc.size > need:
        acc = np.sort(rng.choice(acc, size=need, replace=False))
    return perm[acc]


def gen_mask(p: MaskParams) -> np.ndarray:
    """Boolean sampling mask for ``p``.

    The calibration square is always sampled and the total count is
    ``round(rate * |support|)``. VD draws the remaining points with
    probability proportional to ``(1 - r)**vd_power`` of the normalised
    elliptical radius; PD throws darts in random order with the largest
    minimum distance that still reaches the count, then drops random
    surplus points.
    """
    support, calib, target = _targets(p)
    rng = np.random.default_rng(int(p.seed) & 0xFFFFFFFFFFFFFFFF)
    need = target - int(calib.sum())
    draw = _vd_draw if p.pattern == "VD" else _pd_draw
    picked = draw(p, support, calib, need, rng)
    mask = calib.copy().ravel()
    mask[picked] = True
    return mask.reshape(p.shape)


def _stable_hash(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def scheme_seed(scheme: str, base_seed: int, i: int, j: int) -> int:
    scheme = scheme.upper()
    if scheme == "U1":
        key = _stable_hash("fa-echo", i, j)
    elif scheme == "U2":
        key = _stable_hash("fa", i)
    elif scheme == "U3":
        key = _stable_hash("echo", j)
    elif scheme == "U4":
        return int(base_seed)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return (int(base_seed) ^ key) & 0xFFFFFFFFFFFFFFFF


def gen_scheme(scheme: str, I: int, J: int, base: MaskParams) -> SchemeMasks:  # noqa: E741
    """Masks for all flip angles and echoes under scheme U1, U2, U3 or U4.

    U1 varies the pattern over both flip angle and echo, U2 over flip angle
    only, U3 over echo only, and U4 repeats one pattern everywhere.
    """
    scheme = scheme.upper()
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if I < 1 or J < 1:
        raise ValueError("I and J must be >= 1")
    cache = {}
    masks = np.zeros((I, J) + base.shape, dtype=bool)
    for i in range(I):
        for j in range(J):
            s = scheme_seed(scheme, base.seed, i, j)
            if s not in cache:
                cache[s] = gen_mask(MaskParams(base.shape, base.rate, base.calib, s, base.pattern, base.vd_power))
            masks[i, j] = cache[s]
    return SchemeMasks(masks, scheme)


def coverage_stats(masks, support=None) -> dict:
    """Per-mask rates, union rate and pairwise overlaps of a set of masks.

    Rates are relative to ``support`` (default: the elliptical support).
    The overlap of a pair is ``|a & b| / min(|a|, |b|)``.
    """
    m = np.asarray(masks, dtype=bool)
    if m.ndim < 2 or m.size == 0:
        raise ValueError("need a non-empty set of 2-D masks")
    shape = m.shape[-2:]
    flat = m.reshape(-1, *shape)
    if support is None:
        support = elliptical_support(shape)
    support = np.asarray(support, dtype=bool)
    if support.shape != shape:
        raise ValueError("support shape mismatch")
    n = float(support.sum())
    counts = flat.reshape(flat.shape[0], -1).sum(axis=1)
    union = np.any(flat, axis=0)
    k = flat.shape[0]
    inter = flat.reshape(k, -1).astype(np.int64) @ flat.reshape(k, -1).T.astype(np.int64)
    denom = np.minimum(counts[:, None], counts[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        overlap = np.where(denom > 0, inter / denom, 0.0)
    return {
        "rates": counts / n,
        "union_rate": float(union.sum() / n),
        "overlap": overlap,
        "count": k,
    }
