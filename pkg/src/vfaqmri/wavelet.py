"""Orthonormal periodic 2-D Daubechies transform in the Mallat layout.

Each level applies the same orthogonal analysis matrix ``[lowpass; highpass]``
along rows and columns of the current LL block, so the coefficients of an
``n x n`` image sit in an ``n x n`` array with the coarsest LL at the top-left.
The transforms act on the last two axes and broadcast over any leading ones.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = ["WaveletSpec", "daubechies", "dwt2", "idwt2", "subband_slices", "FILTER_SHA256"]

# Scaling filters h[0..2k-1], Daubechies (1992) ordering with sum h = sqrt(2).
_DB = {
    1: [0.7071067811865476, 0.7071067811865476],
    2: [0.48296291314453416, 0.8365163037378079, 0.2241438680420134, -0.12940952255126037],
    3: [0.33267055295008263, 0.8068915093110925, 0.45987750211849154, -0.13501102001025458,
        -0.08544127388202666, 0.03522629188570953],
    4: [0.2303778133088965, 0.7148465705529157, 0.6308807679298589, -0.027983769416859854,
        -0.18703481171909309, 0.030841381835560764, 0.0328830116668852, -0.010597401785069032],
    5: [0.16010239797419293, 0.6038292697971896, 0.7243085284377729, 0.13842814590132074,
        -0.24229488706638203, -0.032244869584638375, 0.07757149384004572, -0.006241490212798274,
        -0.012580751999081999, 0.0033357252854737712],
    6: [0.11154074335010947, 0.49462389039845306, 0.7511339080210954, 0.31525035170919763,
        -0.22626469396543983, -0.12976686756726194, 0.09750160558732304, 0.027522865530305727,
        -0.03158203931748603, 0.0005538422011614961, 0.004777257510945511, -0.0010773010853084796],
    7: [0.07785205408500918, 0.3965393194819173, 0.7291320908462351, 0.4697822874051931,
        -0.14390600392856498, -0.22403618499387498, 0.07130921926683026, 0.08061260915108308,
        -0.03802993693501441, -0.01657454163066688, 0.01255099855609984, 0.0004295779729213665,
        -0.0018016407040474908, 0.00035371379997452024],
    8: [0.05441584224310401, 0.31287159091429995, 0.6756307362972898, 0.5853546836542067,
        -0.015829105256349306, -0.2840155429615469, 0.0004724845739132828, 0.12874742662047847,
        -0.017369301001807547, -0.044088253930794755, 0.013981027917398282, 0.008746094047405777,
        -0.004870352993451574, -0.00039174037337694705, 0.0006754494064505693,
        -0.00011747678412476953],
    9: [0.038077947363878345, 0.24383467461259034, 0.6048231236901112, 0.6572880780513005,
        0.13319738582500756, -0.2932737832791749, -0.09684078322297646, 0.14854074933810638,
        0.03072568147933338, -0.06763282906132997, 0.00025094711483145197, 0.022361662123679096,
        -0.004723204757751397, -0.00428150368246343, 0.0018476468830562265,
        0.00023038576352319597, -0.0002519631889427101, 3.93473203162716e-05],
    10: [0.026670057900555554, 0.1881768000776915, 0.5272011889317256, 0.6884590394536035,
         0.2811723436605775, -0.24984642432731538, -0.19594627437737705, 0.12736934033579325,
         0.09305736460357235, -0.07139414716639708, -0.029457536821875813, 0.033212674059341,
         0.0036065535669561697, -0.010733175483330575, 0.001395351747052901,
         0.001992405295185056, -0.0006858566949597116, -0.00011646685512928545,
         9.358867032006959e-05, -1.3264202894521244e-05],
}

FILTER_SHA256 = hashlib.sha256(
    np.concatenate([np.asarray(_DB[k], dtype="<f8") for k in range(1, 11)]).tobytes()
).hexdigest()


@dataclass(frozen=True)
class WaveletSpec:
    family_order: int = 6
    levels: int = 4

    def __post_init__(self):
        if self.family_order not in _DB:
            raise ValueError(f"db{self.family_order} not available (db1-db10)")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")

    def check_shape(self, shape) -> None:
        r, c = shape[-2:]
        step = 2 ** self.levels
        if r % step or c % step:
            raise ValueError(f"image shape {(r, c)} not divisible by 2**{self.levels}")


def daubechies(order: int) -> np.ndarray:
    """Scaling filter of db-``order`` (length ``2 * order``)."""
    return np.array(_DB[order], dtype=float)


@lru_cache(maxsize=128)
def _analysis_matrix(order: int, n: int) -> np.ndarray:
    """Orthogonal n x n single-level periodic analysis matrix."""
    h = daubechies(order)
    L = h.size
    g = h[::-1] * (-1.0) ** np.arange(L)
    half = n // 2
    W = np.zeros((n, n))
    rows = np.arange(half)[:, None]
    cols = (2 * rows + np.arange(L)[None, :]) % n
    np.add.at(W[:half], (np.broadcast_to(rows, cols.shape), cols), np.broadcast_to(h, cols.shape))
    np.add.at(W[half:], (np.broadcast_to(rows, cols.shape), cols), np.broadcast_to(g, cols.shape))
    W.setflags(write=False)
    return W


def dwt2(image, spec: WaveletSpec) -> np.ndarray:
    """Forward transform of the last two axes; returns an array of equal shape."""
    x = np.asarray(image)
    spec.check_shape(x.shape)
    out = np.array(x, dtype=np.result_type(x.dtype, float), copy=True)
    r, c = out.shape[-2:]
    for _ in range(spec.levels):
        Wr = _analysis_matrix(spec.family_order, r)
        Wc = _analysis_matrix(spec.family_order, c)
        blk = out[..., :r, :c]
        out[..., :r, :c] = np.matmul(np.matmul(Wr, blk), Wc.T)
        r //= 2
        c //= 2
    return out


def idwt2(coeffs, spec: WaveletSpec) -> np.ndarray:
    """Inverse of :func:`dwt2`."""
    v = np.asarray(coeffs)
    spec.check_shape(v.shape)
    out = np.array(v, dtype=np.result_type(v.dtype, float), copy=True)
    R, C = out.shape[-2:]
    for lev in reversed(range(spec.levels)):
        r, c = R >> lev, C >> lev
        Wr = _analysis_matrix(spec.family_order, r)
        Wc = _analysis_matrix(spec.family_order, c)
        blk = out[..., :r, :c]
        out[..., :r, :c] = np.matmul(np.matmul(Wr.T, blk), Wc)
    return out


def subband_slices(shape, levels: int) -> list:
    """(name, (row slice, col slice)) for every subband, coarsest LL first."""
    R, C = shape[-2:]
    bands = [("LL", (slice(0, R >> levels), slice(0, C >> levels)))]
    for lev in range(levels, 0, -1):
        r, c = R >> lev, C >> lev
        bands.append((f"LH{lev}", (slice(0, r), slice(c, 2 * c))))
        bands.append((f"HL{lev}", (slice(r, 2 * r), slice(0, c))))
        bands.append((f"HH{lev}", (slice(r, 2 * r), slice(c, 2 * c))))
    return bands
