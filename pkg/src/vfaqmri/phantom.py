"""Piecewise-constant digital phantom and simulated VFA multi-echo k-space.

The default preset is a test fixture: a background ellipse with six inner
ellipses whose tissue values span the default dictionary grids. It is not
derived from any measured anatomy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import AcqParams, EchoStack, KSpaceSet, QuantMaps
from .operator import fft2c
from .signal import model_magnitudes

__all__ = [
    "Ellipse",
    "PhantomSpec",
    "default_regions",
    "make_phantom",
    "phase_map",
    "coil_maps",
    "snr_to_tau",
    "simulate_images",
    "simulate_acquisition",
]


@dataclass(frozen=True)
class Ellipse:
    """Ellipse in normalised coordinates (the field of view is [-1, 1]^2).

    ``center`` and ``axes`` are (y, x); ``angle`` rotates counter-clockwise
    in degrees.
    """

    center: tuple
    axes: tuple
    z0: float
    t1: float
    t2s: float
    angle: float = 0.0

    def __post_init__(self):
        if min(self.z0, self.t1, self.t2s) <= 0:
            raise ValueError("region parameters must be positive")
        if min(self.axes) <= 0:
            raise ValueError("ellipse axes must be positive")

    def inside(self, yy, xx) -> np.ndarray:
        c, s = np.cos(np.deg2rad(self.angle)), np.sin(np.deg2rad(self.angle))
        dy, dx = yy - self.center[0], xx - self.center[1]
        u = c * dx + s * dy
        v = -s * dx + c * dy
        return (v / self.axes[0]) ** 2 + (u / self.axes[1]) ** 2 <= 1.0

    def max_radius(self) -> float:
        """Upper bound on the normalised radius of any point of the ellipse."""
        return float(np.hypot(*self.center) + max(self.axes))


def default_regions() -> list:
    """Background plus six inner ellipses (fixture values)."""
    return [
        Ellipse((0.0, 0.0), (0.88, 0.72), 0.70, 900.0, 45.0),
        Ellipse((-0.38, 0.0), (0.22, 0.30), 1.00, 4000.0, 110.0),
        Ellipse((0.10, -0.32), (0.26, 0.16), 0.85, 1400.0, 60.0, angle=20.0),
        Ellipse((0.10, 0.32), (0.26, 0.16), 0.80, 1800.0, 80.0, angle=-20.0),
        Ellipse((0.55, 0.0), (0.14, 0.22), 0.60, 600.0, 10.0),
        Ellipse((0.15, 0.0), (0.12, 0.10), 0.90, 2600.0, 25.0),
        Ellipse((-0.05, 0.45), (0.08, 0.08), 0.95, 1100.0, 30.0),
    ]


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple = (128, 128)
    regions: list = field(default_factory=default_regions)
    noise_tau: float = 0.0
    seed: int = 0
    phase_order: int = 3

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if len(self.shape) != 2 or min(self.shape) < 2:
            raise ValueError(f"bad phantom shape {self.shape}")
        if not self.regions:
            raise ValueError("phantom needs at least one region")
        for r in self.regions:
            if r.max_radius() > 1.0 + 1e-12:
                raise ValueError(f"region {r} leaves the support ellipse")
        if self.noise_tau < 0:
            raise ValueError("noise_tau must be >= 0")
        if self.phase_order < 0:
            raise ValueError("phase_order must be >= 0")


def _coords(shape):
    R, C = shape
    y = (np.arange(R) - R // 2) / (R / 2)
    x = (np.arange(C) - C // 2) / (C / 2)
    return np.meshgrid(y, x, indexing="ij")


def make_phantom(spec: PhantomSpec) -> QuantMaps:
    """Rasterise the regions; later regions overwrite earlier ones."""
    yy, xx = _coords(spec.shape)
    z0 = np.zeros(spec.shape)
    t1 = np.zeros(spec.shape)
    t2 = np.zeros(spec.shape)
    mask = np.zeros(spec.shape, dtype=bool)
    for r in spec.regions:
        sel = r.inside(yy, xx)
        z0[sel], t1[sel], t2[sel] = r.z0, r.t1, r.t2s
        mask |= sel
    return QuantMaps(z0, t1, t2, mask)


def phase_map(shape, order: int, seed: int) -> np.ndarray:
    """Seeded random polynomial phase in radians; order 0 gives zero phase.

    For order p >= 1 every monomial ``y^a x^b`` with ``a + b <= p`` gets a
    coefficient drawn from N(0, (pi / 4)^2).
    """
    if order == 0:
        return np.zeros(shape)
    yy, xx = _coords(shape)
    rng = np.random.default_rng([int(seed), 1])
    phi = np.zeros(shape)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            phi += rng.normal(0.0, np.pi / 4) * yy**a * xx**b
    return phi


def coil_maps(shape, n_coils: int, seed: int = 0, width: float = 0.8) -> np.ndarray:
    """Smooth Gaussian coil profiles around the field of view.

    Coils sit evenly on a circle of radius 1.2 with a random phase offset
    each; maps are normalised so that ``sum_c |s_c|^2 = 1`` everywhere.
    """
    yy, xx = _coords(shape)
    rng = np.random.default_rng([int(seed), 3])
    maps = np.empty((n_coils,) + tuple(shape), dtype=np.complex128)
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils
        cy, cx = 1.2 * np.sin(ang), 1.2 * np.cos(ang)
        amp = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        maps[c] = amp * np.exp(1j * (rng.uniform(0, 2 * np.pi) + 0.5 * (yy * np.cos(ang) + xx * np.sin(ang))))
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


def snr_to_tau(images, mask, snr_db: float) -> float:
    """Noise variance for a given SNR.

    ``tau = mean_{i,j,n in mask} |z_ij(n)|^2 / 10^(snr_db / 10)``. With a
    unitary FFT the per-sample noise variance is the same in k-space and
    image space.
    """
    mag2 = np.abs(np.asarray(images)) ** 2
    power = float(mag2[..., np.asarray(mask, dtype=bool)].mean())
    return power / 10.0 ** (snr_db / 10.0)


def simulate_images(maps: QuantMaps, acq: AcqParams, spec: PhantomSpec) -> EchoStack:
    """Complex echo images ``f_ij(maps) * exp(i phi)``."""
    if maps.shape != spec.shape:
        raise ValueError(f"maps {maps.shape} do not match spec {spec.shape}")
    f = model_magnitudes(maps, acq)
    phi = phase_map(spec.shape, spec.phase_order, spec.seed)
    return EchoStack(f * np.exp(1j * phi))


def simulate_acquisition(maps: QuantMaps, acq: AcqParams, spec: PhantomSpec, masks=None,
                         sens: Optional[np.ndarray] = None) -> KSpaceSet:
    """Masked k-space of the phantom with complex white noise on sampled entries.

    Parameters
    ----------
    masks : ndarray, optional
        (I, J, rows, cols) sampling masks; full sampling when omitted.
    sens : ndarray, optional
        (coils, rows, cols) sensitivities.

    Noise is ``CN(0, spec.noise_tau)`` (variance split equally between real
    and imaginary parts), drawn for every k-space entry from a stream seeded
    by ``spec.seed`` and then masked, so a sampled entry receives the same
    noise whichever mask is used.
    """
    z = simulate_images(maps, acq, spec).images
    lead = z.shape[:2]
    if masks is None:
        masks = np.ones(lead + spec.shape, dtype=bool)
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != lead + spec.shape:
        raise ValueError(f"masks {masks.shape} do not match images {z.shape}")
    if sens is not None:
        sens = np.asarray(sens, dtype=np.complex128)
        z = z[:, :, None] * sens
        kmask = masks[:, :, None]
    else:
        kmask = masks
    k = fft2c(z)
    if spec.noise_tau > 0:
        rng = np.random.default_rng([int(spec.seed), 2])
        sd = np.sqrt(spec.noise_tau / 2.0)
        k = k + sd * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return KSpaceSet(k * kmask, masks, sens)
