"""Domain containers shared across the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "AcqParams",
    "QuantMaps",
    "EchoStack",
    "KSpaceSet",
    "default_acquisition",
]


@dataclass(frozen=True)
class AcqParams:
    """VFA multi-echo spoiled-GRE acquisition.

    Parameters
    ----------
    flip_angles : sequence of float
        Nominal flip angles in degrees, each in (0, 90].
    echo_times : sequence of float
        Echo times in ms, strictly increasing and positive.
    tr : float
        Repetition time in ms. Must exceed the last echo time.
    flip_scale : ndarray, optional
        Per-voxel B1+ scale; the effective angle is ``flip_scale * theta``.
    """

    flip_angles: Sequence[float]
    echo_times: Sequence[float]
    tr: float
    flip_scale: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        fa = np.asarray(self.flip_angles, dtype=float)
        te = np.asarray(self.echo_times, dtype=float)
        if fa.ndim != 1 or fa.size == 0 or te.ndim != 1 or te.size == 0:
            raise ValueError("flip_angles and echo_times must be non-empty 1-D sequences")
        if np.any(fa <= 0) or np.any(fa > 90):
            raise ValueError(f"flip angles must lie in (0, 90] degrees, got {fa}")
        if np.any(te <= 0) or np.any(np.diff(te) <= 0):
            raise ValueError(f"echo times must be positive and strictly increasing, got {te}")
        if not self.tr > te[-1]:
            raise ValueError(f"TR={self.tr} must exceed the last echo time {te[-1]}")
        object.__setattr__(self, "flip_angles", tuple(float(a) for a in fa))
        object.__setattr__(self, "echo_times", tuple(float(t) for t in te))
        object.__setattr__(self, "tr", float(self.tr))
        if self.flip_scale is not None:
            s = np.array(self.flip_scale, dtype=float)
            if np.any(s <= 0) or np.any(s >= 2):
                raise ValueError("flip_scale must lie in (0, 2)")
            s.setflags(write=False)
            object.__setattr__(self, "flip_scale", s)

    @property
    def n_flip(self) -> int:
        return len(self.flip_angles)

    @property
    def n_echo(self) -> int:
        return len(self.echo_times)

    def as_dict(self) -> dict:
        return {
            "flip_angles": list(self.flip_angles),
            "echo_times": list(self.echo_times),
            "tr": self.tr,
        }


def default_acquisition() -> AcqParams:
    """Three flip angles, four echoes: 5/10/20 deg, TE 7-31 ms every 8 ms, TR 36 ms."""
    return AcqParams(flip_angles=(5.0, 10.0, 20.0), echo_times=(7.0, 15.0, 23.0, 31.0), tr=36.0)


@dataclass(frozen=True)
class QuantMaps:
    """Proton density, T1 (ms) and T2* (ms) maps with their support mask."""

    z0: np.ndarray
    t1: np.ndarray
    t2s: np.ndarray
    mask: np.ndarray
    degenerate: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        arrays = {k: np.array(getattr(self, k), dtype=float) for k in ("z0", "t1", "t2s")}
        for name, a in arrays.items():
            if a.shape != mask.shape:
                raise ValueError(f"{name} has shape {a.shape}, mask has {mask.shape}")
        if np.any(arrays["t1"][mask] <= 0) or np.any(arrays["t2s"][mask] <= 0):
            raise ValueError("t1 and t2s must be positive inside the mask")
        for name, a in arrays.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if self.degenerate is not None:
            d = np.array(self.degenerate, dtype=bool)
            d.setflags(write=False)
            object.__setattr__(self, "degenerate", d)

    @property
    def shape(self) -> tuple:
        return self.mask.shape


@dataclass(frozen=True)
class EchoStack:
    """Complex images ``images[i, j]`` for flip angle i and echo j."""

    images: np.ndarray

    def __post_init__(self):
        im = np.asarray(self.images)
        if im.ndim != 4:
            raise ValueError(f"images must have shape (I, J, rows, cols), got {im.shape}")
        if not np.all(np.isfinite(im)):
            raise ValueError("echo images contain non-finite values")
        im = np.array(im, dtype=np.complex128)
        im.setflags(write=False)
        object.__setattr__(self, "images", im)

    @property
    def shape(self) -> tuple:
        return self.images.shape[2:]

    @property
    def I(self) -> int:  # noqa: E743
        return self.images.shape[0]

    @property
    def J(self) -> int:
        return self.images.shape[1]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.images)


@dataclass(frozen=True)
class KSpaceSet:
    """Undersampled centred k-space.

    ``samples`` has shape (I, J, rows, cols), or (I, J, coils, rows, cols)
    when ``sens`` is given; unsampled entries are stored as zeros.
    """

    samples: np.ndarray
    masks: np.ndarray
    sens: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.array(self.samples, dtype=np.complex128)
        m = np.array(self.masks, dtype=bool)
        if m.ndim != 4:
            raise ValueError(f"masks must have shape (I, J, rows, cols), got {m.shape}")
        if self.sens is None:
            if y.shape != m.shape:
                raise ValueError(f"samples {y.shape} and masks {m.shape} differ")
            off = ~m
        else:
            s = np.array(self.sens, dtype=np.complex128)
            if s.ndim != 3 or s.shape[1:] != m.shape[2:]:
                raise ValueError(f"sens must have shape (coils, rows, cols), got {s.shape}")
            if y.shape != m.shape[:2] + s.shape:
                raise ValueError(f"samples {y.shape} inconsistent with masks/sens")
            off = np.broadcast_to(~m[:, :, None], y.shape)
            s.setflags(write=False)
            object.__setattr__(self, "sens", s)
        if np.any(y[off] != 0):
            raise ValueError("samples must be zero wherever the mask is false")
        y.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "samples", y)
        object.__setattr__(self, "masks", m)

    @property
    def shape(self) -> tuple:
        return self.masks.shape[2:]

    @property
    def I(self) -> int:  # noqa: E743
        return self.masks.shape[0]

    @property
    def J(self) -> int:
        return self.masks.shape[1]
