"""Masked unitary Fourier operators ``A = M F S`` and ``B = A H^-1``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .wavelet import WaveletSpec, dwt2, idwt2

__all__ = ["fft2c", "ifft2c", "ForwardOp", "apply", "adjoint"]


def fft2c(x):
    """Centred unitary 2-D FFT over the last two axes (DC in the middle)."""
    x = np.fft.ifftshift(x, axes=(-2, -1))
    return np.fft.fftshift(np.fft.fft2(x, norm="ortho"), axes=(-2, -1))


def ifft2c(k):
    k = np.fft.ifftshift(k, axes=(-2, -1))
    return np.fft.fftshift(np.fft.ifft2(k, norm="ortho"), axes=(-2, -1))


@dataclass(frozen=True)
class ForwardOp:
    """Sampling mask, optional coil maps and optional wavelet synthesis.

    ``mask`` covers the last two axes and may carry leading batch axes
    (e.g. one mask per flip angle and echo). With ``sens`` of shape
    (coils, rows, cols) the k-space output gains a coil axis before the
    image axes.
    """

    mask: np.ndarray
    sens: Optional[np.ndarray] = None
    wavelet: Optional[WaveletSpec] = None

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", m)
        if self.sens is not None:
            s = np.asarray(self.sens, dtype=np.complex128)
            if s.ndim != 3 or s.shape[1:] != m.shape[-2:]:
                raise ValueError(f"sens {s.shape} inconsistent with mask {m.shape}")
            object.__setattr__(self, "sens", s)
        if self.wavelet is not None:
            self.wavelet.check_shape(m.shape)

    @property
    def image_shape(self) -> tuple:
        return self.mask.shape[-2:]

    def _kmask(self):
        return self.mask if self.sens is None else self.mask[..., None, :, :]

    def row_energy(self) -> float:
        """Squared Frobenius norm of one batch member divided by its sample count."""
        if self.sens is None:
            return 1.0
        return float(np.sum(np.abs(self.sens) ** 2) / np.prod(self.image_shape))

    def __call__(self, x):
        return apply(self, x)

    def H(self, y):
        return adjoint(self, y)


def _check(shape, expected, what):
    if tuple(shape[-len(expected):]) != tuple(expected):
        raise ValueError(f"{what} has shape {shape}, expected trailing {expected}")


def apply(op: ForwardOp, x) -> np.ndarray:
    """k-space samples of an image (or wavelet coefficients when ``op.wavelet``)."""
    x = np.asarray(x)
    _check(x.shape, op.image_shape, "input")
    z = idwt2(x, op.wavelet) if op.wavelet is not None else x
    if op.sens is not None:
        z = z[..., None, :, :] * op.sens
    return fft2c(z) * op._kmask()


def adjoint(op: ForwardOp, y) -> np.ndarray:
    """Conjugate transpose of :func:`apply`; coils are summed."""
    y = np.asarray(y)
    kshape = op.image_shape if op.sens is None else op.sens.shape
    _check(y.shape, kshape, "k-space")
    z = ifft2c(y * op._kmask())
    if op.sens is not None:
        z = np.sum(np.conj(op.sens) * z, axis=-3)
    return dwt2(z, op.wavelet) if op.wavelet is not None else z
