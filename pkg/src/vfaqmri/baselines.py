"""Decoupled reference reconstructions: least squares and wavelet-l1 FISTA.

Both recover each (flip angle, echo) image on its own; tissue maps then
come from the voxel-wise dictionary fit of the magnitudes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import EchoStack, QuantMaps
from .operator import ForwardOp, adjoint, apply
from .signal import fit_maps
from .wavelet import WaveletSpec, idwt2

__all__ = ["FistaConfig", "lsq_recon", "fista_l1", "l1_objective", "decoupled_fit", "soft_threshold"]


def _flat(y, masks, sens):
    masks = np.asarray(masks, dtype=bool)
    lead = masks.shape[:-2]
    K = int(np.prod(lead, dtype=int))
    y = np.asarray(y, dtype=np.complex128)
    y = y.reshape((K,) + y.shape[len(lead):])
    return y, masks.reshape((K,) + masks.shape[-2:]), lead


def _stack(x, lead):
    x = x.reshape(lead + x.shape[-2:])
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    return EchoStack(x)


def _bdot(a, b):
    """Per-image real inner product Re<a, b> over all trailing axes."""
    K = a.shape[0]
    return np.real(np.sum(np.conj(a).reshape(K, -1) * b.reshape(K, -1), axis=1))


def lsq_recon(y, masks, sens=None, max_iters: int = 50, tol: float = 1e-10, history: Optional[list] = None):
    """Least-squares images by conjugate gradients on the normal equations.

    Starts from zero, so the iterates stay in the row space and converge to
    the minimum-norm solution. For a single coil this is the zero-filled
    adjoint after one step. Stops after ``max_iters`` iterations or once
    every image's normal-equation residual falls below ``tol`` relative to
    its right-hand side.

    Parameters
    ----------
    y : ndarray
        k-space (..., rows, cols), with a coil axis before the image axes
        when ``sens`` is given.
    masks : ndarray
        (..., rows, cols) boolean masks; usually (I, J, rows, cols).
    history : list, optional
        Receives the per-iteration residual norms (summed over images).
    """
    y, m, lead = _flat(y, masks, sens)
    op = ForwardOp(m, sens=sens)
    b = adjoint(op, y)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = _bdot(r, r)
    b_norm = np.sqrt(rr)
    expand = (slice(None),) + (None,) * (b.ndim - 1)
    for _ in range(max_iters):
        live = np.sqrt(rr) > tol * np.maximum(b_norm, np.finfo(float).tiny)
        if not np.any(live):
            break
        Ap = adjoint(op, apply(op, p))
        pAp = _bdot(p, Ap)
        a = np.where(live & (pAp > 0), rr / np.where(pAp > 0, pAp, 1.0), 0.0)
        x = x + a[expand] * p
        r = r - a[expand] * Ap
        rr_new = _bdot(r, r)
        beta = np.where(rr > 0, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        p = r + beta[expand] * p
        rr = rr_new
        if history is not None:
            history.append(float(np.sqrt(rr.sum())))
    return _stack(x, lead)


@dataclass(frozen=True)
class FistaConfig:
    """FISTA settings for ``0.5 ||y - B v||^2 + kappa ||v||_1``.

    With ``normalize`` the data are divided by the peak magnitude of the
    zero-filled images of the whole stack before solving (and the result
    multiplied back), so ``kappa`` is relative to the peak intensity.
    ``step`` may not exceed 1 since the operator norm of ``B`` is at most 1
    for unit-energy coil maps.
    """

    kappa: float = 5e-2
    max_iters: int = 100
    step: float = 1.0
    tol: float = 0.0
    momentum: bool = True
    normalize: bool = True
    wavelet: WaveletSpec = WaveletSpec()

    def __post_init__(self):
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if not 0 < self.step <= 1:
            raise ValueError("step must be in (0, 1]")


def soft_threshold(v, thr):
    """Complex soft threshold: shrink the modulus by ``thr`` and keep the phase."""
    mag = np.abs(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > thr, (mag - thr) / np.where(mag > 0, mag, 1.0), 0.0)
    return v * scale


def l1_objective(op: ForwardOp, y, v, kappa: float) -> np.ndarray:
    """Per-image objective ``0.5 ||y - B v||^2 + kappa ||v||_1``."""
    K = v.shape[0]
    res = y - apply(op, v)
    return 0.5 * np.sum(np.abs(res.reshape(K, -1)) ** 2, axis=1) + kappa * np.sum(np.abs(v.reshape(K, -1)), axis=1)


def fista_l1(y, masks, cfg: FistaConfig = FistaConfig(), sens=None, history: Optional[list] = None) -> EchoStack:
    """Wavelet-l1 reconstruction by FISTA with restart.

    Momentum is reset whenever the objective increases; if a plain proximal
    step still increases it, the step is halved with a warning. The start
    is zero. ``history`` receives the summed objective per iteration.
    """
    y, m, lead = _flat(y, masks, sens)
    op = ForwardOp(m, sens=sens, wavelet=cfg.wavelet)
    K = m.shape[0]
    expand = (slice(None),) + (None,) * (len(op.image_shape))
    x = np.zeros((K,) + op.image_shape, dtype=np.complex128)
    z = x.copy()
    t = np.ones(K)
    step = np.full(K, float(cfg.step))
    if not np.any(np.abs(y)):
        return _stack(idwt2(x, cfg.wavelet), lead)
    peak = 1.0
    if cfg.normalize:
        peak = float(np.abs(adjoint(ForwardOp(m, sens=sens), y)).max())
        y = y / peak
    obj = l1_objective(op, y, x, cfg.kappa)
    # increases below this level are rounding noise, not a bad step
    slack = 1e-13 * (0.5 * np.sum(np.abs(y.reshape(K, -1)) ** 2, axis=1) + np.finfo(float).tiny)
    for _ in range(cfg.max_iters):
        grad = adjoint(op, apply(op, z) - y)
        x_new = soft_threshold(z - step[expand] * grad, cfg.kappa * step[expand])
        obj_new = l1_objective(op, y, x_new, cfg.kappa)
        worse = obj_new > obj * (1 + 1e-12) + slack
        if np.any(worse):
            # redo the offending images as a plain proximal step from x
            sub = ForwardOp(m[worse], sens=sens, wavelet=cfg.wavelet)
            g0 = adjoint(sub, apply(sub, x[worse]) - y[worse])
            while True:
                st = step[worse][(slice(None),) + (None,) * len(op.image_shape)]
                cand = soft_threshold(x[worse] - st * g0, cfg.kappa * st)
                cand_obj = l1_objective(sub, y[worse], cand, cfg.kappa)
                bad = cand_obj > obj[worse] * (1 + 1e-12) + slack[worse]
                if not np.any(bad) or np.all(step[worse][bad] < 1e-6):
                    break
                warnings.warn("objective increased on a plain step; halving the step size", stacklevel=2)
                idx = np.flatnonzero(worse)[bad]
                step[idx] *= 0.5
            x_new[worse] = cand
            obj_new[worse] = cand_obj
            t[worse] = 1.0
        if cfg.momentum:
            t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            coef = np.where(worse, 0.0, (t - 1) / t_new)
            z = x_new + coef[expand] * (x_new - x)
            t = np.where(worse, 1.0, t_new)
        else:
            z = x_new
        change = np.linalg.norm((x_new - x).reshape(K, -1), axis=1)
        scale = np.linalg.norm(x_new.reshape(K, -1), axis=1)
        x, obj = x_new, obj_new
        if history is not None:
            history.append(float(obj.sum()))
        if cfg.tol > 0 and np.all(change <= cfg.tol * np.maximum(scale, np.finfo(float).tiny)):
            break
    return _stack(idwt2(x * peak, cfg.wavelet), lead)


def decoupled_fit(stack: EchoStack, d, mask) -> QuantMaps:
    """Voxel-wise dictionary fit of the echo-stack magnitudes."""
    return fit_maps(stack.magnitudes(), d, mask)
