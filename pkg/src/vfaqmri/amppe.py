"""Joint recovery: GAMP image stage coupled to the voxel-wise tissue model.

The outer loop alternates between the linear stage, which recovers every
(flip angle, echo) image under a wavelet Laplace prior fused with the
current model prior, and the nonlinear stage, which fits the tissue maps to
the image magnitudes and sends the model magnitudes back (with the phase of
the current images) as a Gaussian prior for the next linear stage.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .baselines import decoupled_fit, lsq_recon
from .data import AcqParams, EchoStack, QuantMaps
from .gamp import GampConfig, run_linear_stage
from .operator import ForwardOp, apply
from .signal import DictionaryBank, fit_maps, model_magnitudes

__all__ = [
    "AmpPeConfig",
    "JointState",
    "forward_messages",
    "fit_tissue",
    "backward_messages",
    "tissue_weights",
    "map_change",
    "run_amp_pe",
]

log = logging.getLogger(__name__)

INIT_MODES = ("lsq", "zero")


@dataclass(frozen=True)
class AmpPeConfig:
    """Outer-loop settings.

    ``damping`` overrides the linear-stage damping rate (``None`` keeps the
    rate-dependent default). With ``use_model=False`` the model messages are
    never formed and the result is the linear stage plus the decoupled fit.
    """

    outer_iters: int = 20
    inner_iters: int = 100
    outer_tol: float = 1e-4
    damping: Optional[float] = None
    init: str = "lsq"
    use_model: bool = True
    gamp: GampConfig = field(default_factory=GampConfig)

    def __post_init__(self):
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.damping is not None and not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")

    def linear_config(self) -> GampConfig:
        cfg = self.gamp if self.damping is None else replace(self.gamp, alpha=self.damping)
        return replace(cfg, max_iters=self.inner_iters)


@dataclass
class JointState:
    """Messages exchanged between the image stage and the tissue model."""

    mu1: np.ndarray
    tau1: np.ndarray
    mu2: np.ndarray
    tau2: np.ndarray
    maps: QuantMaps
    outer_iter: int = 0


def _uniform(var, lead) -> np.ndarray:
    var = np.asarray(var, dtype=float)
    if var.shape == tuple(lead):
        return var.copy()
    return var.reshape(tuple(lead) + (-1,)).mean(axis=-1)


def forward_messages(mu_s, kappa_s):
    """Messages from the images to the tissue model.

    The mean is the linear-stage estimate itself; the variance is reduced to
    one scalar per (flip angle, echo) by the arithmetic mean.

    Parameters
    ----------
    mu_s : ndarray
        (I, J, rows, cols) complex image estimates.
    kappa_s : ndarray
        Variances, either (I, J) or per entry (I, J, rows, cols).
    """
    mu_s = np.asarray(mu_s)
    if mu_s.ndim != 4:
        raise ValueError(f"expected (I, J, rows, cols) images, got {mu_s.shape}")
    return mu_s.copy(), _uniform(kappa_s, mu_s.shape[:2])


def tissue_weights(tau1) -> np.ndarray:
    """Fit weights ``1 / (2 pi tau)``; an infinite variance gives weight 0."""
    tau1 = np.asarray(tau1, dtype=float)
    if np.any(tau1 < 0) or np.any(np.isnan(tau1)):
        raise ValueError("variances must be non-negative")
    tiny = np.finfo(float).tiny
    with np.errstate(divide="ignore"):
        w = np.where(np.isinf(tau1), 0.0, 1.0 / (2 * np.pi * np.maximum(tau1, tiny)))
    if not np.any(w > 0):
        raise ValueError("every term has infinite variance")
    # only ratios matter; keep the scale near one
    return w / w.max()


def fit_tissue(mu1, tau1, d, mask=None) -> QuantMaps:
    """Weighted voxel-wise dictionary fit of ``|mu1|``."""
    mu1 = np.asarray(mu1)
    if not np.all(np.isfinite(mu1)):
        raise ValueError("non-finite image estimates")
    if mask is None:
        mask = np.ones(mu1.shape[-2:], dtype=bool)
    return fit_maps(np.abs(mu1), d, mask, tissue_weights(tau1))


def backward_messages(maps: QuantMaps, mu_s, kappa_s, acq: AcqParams):
    """Model magnitudes with the phase of the current images.

    Returns ``mu2 = f(maps) * mu_s / |mu_s|`` (phase 0 where ``mu_s = 0``)
    and ``tau2 = kappa_s`` reduced to one scalar per image.
    """
    mu_s = np.asarray(mu_s)
    f = model_magnitudes(maps, acq)
    if f.shape != mu_s.shape:
        raise ValueError(f"model {f.shape} and images {mu_s.shape} differ")
    mag = np.abs(mu_s)
    phase = np.where(mag > 0, mu_s / np.where(mag > 0, mag, 1.0), 1.0)
    return f * phase, _uniform(kappa_s, mu_s.shape[:2])


def map_change(new: QuantMaps, old: QuantMaps) -> float:
    """Largest relative change of the z0, T1 and T2* maps."""
    out = 0.0
    for name in ("z0", "t1", "t2s"):
        a, b = getattr(new, name), getattr(old, name)
        nb = np.linalg.norm(b)
        diff = np.linalg.norm(a - b)
        out = max(out, diff / nb if nb > 0 else (0.0 if diff == 0 else np.inf))
    return float(out)


def _blank_maps(d, mask) -> QuantMaps:
    """Zero density with (T1, T2*) at the grid midpoints, as for degenerate voxels."""
    dd = d.dictionaries[0] if isinstance(d, DictionaryBank) else d
    t1 = dd.t1_grid[(len(dd.t1_grid) - 1) // 2]
    t2 = dd.t2s_grid[(len(dd.t2s_grid) - 1) // 2]
    return QuantMaps(np.zeros(mask.shape), np.where(mask, t1, 0.0), np.where(mask, t2, 0.0), mask,
                     degenerate=mask.copy())


def _zero_result(d, mask, lead):
    return _blank_maps(d, mask), EchoStack(np.zeros(lead + mask.shape, dtype=np.complex128))


def _residual_power(y, masks, sens, images) -> float:
    op = ForwardOp(masks, sens=sens)
    kmask = masks if sens is None else np.broadcast_to(masks[..., None, :, :], y.shape)
    resid = (y - apply(op, images))[kmask]
    return float(np.mean(np.abs(resid) ** 2)) if resid.size else 0.0


def run_amp_pe(y, masks, acq: AcqParams, d, config: AmpPeConfig = AmpPeConfig(), mask=None, sens=None,
               history: Optional[dict] = None):
    """Joint image and tissue-map recovery.

    Parameters
    ----------
    y : ndarray
        (I, J, rows, cols) k-space, or (I, J, coils, rows, cols) with ``sens``.
    masks : ndarray
        (I, J, rows, cols) sampling masks.
    d : Dictionary or DictionaryBank
    mask : ndarray, optional
        Voxels to fit (all by default); the model image is zero elsewhere.
    history : dict, optional
        Receives per-outer-iteration map changes and the linear-stage
        trajectories (residuals, lambda, tau_w, damping rate).

    Returns
    -------
    maps : QuantMaps
    images : EchoStack
        Final linear-stage image estimates.
    """
    masks = np.asarray(masks, dtype=bool)
    if masks.ndim != 4:
        raise ValueError(f"masks must be (I, J, rows, cols), got {masks.shape}")
    lead, shape = masks.shape[:2], masks.shape[2:]
    if (acq.n_flip, acq.n_echo) != lead:
        raise ValueError(f"acquisition has {acq.n_flip}x{acq.n_echo} images, masks {lead}")
    y = np.asarray(y, dtype=np.complex128)
    mask = np.ones(shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not np.any(np.abs(y)):
        return _zero_result(d, mask, lead)
    gcfg = config.linear_config()
    hist = {"map_change": [], "residual": [], "lambda": [], "tau_w": [], "alpha": [], "inner_iters": []}

    if not config.use_model:
        mu_s, _, state = run_linear_stage(y, masks, gcfg, sens=sens)
        _record(hist, state)
        if history is not None:
            history.update(hist)
        stack = EchoStack(mu_s)
        return decoupled_fit(stack, d, mask), stack

    state = None
    if config.init == "lsq":
        ls = lsq_recon(y, masks, sens).images
        maps = decoupled_fit(EchoStack(ls), d, mask)
        f = model_magnitudes(maps, acq)
        kappa = np.mean(np.abs(np.abs(ls) - f) ** 2, axis=(-2, -1))
        mu2, tau2 = backward_messages(maps, ls, np.maximum(kappa, np.finfo(float).tiny), acq)
        tau_w0 = _residual_power(y, masks, sens, mu2)
        gcfg = replace(gcfg, tau_w_init=gcfg.tau_w_init if gcfg.tau_w_init is not None else max(tau_w0, 1e-12))
    else:
        maps = _blank_maps(d, mask)
        mu2, tau2 = None, None

    mu_s = None
    for k in range(config.outer_iters):
        mu_s, kappa_s, state = run_linear_stage(y, masks, gcfg, sens=sens, state=state,
                                                prior_mean=mu2, prior_var=tau2, max_iters=config.inner_iters)
        mu1, tau1 = forward_messages(mu_s, kappa_s)
        new_maps = fit_tissue(mu1, tau1, d, mask)
        mu2, tau2 = backward_messages(new_maps, mu_s, kappa_s, acq)
        assert np.allclose(np.abs(mu2), model_magnitudes(new_maps, acq), rtol=1e-12, atol=0)
        change = map_change(new_maps, maps)
        maps = new_maps
        hist["map_change"].append(change)
        log.debug("outer iteration %d: map change %.3e", k + 1, change)
        if change < config.outer_tol:
            break
    _record(hist, state)
    if history is not None:
        history.update(hist)
    return maps, EchoStack(mu_s)


def _record(hist, state):
    hist["residual"] = list(state.history["residual"])
    hist["lambda"] = [np.asarray(v).tolist() for v in state.history["lambda"]]
    hist["tau_w"] = list(state.history["tau_w"])
    hist["alpha"] = list(state.history["alpha"])
    hist["inner_iters"] = state.iter
