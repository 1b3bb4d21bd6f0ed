"""Max-sum GAMP over wavelet coefficients with built-in hyperparameter estimation.

Each (flip angle, echo) image is recovered from ``y = B v + w`` with
``B = M F H^-1``, a Laplace prior of rate ``lambda`` on the coefficients
(one rate per image) and white complex Gaussian noise of variance ``tau_w``
shared by all images. Both hyperparameters are refreshed every iteration by
a single damped Newton step on their log-posteriors (flat hyperpriors).

Variances are uniformised to one scalar per image. The step size is
adapted on top of the nominal damping rate: a sweep that increases the MAP
cost is rejected and retried with half the rate, and accepted sweeps let
the rate grow back towards its nominal value.

The input channel may also carry an image-domain Gaussian prior
``CN(z; mean, var)``; since ``H`` is orthonormal it becomes a coefficient
prior ``CN(v; H mean, var)`` that is fused with the GAMP pseudo-measurement
before shrinkage.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import erfcx, log_ndtr

from .operator import ForwardOp, adjoint, apply
from .sampling import elliptical_support
from .wavelet import WaveletSpec, dwt2, idwt2

__all__ = [
    "GampConfig",
    "GampState",
    "GampDivergence",
    "laplace_denoise",
    "damp",
    "default_alpha",
    "sampling_rate",
    "laplace_loglik",
    "estimate_lambda",
    "noise_loglik",
    "estimate_tau_w",
    "init_state",
    "gamp_iterate",
    "run_linear_stage",
    "map_cost",
    "LAMBDA_BOUNDS",
    "TAU_W_BOUNDS",
]

log = logging.getLogger(__name__)

LAMBDA_BOUNDS = (1e-6, 1e6)
TAU_W_BOUNDS = (1e-12, 1e12)
_MAX_LOG_STEP = 2.0
_VAR_FLOOR = 1e-300


class GampDivergence(RuntimeError):
    """Raised when the measurement residual blows up."""


def default_alpha(rate: float) -> float:
    return 0.5 if rate < 0.125 else 1.0


def sampling_rate(masks) -> float:
    """Mean fraction of the elliptical k-space support that is sampled."""
    masks = np.asarray(masks, dtype=bool)
    support = elliptical_support(masks.shape[-2:])
    return float(masks[..., support].mean())


@dataclass(frozen=True)
class GampConfig:
    max_iters: int = 100
    tol: float = 1e-6
    alpha: Optional[float] = None
    lambda_init: Optional[float] = None
    tau_w_init: Optional[float] = None
    estimate_params: bool = True
    wavelet: WaveletSpec = field(default_factory=WaveletSpec)
    adaptive: bool = True
    alpha_min: float = 1e-2
    cost_window: int = 5
    guard_window: int = 5
    guard_factor: float = 10.0

    def __post_init__(self):
        if self.alpha is not None and not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.alpha_min <= 1:
            raise ValueError("alpha_min must be in (0, 1]")


@dataclass
class GampState:
    """Message-passing quantities for a batch of K images.

    Arrays carry a leading batch axis K; ``v_var``, ``p_var``, ``r_var`` and
    ``lam`` hold one scalar per image. ``alpha`` is the current (possibly
    adapted) damping rate.
    """

    v_mean: np.ndarray
    v_var: np.ndarray
    p_mean: np.ndarray
    p_var: np.ndarray
    s_hat: np.ndarray
    lam: np.ndarray
    tau_w: float
    alpha: float
    r_mean: Optional[np.ndarray] = None
    r_var: Optional[np.ndarray] = None
    ext_var: Optional[np.ndarray] = None
    iter: int = 0
    history: dict = field(default_factory=lambda: {"residual": [], "lambda": [], "tau_w": [], "change": [], "alpha": []})

    def mu_s(self, wavelet: WaveletSpec) -> np.ndarray:
        return idwt2(self.v_mean, wavelet)

    @property
    def kappa_s(self) -> np.ndarray:
        """Image-domain variance per image (H is orthonormal).

        When a model prior was fused in the last sweep this is the variance
        of the estimate formed from the measurements and the sparsity prior
        alone, so that the model is not fed back its own confidence.
        """
        return self.v_var if self.ext_var is None else np.maximum(self.ext_var, _VAR_FLOOR)

    def check(self):
        if np.any(self.v_var < 0) or np.any(self.p_var < 0):
            raise GampDivergence("negative variance")
        if not (np.all(self.lam > 0) and self.tau_w > 0):
            raise GampDivergence("non-positive hyperparameter")


def laplace_denoise(r, tau, lam):
    """MAP shrinkage of a complex pseudo-measurement under a Laplace prior.

    Minimises ``|v - r|^2 / tau + lam |v|``: a complex soft threshold at
    ``lam * tau / 2`` that keeps the phase of ``r``. The returned variance is
    ``tau`` where the input survives the threshold and 0 elsewhere.
    """
    r = np.asarray(r)
    tau = np.asarray(tau, dtype=float)
    thr = np.asarray(lam, dtype=float) * tau / 2.0
    mag = np.abs(r)
    keep = mag > thr
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(keep, (mag - thr) / np.where(mag > 0, mag, 1.0), 0.0)
    return r * scale, np.where(keep, tau, 0.0)


def damp(old, proposed, alpha: float):
    """Convex step ``old + alpha * (proposed - old)``; alpha = 1 returns ``proposed``."""
    if alpha == 1:
        return proposed
    return old + alpha * (proposed - old)


# --- lambda ---------------------------------------------------------------

def _mills(x):
    # phi(x) / Phi(x), stable for large negative x
    return np.sqrt(2.0 / np.pi) / erfcx(-x / np.sqrt(2.0))


def laplace_loglik(lam: float, a, s=0.0, derivatives: bool = False):
    """Log marginal likelihood of ``lam`` and its first two derivatives.

    Each coefficient message is projected onto the real line through its own
    phase: the modulus ``a`` is observed with Gaussian error of variance
    ``s`` (half the complex variance; scalar or one per entry) under the
    density ``lam / 2 * exp(-lam |rho|)``. Entries with ``s = 0`` use the
    plain Laplace likelihood of the modulus.
    """
    a = np.asarray(a, dtype=float).ravel()
    s = np.broadcast_to(np.asarray(s, dtype=float), a.shape).ravel()
    exact = s <= 0
    ae = a[exact]
    ll = ae.size * np.log(lam / 2.0) - lam * ae.sum()
    d1 = ae.size / lam - ae.sum()
    d2 = -ae.size / lam**2
    if not np.all(exact):
        a, s = a[~exact], s[~exact]
        sd = np.sqrt(s)
        u = (a - lam * s) / sd
        w = (-a - lam * s) / sd
        base = np.log(lam / 2.0) + 0.5 * lam * lam * s
        A = base - lam * a + log_ndtr(u)
        B = base + lam * a + log_ndtr(w)
        L = np.logaddexp(A, B)
        ll += float(L.sum())
        if derivatives:
            Ru = _mills(u)
            Rw = _mills(w)
            dA = 1.0 / lam - a + lam * s - sd * Ru
            dB = 1.0 / lam + a + lam * s - sd * Rw
            d2A = -1.0 / lam**2 + s - s * Ru * (u + Ru)
            d2B = -1.0 / lam**2 + s - s * Rw * (w + Rw)
            pa = np.exp(A - L)
            pb = np.exp(B - L)
            d1 += float(np.sum(pa * dA + pb * dB))
            d2 += float(np.sum(pa * d2A + pb * d2B + pa * pb * (dA - dB) ** 2))
    ll = float(ll)
    if not derivatives:
        return ll
    return ll, float(d1), float(d2)


def _log_newton(f, x, bounds):
    """One damped Newton step on ``f`` in log-coordinates with backtracking.

    ``f(x, derivatives=True)`` returns (value, df/dx, d2f/dx2). Returns the
    previous ``x`` when the curvature is non-finite or not negative.
    """
    val, d1, d2 = f(x, derivatives=True)
    g = x * d1
    h = x * d1 + x * x * d2
    if not (np.isfinite(g) and np.isfinite(h)) or h >= 0:
        return x
    step = float(np.clip(-g / h, -_MAX_LOG_STEP, _MAX_LOG_STEP))
    for _ in range(30):
        x_new = float(np.clip(x * np.exp(step), *bounds))
        new_val = f(x_new)
        if np.isfinite(new_val) and new_val >= val:
            return x_new
        step *= 0.5
    return x


def estimate_lambda(a, s=0.0, lam: Optional[float] = None) -> float:
    """One Newton update of the Laplace rate from coefficient messages.

    Parameters
    ----------
    a : array_like
        Message means (complex values are reduced to their modulus).
    s : float or array_like
        Complex variance of each message; 0 means the means are exact.
    lam : float, optional
        Current rate. Defaults to the maximum-likelihood start ``1 / mean|a|``.
    """
    a = np.abs(np.asarray(a))
    s = np.broadcast_to(np.asarray(s, dtype=float), a.shape).ravel()
    a = a.ravel()
    lo, hi = LAMBDA_BOUNDS
    if not np.any(a > 0):
        warnings.warn("all coefficient messages are zero; lambda clamped to its upper bound", stacklevel=2)
        return hi
    if lam is None:
        return float(np.clip(1.0 / a.mean(), lo, hi))
    half = 0.5 * s
    return _log_newton(lambda x, derivatives=False: laplace_loglik(x, a, half, derivatives), float(lam), (lo, hi))


# --- tau_w ----------------------------------------------------------------

def noise_loglik(tau_w: float, sq, derivatives: bool = False):
    """Pooled log-likelihood of the shared noise variance.

    ``sq`` holds the expected squared residual moduli, one per sampled
    entry, each residual being ``CN(0, tau_w)``.
    """
    E = np.asarray(sq, dtype=float)
    ll = float(np.sum(-np.log(np.pi * tau_w) - E / tau_w))
    if not derivatives:
        return ll
    d1 = float(np.sum(-1.0 / tau_w + E / tau_w**2))
    d2 = float(np.sum(1.0 / tau_w**2 - 2.0 * E / tau_w**3))
    return ll, d1, d2


def estimate_tau_w(residuals, tau_w: Optional[float] = None, extra=None) -> float:
    """One Newton update of the noise variance pooled over all images.

    Parameters
    ----------
    residuals : ndarray or sequence of ndarray
        Residuals ``y - z`` on the sampled entries (one array per image is
        fine).
    tau_w : float, optional
        Current value. Without it the estimate is the mean residual power.
    extra : ndarray or sequence of ndarray, optional
        Posterior variance of ``z`` on the same entries, added to the squared
        residuals (the expected complete-data residual power).
    """
    if isinstance(residuals, np.ndarray) and residuals.dtype != object:
        residuals = [residuals]
        extra = None if extra is None else [extra]
    sq = np.concatenate([np.abs(np.ravel(r)) ** 2 for r in residuals])
    if extra is not None:
        sq = sq + np.concatenate([np.broadcast_to(np.asarray(e, float), np.shape(r)).ravel()
                                  for e, r in zip(extra, residuals)])
    lo, hi = TAU_W_BOUNDS
    if not np.any(sq > 0):
        return lo
    if tau_w is None:
        return float(np.clip(sq.mean(), lo, hi))
    return _log_newton(lambda x, derivatives=False: noise_loglik(x, sq, derivatives), float(tau_w), (lo, hi))


# --- iteration ------------------------------------------------------------

@dataclass(frozen=True)
class _Geometry:
    n: int  # coefficients per image
    kmask: np.ndarray  # mask broadcast over coils, float
    energy: np.ndarray  # per-coil mean |s_c|^2, broadcastable to kmask[k]

    @property
    def row(self) -> np.ndarray:
        """Squared row norms of B on the sampled entries."""
        return self.energy * self.kmask

    def col(self, tau_s) -> np.ndarray:
        """Mean over columns of ``sum_k |B_kj|^2 tau_s[k]``, one per image."""
        K = tau_s.shape[0]
        return (self.row * tau_s).reshape(K, -1).sum(axis=1) / self.n


def _geometry(op: ForwardOp) -> _Geometry:
    n = int(np.prod(op.image_shape))
    if op.sens is None:
        return _Geometry(n, op.mask.astype(float), np.ones(1))
    kmask = np.broadcast_to(op.mask[:, None], (op.mask.shape[0],) + op.sens.shape).astype(float)
    energy = np.mean(np.abs(op.sens) ** 2, axis=(1, 2))[:, None, None]
    return _Geometry(n, kmask, energy)


def _bcast(x, ndim):
    return np.asarray(x, dtype=float).reshape((-1,) + (1,) * (ndim - 1))


def init_state(op: ForwardOp, y, config: GampConfig, v0=None, lam=None, tau_w=None) -> GampState:
    """Starting state.

    The Laplace rates start at ``1 / mean|v_ls|`` of the least-squares
    coefficients ``v_ls = B^H y`` and the coefficient variance at their mean
    power divided by the fraction of the energy the mask captures. The mean
    starts at ``v0`` (zero by default).
    """
    geo = _geometry(op)
    y = np.asarray(y)
    v_ls = adjoint(op, y)
    K = v_ls.shape[0]
    mag = np.abs(v_ls).reshape(K, -1)
    mean_mag = mag.mean(axis=1)
    if lam is None:
        lam = config.lambda_init
    if lam is None:
        safe = np.where(mean_mag > 0, mean_mag, 1.0)
        lam = np.where(mean_mag > 0, 1.0 / safe, LAMBDA_BOUNDS[1])
    lam = np.clip(np.broadcast_to(np.asarray(lam, float), (K,)).copy(), *LAMBDA_BOUNDS)
    if tau_w is None:
        tau_w = config.tau_w_init
    if tau_w is None:
        n_samp = max(float(geo.kmask.sum()), 1.0)
        tau_w = 1e-2 * float(np.sum(np.abs(y) ** 2) / n_samp)
    tau_w = float(np.clip(tau_w, *TAU_W_BOUNDS))
    coverage = geo.col(np.ones_like(geo.kmask))
    v_var = np.maximum((mag**2).mean(axis=1) / np.maximum(coverage, 1e-3), _VAR_FLOOR)
    v = np.zeros_like(v_ls) if v0 is None else np.asarray(v0, dtype=np.complex128).reshape(v_ls.shape)
    alpha = config.alpha if config.alpha is not None else default_alpha(sampling_rate(op.mask))
    return GampState(
        v_mean=v,
        v_var=v_var,
        p_mean=np.zeros(y.shape, dtype=np.complex128),
        p_var=v_var.copy(),
        s_hat=np.zeros(y.shape, dtype=np.complex128),
        lam=lam,
        tau_w=tau_w,
        alpha=float(alpha),
    )


def gamp_iterate(state: GampState, op: ForwardOp, y, config: GampConfig,
                 prior_mean=None, prior_var=None, estimate: Optional[bool] = None) -> GampState:
    """One damped max-sum GAMP sweep over all images of the batch.

    ``prior_mean`` (image domain, batch shaped) and ``prior_var`` (one per
    image, ``inf`` to disable) add the Gaussian model prior to the input
    channel.
    """
    estimate = config.estimate_params if estimate is None else estimate
    geo = _geometry(op)
    y = np.asarray(y)
    row = geo.row
    sampled = np.broadcast_to(row > 0, y.shape)
    K = y.shape[0]
    alpha = state.alpha

    # output linear step with Onsager correction
    tau_p = _bcast(state.v_var, y.ndim) * row
    p = apply(op, state.v_mean) - tau_p * state.s_hat
    resid = (y - p) * geo.kmask
    tau_w = state.tau_w
    if estimate:
        # expected residual power under the output-channel posterior of z
        gain = tau_w / (tau_w + tau_p)
        tau_w = estimate_tau_w((gain * resid)[sampled], tau_w, (gain * tau_p)[sampled])
    tau_s = geo.kmask / (tau_w + tau_p)
    s_new = resid * tau_s

    # input linear step
    prec = geo.col(tau_s)
    tau_r = np.where(prec > 0, 1.0 / np.where(prec > 0, prec, 1.0), np.inf)
    r = state.v_mean + _bcast(np.where(np.isinf(tau_r), 0.0, tau_r), y.ndim) * adjoint(op, s_new)
    r_fused, tau_fused = r, tau_r
    fused = False
    if prior_mean is not None and prior_var is not None:
        pv = np.broadcast_to(np.asarray(prior_var, float), (K,))
        live = np.isfinite(pv)
        if np.any(live):
            u = dwt2(np.asarray(prior_mean).reshape(r.shape), op.wavelet)
            w_r = np.where(live, np.where(np.isinf(tau_r), 0.0, pv / (tau_r + pv)), 1.0)
            w_r = np.where(np.isfinite(w_r), w_r, 0.0)
            r_fused = _bcast(w_r, r.ndim) * r + _bcast(1.0 - w_r, r.ndim) * u
            tau_fused = np.where(live, np.where(np.isinf(tau_r), pv, tau_r * pv / (tau_r + pv)), tau_r)
            fused = True

    lam = state.lam.copy()
    if estimate:
        for k in range(K):
            lam[k] = estimate_lambda(r_fused[k], tau_fused[k], lam[k])
    v_prop, var_entries = laplace_denoise(r_fused, _bcast(tau_fused, r.ndim), _bcast(lam, r.ndim))
    v_var_prop = var_entries.reshape(K, -1).mean(axis=1)

    if fused:
        # variance of the estimate from the measurements and sparsity prior alone
        _, ext_entries = laplace_denoise(r, _bcast(tau_r, r.ndim), _bcast(lam, r.ndim))
        ext_var = ext_entries.reshape(K, -1).mean(axis=1)
    else:
        ext_var = None

    v_new = damp(state.v_mean, v_prop, alpha)
    v_var_new = np.maximum(damp(state.v_var, v_var_prop, alpha), _VAR_FLOOR)
    s_damped = damp(state.s_hat, s_new, alpha)

    out = replace(
        state,
        v_mean=v_new,
        v_var=v_var_new,
        p_mean=p,
        p_var=state.v_var * geo.energy.mean(),
        s_hat=s_damped,
        lam=lam,
        tau_w=float(tau_w),
        r_mean=r_fused,
        r_var=tau_fused,
        ext_var=ext_var,
        iter=state.iter + 1,
    )
    out.check()
    return out


def _cost_terms(v, y, bv, u=None):
    K = v.shape[0]
    fit = float(np.sum(np.abs(np.asarray(y) - bv) ** 2))
    l1 = np.abs(v).reshape(K, -1).sum(axis=1)
    prior = np.zeros(K) if u is None else np.sum(np.abs(v - u).reshape(K, -1) ** 2, axis=1)
    return fit, l1, prior


def _cost(terms, lam, tau_w, prior_prec):
    fit, l1, prior = terms
    return fit / tau_w + float(np.sum(lam * l1)) + float(np.sum(prior_prec * prior))


def map_cost(op: ForwardOp, y, v, lam, tau_w: float, bv=None, prior_mean=None, prior_var=None) -> float:
    """MAP objective ``sum_k ||y_k - B v_k||^2 / tau_w + lam_k ||v_k||_1``.

    With an image-domain Gaussian prior the term ``||v_k - H mean_k||^2 / var_k``
    is added.
    """
    u, prec = _prior_coeffs(op, v.shape[0], prior_mean, prior_var)
    terms = _cost_terms(v, y, apply(op, v) if bv is None else bv, u)
    return _cost(terms, np.asarray(lam), tau_w, prec)


def _prior_coeffs(op, K, prior_mean, prior_var):
    if prior_mean is None or prior_var is None:
        return None, np.zeros(K)
    pv = np.broadcast_to(np.asarray(prior_var, float), (K,))
    with np.errstate(divide="ignore"):
        prec = np.where(np.isfinite(pv), 1.0 / pv, 0.0)
    u = dwt2(np.asarray(prior_mean).reshape((K,) + op.image_shape), op.wavelet)
    return u, prec


def run_linear_stage(y, masks, config: GampConfig = GampConfig(), sens=None, state: Optional[GampState] = None,
                     prior_mean=None, prior_var=None, max_iters: Optional[int] = None):
    """Iterate GAMP until the coefficient estimate settles.

    Parameters
    ----------
    y : ndarray
        k-space of shape (..., rows, cols) (a coil axis before the image
        axes when ``sens`` is given); leading axes index images.
    masks : ndarray
        Boolean masks matching ``y`` without the coil axis.
    state : GampState, optional
        Warm start; a fresh state from a zero mean otherwise.
    prior_mean, prior_var : ndarray, optional
        Image-domain Gaussian prior (shaped like ``masks``) and its variance
        (one per image, ``inf`` disables it).

    Returns
    -------
    mu_s : ndarray
        Image-domain posterior means, shaped like ``masks``.
    kappa_s : ndarray
        One variance per image, shaped like the leading axes of ``masks``.
    state : GampState
    """
    masks = np.asarray(masks, dtype=bool)
    lead = masks.shape[:-2]
    shape = masks.shape[-2:]
    K = int(np.prod(lead, dtype=int))
    flat_masks = masks.reshape((K,) + shape)
    y = np.asarray(y, dtype=np.complex128)
    y = y.reshape((K,) + y.shape[len(lead):])
    op = ForwardOp(flat_masks, sens=sens, wavelet=config.wavelet)
    if prior_mean is not None:
        prior_mean = np.asarray(prior_mean).reshape((K,) + shape)
        prior_var = np.broadcast_to(np.asarray(prior_var, float), lead).reshape(K)
    if state is None:
        state = init_state(op, y, config)
    y_norm = float(np.linalg.norm(y))
    if y_norm == 0:
        return np.zeros(masks.shape, dtype=np.complex128), np.zeros(lead), state
    floor = 1e-3 * y_norm
    res_hist = state.history["residual"]
    n_iter = config.max_iters if max_iters is None else max_iters
    alpha_max = state.alpha
    bv = apply(op, state.v_mean)
    u, prec = _prior_coeffs(op, K, prior_mean, prior_var)
    # recent accepted iterates with their cost terms
    window = [(_cost_terms(state.v_mean, y, bv, u), state, bv)]
    for _ in range(n_iter):
        prev = state.v_mean
        cand = gamp_iterate(state, op, y, config, prior_mean, prior_var)
        bv_new = apply(op, cand.v_mean)
        if config.adaptive:
            # judge the step under the hyperparameters it started from, against
            # the worst of the recent accepted iterates
            new = _cost_terms(cand.v_mean, y, bv_new, u)
            cost = [_cost(t, state.lam, state.tau_w, prec) for t in [w[0] for w in window] + [new]]
            if cost[-1] > max(cost[:-1]) * (1 + 1e-12):
                if state.alpha > config.alpha_min:
                    # reject the step and retry from the same point with more damping
                    state = replace(state, alpha=max(0.5 * state.alpha, config.alpha_min), iter=state.iter + 1)
                    state.history["change"].append(float("nan"))
                    continue
                if alpha_max <= config.alpha_min:
                    log.debug("linear stage stalled at the minimum step size (iteration %d)", state.iter)
                    break
                # no step from here lowers the cost: resume from the cheapest recent
                # iterate under a lower ceiling on the damping rate
                _, best, bv = window[int(np.argmin(cost[:-1]))]
                alpha_max = max(0.5 * alpha_max, config.alpha_min)
                state = replace(best, alpha=alpha_max, iter=state.iter + 1)
                state.history["change"].append(float("nan"))
                log.debug("linear stage restarted at iteration %d with alpha <= %g", state.iter, alpha_max)
                continue
            cand.alpha = min(1.1 * cand.alpha, alpha_max)
            window = (window + [(new, cand, bv_new)])[-config.cost_window:]
        state, bv = cand, bv_new
        res = float(np.linalg.norm(y - bv))
        if not np.isfinite(res) or not np.all(np.isfinite(state.v_mean)):
            raise GampDivergence(f"non-finite estimate at iteration {state.iter}")
        res_hist.append(res)
        state.history["alpha"].append(state.alpha)
        state.history["lambda"].append(state.lam.copy())
        state.history["tau_w"].append(state.tau_w)
        w = config.guard_window
        if len(res_hist) > w and res > config.guard_factor * max(res_hist[-1 - w], floor):
            raise GampDivergence(
                f"residual grew from {res_hist[-1 - w]:.3e} to {res:.3e} within {w} iterations "
                f"(iteration {state.iter}, alpha={state.alpha}, tau_w={state.tau_w:.3e})"
            )
        denom = np.linalg.norm(prev)
        change = np.linalg.norm(state.v_mean - prev) / denom if denom > 0 else np.inf
        state.history["change"].append(float(change))
        if change < config.tol:
            break
    log.debug("linear stage stopped after %d iterations, residual %.3e", state.iter, res_hist[-1])
    mu_s = idwt2(state.v_mean, config.wavelet).reshape(masks.shape)
    return mu_s, state.kappa_s.reshape(lead), state
