"""
MMSE soft-input soft-output equalizers: linear (LE), decision feedback
(DFE) with error-propagation-aware LLRs, and bi-directional DFE (BiDFE).

Filter modes
------------
``TV``  taps recomputed for every symbol from the per-symbol variances.
``QTI`` taps recomputed once per call from the time-averaged variance.
``TI``  taps designed as if no a priori information existed (``z = 1``).

Soft interference cancellation and the output variance always use the
per-symbol a priori statistics, whatever the filter mode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import cho_factor, cho_solve

from .soft_info import clip_llr, estimate_correlation

__all__ = [
    "MODES",
    "BidfeResult",
    "ChannelMatrix",
    "DfeFilter",
    "EqualizedFrame",
    "LeFilter",
    "arbitrate",
    "bidfe_equalize",
    "build_channel_matrix",
    "design_dfe",
    "design_dfe_qti",
    "design_dfe_tv",
    "design_le",
    "design_le_qti",
    "design_le_tv",
    "dfe_equalize",
    "dfe_extrinsic_error_aware",
    "error_aware_llr",
    "le_equalize",
    "le_extrinsic",
]

MODES = ("TV", "QTI", "TI")


@dataclass(frozen=True)
class ChannelMatrix:
    """Banded Toeplitz channel matrix for one filter window.

    For the LE the columns cover ``x[n-L_c-L_h] ... x[n+L_f]``; for the DFE
    they cover ``x[n-L_d] ... x[n+L_f]`` and ``H1``/``H2`` split them at
    the current symbol.  ``h`` is the column multiplying ``x[n]``.
    """

    H: np.ndarray
    h: np.ndarray
    center: int
    taps: np.ndarray
    causal_span: int
    anticausal_span: int
    feedback_span: Optional[int] = None

    @property
    def is_dfe(self) -> bool:
        return self.feedback_span is not None

    @property
    def H1(self) -> np.ndarray:
        return self.H[:, : self.center]

    @property
    def H2(self) -> np.ndarray:
        return self.H[:, self.center :]

    @property
    def n_taps(self) -> int:
        return self.H.shape[0]


def build_channel_matrix(taps, causal_span=0, anticausal_span=0, feedback_span=None):
    """Build ``H`` for an LE (``feedback_span=None``) or a DFE window."""
    taps = np.asarray(taps, dtype=np.float64).ravel()
    lh = taps.size - 1
    if causal_span < 0 or anticausal_span < 0:
        raise ValueError("spans must be nonnegative")
    if feedback_span is None:
        n_rows = 1 + causal_span + anticausal_span
        back = lh
        center = causal_span + lh
    else:
        if causal_span:
            raise ValueError("the DFE has no causal feedforward taps")
        if feedback_span < lh:
            raise ValueError(
                f"feedback span {feedback_span} shorter than channel memory {lh}"
            )
        n_rows = 1 + anticausal_span
        back = feedback_span
        center = feedback_span
    H = np.zeros((n_rows, n_rows + back))
    for i in range(n_rows):
        for k, hk in enumerate(taps):
            H[i, i + back - k] = hk
    h = H[:, center].copy()
    for arr in (H, h):
        arr.setflags(write=False)
    return ChannelMatrix(H, h, center, taps, causal_span, anticausal_span, feedback_span)


@dataclass(frozen=True)
class LeFilter:
    """LE taps ``c`` (shape ``(L,)`` or ``(N, L)`` for TV) and gain ``beta``."""

    cm: ChannelMatrix
    c: np.ndarray
    beta: np.ndarray
    mode: str


@dataclass(frozen=True)
class DfeFilter:
    """DFE feedforward ``c``, feedback ``d = H1^T c`` and gain ``beta``."""

    cm: ChannelMatrix
    c: np.ndarray
    d: np.ndarray
    beta: np.ndarray
    mode: str


@dataclass
class EqualizedFrame:
    """Per-symbol equalizer outputs.

    ``err_prob`` and ``err_mean`` are ``Pr(i_n != 0)`` and ``E[i_n]`` for the
    feedback error term of the DFE (zeros for the LE).
    """

    y: np.ndarray
    sigma2: np.ndarray
    beta: np.ndarray
    llr: np.ndarray
    hard: Optional[np.ndarray] = None
    err_prob: Optional[np.ndarray] = None
    err_mean: Optional[np.ndarray] = None


def _check_noise(noise_variance):
    if not noise_variance > 0:
        raise ValueError("tap design needs a positive noise variance")


def _solve_spd(M, rhs):
    return cho_solve(cho_factor(M, lower=True, check_finite=False), rhs)


def _guarded(values, left, right, fill):
    return np.concatenate([np.full(left, fill), values, np.full(right, fill)])


def _windows(values, width):
    if width == 0:
        return np.zeros((values.size + 1, 0))
    return sliding_window_view(values, width)


def _priors(llr):
    llr = clip_llr(llr)
    mean = np.tanh(llr / 2.0)
    return llr, mean, 1.0 - mean * mean


# ---------------------------------------------------------------------------
# Linear equalizer
# ---------------------------------------------------------------------------


def design_le_qti(cm: ChannelMatrix, z_bar: float, noise_variance: float) -> LeFilter:
    """Time-invariant taps for the averaged variance ``z_bar`` (TI: ``z_bar=1``)."""
    _check_noise(noise_variance)
    if not 0.0 <= z_bar <= 1.0:
        raise ValueError("z_bar must lie in [0, 1]")
    a = np.full(cm.H.shape[1], float(z_bar))
    a[cm.center] = 1.0
    M = (cm.H * a) @ cm.H.T + noise_variance * np.eye(cm.n_taps)
    c = _solve_spd(M, cm.h)
    mode = "TI" if z_bar == 1.0 else "QTI"
    return LeFilter(cm, c, np.asarray(cm.h @ c), mode)


def design_le_tv(cm: ChannelMatrix, variances, noise_variance: float) -> LeFilter:
    """Per-symbol MMSE taps; the current symbol's variance is taken as 1."""
    _check_noise(noise_variance)
    z = np.asarray(variances, dtype=np.float64)
    back = cm.center
    fwd = cm.anticausal_span
    a = sliding_window_view(_guarded(z, back, fwd, 1.0), cm.H.shape[1]).copy()
    a[:, cm.center] = 1.0
    M = (a[:, None, :] * cm.H) @ cm.H.T
    M += noise_variance * np.eye(cm.n_taps)
    rhs = np.broadcast_to(cm.h[:, None], (z.size, cm.n_taps, 1))
    c = np.linalg.solve(M, rhs)[..., 0]
    return LeFilter(cm, c, c @ cm.h, "TV")


def design_le(cm, mode, llr, noise_variance) -> LeFilter:
    """Design LE taps in the given mode from the current a priori LLRs."""
    _, _, z = _priors(llr)
    if mode == "TV":
        return design_le_tv(cm, z, noise_variance)
    if mode == "QTI":
        return design_le_qti(cm, float(z.mean()) if z.size else 1.0, noise_variance)
    if mode == "TI":
        return design_le_qti(cm, 1.0, noise_variance)
    raise ValueError(f"unknown filter mode {mode!r}")


def le_equalize(r, f: LeFilter, llr_apriori, noise_variance: float) -> EqualizedFrame:
    """Soft-cancellation LE over one packet.

    ``r`` is the received sequence (normally ``N + L_h`` samples) and
    ``llr_apriori`` has one entry per symbol.  The current symbol's a
    priori value never enters its own output.
    """
    cm = f.cm
    _, mean, z = _priors(llr_apriori)
    n_sym = mean.size
    lc, lf, K = cm.causal_span, cm.anticausal_span, cm.H.shape[1]
    back = cm.center

    r = np.asarray(r, dtype=np.float64)
    r_pad = np.zeros(lc + n_sym + lf)
    avail = min(r.size, n_sym + lf)
    r_pad[lc : lc + avail] = r[:avail]
    rw = sliding_window_view(r_pad, cm.n_taps)
    xw = sliding_window_view(_guarded(mean, back, lf, 0.0), K)
    zw = sliding_window_view(_guarded(z, back, lf, 1.0), K).copy()
    zw[:, cm.center] = 0.0

    if f.c.ndim == 1:
        g = cm.H.T @ f.c
        beta = np.full(n_sym, float(f.beta))
        y = rw @ f.c - (xw @ g - beta * mean)
        sigma2 = zw @ (g * g) + noise_variance * float(f.c @ f.c)
    else:
        g = f.c @ cm.H
        beta = f.beta
        y = np.einsum("nl,nl->n", rw, f.c) - (np.einsum("nk,nk->n", xw, g) - beta * mean)
        sigma2 = np.einsum("nk,nk->n", zw, g * g) + noise_variance * np.einsum(
            "nl,nl->n", f.c, f.c
        )
    frame = EqualizedFrame(y, sigma2, beta, np.empty(0))
    frame.llr = le_extrinsic(frame, beta)
    return frame


def le_extrinsic(frame: EqualizedFrame, beta=None) -> np.ndarray:
    """Gaussian-approximation extrinsic LLR ``2 beta y / sigma^2``."""
    beta = frame.beta if beta is None else beta
    return clip_llr(2.0 * beta * frame.y / frame.sigma2)


# ---------------------------------------------------------------------------
# Decision feedback equalizer
# ---------------------------------------------------------------------------


def design_dfe_qti(cm: ChannelMatrix, z_bar: float, noise_variance: float) -> DfeFilter:
    _check_noise(noise_variance)
    if not cm.is_dfe:
        raise ValueError("channel matrix was built for an LE")
    if not 0.0 <= z_bar <= 1.0:
        raise ValueError("z_bar must lie in [0, 1]")
    H2 = cm.H2
    a = np.full(H2.shape[1], float(z_bar))
    a[0] = 1.0
    M = (H2 * a) @ H2.T + noise_variance * np.eye(cm.n_taps)
    c = _solve_spd(M, cm.h)
    mode = "TI" if z_bar == 1.0 else "QTI"
    return DfeFilter(cm, c, cm.H1.T @ c, np.asarray(cm.h @ c), mode)


def design_dfe_tv(cm: ChannelMatrix, variances, noise_variance: float) -> DfeFilter:
    """Per-symbol DFE taps using the variances of the future symbols."""
    _check_noise(noise_variance)
    z = np.asarray(variances, dtype=np.float64)
    H2 = cm.H2
    a = sliding_window_view(_guarded(z, 0, cm.anticausal_span, 1.0), H2.shape[1]).copy()
    a[:, 0] = 1.0
    M = (a[:, None, :] * H2) @ H2.T
    M += noise_variance * np.eye(cm.n_taps)
    rhs = np.broadcast_to(cm.h[:, None], (z.size, cm.n_taps, 1))
    c = np.linalg.solve(M, rhs)[..., 0]
    return DfeFilter(cm, c, c @ cm.H1, c @ cm.h, "TV")


def design_dfe(cm, mode, llr, noise_variance) -> DfeFilter:
    _, _, z = _priors(llr)
    if mode == "TV":
        return design_dfe_tv(cm, z, noise_variance)
    if mode == "QTI":
        return design_dfe_qti(cm, float(z.mean()) if z.size else 1.0, noise_variance)
    if mode == "TI":
        return design_dfe_qti(cm, 1.0, noise_variance)
    raise ValueError(f"unknown filter mode {mode!r}")


@numba.njit(cache=True, nogil=True)
def _softplus(x):
    if x > 0.0:
        return x + np.log1p(np.exp(-x))
    return np.log1p(np.exp(x))


@numba.njit(cache=True, nogil=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    m = max(a, b)
    return m + np.log1p(np.exp(-abs(a - b)))


@numba.njit(cache=True, nogil=True)
def _error_aware_scalar(y, beta, sigma2, p_err, i_mean):
    l0 = 2.0 * beta * y / sigma2
    if p_err <= 0.0:
        return l0
    phi = beta * (y - i_mean / p_err) / sigma2
    l1 = 2.0 * phi / (1.0 + abs(phi))
    if p_err >= 1.0:
        return l1
    log_p0 = np.log1p(-p_err)
    log_p1 = np.log(p_err)
    num = _logaddexp(log_p0 - _softplus(-l0), log_p1 - _softplus(-l1))
    den = _logaddexp(log_p0 - _softplus(l0), log_p1 - _softplus(l1))
    return num - den


@numba.njit(cache=True, nogil=True)
def _dfe_loop(y0, sigma2, beta, d, la, error_aware):
    n_sym = y0.size
    ld = d.shape[1]
    y = np.empty(n_sym)
    llr = np.empty(n_sym)
    hard = np.empty(n_sym)
    p_dec = np.empty(n_sym)
    err_prob = np.zeros(n_sym)
    err_mean = np.zeros(n_sym)
    for n in range(n_sym):
        fb = 0.0
        p_ok = 1.0
        i_bar = 0.0
        for j in range(1, ld + 1):
            m = n - j
            if m < 0:
                break
            dj = d[n, ld - j]
            fb += dj * hard[m]
            p_ok *= 1.0 - p_dec[m]
            i_bar += dj * (-2.0 * hard[m]) * p_dec[m]
        yn = y0[n] - fb
        y[n] = yn
        if error_aware:
            err_prob[n] = 1.0 - p_ok
            err_mean[n] = i_bar
            le = _error_aware_scalar(yn, beta[n], sigma2[n], 1.0 - p_ok, i_bar)
        else:
            le = 2.0 * beta[n] * yn / sigma2[n]
        le = min(max(le, -50.0), 50.0)
        llr[n] = le
        post = le + la[n]
        hard[n] = 1.0 if post >= 0.0 else -1.0
        p_dec[n] = 1.0 / (1.0 + np.exp(abs(post)))
    return y, llr, hard, err_prob, err_mean


def error_aware_llr(y, beta, sigma2, err_prob, err_mean) -> np.ndarray:
    """Extrinsic LLR mixing the error-free and feedback-error hypotheses.

    Vectorized counterpart of the scalar routine used inside the DFE loop.
    """
    y, beta, sigma2, p, ib = np.broadcast_arrays(
        *(np.asarray(v, dtype=np.float64) for v in (y, beta, sigma2, err_prob, err_mean))
    )
    l0 = 2.0 * beta * y / sigma2
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = beta * (y - np.where(p > 0, ib / p, 0.0)) / sigma2
        l1 = 2.0 * phi / (1.0 + np.abs(phi))
        log_p0 = np.log1p(-np.minimum(p, 1.0))
        log_p1 = np.log(p)
    num = np.logaddexp(log_p0 - np.logaddexp(0, -l0), log_p1 - np.logaddexp(0, -l1))
    den = np.logaddexp(log_p0 - np.logaddexp(0, l0), log_p1 - np.logaddexp(0, l1))
    out = num - den
    out = np.where(p <= 0, l0, out)
    out = np.where(p >= 1, l1, out)
    return out


def dfe_extrinsic_error_aware(frame: EqualizedFrame, beta=None) -> np.ndarray:
    beta = frame.beta if beta is None else beta
    return clip_llr(error_aware_llr(frame.y, beta, frame.sigma2, frame.err_prob, frame.err_mean))


def dfe_equalize(r, f: DfeFilter, llr_apriori, noise_variance: float, error_aware=True):
    """Run the DFE left to right over one packet.

    Past symbols are cancelled with hard decisions taken on the posterior
    LLR (extrinsic plus a priori); future symbols are cancelled with their
    soft means.  With ``error_aware=False`` the extrinsic LLR is the plain
    Gaussian one (classical DFE).
    """
    cm = f.cm
    la, mean, z = _priors(llr_apriori)
    n_sym = mean.size
    lf, ld = cm.anticausal_span, cm.feedback_span

    r = np.asarray(r, dtype=np.float64)
    r_pad = np.zeros(n_sym + lf)
    avail = min(r.size, r_pad.size)
    r_pad[:avail] = r[:avail]
    rw = sliding_window_view(r_pad, lf + 1)
    xf = _windows(_guarded(mean, 0, lf, 0.0)[1:], lf)
    zf = _windows(_guarded(z, 0, lf, 1.0)[1:], lf)

    if f.c.ndim == 1:
        g = cm.H.T @ f.c
        gf = g[ld + 1 :]
        y0 = rw @ f.c - xf @ gf
        sigma2 = zf @ (gf * gf) + noise_variance * float(f.c @ f.c)
        beta = np.full(n_sym, float(f.beta))
        d = np.ascontiguousarray(np.broadcast_to(f.d, (n_sym, ld)))
    else:
        g = f.c @ cm.H
        gf = g[:, ld + 1 :]
        y0 = np.einsum("nl,nl->n", rw, f.c) - np.einsum("nk,nk->n", xf, gf)
        sigma2 = np.einsum("nk,nk->n", zf, gf * gf) + noise_variance * np.einsum(
            "nl,nl->n", f.c, f.c
        )
        beta = np.ascontiguousarray(f.beta)
        d = np.ascontiguousarray(f.d)
    y, llr, hard, err_prob, err_mean = _dfe_loop(
        np.ascontiguousarray(y0), sigma2, beta, d, la, bool(error_aware)
    )
    return EqualizedFrame(y, sigma2, beta, llr, hard, err_prob, err_mean)


# ---------------------------------------------------------------------------
# Bi-directional DFE
# ---------------------------------------------------------------------------


@dataclass
class BidfeResult:
    llr: np.ndarray
    hard: np.ndarray
    rho: float
    forward: EqualizedFrame
    backward: EqualizedFrame


def arbitrate(fwd_hard, bwd_hard, r, taps, window=15) -> np.ndarray:
    """Pick, per symbol, the candidate with smaller local reconstruction error.

    The error of each candidate sequence is summed over received samples
    ``k`` with ``|k - n| <= (window - 1) / 2``.  Ties go to the forward
    candidate.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    fwd = np.asarray(fwd_hard, dtype=np.float64)
    bwd = np.asarray(bwd_hard, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    taps = np.asarray(taps, dtype=np.float64)
    n_sym = fwd.size
    n_obs = max(r.size, n_sym)
    r_full = np.zeros(n_obs)
    r_full[: r.size] = r
    half = (window - 1) // 2
    ones = np.ones(window)

    def local_error(x):
        recon = np.convolve(x, taps)[:n_obs]
        if recon.size < n_obs:
            recon = np.pad(recon, (0, n_obs - recon.size))
        err = (r_full - recon) ** 2
        return np.convolve(err, ones)[half : half + n_sym]

    use_bwd = local_error(bwd) < local_error(fwd)
    return np.where(use_bwd, bwd, fwd)


def bidfe_equalize(
    r,
    taps,
    llr_apriori,
    noise_variance,
    anticausal_span,
    feedback_span=None,
    mode="QTI",
    window=15,
    error_aware=True,
    filters=None,
) -> BidfeResult:
    """Forward and time-reversed DFEs with correlation-compensated combining.

    ``filters`` may carry precomputed ``(forward, backward)`` DFE filters;
    otherwise they are designed here in ``mode``.
    """
    taps = np.asarray(taps, dtype=np.float64)
    lh = taps.size - 1
    ld = lh if feedback_span is None else feedback_span
    la = clip_llr(llr_apriori)
    n_sym = la.size
    r = np.asarray(r, dtype=np.float64)
    r_full = np.zeros(n_sym + lh)
    avail = min(r.size, r_full.size)
    r_full[:avail] = r[:avail]

    if filters is None:
        cm_f = build_channel_matrix(taps, 0, anticausal_span, ld)
        cm_b = build_channel_matrix(taps[::-1], 0, anticausal_span, ld)
        filters = (
            design_dfe(cm_f, mode, la, noise_variance),
            design_dfe(cm_b, mode, la[::-1], noise_variance),
        )
    f_fwd, f_bwd = filters
    fwd = dfe_equalize(r_full, f_fwd, la, noise_variance, error_aware)
    bwd_rev = dfe_equalize(r_full[::-1], f_bwd, la[::-1], noise_variance, error_aware)
    bwd = EqualizedFrame(
        *(None if v is None else v[::-1].copy() for v in (
            bwd_rev.y, bwd_rev.sigma2, bwd_rev.beta, bwd_rev.llr,
            bwd_rev.hard, bwd_rev.err_prob, bwd_rev.err_mean,
        ))
    )
    rho = estimate_correlation(fwd.llr, bwd.llr).rho
    llr = clip_llr((fwd.llr + bwd.llr) / (1.0 + rho))
    hard = arbitrate(fwd.hard, bwd.hard, r_full, taps, window)
    return BidfeResult(llr, hard, rho, fwd, bwd)
