"""
LLR algebra shared by every equalizer and the self-iteration loop.

All LLRs are ``ln Pr(x=+1)/Pr(x=-1)`` and are clipped to ``+-LLR_CLIP``
before any estimator or ``tanh``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

__all__ = [
    "LLR_CLIP",
    "CorrelationStats",
    "SymbolPriors",
    "clip_llr",
    "combine_branches",
    "combine_two_branch",
    "correlation_scale",
    "estimate_correlation",
    "exact_alpha",
    "make_a_priori",
    "priors_from_llr",
    "symbol_mean_from_llr",
]

LLR_CLIP = 50.0


def clip_llr(llr) -> np.ndarray:
    return np.clip(np.asarray(llr, dtype=np.float64), -LLR_CLIP, LLR_CLIP)


@dataclass(frozen=True)
class SymbolPriors:
    """Soft symbol statistics derived from a priori LLRs."""

    mean: np.ndarray
    variance: np.ndarray
    avg_variance: float


@dataclass(frozen=True)
class CorrelationStats:
    """Output of :func:`estimate_correlation`.

    ``n_a``/``n_e`` are the equivalent-AWGN noise variances implied by the
    conditional means of consistent LLRs (``m = 2 / N``) and ``lam`` is
    ``sqrt(n_a / n_e)``.  They are ``nan`` when the estimate is degenerate.
    """

    rho: float
    m_a: float
    m_e: float
    n_a: float
    n_e: float
    lam: float
    n_used: int
    degenerate: bool


def symbol_mean_from_llr(llr, suppressed_index=None) -> np.ndarray:
    """Soft symbol ``tanh(L/2)``, optionally forced to zero at one index."""
    mean = np.tanh(clip_llr(llr) / 2.0)
    if suppressed_index is not None:
        mean[suppressed_index] = 0.0
    return mean


def priors_from_llr(llr) -> SymbolPriors:
    mean = symbol_mean_from_llr(llr)
    variance = 1.0 - mean * mean
    avg = float(variance.mean()) if variance.size else 1.0
    return SymbolPriors(mean, variance, avg)


def _sgn(v):
    # zero counts as positive, matching the >= 0 split of the conditional means
    return np.where(v >= 0, 1.0, -1.0)


def _conditional_mean(v):
    pos = v >= 0
    n_pos = int(pos.sum())
    if n_pos == 0 or n_pos == v.size:
        return None
    return 0.5 * (v[pos].mean() - v[~pos].mean())


_DEGENERATE = CorrelationStats(0.0, np.nan, np.nan, np.nan, np.nan, np.nan, 0, True)


def estimate_correlation(a, e) -> CorrelationStats:
    """Noise correlation coefficient between two LLR sequences.

    Conditional means are estimated from the sign-split time averages of
    each sequence; the correlation itself uses only indices where both
    sequences have the same sign.  The result is clamped to ``[0, 1]``.
    Constant, single-sign or too-short inputs return ``rho = 0`` with
    ``degenerate=True``.
    """
    a = clip_llr(a)
    e = clip_llr(e)
    if a.shape != e.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {e.shape}")
    if a.size < 2:
        return _DEGENERATE
    m_a = _conditional_mean(a)
    m_e = _conditional_mean(e)
    if m_a is None or m_e is None:
        return _DEGENERATE
    sa, se = _sgn(a), _sgn(e)
    agree = sa == se
    n_used = int(agree.sum())
    if n_used < 2:
        return _DEGENERATE
    ua = a[agree] - sa[agree] * m_a
    ue = e[agree] - se[agree] * m_e
    den = np.sqrt(np.dot(ua, ua)) * np.sqrt(np.dot(ue, ue))
    if not den > 0:
        return _DEGENERATE
    rho = float(np.clip(np.dot(ua, ue) / den, 0.0, 1.0))
    if m_a > 0 and m_e > 0:
        n_a, n_e = 2.0 / m_a, 2.0 / m_e
        lam = float(np.sqrt(n_a / n_e))
    else:
        n_a = n_e = lam = np.nan
    return CorrelationStats(rho, float(m_a), float(m_e), n_a, n_e, lam, n_used, False)


def correlation_scale(rho: float) -> float:
    """Scaling ``(1 - rho) / (1 + rho)`` applied to correlated extrinsic LLRs."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    return (1.0 - rho) / (1.0 + rho)


def exact_alpha(rho: float, lam: float, n_a: float, n_e: float) -> float:
    """MSE-optimal scale without the equal-variance assumption.

    Only used to check the approximation behind :func:`correlation_scale`;
    the runtime path never calls it.
    """
    if abs(rho) >= 1.0:
        raise ZeroDivisionError("exact_alpha is undefined for |rho| = 1")
    if lam <= 0 or n_a <= 0 or n_e <= 0:
        raise ValueError("lam, n_a and n_e must be positive")
    cross = 1.0 + rho * np.sqrt(n_a * n_e)
    num = (lam - rho) * (n_a * (1.0 + n_e) - lam * rho * n_e * cross)
    return float(num / (lam * (1.0 - rho * rho) * n_a * (1.0 + n_e)))


def make_a_priori(extrinsic, a_priori_used) -> np.ndarray:
    """Turn an equalizer's extrinsic LLRs into a priori LLRs for its partner.

    ``a_priori_used`` is what the producing equalizer was fed.  The output
    is the extrinsic sequence scaled by ``correlation_scale`` of their
    estimated correlation, so polarities are always preserved.
    """
    extrinsic = clip_llr(extrinsic)
    stats = estimate_correlation(a_priori_used, extrinsic)
    return correlation_scale(stats.rho) * extrinsic


def combine_two_branch(l1, l2) -> np.ndarray:
    """Whitened sum ``(l1 + l2) / (1 + xi)`` of two correlated LLR sets."""
    l1 = clip_llr(l1)
    l2 = clip_llr(l2)
    xi = estimate_correlation(l1, l2).rho
    return (l1 + l2) / (1.0 + xi)


def combine_branches(llrs) -> np.ndarray:
    """Pairwise combination in branch-index order for any number of sets."""
    llrs = list(llrs)
    if not llrs:
        raise ValueError("need at least one LLR sequence")
    return reduce(combine_two_branch, llrs[1:], clip_llr(llrs[0]))
