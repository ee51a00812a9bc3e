"""
Asymptotic output SNRs, the binary-input AWGN information rate, mutual
information estimation and EXIT trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad

from .channel import ChannelModel, apply_channel, bpsk_map, make_rng
from .mmse import (
    build_channel_matrix,
    design_dfe_qti,
    design_le_qti,
    dfe_equalize,
    le_equalize,
)
from .soft_info import LLR_CLIP, clip_llr

__all__ = [
    "ExitPoint",
    "SnrLimit",
    "average_trajectories",
    "bidfe_rho",
    "binary_awgn_capacity",
    "capacity_gap",
    "estimate_mutual_information",
    "exit_trajectory",
    "iterations_to_reach",
    "measure_bidfe_rho",
    "output_snr",
    "snr_infinity",
]

_LN2 = np.log(2.0)


@dataclass(frozen=True)
class SnrLimit:
    """Output SNR of an equalizer under perfect a priori information."""

    kind: str
    mode: str
    value: float
    mi_ceiling: float
    rho: Optional[float] = None


@dataclass(frozen=True)
class ExitPoint:
    iteration: int
    mi_in: float
    mi_out: float
    module: str


def _ti_quadratic(H, h, noise_variance):
    # (h^T P h)^2 / (N0 h^T P^2 h) with P = (H H^T + N0 I)^-1
    M = H @ H.T + noise_variance * np.eye(H.shape[0])
    Ph = np.linalg.solve(M, h)
    return float((h @ Ph) ** 2 / (noise_variance * (Ph @ Ph)))


def _dfe_spans(taps, anticausal_span, feedback_span):
    lh = len(taps) - 1
    return anticausal_span, lh if feedback_span is None else feedback_span


def bidfe_rho(taps, noise_variance, anticausal_span, feedback_span=None) -> float:
    """Noise correlation between the forward and time-reversed TI-DFE outputs.

    Under perfect a priori information both outputs are ``beta x_n`` plus
    filtered white noise; forward tap ``i`` sees ``w[n+i]`` and reversed
    tap ``j`` sees ``w[n+L_h-j]``, so only pairs with ``i + j = L_h`` overlap.
    """
    taps = np.asarray(taps, dtype=np.float64)
    lf, ld = _dfe_spans(taps, anticausal_span, feedback_span)
    lh = taps.size - 1
    cf = design_dfe_qti(build_channel_matrix(taps, 0, lf, ld), 1.0, noise_variance).c
    cb = design_dfe_qti(build_channel_matrix(taps[::-1], 0, lf, ld), 1.0, noise_variance).c
    cross = sum(cf[i] * cb[lh - i] for i in range(max(0, lh - lf), min(lf, lh) + 1))
    return float(cross / (np.linalg.norm(cf) * np.linalg.norm(cb)))


def measure_bidfe_rho(taps, noise_variance, anticausal_span, feedback_span=None,
                      n_sym=10**6, seed=0) -> float:
    """Monte Carlo estimate of :func:`bidfe_rho` from simulated DFE outputs."""
    taps = np.asarray(taps, dtype=np.float64)
    lf, ld = _dfe_spans(taps, anticausal_span, feedback_span)
    rng = make_rng(seed)
    x = bpsk_map(rng.integers(0, 2, n_sym))
    r = apply_channel(x, ChannelModel(taps, noise_variance), rng)
    la = LLR_CLIP * x
    resid = []
    for t, rr, xx, ll in ((taps, r, x, la), (taps[::-1], r[::-1], x[::-1], la[::-1])):
        f = design_dfe_qti(build_channel_matrix(t, 0, lf, ld), 1.0, noise_variance)
        frame = dfe_equalize(rr, f, ll, noise_variance, error_aware=False)
        resid.append(frame.y - frame.beta * xx)
    resid[1] = resid[1][::-1]
    # guard symbols at either end break the steady state; trim them
    trim = slice(lf + ld, n_sym - lf - ld)
    return float(np.corrcoef(resid[0][trim], resid[1][trim])[0, 1])


def snr_infinity(kind, mode, taps, noise_variance, causal_span=0, anticausal_span=0,
                 feedback_span=None, rho=None) -> SnrLimit:
    """Output SNR limit for perfect a priori information.

    QTI and TV filters reach the matched-filter bound ``1/N0``.  TI filters
    are evaluated in closed form; the TI-BiDFE adds the ``2 / (1 + rho)``
    combining gain with ``rho`` from :func:`bidfe_rho` unless given.
    """
    if not noise_variance > 0:
        raise ValueError("noise_variance must be positive")
    kind, mode = kind.upper(), mode.upper()
    if kind not in ("LE", "DFE", "BIDFE"):
        raise ValueError(f"no SNR limit for equalizer kind {kind!r}")
    taps = np.asarray(taps, dtype=np.float64)
    used_rho = None
    if mode in ("QTI", "TV"):
        value = 1.0 / noise_variance
    elif mode != "TI":
        raise ValueError(f"unknown filter mode {mode!r}")
    elif kind == "LE":
        cm = build_channel_matrix(taps, causal_span, anticausal_span)
        value = _ti_quadratic(cm.H, cm.h, noise_variance)
    else:
        lf, ld = _dfe_spans(taps, anticausal_span, feedback_span)
        cm = build_channel_matrix(taps, 0, lf, ld)
        value = _ti_quadratic(cm.H2, cm.h, noise_variance)
        if kind == "BIDFE":
            used_rho = bidfe_rho(taps, noise_variance, lf, ld) if rho is None else float(rho)
            value *= 2.0 / (1.0 + used_rho)
    return SnrLimit(kind, mode, value, binary_awgn_capacity(value), used_rho)


def output_snr(kind, taps, noise_variance, z_bar, causal_span=0, anticausal_span=0,
               feedback_span=None, n_sym=64) -> float:
    """``beta^2 / sigma^2`` measured by running an equalizer with perfect priors.

    Taps are designed at the averaged variance ``z_bar``; the equalizer then
    processes a noiseless packet whose a priori LLRs are saturated to the
    correct symbols, and the reported variance is read at the centre symbol.
    """
    kind = kind.upper()
    taps = np.asarray(taps, dtype=np.float64)
    x = bpsk_map(make_rng(0).integers(0, 2, n_sym))
    r = np.convolve(x, taps)
    la = LLR_CLIP * x
    mid = n_sym // 2
    if kind == "LE":
        cm = build_channel_matrix(taps, causal_span, anticausal_span)
        frame = le_equalize(r, design_le_qti(cm, z_bar, noise_variance), la, noise_variance)
    elif kind == "DFE":
        lf, ld = _dfe_spans(taps, anticausal_span, feedback_span)
        cm = build_channel_matrix(taps, 0, lf, ld)
        frame = dfe_equalize(r, design_dfe_qti(cm, z_bar, noise_variance), la,
                             noise_variance, error_aware=False)
    else:
        raise ValueError(f"output_snr supports LE and DFE, not {kind!r}")
    return float(frame.beta[mid] ** 2 / frame.sigma2[mid])


def _capacity_integrand(tau, snr):
    llr = 2.0 * snr + 2.0 * tau * np.sqrt(snr)
    return np.exp(-0.5 * tau * tau) / np.sqrt(2.0 * np.pi) * np.logaddexp(0.0, -llr) / _LN2


def capacity_gap(snr: float) -> float:
    """``1 - binary_awgn_capacity(snr)`` evaluated to relative precision.

    The gap falls below the spacing of doubles near 1 well before
    ``snr = 100``, so it is integrated on its own.  The integrand changes
    shape around ``tau = -sqrt(snr)`` and ``-2 sqrt(snr)``; those points
    split the real line for the adaptive quadrature.
    """
    snr = float(snr)
    if snr < 0 or not np.isfinite(snr):
        raise ValueError("snr must be a finite nonnegative number")
    root = np.sqrt(snr)
    edges = sorted({-2.0 * root, -root, 0.0})
    bounds = [-np.inf, *edges, np.inf]
    total = 0.0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        part, _ = quad(_capacity_integrand, lo, hi, args=(snr,),
                       epsabs=0.0, epsrel=1e-11, limit=200)
        total += part
    return float(min(1.0, max(0.0, total)))


def binary_awgn_capacity(snr: float) -> float:
    """Symmetric information rate of BPSK over AWGN at linear ``snr``."""
    return 1.0 - capacity_gap(snr)


def estimate_mutual_information(llr, truth) -> float:
    """Time average of ``1 - log2(1 + exp(-x L))`` for symbols ``x`` in +-1."""
    llr = clip_llr(llr)
    x = np.asarray(truth, dtype=np.float64)
    if llr.shape != x.shape:
        raise ValueError(f"length mismatch: {llr.shape} vs {x.shape}")
    if llr.size == 0:
        raise ValueError("empty sequence")
    return float(1.0 - np.mean(np.logaddexp2(0.0, -x * llr / _LN2)))


def exit_trajectory(record, truth, interleaver=None) -> list[ExitPoint]:
    """EXIT points of every stage of a record.

    ``truth`` are the transmitted +-1 symbols.  Each stage contributes an
    equalizer point (decoder feedback in, equalizer output out) and, for
    coded records, a decoder point (equalizer output in, decoder extrinsic
    out); the decoder side is compared against the deinterleaved symbols.
    """
    truth = np.asarray(truth, dtype=np.float64)
    coded_truth = None if interleaver is None else interleaver.deinterleave(truth)
    points = []
    for st in record.stages:
        mi_eq_in = estimate_mutual_information(st.eq_apriori, truth)
        mi_eq_out = estimate_mutual_information(st.eq_extrinsic, truth)
        points.append(ExitPoint(st.index, mi_eq_in, mi_eq_out, "equalizer"))
        if st.dec_extrinsic is not None and coded_truth is not None:
            mi_dec = estimate_mutual_information(st.dec_extrinsic, coded_truth)
            points.append(ExitPoint(st.index, mi_eq_out, mi_dec, "decoder"))
    return points


def average_trajectories(trajectories) -> list[ExitPoint]:
    """Average several equal-shape trajectories point by point."""
    trajectories = [list(t) for t in trajectories]
    if not trajectories:
        raise ValueError("no trajectories to average")
    shape = [(p.iteration, p.module) for p in trajectories[0]]
    for t in trajectories[1:]:
        if [(p.iteration, p.module) for p in t] != shape:
            raise ValueError("trajectories differ in shape")
    mi_in = np.mean([[p.mi_in for p in t] for t in trajectories], axis=0)
    mi_out = np.mean([[p.mi_out for p in t] for t in trajectories], axis=0)
    return [ExitPoint(it, float(a), float(b), mod)
            for (it, mod), a, b in zip(shape, mi_in, mi_out)]


def iterations_to_reach(points, target: float, module: str = "equalizer") -> Optional[int]:
    """First iteration whose ``module`` output MI reaches ``target``, or None."""
    for p in points:
        if p.module == module and p.mi_out >= target:
            return p.iteration
    return None
