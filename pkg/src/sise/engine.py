"""
Self-iterating soft equalization and the turbo schedules built on it.

A SISE couples one main SISO equalizer with one or more branch equalizers
that see the same received samples.  Extrinsic LLRs crossing between them
are scaled by ``(1 - rho) / (1 + rho)`` to undo their correlation.

Schedules
---------
``uncoded``  main/branch self-iterations without a decoder.
``SISE1``    per outer iteration: main, branches, main, then decoder.
``SISE2``    per outer iteration: main, then branches and decoder in parallel.
``single``   conventional equalizer/decoder turbo loop.

Every coded run performs ``outer_iterations + 1`` decoder passes: pass 0
decodes the main equalizer's output with no feedback at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .channel import CATALOG_SPANS
from .mmse import (
    bidfe_equalize,
    build_channel_matrix,
    design_dfe,
    design_le,
    dfe_equalize,
    le_equalize,
)
from .soft_info import clip_llr, correlation_scale, estimate_correlation
from .trellis import Interleaver, bcjr_decode, bcjr_equalize

__all__ = [
    "KINDS",
    "SCHEDULES",
    "Equalizer",
    "EqualizerOutput",
    "EqualizerSpec",
    "IterationRecord",
    "SiseConfig",
    "StageRecord",
    "bad_baseline",
    "run_turbo",
    "schedule_cost",
    "single_turbo",
    "sise1_turbo",
    "sise2_turbo",
    "sise_uncoded",
]

KINDS = ("LE", "DFE", "BIDFE", "MAP")
SCHEDULES = ("uncoded", "SISE1", "SISE2", "single")


@dataclass(frozen=True)
class EqualizerSpec:
    """One constituent equalizer.

    For the LE ``causal_span``/``anticausal_span`` are ``L_c``/``L_f``; for
    the DFE and BiDFE ``anticausal_span`` is the feedforward span ``L_f``
    and ``feedback_span`` is ``L_d`` (defaults to the channel memory).
    ``error_aware=False`` gives the classical DFE LLR mapping.
    """

    kind: str
    mode: str = "QTI"
    causal_span: int = 0
    anticausal_span: int = 0
    feedback_span: Optional[int] = None
    window: int = 15
    error_aware: bool = True

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in KINDS:
            raise ValueError(f"unknown equalizer kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        mode = self.mode.upper()
        if mode not in ("TV", "QTI", "TI"):
            raise ValueError(f"unknown filter mode {self.mode!r}")
        object.__setattr__(self, "mode", mode)
        if kind in ("DFE", "BIDFE") and self.causal_span:
            raise ValueError("DFE spans are anticausal_span and feedback_span")

    @classmethod
    def for_channel(cls, kind: str, mode: str, channel_name: str, **kw) -> "EqualizerSpec":
        """Spec with the cataloged spans for ``h1`` ... ``h4``."""
        kind = kind.upper()
        spans = CATALOG_SPANS[channel_name]
        if kind == "LE":
            lc, lf = spans["le"]
            return cls(kind, mode, lc, lf, **kw)
        if kind in ("DFE", "BIDFE"):
            lf, ld = spans["dfe"]
            return cls(kind, mode, 0, lf, ld, **kw)
        return cls(kind, mode, **kw)

    @property
    def label(self) -> str:
        return "MAP" if self.kind == "MAP" else f"{self.mode}-{self.kind.replace('BIDFE', 'BiDFE')}"


@dataclass
class EqualizerOutput:
    llr: np.ndarray
    hard: np.ndarray


class Equalizer:
    """An :class:`EqualizerSpec` bound to the receiver's channel knowledge.

    TI filters depend only on the channel and noise variance, so they are
    designed once here; QTI and TV taps are redesigned on every call.
    """

    def __init__(self, spec: EqualizerSpec, taps, noise_variance: float):
        self.spec = spec
        self.taps = np.asarray(taps, dtype=np.float64)
        self.noise_variance = float(noise_variance)
        lh = self.taps.size - 1
        self._cm = self._cm_rev = None
        self._ti = None
        if spec.kind == "LE":
            self._cm = build_channel_matrix(self.taps, spec.causal_span, spec.anticausal_span)
        elif spec.kind in ("DFE", "BIDFE"):
            ld = lh if spec.feedback_span is None else spec.feedback_span
            self._cm = build_channel_matrix(self.taps, 0, spec.anticausal_span, ld)
            if spec.kind == "BIDFE":
                self._cm_rev = build_channel_matrix(self.taps[::-1], 0, spec.anticausal_span, ld)
        if spec.mode == "TI" and spec.kind != "MAP":
            empty = np.zeros(0)
            if spec.kind == "LE":
                self._ti = design_le(self._cm, "TI", empty, self.noise_variance)
            elif spec.kind == "DFE":
                self._ti = design_dfe(self._cm, "TI", empty, self.noise_variance)
            else:
                self._ti = (
                    design_dfe(self._cm, "TI", empty, self.noise_variance),
                    design_dfe(self._cm_rev, "TI", empty, self.noise_variance),
                )

    def run(self, r, llr_apriori) -> EqualizerOutput:
        spec = self.spec
        la = clip_llr(llr_apriori)
        n0 = self.noise_variance
        if spec.kind == "MAP":
            ext = bcjr_equalize(r, self.taps, n0, la)
            return EqualizerOutput(ext, np.where(ext + la >= 0, 1.0, -1.0))
        if spec.kind == "LE":
            f = self._ti if self._ti is not None else design_le(self._cm, spec.mode, la, n0)
            frame = le_equalize(r, f, la, n0)
            return EqualizerOutput(frame.llr, np.where(frame.llr + la >= 0, 1.0, -1.0))
        if spec.kind == "DFE":
            f = self._ti if self._ti is not None else design_dfe(self._cm, spec.mode, la, n0)
            frame = dfe_equalize(r, f, la, n0, spec.error_aware)
            return EqualizerOutput(frame.llr, frame.hard)
        filters = self._ti if self._ti is not None else (
            design_dfe(self._cm, spec.mode, la, n0),
            design_dfe(self._cm_rev, spec.mode, la[::-1], n0),
        )
        res = bidfe_equalize(
            r, self.taps, la, n0, spec.anticausal_span, self._cm.feedback_span,
            spec.mode, spec.window, spec.error_aware, filters,
        )
        return EqualizerOutput(res.llr, res.hard)


@dataclass(frozen=True)
class SiseConfig:
    """Main equalizer, branch equalizers and schedule.

    ``rho_override`` replaces every estimated correlation coefficient on the
    main/branch interfaces (diagnostics only).
    """

    main: EqualizerSpec
    branches: tuple = ()
    self_iterations: int = 2
    schedule: str = "uncoded"
    rho_override: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.self_iterations < 0:
            raise ValueError("self_iterations must be nonnegative")
        if self.branches and any(b.kind == "MAP" for b in (self.main, *self.branches)):
            raise ValueError("the MAP equalizer is a baseline, not a SISE constituent")
        if self.rho_override is not None and not 0.0 <= self.rho_override <= 1.0:
            raise ValueError("rho_override must lie in [0, 1]")

    @property
    def label(self) -> str:
        if not self.branches or self.schedule == "single":
            return self.main.label
        inner = ", ".join([self.main.label, *(b.label for b in self.branches)])
        name = "SISE" if self.schedule == "uncoded" else self.schedule.replace("SISE", "SISE ")
        return f"{name} ({inner})"


@dataclass
class StageRecord:
    """Snapshot of one stage (self-iteration or outer pass).

    Symbol-domain arrays are in transmission order; ``dec_extrinsic`` is in
    coded-bit order.  ``eq_apriori`` is what the equalizer block received
    from outside (decoder feedback; zeros when uncoded) and ``main_apriori``
    what the main equalizer finally used after merging branch feedback.
    ``cost`` counts equalizer and decoder invocations.
    """

    index: int
    eq_apriori: np.ndarray
    eq_extrinsic: np.ndarray
    main_apriori: Optional[np.ndarray] = None
    dec_extrinsic: Optional[np.ndarray] = None
    message_llr: Optional[np.ndarray] = None
    hard: Optional[np.ndarray] = None
    rho: dict = field(default_factory=dict)
    alpha: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    latency: int = 0


@dataclass
class IterationRecord:
    schedule: str
    stages: list = field(default_factory=list)

    def append(self, stage: StageRecord) -> None:
        if stage.index != len(self.stages):
            raise ValueError("stages are appended in order")
        self.stages.append(stage)

    def total_cost(self) -> dict:
        out = {"main": 0, "branch": 0, "decoder": 0}
        for s in self.stages:
            for k, v in s.cost.items():
                out[k] += v
        return out

    @property
    def total_latency(self) -> int:
        return sum(s.latency for s in self.stages)


def schedule_cost(schedule: str) -> tuple[dict, int]:
    """Per outer iteration ``({main, branch, decoder} counts, latency in T)``."""
    table = {
        "single": ({"main": 1, "branch": 0, "decoder": 1}, 2),
        "SISE1": ({"main": 2, "branch": 1, "decoder": 1}, 4),
        "SISE2": ({"main": 1, "branch": 1, "decoder": 1}, 2),
    }
    try:
        cost, latency = table[schedule]
    except KeyError:
        raise ValueError(f"no cost model for schedule {schedule!r}") from None
    return dict(cost), latency


# ---------------------------------------------------------------------------
# SISE building blocks
# ---------------------------------------------------------------------------


class _Sise:
    """State shared by the main/branch exchange of every schedule."""

    def __init__(self, cfg: SiseConfig, taps, noise_variance):
        self.cfg = cfg
        self.main = Equalizer(cfg.main, taps, noise_variance)
        self.branches = [Equalizer(b, taps, noise_variance) for b in cfg.branches]
        # alpha_i * L_a,M^(i) from the previous cycle, per branch
        self.parts = None

    def _rho(self, a, b) -> float:
        if self.cfg.rho_override is not None:
            return self.cfg.rho_override
        return estimate_correlation(a, b).rho

    def branch_feedback(self, r, le_main, rho_log, alpha_log):
        """Steps 2-5 of a self-iteration; returns the combined main a priori."""
        n = le_main.size
        if self.parts is None:
            self.parts = [np.zeros(n) for _ in self.branches]
        apriori_main = []
        for i, (eq, part) in enumerate(zip(self.branches, self.parts)):
            rho_m = self._rho(le_main, part)
            a_m = correlation_scale(rho_m)
            la_b = a_m * le_main
            le_b = eq.run(r, la_b).llr
            rho_b = self._rho(la_b, le_b)
            a_b = correlation_scale(rho_b)
            apriori_main.append(a_b * le_b)
            rho_log[f"M{i}"], rho_log[f"B{i}"] = rho_m, rho_b
            alpha_log[f"M{i}"], alpha_log[f"B{i}"] = a_m, a_b
        combined, weights = self._combine(apriori_main, rho_log)
        self.parts = [w * p for w, p in zip(weights, apriori_main)]
        return combined

    def _combine(self, parts, rho_log):
        # pairwise (l1 + l2) / (1 + xi), tracking each part's net weight
        acc = clip_llr(parts[0])
        weights = [1.0]
        for j, p in enumerate(parts[1:], start=1):
            p = clip_llr(p)
            xi = self._rho(acc, p)
            rho_log[f"xi{j}"] = xi
            acc = (acc + p) / (1.0 + xi)
            weights = [w / (1.0 + xi) for w in weights] + [1.0 / (1.0 + xi)]
        return acc, weights


def sise_uncoded(r, taps, noise_variance, cfg: SiseConfig, n_sym: Optional[int] = None):
    """Self-iterating equalization of one uncoded packet.

    Returns ``(hard, llr, record)``: ``hard`` are +-1 symbol decisions of
    the final main equalizer pass and ``llr`` its extrinsic LLRs.
    """
    taps = np.asarray(taps, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if n_sym is None:
        n_sym = r.size - (taps.size - 1)
    sise = _Sise(cfg, taps, noise_variance)
    record = IterationRecord("uncoded")
    la_main = np.zeros(n_sym)
    for it in range(cfg.self_iterations if sise.branches else 0):
        out = sise.main.run(r, la_main)
        le_main = out.llr
        stage = StageRecord(it, np.zeros(n_sym), le_main, la_main, hard=out.hard,
                            cost={"main": 1, "branch": 1, "decoder": 0})
        la_main = sise.branch_feedback(r, le_main, stage.rho, stage.alpha)
        stage.latency = 2
        record.append(stage)
    out = sise.main.run(r, la_main)
    record.append(
        StageRecord(len(record.stages), np.zeros(n_sym), out.llr, la_main, hard=out.hard,
                    cost={"main": 1, "branch": 0, "decoder": 0}, latency=1)
    )
    return out.hard, out.llr, record


def bad_baseline(r, taps, noise_variance, anticausal_span, feedback_span=None, window=15):
    """Two classical TI-DFEs in opposite directions with arbitration."""
    res = bidfe_equalize(
        r, taps, np.zeros(np.asarray(r).size - (len(taps) - 1)), noise_variance,
        anticausal_span, feedback_span, mode="TI", window=window, error_aware=False,
    )
    return res.hard


# ---------------------------------------------------------------------------
# Turbo schedules
# ---------------------------------------------------------------------------


def _decode(le_sym, interleaver: Interleaver, n_msg):
    ext, msg = bcjr_decode(interleaver.deinterleave(le_sym), n_msg)
    return ext, msg, interleaver.interleave(ext)


def run_turbo(r, taps, noise_variance, cfg: SiseConfig, interleaver: Interleaver,
              n_msg: int, outer_iterations: int):
    """Run one coded packet under ``cfg.schedule``.

    ``r`` observes ``interleave(rsc_encode(msg))`` mapped to +-1.  Returns
    ``(message_bits, record)``; ``record.stages[k].message_llr`` holds the
    decoder posterior after pass ``k``.
    """
    if outer_iterations < 0:
        raise ValueError("outer_iterations must be nonnegative")
    schedule = cfg.schedule
    if schedule == "uncoded":
        raise ValueError("use sise_uncoded for the uncoded schedule")
    r = np.asarray(r, dtype=np.float64)
    n_sym = len(interleaver)
    sise = _Sise(cfg, taps, noise_variance)
    if not sise.branches:
        schedule = "single"
    record = IterationRecord(schedule)
    dec_fb = np.zeros(n_sym)
    branch_apriori = None

    for k in range(outer_iterations + 1):
        rho, alpha = {}, {}
        fb_in = dec_fb
        if schedule == "single" or k == 0:
            la = dec_fb
            le = sise.main.run(r, la).llr
            cost = {"main": 1, "branch": 0, "decoder": 1}
            latency = 2
        elif schedule == "SISE1":
            la0 = dec_fb if branch_apriori is None else _merge(dec_fb, branch_apriori, rho)
            le0 = sise.main.run(r, la0).llr
            branch_apriori = sise.branch_feedback(r, le0, rho, alpha)
            la = _merge(dec_fb, branch_apriori, rho)
            le = sise.main.run(r, la).llr
            cost = {"main": 2, "branch": 1, "decoder": 1}
            latency = 4
        else:  # SISE2, branch output was produced alongside the previous decode
            la = _merge(dec_fb, branch_apriori, rho)
            le = sise.main.run(r, la).llr
            cost = {"main": 1, "branch": 1, "decoder": 1}
            latency = 2
        dec_ext, msg_llr, dec_fb = _decode(le, interleaver, n_msg)
        if schedule == "SISE2" and k < outer_iterations:
            branch_apriori = sise.branch_feedback(r, le, rho, alpha)
        record.append(StageRecord(
            k, fb_in, le, la, dec_ext, msg_llr, (msg_llr < 0).astype(np.int8),
            rho, alpha, cost, latency,
        ))
    return record.stages[-1].hard, record


def _merge(dec_fb, branch_apriori, rho_log):
    if branch_apriori is None:
        return dec_fb
    xi = estimate_correlation(dec_fb, branch_apriori).rho
    rho_log["xi_dec"] = xi
    return (clip_llr(dec_fb) + clip_llr(branch_apriori)) / (1.0 + xi)


def _with_schedule(cfg: SiseConfig, schedule: str) -> SiseConfig:
    return cfg if cfg.schedule == schedule else replace(cfg, schedule=schedule)


def sise1_turbo(r, taps, noise_variance, cfg, interleaver, n_msg, outer_iterations):
    return run_turbo(r, taps, noise_variance, _with_schedule(cfg, "SISE1"),
                     interleaver, n_msg, outer_iterations)


def sise2_turbo(r, taps, noise_variance, cfg, interleaver, n_msg, outer_iterations):
    return run_turbo(r, taps, noise_variance, _with_schedule(cfg, "SISE2"),
                     interleaver, n_msg, outer_iterations)


def single_turbo(r, taps, noise_variance, main: EqualizerSpec, interleaver, n_msg,
                 outer_iterations):
    cfg = SiseConfig(main, (), 0, "single")
    return run_turbo(r, taps, noise_variance, cfg, interleaver, n_msg, outer_iterations)
