"""
Seeded Monte Carlo experiments: BER sweeps, EXIT trajectories, cost tables.

Configuration is an INI file with one ``[experiment]`` section and one
``[scheme NAME]`` section per receiver being compared.  Every scheme sees
the same packets: packet ``k`` draws its data, noise and channel-mismatch
streams from ``SeedSequence(seed, spawn_key=(k,))``, and the interleaver is
drawn once per experiment.

CSV columns (BER)::

    scheme, snr_db, snr_convention, iteration, packets, bits, errors, ber, ci95

CSV columns (EXIT)::

    scheme, snr_db, snr_convention, iteration, module, blocks, mi_in, mi_out

Both start with a ``#`` comment line carrying the config hash and root seed.
Reals are written with 17 significant digits.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .analysis import average_trajectories, exit_trajectory
from .channel import (
    CATALOG_SPANS,
    ChannelModel,
    apply_channel,
    bpsk_map,
    mismatch_perturb,
    normalize_channel,
    standard_channel,
)
from .engine import EqualizerSpec, SiseConfig, bad_baseline, run_turbo, schedule_cost, sise_uncoded
from .trellis import Interleaver, RscCode, rsc_encode

__all__ = [
    "BerPoint",
    "BerResult",
    "ExperimentConfig",
    "Scheme",
    "describe_cost",
    "equalizer_macs",
    "load_config",
    "noise_variance_for",
    "parse_config",
    "run_ber_sweep",
    "run_exit",
    "simulate_packet",
]

CODE_RATE = 0.5
# receiver noise variance assumed for noiseless (snr_db = inf) runs
RECEIVER_NOISE_FLOOR = 1e-6
_INTERLEAVER_KEY = 2**31
SCHEDULE_NAMES = ("single", "SISE1", "SISE2", "uncoded", "bad")


@dataclass(frozen=True)
class Scheme:
    name: str
    schedule: str
    cfg: Optional[SiseConfig]

    @property
    def label(self) -> str:
        return "BAD" if self.schedule == "bad" else self.cfg.label


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelModel
    schemes: tuple
    snr_db: tuple
    coded: bool = True
    mismatch: bool = False
    snr_convention: str = "EsN0"
    packets: int = 100
    min_errors: int = 100
    seed: int = 0
    message_bits: int = 2048
    packet_symbols: int = 2048
    outer_iterations: int = 20
    blocks: int = 100
    dfe_spans: tuple = (20, 6)
    output: Optional[str] = None
    source: dict = field(default_factory=dict, compare=False)

    @property
    def n_symbols(self) -> int:
        if self.coded:
            return RscCode().coded_length(self.message_bits)
        return self.packet_symbols

    @property
    def bits_per_packet(self) -> int:
        return self.message_bits if self.coded else self.packet_symbols

    def config_hash(self) -> str:
        blob = json.dumps(self.source, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _ints(text, key, n=None):
    try:
        vals = tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ValueError(f"{key}: expected integers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ValueError(f"{key}: expected {n} integers, got {text!r}")
    return vals


def _floats(text, key):
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ValueError(f"{key}: expected numbers, got {text!r}") from None
    if not vals:
        raise ValueError(f"{key}: must not be empty")
    return vals


def _parse_equalizer(text, le_spans, dfe_spans, key) -> EqualizerSpec:
    token = text.strip().upper()
    if token == "MAP":
        return EqualizerSpec("MAP")
    mode, _, kind = token.partition("-")
    if kind not in ("LE", "DFE", "BIDFE") or mode not in ("TV", "QTI", "TI"):
        raise ValueError(f"{key}: expected MODE-KIND such as QTI-LE or MAP, got {text!r}")
    if kind == "LE":
        return EqualizerSpec(kind, mode, le_spans[0], le_spans[1])
    return EqualizerSpec(kind, mode, 0, dfe_spans[0], dfe_spans[1])


def parse_config(text: str, seed: Optional[int] = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text.

    ``seed`` overrides the file's root seed.  Invalid fields raise
    ``ValueError`` naming the offending key.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read_string(text)
    if not cp.has_section("experiment"):
        raise ValueError("missing [experiment] section")
    ex = cp["experiment"]
    known = {
        "channel", "taps", "coded", "mismatch", "modulation", "snr_db", "snr_convention",
        "packets", "min_errors", "seed", "message_bits", "packet_symbols",
        "outer_iterations", "blocks", "le_spans", "dfe_spans", "output",
    }
    for key in ex:
        if key not in known:
            raise ValueError(f"experiment.{key}: unknown field")

    if "taps" in ex:
        taps = normalize_channel(_floats(ex["taps"], "experiment.taps"))
        channel = ChannelModel(taps, 0.0, "custom")
    else:
        name = ex.get("channel", "")
        try:
            channel = standard_channel(name)
        except ValueError as err:
            raise ValueError(f"experiment.channel: {err}") from None
    spans = CATALOG_SPANS.get(channel.name, {})
    le_spans = _ints(ex["le_spans"], "experiment.le_spans", 2) if "le_spans" in ex else spans.get("le")
    dfe_spans = _ints(ex["dfe_spans"], "experiment.dfe_spans", 2) if "dfe_spans" in ex else spans.get("dfe")
    lh = channel.memory
    le_spans = le_spans or (2 * lh, 2 * lh)
    dfe_spans = dfe_spans or (3 * lh, lh)

    if ex.get("modulation", "bpsk").strip().lower() != "bpsk":
        raise ValueError("experiment.modulation: only bpsk is supported")

    def get_bool(key, default):
        try:
            return ex.getboolean(key, default)
        except ValueError:
            raise ValueError(f"experiment.{key}: expected a boolean") from None

    def get_int(key, default, minimum):
        try:
            v = ex.getint(key, default)
        except ValueError:
            raise ValueError(f"experiment.{key}: expected an integer") from None
        if v < minimum:
            raise ValueError(f"experiment.{key}: must be >= {minimum}")
        return v

    coded = get_bool("coded", True)
    convention = ex.get("snr_convention", "EsN0").strip()
    if convention not in ("EsN0", "EbN0"):
        raise ValueError("experiment.snr_convention: expected EsN0 or EbN0")
    snr_db = _floats(ex.get("snr_db", ""), "experiment.snr_db")

    schemes = []
    for section in cp.sections():
        if section == "experiment":
            continue
        head, _, name = section.partition(" ")
        if head != "scheme" or not name.strip():
            raise ValueError(f"[{section}]: expected [experiment] or [scheme NAME]")
        sc = cp[section]
        prefix = f"{section}."
        schedule = sc.get("schedule", "single").strip()
        if schedule not in SCHEDULE_NAMES:
            raise ValueError(f"{prefix}schedule: expected one of {', '.join(SCHEDULE_NAMES)}")
        if schedule == "bad":
            if coded:
                raise ValueError(f"{prefix}schedule: bad is an uncoded baseline")
            schemes.append(Scheme(name.strip(), schedule, None))
            continue
        if (schedule == "uncoded") == coded:
            raise ValueError(f"{prefix}schedule: {schedule!r} does not match coded={coded}")
        main = _parse_equalizer(sc.get("main", ""), le_spans, dfe_spans, prefix + "main")
        branches = tuple(
            _parse_equalizer(b, le_spans, dfe_spans, prefix + "branches")
            for b in sc.get("branches", "").replace(",", " ").split()
        )
        try:
            self_it = sc.getint("self_iterations", 2 if schedule == "uncoded" else 1)
        except ValueError:
            raise ValueError(f"{prefix}self_iterations: expected an integer") from None
        try:
            cfg = SiseConfig(main, branches, self_it, schedule)
        except ValueError as err:
            raise ValueError(f"{prefix}: {err}") from None
        schemes.append(Scheme(name.strip(), schedule, cfg))
    if not schemes:
        raise ValueError("no [scheme NAME] sections")

    source = {s: dict(cp[s]) for s in cp.sections()}
    root = get_int("seed", 0, 0) if seed is None else int(seed)
    source["experiment"]["seed"] = str(root)
    return ExperimentConfig(
        channel=channel,
        schemes=tuple(schemes),
        snr_db=snr_db,
        coded=coded,
        mismatch=get_bool("mismatch", False),
        snr_convention=convention,
        packets=get_int("packets", 100, 1),
        min_errors=get_int("min_errors", 100, 1),
        seed=root,
        message_bits=get_int("message_bits", 2048, 1),
        packet_symbols=get_int("packet_symbols", 2048, 1),
        outer_iterations=get_int("outer_iterations", 20, 0),
        blocks=get_int("blocks", 100, 1),
        dfe_spans=tuple(dfe_spans),
        output=ex.get("output"),
        source=source,
    )


def load_config(path, seed=None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed)


def noise_variance_for(snr_db: float, convention: str = "EsN0", rate: float = CODE_RATE) -> float:
    """Per-sample noise variance for a unit-energy channel."""
    snr = 10.0 ** (snr_db / 10.0)
    if convention == "EsN0":
        return 1.0 / snr
    if convention == "EbN0":
        return 1.0 / (rate * snr)
    raise ValueError(f"unknown SNR convention {convention!r}")


# ---------------------------------------------------------------------------
# Packet simulation
# ---------------------------------------------------------------------------


def _interleaver(cfg: ExperimentConfig) -> Interleaver:
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(_INTERLEAVER_KEY,))
    return Interleaver.random(cfg.n_symbols, np.random.default_rng(ss))


def simulate_packet(cfg: ExperimentConfig, scheme: Scheme, snr_db: float, index: int,
                    interleaver: Optional[Interleaver] = None):
    """Run one packet; returns ``(truth_bits, record_or_None, hard_per_stage)``.

    ``hard_per_stage`` lists the bit decisions after each stage (message bits
    for coded runs, symbols mapped back to bits for uncoded ones).
    """
    data_ss, noise_ss, mis_ss = np.random.SeedSequence(cfg.seed, spawn_key=(index,)).spawn(3)
    data_rng = np.random.default_rng(data_ss)
    noise_free = math.isinf(snr_db) and snr_db > 0
    n0 = 0.0 if noise_free else noise_variance_for(
        snr_db, cfg.snr_convention if cfg.coded else "EsN0"
    )
    rx_n0 = RECEIVER_NOISE_FLOOR if noise_free else n0
    snr_linear = math.inf if noise_free else 10.0 ** (snr_db / 10.0)
    taps_rx = cfg.channel.taps
    if cfg.mismatch:
        taps_rx = mismatch_perturb(cfg.channel.taps, snr_linear, np.random.default_rng(mis_ss))
    channel = cfg.channel.with_noise(n0)

    if cfg.coded:
        il = interleaver if interleaver is not None else _interleaver(cfg)
        msg = data_rng.integers(0, 2, cfg.message_bits).astype(np.int8)
        x = bpsk_map(il.interleave(rsc_encode(msg)))
        r = apply_channel(x, channel, np.random.default_rng(noise_ss))
        _, record = run_turbo(r, taps_rx, rx_n0, scheme.cfg, il, cfg.message_bits,
                              cfg.outer_iterations)
        return msg, record, [st.hard for st in record.stages]

    bits = data_rng.integers(0, 2, cfg.packet_symbols).astype(np.int8)
    x = bpsk_map(bits)
    r = apply_channel(x, channel, np.random.default_rng(noise_ss))
    if scheme.schedule == "bad":
        lf, ld = cfg.dfe_spans
        hard = bad_baseline(r, taps_rx, rx_n0, lf, ld)
        return bits, None, [(hard < 0).astype(np.int8)]
    _, _, record = sise_uncoded(r, taps_rx, rx_n0, scheme.cfg, cfg.packet_symbols)
    return bits, record, [(st.hard < 0).astype(np.int8) for st in record.stages]


def _packet_errors(cfg, scheme, snr_db, index, interleaver):
    truth, _, hards = simulate_packet(cfg, scheme, snr_db, index, interleaver)
    return np.array([int(np.count_nonzero(h != truth)) for h in hards], dtype=np.int64)


def _map_ordered(fn, indices, threads):
    if threads <= 1:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, indices))


# ---------------------------------------------------------------------------
# BER sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BerPoint:
    scheme: str
    snr_db: float
    iteration: int
    packets: int
    bits: int
    errors: int

    @property
    def ber(self) -> float:
        return self.errors / self.bits

    @property
    def ci95(self) -> float:
        """Normal-approximation 95% half-width."""
        p = self.ber
        return 1.96 * math.sqrt(p * (1.0 - p) / self.bits)

    @property
    def interval(self) -> tuple[float, float]:
        return self.ber - self.ci95, self.ber + self.ci95


@dataclass
class BerResult:
    config: ExperimentConfig
    points: list

    def final(self, scheme: str, snr_db: float) -> BerPoint:
        """Last-iteration point of a scheme at an SNR."""
        pts = [p for p in self.points if p.scheme == scheme and p.snr_db == snr_db]
        if not pts:
            raise KeyError((scheme, snr_db))
        return max(pts, key=lambda p: p.iteration)

    def to_csv(self) -> str:
        cfg = self.config
        rows = [(p.scheme, p.snr_db, _convention(cfg), p.iteration, p.packets, p.bits,
                 p.errors, p.ber, p.ci95) for p in self.points]
        return _csv(cfg, ["scheme", "snr_db", "snr_convention", "iteration", "packets",
                          "bits", "errors", "ber", "ci95"], rows)


def _convention(cfg):
    return cfg.snr_convention if cfg.coded else "EsN0"


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _csv(cfg, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={cfg.config_hash()} root_seed={cfg.seed} "
              f"snr_convention={_convention(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    """Write UTF-8 text with LF line endings, naming the path on failure."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as err:
        raise OSError(f"cannot write output {path!r}: {err.strerror}") from None


def run_ber_sweep(cfg: ExperimentConfig, threads: int = 1, out=None,
                  schemes=None) -> BerResult:
    """Simulate every scheme at every SNR point.

    An SNR point stops at the first packet where the final-iteration error
    count reaches ``min_errors``, or after ``packets`` packets.  Packets are
    processed in chunks but the cutoff is decided in packet order, so the
    result does not depend on ``threads``.
    """
    if out is not None:
        _check_writable(out)
    interleaver = _interleaver(cfg) if cfg.coded else None
    chunk = max(1, threads) * 4
    points = []
    for scheme in cfg.schemes:
        if schemes is not None and scheme.name not in schemes:
            continue
        for snr_db in cfg.snr_db:
            total = None
            used = 0
            done = False
            while used < cfg.packets and not done:
                idx = range(used, min(used + chunk, cfg.packets))
                errs = _map_ordered(
                    lambda i: _packet_errors(cfg, scheme, snr_db, i, interleaver), idx, threads
                )
                for e in errs:
                    total = e.copy() if total is None else total + e
                    used += 1
                    if total[-1] >= cfg.min_errors:
                        done = True
                        break
            bits = used * cfg.bits_per_packet
            for it, e in enumerate(total):
                points.append(BerPoint(scheme.name, snr_db, it, used, bits, int(e)))
    result = BerResult(cfg, points)
    if out is not None:
        write_text(out, result.to_csv())
    return result


def _check_writable(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent) or not os.access(parent, os.W_OK):
        raise OSError(f"cannot write output {path!r}: directory not writable")


# ---------------------------------------------------------------------------
# EXIT trajectories
# ---------------------------------------------------------------------------


def run_exit(cfg: ExperimentConfig, threads: int = 1, out=None, schemes=None) -> dict:
    """Average EXIT trajectories over ``cfg.blocks`` packets per scheme and SNR.

    Returns ``{(scheme, snr_db): [ExitPoint, ...]}`` and optionally writes CSV.
    """
    if not cfg.coded:
        raise ValueError("experiment.coded: EXIT trajectories need a coded experiment")
    if out is not None:
        _check_writable(out)
    interleaver = _interleaver(cfg)
    truth_cache = {}
    results = {}

    def one(scheme, snr_db, i):
        _, record, _ = simulate_packet(cfg, scheme, snr_db, i, interleaver)
        if i not in truth_cache:
            truth_cache[i] = _truth_symbols(cfg, i, interleaver)
        return exit_trajectory(record, truth_cache[i], interleaver)

    for scheme in cfg.schemes:
        if schemes is not None and scheme.name not in schemes:
            continue
        for snr_db in cfg.snr_db:
            trajs = _map_ordered(lambda i: one(scheme, snr_db, i), range(cfg.blocks), threads)
            results[(scheme.name, snr_db)] = average_trajectories(trajs)
    if out is not None:
        rows = [
            (name, snr, _convention(cfg), p.iteration, p.module, cfg.blocks, p.mi_in, p.mi_out)
            for (name, snr), pts in results.items() for p in pts
        ]
        write_text(out, _csv(cfg, ["scheme", "snr_db", "snr_convention", "iteration",
                                   "module", "blocks", "mi_in", "mi_out"], rows))
    return results


def _truth_symbols(cfg, index, interleaver):
    data_ss = np.random.SeedSequence(cfg.seed, spawn_key=(index,)).spawn(3)[0]
    msg = np.random.default_rng(data_ss).integers(0, 2, cfg.message_bits).astype(np.int8)
    return bpsk_map(interleaver.interleave(rsc_encode(msg)))


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def equalizer_macs(spec: EqualizerSpec, memory: int, n_sym: int) -> float:
    """Rough multiply-accumulate count per symbol for one equalizer pass.

    Tap design is charged per symbol for TV filters and amortized over the
    packet for QTI filters; TI taps are designed once and cost nothing here.
    """
    if spec.kind == "MAP":
        states = 2 ** memory
        return states * 2 * (memory + 1) + 6 * states
    if spec.kind == "LE":
        n_taps = 1 + spec.causal_span + spec.anticausal_span
        cols = n_taps + memory
        per_sym = 2 * n_taps + 2 * cols
    else:
        ld = memory if spec.feedback_span is None else spec.feedback_span
        n_taps = 1 + spec.anticausal_span
        cols = n_taps + ld
        per_sym = 2 * n_taps + 2 * spec.anticausal_span + 4 * ld
    design = cols * n_taps**2 + n_taps**3 / 3.0
    if spec.mode == "TV":
        per_sym += design
    elif spec.mode == "QTI":
        per_sym += design / max(n_sym, 1)
    if spec.kind == "BIDFE":
        per_sym = 2 * per_sym + 2 * (memory + 1) + 2 * spec.window
    return float(per_sym)


def decoder_macs() -> float:
    # 4 states x 2 branches, forward, backward and two output sums per step,
    # per coded symbol (two coded symbols per trellis step)
    return 4 * 2 * 4 / 2.0


def describe_cost(cfg: Optional[ExperimentConfig] = None) -> list[dict]:
    """Per-outer-iteration cost and latency rows.

    Without a config the three generic schedules are listed symbolically.
    """
    rows = []
    if cfg is None:
        for schedule in ("single", "SISE1", "SISE2"):
            counts, latency = schedule_cost(schedule)
            rows.append({"scheme": schedule, "schedule": schedule, **counts,
                         "latency_T": latency, "expression": _expression(counts)})
        return rows
    memory = cfg.channel.memory
    n_sym = cfg.n_symbols
    for scheme in cfg.schemes:
        if scheme.schedule in ("bad", "uncoded"):
            continue
        schedule = scheme.schedule if scheme.cfg.branches else "single"
        counts, latency = schedule_cost(schedule)
        c_m = equalizer_macs(scheme.cfg.main, memory, n_sym)
        c_b = sum(equalizer_macs(b, memory, n_sym) for b in scheme.cfg.branches)
        c_d = decoder_macs()
        total = counts["main"] * c_m + counts["branch"] * c_b + counts["decoder"] * c_d
        rows.append({
            "scheme": scheme.name, "schedule": schedule, **counts, "latency_T": latency,
            "expression": _expression(counts), "C_M": c_m, "C_B": c_b, "C_D": c_d,
            "macs_per_symbol": total,
        })
    return rows


def _expression(counts) -> str:
    parts = []
    for key, sym in (("main", "C_M"), ("branch", "C_B"), ("decoder", "C_D")):
        k = counts[key]
        if k:
            parts.append(sym if k == 1 else f"{k}{sym}")
    return "+".join(parts)


def cost_csv(rows, cfg: Optional[ExperimentConfig] = None) -> str:
    header = ["scheme", "schedule", "main", "branch", "decoder", "latency_T", "expression",
              "C_M", "C_B", "C_D", "macs_per_symbol"]
    body = [[r.get(h, "") for h in header] for r in rows]
    if cfg is None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in body:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()
    return _csv(cfg, header, body)
