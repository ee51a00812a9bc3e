"""Command line entry point: ``sise {ber,exit,cost,channels}``."""

from __future__ import annotations

import argparse
import csv
import io
import sys

from . import harness
from .analysis import snr_infinity
from .channel import CATALOG_SPANS, channel_names, standard_channel


def _emit(text, out):
    if out:
        harness.write_text(out, text)
    else:
        sys.stdout.write(text)


def _cmd_ber(args):
    cfg = harness.load_config(args.config, args.seed)
    out = args.out or cfg.output
    result = harness.run_ber_sweep(cfg, threads=args.threads)
    _emit(result.to_csv(), out)


def _cmd_exit(args):
    cfg = harness.load_config(args.config, args.seed)
    out = args.out or cfg.output
    if out:
        harness.run_exit(cfg, threads=args.threads, out=out)
    else:
        results = harness.run_exit(cfg, threads=args.threads)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scheme", "snr_db", "iteration", "module", "mi_in", "mi_out"])
        for (name, snr), pts in results.items():
            for p in pts:
                w.writerow([name, snr, p.iteration, p.module,
                            format(p.mi_in, ".17g"), format(p.mi_out, ".17g")])
        sys.stdout.write(buf.getvalue())


def _cmd_cost(args):
    cfg = harness.load_config(args.config, args.seed) if args.config else None
    _emit(harness.cost_csv(harness.describe_cost(cfg), cfg), args.out)


def _cmd_channels(args):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "memory", "le_spans", "dfe_spans", "n0",
                "snr_inf_ti_le", "snr_inf_ti_dfe", "snr_inf_ti_bidfe", "taps"])
    for name in channel_names():
        ch = standard_channel(name)
        (lc, lf), (df, dd) = CATALOG_SPANS[name]["le"], CATALOG_SPANS[name]["dfe"]
        for n0 in args.n0:
            le = snr_infinity("LE", "TI", ch.taps, n0, lc, lf).value
            dfe = snr_infinity("DFE", "TI", ch.taps, n0, 0, df, dd).value
            bi = snr_infinity("BIDFE", "TI", ch.taps, n0, 0, df, dd).value
            w.writerow([name, ch.memory, f"{lc} {lf}", f"{df} {dd}", format(n0, ".17g"),
                        format(le, ".17g"), format(dfe, ".17g"), format(bi, ".17g"),
                        " ".join(format(t, ".17g") for t in ch.taps)])
    _emit(buf.getvalue(), args.out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sise", description="Self-iterating soft equalizer experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="INI experiment file")
        sp.add_argument("--seed", type=int, default=None, help="override the root seed")
        sp.add_argument("--out", default=None, help="CSV output path (default: stdout)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")

    common(sub.add_parser("ber", help="BER sweep"))
    common(sub.add_parser("exit", help="EXIT trajectories"))
    common(sub.add_parser("cost", help="per-iteration cost and latency"), need_config=False)
    ch = sub.add_parser("channels", help="cataloged channels and TI output SNR limits")
    ch.add_argument("--out", default=None)
    ch.add_argument("--n0", type=float, nargs="+", default=[0.1])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"ber": _cmd_ber, "exit": _cmd_exit, "cost": _cmd_cost, "channels": _cmd_channels}
    try:
        handlers[args.command](args)
    except (ValueError, OSError) as err:
        print(f"sise: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
