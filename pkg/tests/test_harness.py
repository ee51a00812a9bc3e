import csv
import io
import math

import numpy as np
import pytest

from sise import cli
from sise.harness import (
    BerPoint,
    describe_cost,
    load_config,
    noise_variance_for,
    parse_config,
    run_ber_sweep,
    run_exit,
    simulate_packet,
)

CODED = """
[experiment]
channel = h2
coded = yes
snr_db = 8
packets = 3
min_errors = 100000
message_bits = 128
outer_iterations = 2
blocks = 2
seed = 5

[scheme le]
schedule = single
main = QTI-LE

[scheme sise2]
schedule = SISE2
main = QTI-DFE
branches = QTI-LE
"""

UNCODED = """
[experiment]
channel = h1
coded = no
snr_db = 6, 9
packets = 4
min_errors = 100000
packet_symbols = 300
seed = 2

[scheme sise]
schedule = uncoded
main = TI-BiDFE
branches = QTI-LE
self_iterations = 2

[scheme bad]
schedule = bad
"""


def _rows(text):
    lines = text.splitlines()
    return lines[0], list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_parse_config_fields():
    cfg = parse_config(CODED)
    assert cfg.channel.name == "h2" and cfg.coded
    assert cfg.snr_db == (8.0,)
    assert [s.name for s in cfg.schemes] == ["le", "sise2"]
    main = cfg.schemes[1].cfg.main
    assert (main.kind, main.mode, main.anticausal_span, main.feedback_span) == ("DFE", "QTI", 20, 6)
    le = cfg.schemes[0].cfg.main
    assert (le.causal_span, le.anticausal_span) == (13, 13)
    assert cfg.n_symbols == 260
    assert parse_config(CODED, seed=9).seed == 9


def test_custom_taps_are_normalized():
    text = CODED.replace("channel = h2", "taps = 3, 4")
    cfg = parse_config(text)
    np.testing.assert_allclose(cfg.channel.taps, [0.6, 0.8])


@pytest.mark.parametrize("old,new,field", [
    ("channel = h2", "channel = h7", "experiment.channel"),
    ("snr_db = 8", "snr_db = eight", "experiment.snr_db"),
    ("packets = 3", "packets = 0", "experiment.packets"),
    ("coded = yes", "coded = maybe", "experiment.coded"),
    ("seed = 5", "seed = 5\ncolour = red", "experiment.colour"),
    ("main = QTI-LE", "main = QTI-XYZ", "scheme le.main"),
    ("schedule = SISE2", "schedule = SISE9", "scheme sise2.schedule"),
    ("schedule = single", "schedule = uncoded", "scheme le.schedule"),
    ("seed = 5", "seed = 5\nsnr_convention = dB", "experiment.snr_convention"),
    ("seed = 5", "seed = 5\nmodulation = qpsk", "experiment.modulation"),
])
def test_config_errors_name_the_field(old, new, field):
    with pytest.raises(ValueError, match=field.replace(".", r"\.")):
        parse_config(CODED.replace(old, new))


def test_config_structure_errors():
    with pytest.raises(ValueError, match="experiment"):
        parse_config("[scheme a]\nmain = QTI-LE\n")
    with pytest.raises(ValueError, match="scheme"):
        parse_config("[experiment]\nchannel = h1\nsnr_db = 1\n")
    with pytest.raises(ValueError, match="MAP"):
        parse_config(CODED.replace("branches = QTI-LE", "branches = MAP"))


def test_noise_variance_conventions():
    assert noise_variance_for(10, "EsN0") == pytest.approx(0.1)
    assert noise_variance_for(10, "EbN0") == pytest.approx(0.2)
    assert noise_variance_for(10, "EbN0", rate=1.0) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        noise_variance_for(10, "SNR")


def test_noiseless_map_packet_has_no_errors():
    text = CODED.replace("snr_db = 8", "snr_db = inf").replace("packets = 3", "packets = 1")
    text = text.replace("main = QTI-LE", "main = MAP")
    cfg = parse_config(text)
    res = run_ber_sweep(cfg, schemes=["le"])
    assert res.final("le", math.inf).errors == 0
    assert res.final("le", math.inf).bits == 128


def test_sweep_is_deterministic_and_thread_invariant():
    cfg = parse_config(UNCODED)
    a = run_ber_sweep(cfg).to_csv()
    b = run_ber_sweep(cfg).to_csv()
    c = run_ber_sweep(cfg, threads=3).to_csv()
    assert a == b == c
    d = run_ber_sweep(parse_config(UNCODED, seed=3)).to_csv()
    assert d != a


def test_sweep_csv_schema():
    cfg = parse_config(UNCODED)
    header, rows = _rows(run_ber_sweep(cfg).to_csv())
    assert header == f"# config_hash={cfg.config_hash()} root_seed=2 snr_convention=EsN0"
    assert list(rows[0]) == ["scheme", "snr_db", "snr_convention", "iteration", "packets",
                             "bits", "errors", "ber", "ci95"]
    # SISE: 3 stages per SNR; BAD: 1
    assert len(rows) == 2 * 3 + 2 * 1
    for row in rows:
        assert int(row["errors"]) / int(row["bits"]) == float(row["ber"])
    assert cfg.config_hash() != parse_config(UNCODED, seed=4).config_hash()


def test_min_errors_stops_early():
    text = UNCODED.replace("min_errors = 100000", "min_errors = 1").replace("snr_db = 6, 9", "snr_db = 0")
    res = run_ber_sweep(parse_config(text), schemes=["bad"])
    assert res.final("bad", 0.0).packets == 1


def test_paired_packets_across_schemes():
    cfg = parse_config(CODED)
    t1, _, _ = simulate_packet(cfg, cfg.schemes[0], 8.0, 4)
    t2, _, _ = simulate_packet(cfg, cfg.schemes[1], 8.0, 4)
    t3, _, _ = simulate_packet(cfg, cfg.schemes[0], 8.0, 5)
    np.testing.assert_array_equal(t1, t2)
    assert not np.array_equal(t1, t3)


def test_mismatch_is_deterministic_and_changes_results():
    text = CODED.replace("coded = yes", "coded = yes\nmismatch = yes").replace("snr_db = 8", "snr_db = 4")
    cfg = parse_config(text)
    _, rec1, _ = simulate_packet(cfg, cfg.schemes[0], 4.0, 0)
    _, rec2, _ = simulate_packet(cfg, cfg.schemes[0], 4.0, 0)
    np.testing.assert_array_equal(rec1.stages[-1].eq_extrinsic, rec2.stages[-1].eq_extrinsic)
    ref = parse_config(CODED.replace("snr_db = 8", "snr_db = 4"))
    _, rec3, _ = simulate_packet(ref, ref.schemes[0], 4.0, 0)
    assert not np.array_equal(rec1.stages[0].eq_extrinsic, rec3.stages[0].eq_extrinsic)


def test_confidence_interval_scaling():
    p1 = BerPoint("s", 0.0, 0, 1, 10_000, 100)
    p4 = BerPoint("s", 0.0, 0, 4, 40_000, 400)
    assert p1.ci95 / p4.ci95 == pytest.approx(2.0)
    assert p1.interval == pytest.approx((0.01 - p1.ci95, 0.01 + p1.ci95))
    assert p1.ci95 == pytest.approx(1.96 * math.sqrt(0.01 * 0.99 / 10_000))


def test_exit_single_block_zero_iterations():
    text = CODED.replace("outer_iterations = 2", "outer_iterations = 0").replace("blocks = 2", "blocks = 1")
    cfg = parse_config(text)
    res = run_exit(cfg, schemes=["le"])
    pts = res[("le", 8.0)]
    assert [p.module for p in pts] == ["equalizer", "decoder"]
    assert pts[0].mi_in == 0.0 and pts[1].mi_in == pts[0].mi_out


def test_exit_deterministic(tmp_path):
    cfg = parse_config(CODED)
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    run_exit(cfg, out=str(out1))
    run_exit(cfg, threads=2, out=str(out2))
    assert out1.read_bytes() == out2.read_bytes()
    header, rows = _rows(out1.read_text())
    assert header.startswith("# config_hash=")
    assert list(rows[0]) == ["scheme", "snr_db", "snr_convention", "iteration", "module",
                             "blocks", "mi_in", "mi_out"]
    assert len(rows) == 2 * 3 * 2


def test_exit_rejects_uncoded():
    with pytest.raises(ValueError, match="coded"):
        run_exit(parse_config(UNCODED))


def test_unwritable_output():
    with pytest.raises(OSError, match="/nonexistent/dir/out.csv"):
        run_ber_sweep(parse_config(UNCODED), out="/nonexistent/dir/out.csv")


def test_describe_cost_generic():
    rows = {r["schedule"]: r for r in describe_cost()}
    assert (rows["single"]["latency_T"], rows["single"]["expression"]) == (2, "C_M+C_D")
    assert (rows["SISE1"]["latency_T"], rows["SISE1"]["expression"]) == (4, "2C_M+C_B+C_D")
    assert (rows["SISE2"]["latency_T"], rows["SISE2"]["expression"]) == (2, "C_M+C_B+C_D")


def test_describe_cost_for_config():
    rows = describe_cost(parse_config(CODED))
    by = {r["scheme"]: r for r in rows}
    assert by["le"]["C_B"] == 0
    s2 = by["sise2"]
    assert s2["macs_per_symbol"] == pytest.approx(s2["C_M"] + s2["C_B"] + s2["C_D"])


def test_cli_ber_and_seed_override(tmp_path):
    path = tmp_path / "u.ini"
    path.write_text(UNCODED)
    out = tmp_path / "ber.csv"
    assert cli.main(["ber", "--config", str(path), "--out", str(out), "--seed", "7"]) == 0
    header, rows = _rows(out.read_text())
    assert "root_seed=7" in header
    assert b"\r\n" not in out.read_bytes()
    assert load_config(path, 7).config_hash() in header


def test_cli_stdout_outputs(capsys, tmp_path):
    assert cli.main(["cost"]) == 0
    assert "2C_M+C_B+C_D" in capsys.readouterr().out
    assert cli.main(["channels", "--n0", "0.1", "0.01"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 + 4 * 2
    path = tmp_path / "c.ini"
    path.write_text(CODED.replace("blocks = 2", "blocks = 1"))
    assert cli.main(["exit", "--config", str(path)]) == 0
    assert capsys.readouterr().out.startswith("scheme,snr_db,iteration,module")


def test_cli_errors(capsys, tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text(CODED.replace("packets = 3", "packets = -2"))
    assert cli.main(["ber", "--config", str(path)]) == 2
    assert "experiment.packets" in capsys.readouterr().err
    assert cli.main(["ber", "--config", str(tmp_path / "missing.ini")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["bogus"])


ORDERING = """
[experiment]
channel = {channel}
coded = yes
snr_db = {snr}
packets = 8
min_errors = 1000000
seed = 3
outer_iterations = 20

[scheme single]
schedule = single
main = {main}

[scheme sise2]
schedule = SISE2
main = {main}
branches = {branch}
"""


@pytest.mark.parametrize("channel,snr,main,branch", [
    ("h2", 10, "QTI-LE", "TI-BiDFE"),
    ("h3", 13, "TI-BiDFE", "QTI-LE"),
])
def test_sise2_beats_single_main_paired(channel, snr, main, branch):
    cfg = parse_config(ORDERING.format(channel=channel, snr=snr, main=main, branch=branch))
    res = run_ber_sweep(cfg)
    single, sise = res.final("single", float(snr)), res.final("sise2", float(snr))
    assert single.bits == sise.bits
    assert sise.ber < single.ber
