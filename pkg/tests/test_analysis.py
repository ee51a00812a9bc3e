import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sise.analysis import (
    ExitPoint,
    average_trajectories,
    bidfe_rho,
    binary_awgn_capacity,
    capacity_gap,
    estimate_mutual_information,
    exit_trajectory,
    iterations_to_reach,
    measure_bidfe_rho,
    output_snr,
    snr_infinity,
)
from sise.channel import CATALOG_SPANS, ChannelModel, apply_channel, bpsk_map, standard_channel
from sise.engine import EqualizerSpec, SiseConfig, run_turbo, single_turbo
from sise.trellis import Interleaver, rsc_encode

CHANNELS = ["h1", "h2", "h3", "h4"]


def _spans(name):
    return CATALOG_SPANS[name]["le"], CATALOG_SPANS[name]["dfe"]


def _chain(name, N0):
    taps = standard_channel(name).taps
    (lc, lf), (df, dd) = _spans(name)
    le = snr_infinity("LE", "TI", taps, N0, lc, lf)
    dfe = snr_infinity("DFE", "TI", taps, N0, 0, df, dd)
    bi = snr_infinity("BIDFE", "TI", taps, N0, 0, df, dd)
    return le, dfe, bi


def test_memoryless_limits_coincide():
    for N0 in (1.0, 0.1, 0.01):
        vals = [snr_infinity(k, m, [1.0], N0, 0, 3, 0).value
                for k in ("LE", "DFE", "BIDFE") for m in ("TI", "QTI", "TV")]
        np.testing.assert_allclose(vals, 1 / N0, rtol=1e-12)


@pytest.mark.parametrize("name", CHANNELS)
@pytest.mark.parametrize("N0", [1.0, 0.1, 0.01])
def test_snr_inequality_chain(name, N0):
    le, dfe, bi = _chain(name, N0)
    assert le.value <= dfe.value <= bi.value <= 1 / N0 + 1e-12
    for lim in (le, dfe, bi):
        assert abs(lim.mi_ceiling - binary_awgn_capacity(lim.value)) < 1e-9
    assert -1.0 <= bi.rho <= 1.0


@pytest.mark.parametrize("name", CHANNELS)
def test_ti_limits_match_constructive_measurement(name):
    taps = standard_channel(name).taps
    (lc, lf), (df, dd) = _spans(name)
    N0 = 0.1
    le, dfe, _ = _chain(name, N0)
    assert output_snr("LE", taps, N0, 1.0, lc, lf) == pytest.approx(le.value, rel=1e-9)
    assert output_snr("DFE", taps, N0, 1.0, 0, df, dd) == pytest.approx(dfe.value, rel=1e-9)


def test_bidfe_rho_closed_form_matches_simulation():
    taps = standard_channel("h2").taps
    want = bidfe_rho(taps, 0.1, 20, 6)
    got = measure_bidfe_rho(taps, 0.1, 20, 6, n_sym=200_000, seed=1)
    assert got == pytest.approx(want, abs=0.01)


def test_bidfe_rho_override():
    taps = standard_channel("h1").taps
    lim = snr_infinity("BIDFE", "TI", taps, 0.1, 0, 12, 2, rho=0.0)
    dfe = snr_infinity("DFE", "TI", taps, 0.1, 0, 12, 2)
    assert lim.rho == 0.0 and lim.value == pytest.approx(2 * dfe.value)


def test_snr_infinity_errors():
    with pytest.raises(ValueError):
        snr_infinity("LE", "TI", [1.0], 0.0)
    with pytest.raises(ValueError):
        snr_infinity("MAP", "TI", [1.0], 0.1)
    with pytest.raises(ValueError):
        snr_infinity("LE", "FOO", [1.0], 0.1)
    with pytest.raises(ValueError):
        output_snr("BIDFE", [1.0], 0.1, 0.5)


def _mp_gap(snr):
    mpmath.mp.dps = 30
    s = mpmath.mpf(snr)
    f = lambda t: mpmath.npdf(t) * mpmath.log1p(mpmath.exp(-2 * s - 2 * t * mpmath.sqrt(s)))
    pts = [-mpmath.inf, -2 * mpmath.sqrt(s), -mpmath.sqrt(s), 0, mpmath.inf]
    return float(mpmath.quad(f, pts) / mpmath.log(2))


def test_capacity_endpoints():
    assert binary_awgn_capacity(0.0) == 0.0
    assert binary_awgn_capacity(100.0) > 0.9999
    assert binary_awgn_capacity(1e4) == 1.0
    with pytest.raises(ValueError):
        binary_awgn_capacity(-1.0)


@pytest.mark.parametrize("snr", [0.1, 1.0, 10.0, 50.0, 100.0])
def test_capacity_gap_against_mpmath(snr):
    assert capacity_gap(snr) == pytest.approx(_mp_gap(snr), rel=1e-8)


def test_capacity_monte_carlo():
    rng = np.random.default_rng(0)
    tau = rng.standard_normal(10**7)
    mc = 1 - np.mean(np.logaddexp(0, -2 * tau - 2)) / np.log(2)
    assert abs(binary_awgn_capacity(1.0) - mc) < 1e-3


def test_capacity_monotone():
    grid = np.linspace(0, 100, 1000)
    gap = np.array([capacity_gap(s) for s in grid])
    assert np.all(np.diff(gap) < 0)
    cap = np.array([binary_awgn_capacity(s) for s in grid])
    assert np.all(np.diff(cap) >= 0)
    resolvable = 1 - cap[:-1] > 1e-12
    assert np.all(np.diff(cap)[resolvable] > 0)


def test_mutual_information_examples():
    x = bpsk_map(np.random.default_rng(1).integers(0, 2, 1000))
    assert estimate_mutual_information(np.zeros(1000), x) == 0.0
    assert estimate_mutual_information(1e9 * x, x) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        estimate_mutual_information(np.zeros(3), np.ones(4))
    with pytest.raises(ValueError):
        estimate_mutual_information([], [])


@pytest.mark.parametrize("snr", [0.25, 1.0, 3.0])
def test_mutual_information_gaussian_consistency(snr):
    rng = np.random.default_rng(2)
    x = bpsk_map(rng.integers(0, 2, 10**6))
    llr = 2 * snr * x + 2 * np.sqrt(snr) * rng.standard_normal(x.size)
    assert estimate_mutual_information(llr, x) == pytest.approx(binary_awgn_capacity(snr), abs=0.01)


@given(st.lists(st.floats(-80, 80), min_size=1, max_size=30), st.randoms())
def test_mutual_information_negation_invariance(llr, rnd):
    x = np.array([rnd.choice([-1.0, 1.0]) for _ in llr])
    llr = np.array(llr)
    a = estimate_mutual_information(llr, x)
    b = estimate_mutual_information(-llr, -x)
    assert a == b and a <= 1.0


def _coded(name, N0, n_msg, seed):
    rng = np.random.default_rng(seed)
    msg = rng.integers(0, 2, n_msg)
    il = Interleaver.random(2 * n_msg + 4, seed)
    x = bpsk_map(il.interleave(rsc_encode(msg)))
    taps = standard_channel(name).taps
    return x, il, apply_channel(x, ChannelModel(taps, N0), rng), taps


def test_exit_zero_iterations():
    x, il, r, taps = _coded("h2", 0.1, 128, 3)
    _, rec = single_turbo(r, taps, 0.1, EqualizerSpec.for_channel("LE", "QTI", "h2"), il, 128, 0)
    pts = exit_trajectory(rec, x, il)
    assert [(p.iteration, p.module) for p in pts] == [(0, "equalizer"), (0, "decoder")]
    assert pts[0].mi_in == 0.0
    assert pts[1].mi_in == pts[0].mi_out
    assert all(0 <= p.mi_out <= 1 for p in pts)


def test_exit_map_high_snr_reaches_one():
    x, il, r, taps = _coded("h2", 0.05, 256, 4)
    _, rec = single_turbo(r, taps, 0.05, EqualizerSpec("MAP"), il, 256, 3)
    pts = exit_trajectory(rec, x, il)
    assert max(p.mi_out for p in pts if p.module == "equalizer") > 0.98


def test_exit_uncoded_record_has_equalizer_points_only():
    x, il, r, taps = _coded("h2", 0.1, 64, 5)
    cfg = SiseConfig(EqualizerSpec.for_channel("DFE", "QTI", "h2"),
                     (EqualizerSpec.for_channel("LE", "QTI", "h2"),), 1, "SISE2")
    _, rec = run_turbo(r, taps, 0.1, cfg, il, 64, 2)
    assert len(exit_trajectory(rec, x)) == 3
    assert len(exit_trajectory(rec, x, il)) == 6


def test_average_and_iterations_to_reach():
    a = [ExitPoint(0, 0.0, 0.4, "equalizer"), ExitPoint(1, 0.5, 0.8, "equalizer")]
    b = [ExitPoint(0, 0.0, 0.6, "equalizer"), ExitPoint(1, 0.7, 1.0, "equalizer")]
    avg = average_trajectories([a, b])
    assert [p.mi_out for p in avg] == pytest.approx([0.5, 0.9])
    assert iterations_to_reach(avg, 0.85) == 1
    assert iterations_to_reach(avg, 0.95) is None
    assert iterations_to_reach(avg, 0.1, module="decoder") is None
    with pytest.raises(ValueError):
        average_trajectories([a, a[:1]])
    with pytest.raises(ValueError):
        average_trajectories([])
