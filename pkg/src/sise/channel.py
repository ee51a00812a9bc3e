"""
Binary symbols, ISI channel simulation and the channel catalog.

The received sequence is the full linear convolution of the packet with
the channel, i.e. ``len(x) + L_h`` samples.  Symbols outside the packet
are known zeros, so reversing the received sequence yields a valid
observation of the reversed packet through the reversed channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChannelModel",
    "CATALOG_SPANS",
    "apply_channel",
    "bpsk_map",
    "bpsk_demap",
    "channel_names",
    "make_rng",
    "mismatch_perturb",
    "normalize_channel",
    "standard_channel",
    "time_reverse",
]

_SQ2 = np.sqrt(2.0)

# Raw (unnormalized) tap lists; normalization happens in standard_channel.
_RAW_TAPS = {
    "h1": [1.0, 2.0, 1.0],
    "h2": [1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0],
    "h3": [1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 3.0, 2.0, 1.0],
    "h4": [
        1.0, 1.0 / _SQ2, 4.0, 3.0 / _SQ2, 29.0 / 4.0, 17.0 / (4.0 * _SQ2),
        29.0 / 4.0, 3.0 / _SQ2, 4.0, 1.0 / _SQ2, 1.0,
    ],
}

# Filter spans used with each cataloged channel:
# LE (causal L_c, anticausal L_f) and DFE (feedforward L_f, feedback L_d).
CATALOG_SPANS = {
    "h1": {"le": (7, 7), "dfe": (12, 2)},
    "h2": {"le": (13, 13), "dfe": (20, 6)},
    "h3": {"le": (14, 14), "dfe": (20, 8)},
    "h4": {"le": (15, 15), "dfe": (20, 10)},
}


@dataclass(frozen=True)
class ChannelModel:
    """Real ISI channel with additive white Gaussian noise.

    Attributes
    ----------
    taps : ndarray
        Impulse response ``h_0 ... h_{L_h}``.
    noise_variance : float
        Per-sample noise variance ``N0``.
    """

    taps: np.ndarray
    noise_variance: float = 0.0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64).ravel()
        if taps.size == 0:
            raise ValueError("channel needs at least one tap")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def memory(self) -> int:
        """Channel memory ``L_h``."""
        return self.taps.size - 1

    def reversed(self) -> "ChannelModel":
        return ChannelModel(self.taps[::-1], self.noise_variance, self.name + "-rev")

    def with_noise(self, noise_variance: float) -> "ChannelModel":
        return ChannelModel(self.taps, noise_variance, self.name)


def make_rng(seed) -> np.random.Generator:
    """Accept an int, a SeedSequence or a Generator and return a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def bpsk_map(bits) -> np.ndarray:
    """Map bits to antipodal symbols, 0 -> +1 and 1 -> -1."""
    bits = np.asarray(bits)
    if bits.size and not np.isin(bits, (0, 1)).all():
        raise ValueError("bits must be 0 or 1")
    return 1.0 - 2.0 * bits.astype(np.float64)


def bpsk_demap(symbols) -> np.ndarray:
    """Hard decision back to bits (nonnegative values decide 0)."""
    return (np.asarray(symbols) < 0).astype(np.int8)


def normalize_channel(raw_taps) -> np.ndarray:
    """Scale taps to unit energy."""
    raw = np.asarray(raw_taps, dtype=np.float64).ravel()
    energy = float(np.dot(raw, raw))
    if raw.size == 0 or energy == 0.0:
        raise ValueError("cannot normalize an all-zero channel")
    return raw / np.sqrt(energy)


def channel_names() -> list[str]:
    return sorted(_RAW_TAPS)


def standard_channel(name: str, noise_variance: float = 0.0) -> ChannelModel:
    """Return one of the cataloged channels ``h1`` ... ``h4``."""
    try:
        raw = _RAW_TAPS[name]
    except KeyError:
        raise ValueError(
            f"unknown channel {name!r}; choose from {', '.join(channel_names())}"
        ) from None
    return ChannelModel(normalize_channel(raw), noise_variance, name)


def apply_channel(x, channel: ChannelModel, seed=None) -> np.ndarray:
    """Pass symbols through the ISI channel and add white Gaussian noise.

    Parameters
    ----------
    x : array_like
        Transmitted symbols, nonempty.
    channel : ChannelModel
        Taps and noise variance.
    seed : int, SeedSequence or Generator, optional
        Noise source.  Identical seeds give bit-identical output.

    Returns
    -------
    r : ndarray, shape (len(x) + L_h,)
        ``r[n] = sum_k h_k x[n-k] + w[n]`` with zero guard symbols.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty symbol sequence")
    r = np.convolve(x, channel.taps)
    if channel.noise_variance > 0:
        rng = make_rng(seed)
        r = r + np.sqrt(channel.noise_variance) * rng.standard_normal(r.size)
    return r


def time_reverse(seq):
    """Reverse the time axis of a sequence."""
    out = seq[::-1]
    return out.copy() if isinstance(out, np.ndarray) else out


def mismatch_perturb(taps, snr_linear: float, seed=None) -> np.ndarray:
    """Channel estimate with per-tap multiplicative Gaussian error.

    ``h_hat[i] = (1 + 0.1 / sqrt(snr) * eps[i]) * h[i]`` with standard normal
    ``eps``.  The result is deliberately not renormalized.
    """
    if not snr_linear > 0:
        raise ValueError("snr_linear must be positive")
    taps = np.asarray(taps, dtype=np.float64)
    eps = make_rng(seed).standard_normal(taps.size)
    return (1.0 + 0.1 / np.sqrt(snr_linear) * eps) * taps
