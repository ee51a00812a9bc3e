"""Self-iterating soft equalization (SISE) for severe ISI channels."""

from .channel import ChannelModel, apply_channel, bpsk_map, standard_channel
from .engine import EqualizerSpec, SiseConfig, run_turbo, sise_uncoded
from .soft_info import combine_two_branch, estimate_correlation, make_a_priori

__all__ = [
    "ChannelModel",
    "EqualizerSpec",
    "SiseConfig",
    "apply_channel",
    "bpsk_map",
    "combine_two_branch",
    "estimate_correlation",
    "make_a_priori",
    "run_turbo",
    "sise_uncoded",
    "standard_channel",
]

__version__ = "0.1.0"
