"""Software-defined ultrasonic modem.

Single-carrier QAM physical layer with chirp-preamble synchronization, a
multipath/Doppler/noise channel simulator, and a fractionally-spaced,
phase-tracking, sparse decision-feedback equalizer adapted by RLS.
"""

from .core import (
    ChirpSpec,
    ConfigError,
    Domain,
    FrameLayout,
    LinkConfig,
    Modulation,
    Role,
    SampleBuffer,
    SymbolBlock,
    constellation,
    data_rate,
    default_chirp,
    link_preset,
    validate_config,
)
from .channel import ChannelModel, ChannelTap, apply_channel, preset
from .equalizer import DivergenceError, EqualizerConfig, EqualizerState
from .pipeline import receive_frame, run_link, transmit_file

__all__ = [
    "ChirpSpec", "ConfigError", "Domain", "FrameLayout", "LinkConfig",
    "Modulation", "Role", "SampleBuffer", "SymbolBlock", "constellation",
    "data_rate", "default_chirp", "link_preset", "validate_config",
    "ChannelModel", "ChannelTap", "apply_channel", "preset",
    "DivergenceError", "EqualizerConfig", "EqualizerState",
    "receive_frame", "run_link", "transmit_file",
]

__version__ = "0.1.0"
