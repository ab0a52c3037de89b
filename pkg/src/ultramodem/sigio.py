"""Binary signal-file format and the structured metrics report."""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Domain, SampleBuffer

SIGNAL_MAGIC = b"USMSIG\x00\x00"
SIGNAL_VERSION = 1
_HEADER_FMT = "<8sIdBQ"  # magic, version, sample rate, domain flag, count


class SignalFormatError(ValueError):
    pass


def write_signal(path, buf: SampleBuffer) -> None:
    """Write a SampleBuffer as little-endian float32 (complex: I,Q pairs)."""
    x = buf.samples
    if buf.domain is Domain.PASSBAND:
        body = np.ascontiguousarray(x, dtype="<f4")
        flag = 1
    else:
        body = np.ascontiguousarray(x, dtype="<c8").view("<f4")
        flag = 0
    header = struct.pack(_HEADER_FMT, SIGNAL_MAGIC, SIGNAL_VERSION,
                         float(buf.sample_rate_hz), flag, len(x))
    with open(path, "wb") as f:
        f.write(header)
        f.write(body.tobytes())


def read_signal(path) -> SampleBuffer:
    raw = Path(path).read_bytes()
    hsize = struct.calcsize(_HEADER_FMT)
    if len(raw) < hsize:
        raise SignalFormatError("file shorter than the signal header")
    magic, version, rate, flag, count = struct.unpack(_HEADER_FMT, raw[:hsize])
    if magic != SIGNAL_MAGIC:
        raise SignalFormatError(f"bad signal-file magic {magic!r}")
    if version != SIGNAL_VERSION:
        raise SignalFormatError(f"unsupported signal-file version {version}")
    width = 4 if flag == 1 else 8
    if len(raw) != hsize + count * width:
        raise SignalFormatError(
            f"body length {len(raw) - hsize} does not match "
            f"{count} x {width} bytes")
    body = np.frombuffer(raw, dtype="<f4", offset=hsize)
    if flag == 1:
        return SampleBuffer(body.copy(), rate, Domain.PASSBAND)
    return SampleBuffer(body.view("<c8").copy(), rate, Domain.BASEBAND)


@dataclass
class MetricsReport:
    """Per-run metrics, serializable as JSON."""

    config: dict
    data_rate_bps: float
    runtime_s: float
    frame_start_sample: int | None = None
    sync_confidence: float | None = None
    doppler_scale: float | None = None
    ber: float | None = None
    bit_errors: int | None = None
    total_bits: int | None = None
    symbol_counts: dict = field(default_factory=dict)
    training_fraction: float | None = None
    noncausal_latency_s: float | None = None
    error_tail_mse: float | None = None
    warnings: list = field(default_factory=list)

    def validate(self) -> "MetricsReport":
        for name in ("data_rate_bps", "runtime_s", "ber", "training_fraction",
                     "noncausal_latency_s", "error_tail_mse"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"metrics field {name} is not finite: {v}")
        if self.training_fraction is not None and not (
                0.0 <= self.training_fraction <= 1.0):
            raise ValueError("training_fraction outside [0, 1]")
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, default=str)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")
