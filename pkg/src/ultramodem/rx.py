"""Receiver front end: chirp sync, Doppler correction, downconversion, demap."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from . import channel
from .core import (
    Domain,
    LinkConfig,
    Modulation,
    Role,
    SampleBuffer,
    SymbolBlock,
    constellation,
)
from .tx import _mix, rrc_for

logger = logging.getLogger(__name__)


class NoFrameFound(RuntimeError):
    """Chirp correlation confidence fell below the detection threshold."""


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SyncResult:
    frame_start_sample: int
    doppler_scale: float
    correlation_peak: float
    confidence: float


def detect_frame(rx: SampleBuffer, chirp: SampleBuffer,
                 threshold: float = 0.5) -> SyncResult:
    """Locate the chirp preamble by normalized matched filtering.

    Confidence is 1 - sidelobe/peak of the normalized correlation, with
    sidelobes read outside a one-chirp-length exclusion zone.
    """
    x = np.asarray(rx.samples, dtype=np.float64)
    c = np.asarray(chirp.samples, dtype=np.float64)
    n, nc_len = len(x), len(c)
    if n <= nc_len:
        raise ValueError("received buffer must be longer than the chirp")
    corr = fftconvolve(x, c[::-1], mode="valid")
    cs = np.concatenate([[0.0], np.cumsum(x * x)])
    energy = cs[nc_len:] - cs[:-nc_len]
    # floor window energy at 1% of the buffer average so silent stretches
    # cannot blow up the normalized correlation
    floor = 0.01 * nc_len * float(np.mean(x * x))
    norm = np.sqrt(np.maximum(energy, floor)) * math.sqrt(float(np.dot(c, c)))
    nc = np.abs(corr) / np.maximum(norm, 1e-30)
    i = int(np.argmax(nc))
    peak = float(nc[i])
    lo, hi = max(0, i - nc_len), min(len(nc), i + nc_len + 1)
    outside = np.concatenate([nc[:lo], nc[hi:]])
    sidelobe = float(outside.max()) if len(outside) else 0.0
    confidence = max(0.0, 1.0 - sidelobe / peak) if peak > 0 else 0.0
    if confidence < threshold:
        raise NoFrameFound(
            f"best correlation at {i} has confidence {confidence:.3f} "
            f"< {threshold}")
    return SyncResult(i, 1.0, peak, confidence)


def estimate_doppler(rx: SampleBuffer, chirp: SampleBuffer,
                     frame_start: int,
                     scale_span: float = 1e-3,
                     scale_step: float = 1e-4,
                     min_gain: float = 1e-3) -> float:
    """Grid-search the time-scale maximizing chirp correlation.

    The best grid point is refined by parabolic interpolation of the peak.
    Returns 1.0 when the best scale improves on no correction by less than
    min_gain (relative); a best point on the grid edge is returned as-is
    with a warning.
    """
    x = np.asarray(rx.samples)
    nc_len = len(chirp.samples)
    pad = nc_len // 8
    lo = max(0, frame_start - pad)
    seg = x[lo: frame_start + nc_len + pad].astype(np.float64)
    nsteps = int(round(scale_span / scale_step))
    scales = 1.0 + np.arange(-nsteps, nsteps + 1) * scale_step
    vals = np.empty(len(scales))
    for idx, a in enumerate(scales):
        rep = channel.apply_doppler(chirp, a).samples.astype(np.float64)
        corr = fftconvolve(seg, rep[::-1], mode="valid")
        vals[idx] = np.max(np.abs(corr)) / math.sqrt(float(np.dot(rep, rep)))
    b = int(np.argmax(vals))
    ref = vals[nsteps]  # scale exactly 1.0
    if vals[b] <= ref * (1.0 + min_gain):
        return 1.0
    if b == 0 or b == len(scales) - 1:
        logger.warning("doppler estimate clamped to search-grid edge %g", scales[b])
        return float(scales[b])
    y0, y1, y2 = vals[b - 1], vals[b], vals[b + 1]
    denom = y0 - 2.0 * y1 + y2
    frac = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
    return float(scales[b] + frac * scale_step)


def correct_doppler(rx: SampleBuffer, scale: float) -> SampleBuffer:
    """Undo a time-scaling by `scale` (resample by 1/scale)."""
    if scale == 1.0:
        return rx
    return channel.apply_doppler(rx, 1.0 / scale)


def downconvert(rx: SampleBuffer, cfg: LinkConfig, data_start: int,
                n_symbols: int | None = None) -> np.ndarray:
    """Mix to baseband, matched-filter, decimate to 2 samples/symbol.

    Returns a complex array where symbol k's nominal instant is at index 2k.
    The caller is responsible for data_start pointing at the first sample of
    the shaped data segment (chirp and guard already skipped).
    """
    L = cfg.samples_per_symbol
    if L % 2:
        raise ValueError("downconversion to 2 samples/symbol needs even "
                         f"oversampling, got L={L}")
    filt = rrc_for(cfg)
    ntaps = len(filt.taps)
    x = rx.samples
    stop = len(x)
    if n_symbols is not None:
        stop = min(stop, data_start + n_symbols * L + 2 * ntaps)
    seg = x[data_start:stop]
    z = _mix(seg, cfg.carrier_freq_hz / cfg.sample_rate_hz, -1.0)
    z *= 2.0
    taps = filt.taps.astype(np.float32 if z.dtype == np.complex64 else np.float64)
    b = fftconvolve(z, taps, mode="full")[ntaps - 1:]
    return np.ascontiguousarray(b[:: L // 2])


def nearest_index(symbols: np.ndarray, modulation: Modulation,
                  chunk: int = 1 << 16) -> np.ndarray:
    """Index of the nearest constellation point for each symbol."""
    pts = constellation(modulation)
    out = np.empty(len(symbols), dtype=np.int64)
    for i in range(0, len(symbols), chunk):
        blk = symbols[i:i + chunk]
        d = np.abs(blk[:, None] - pts[None, :])
        out[i:i + len(blk)] = np.argmin(d, axis=1)
    return out


def demap(decided: SymbolBlock, modulation: Modulation) -> np.ndarray:
    """Inverse of map_bits: Data-role symbols back to their bit labels."""
    data = decided.symbols[decided.roles == Role.DATA]
    if len(data) == 0:
        return np.empty(0, dtype=np.uint8)
    idx = nearest_index(data, modulation)
    k = modulation.bits_per_symbol
    shifts = np.arange(k - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8).ravel()


def compute_ber(tx_bits: np.ndarray, rx_bits: np.ndarray) -> tuple[int, int, float]:
    """(errors, total, error rate) between two equal-length bit sequences."""
    tx_bits = np.asarray(tx_bits)
    rx_bits = np.asarray(rx_bits)
    if tx_bits.shape != rx_bits.shape:
        raise LengthMismatch(
            f"bit sequences differ in length: {tx_bits.shape} vs {rx_bits.shape}")
    errors = int(np.count_nonzero(tx_bits != rx_bits))
    total = int(tx_bits.size)
    return errors, total, errors / total if total else 0.0
