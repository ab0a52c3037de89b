"""Transmitter chain: bits -> symbols -> shaped baseband -> passband frame."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .core import (
    ChirpSpec,
    Domain,
    FrameLayout,
    LinkConfig,
    Modulation,
    Role,
    SampleBuffer,
    SymbolBlock,
    constellation,
    header_points,
    training_sequence,
)


class LayoutError(ValueError):
    """Packet lengths inconsistent with the configured header interval."""


@dataclass(frozen=True)
class RrcFilter:
    taps: np.ndarray
    rolloff: float
    span_symbols: int
    samples_per_symbol: int

    @property
    def group_delay_samples(self) -> int:
        return (len(self.taps) - 1) // 2


def design_rrc(rolloff: float, span_symbols: int, samples_per_symbol: int) -> RrcFilter:
    """Root-raised-cosine FIR, normalized so (p * p) has center value 1.

    Tap count is span*L + 1 (odd, symmetric, linear phase).
    """
    beta = rolloff
    L = samples_per_symbol
    n = span_symbols * L
    t = (np.arange(n + 1) - n / 2) / L  # in symbol periods
    taps = np.empty(n + 1)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            taps[i] = 1.0 - beta + 4.0 * beta / math.pi
        elif beta > 0 and abs(abs(ti) - 1.0 / (4.0 * beta)) < 1e-9:
            taps[i] = (beta / math.sqrt(2.0)) * (
                (1 + 2 / math.pi) * math.sin(math.pi / (4 * beta))
                + (1 - 2 / math.pi) * math.cos(math.pi / (4 * beta)))
        else:
            num = (math.sin(math.pi * ti * (1 - beta))
                   + 4 * beta * ti * math.cos(math.pi * ti * (1 + beta)))
            den = math.pi * ti * (1 - (4 * beta * ti) ** 2)
            taps[i] = num / den
    taps = (taps + taps[::-1]) / 2.0  # exact symmetry
    taps /= math.sqrt(np.sum(taps * taps))  # sum p^2 = 1 => (p*p)[0] = 1
    return RrcFilter(taps, rolloff, span_symbols, L)


def rrc_for(cfg: LinkConfig) -> RrcFilter:
    return design_rrc(cfg.rrc_rolloff, cfg.rrc_span_symbols, cfg.samples_per_symbol)


def map_bits(bits: np.ndarray, modulation: Modulation) -> SymbolBlock:
    """Group bits (MSB first) into Gray-labeled constellation symbols.

    A final partial group is padded with zero bits.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    k = modulation.bits_per_symbol
    if len(bits) % k:
        bits = np.concatenate([bits, np.zeros(k - len(bits) % k, dtype=np.uint8)])
    if len(bits) == 0:
        return SymbolBlock.data(np.empty(0, dtype=np.complex128))
    groups = bits.reshape(-1, k)
    idx = groups @ (1 << np.arange(k - 1, -1, -1, dtype=np.int64))
    return SymbolBlock.data(constellation(modulation)[idx])


def pulse_shape(block: SymbolBlock, filt: RrcFilter, sample_rate_hz: float = 0.0,
                dtype=np.complex64) -> SampleBuffer:
    """Zero-stuffed upsampling by L followed by RRC convolution.

    Output length is N*L + len(taps) - 1; symbol k peaks at sample
    k*L + filt.group_delay_samples.
    """
    L = filt.samples_per_symbol
    n = len(block)
    if n == 0:
        return SampleBuffer(np.zeros(0, dtype=dtype), sample_rate_hz, Domain.BASEBAND)
    up = np.zeros(n * L, dtype=dtype)
    up[::L] = block.symbols.astype(dtype)
    taps = filt.taps.astype(np.float32 if dtype == np.complex64 else np.float64)
    out = fftconvolve(up, taps, mode="full").astype(dtype, copy=False)
    return SampleBuffer(out, sample_rate_hz, Domain.BASEBAND)


def generate_chirp(spec: ChirpSpec, sample_rate_hz: float,
                   dtype=np.float32) -> SampleBuffer:
    """Real linear-FM sweep, unit peak amplitude."""
    n = int(round(spec.duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    rate = (spec.end_freq_hz - spec.start_freq_hz) / spec.duration_s
    phase = 2.0 * np.pi * (spec.start_freq_hz * t + 0.5 * rate * t * t)
    return SampleBuffer(np.sin(phase).astype(dtype), sample_rate_hz, Domain.PASSBAND)


def _mix(samples: np.ndarray, freq_ratio: float, sign: float,
         chunk: int = 1 << 22) -> np.ndarray:
    """Multiply samples by exp(sign * 2j*pi*freq_ratio*n), chunked."""
    out = np.empty(len(samples), dtype=np.complex64
                   if samples.dtype in (np.float32, np.complex64) else np.complex128)
    for i in range(0, len(samples), chunk):
        n = np.arange(i, min(i + chunk, len(samples)), dtype=np.float64)
        out[i:i + len(n)] = samples[i:i + len(n)] * np.exp(
            sign * 2j * np.pi * freq_ratio * n)
    return out


def upconvert(baseband: SampleBuffer, carrier_freq_hz: float,
              sample_rate_hz: float) -> SampleBuffer:
    """Real passband signal Re{x(t) exp(j*2*pi*fc*t)}."""
    mixed = _mix(baseband.samples, carrier_freq_hz / sample_rate_hz, +1.0)
    return SampleBuffer(mixed.real.copy(), sample_rate_hz, Domain.PASSBAND)


def build_symbol_frame(cfg: LinkConfig, packets: list[SymbolBlock]) -> tuple[SymbolBlock, FrameLayout]:
    """Order training, headers, retraining blocks, packets, and EOF.

    Every packet must be exactly header_interval_symbols long except the last.
    """
    plen = cfg.header_interval_symbols
    for i, p in enumerate(packets[:-1]):
        if len(p) != plen:
            raise LayoutError(
                f"packet {i} has {len(p)} symbols, expected {plen}")
    if packets and not (0 < len(packets[-1]) <= plen):
        raise LayoutError(
            f"final packet has {len(packets[-1])} symbols, expected 1..{plen}")

    retrain = cfg.retrain_symbols_per_packet
    n_train = cfg.training_symbols_per_frame
    known = training_sequence(cfg.training_seed, n_train + len(packets) * retrain,
                              cfg.modulation)
    cont_pt, eof_pt = header_points(cfg.modulation)

    sym_parts = [known[:n_train]]
    role_parts = [np.full(n_train, Role.TRAINING, dtype=np.uint8)]
    for i, p in enumerate(packets):
        sym_parts.append(np.array([cont_pt]))
        role_parts.append(np.array([Role.HEADER], dtype=np.uint8))
        blk = known[n_train + i * retrain: n_train + (i + 1) * retrain]
        sym_parts.append(blk)
        role_parts.append(np.full(len(blk), Role.TRAINING, dtype=np.uint8))
        sym_parts.append(p.symbols)
        role_parts.append(p.roles)
    sym_parts.append(np.array([eof_pt]))
    role_parts.append(np.array([Role.EOF], dtype=np.uint8))

    block = SymbolBlock(np.concatenate(sym_parts), np.concatenate(role_parts))
    chirp_len = int(round(cfg.chirp.duration_s * cfg.sample_rate_hz))
    layout = FrameLayout(
        chirp_len=chirp_len,
        guard_len=cfg.guard_samples,
        training_len=n_train,
        packet_len=plen,
        n_packets=len(packets),
        has_eof=True,
        retrain_len=retrain,
        last_packet_len=len(packets[-1]) if packets else 0,
    )
    assert layout.total_symbols == len(block)
    return block, layout


def assemble_frame(cfg: LinkConfig, packets: list[SymbolBlock]) -> tuple[SampleBuffer, FrameLayout]:
    """Full passband frame: [chirp][guard silence][shaped, mixed symbols]."""
    block, layout = build_symbol_frame(cfg, packets)
    filt = rrc_for(cfg)
    bb = pulse_shape(block, filt, cfg.sample_rate_hz)
    data_pass = upconvert(bb, cfg.carrier_freq_hz, cfg.sample_rate_hz)
    chirp = generate_chirp(cfg.chirp, cfg.sample_rate_hz)
    frame = np.concatenate([
        chirp.samples,
        np.zeros(cfg.guard_samples, dtype=data_pass.samples.dtype),
        data_pass.samples,
    ])
    return SampleBuffer(frame, cfg.sample_rate_hz, Domain.PASSBAND), layout
