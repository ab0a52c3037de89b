"""Simulated through-tissue acoustic channel: multipath, Doppler, noise.

The presets are synthetic tap sets sized to exercise the equalizer at its
configured tap budgets; they make no claim of biological fidelity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.signal import fftconvolve, hilbert

from .core import Domain, SampleBuffer

FRAC_DELAY_TAPS = 31   # windowed-sinc interpolator length
_KAISER_BETA = 8.0


class DelayError(ValueError):
    """A multipath delay exceeds the signal duration."""


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class ChannelTap:
    delay_s: float
    gain: float
    phase: float = 0.0


@dataclass(frozen=True)
class ChannelModel:
    taps: tuple[ChannelTap, ...]
    doppler_scale: float = 1.0
    snr_db: float = math.inf
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.taps) == 0:
            raise ValueError("channel needs at least one tap")
        delays = [t.delay_s for t in self.taps]
        if any(d < 0 for d in delays) or delays != sorted(delays):
            raise ValueError("tap delays must be nonnegative and sorted ascending")
        if not (0.999 <= self.doppler_scale <= 1.001):
            raise ValueError(
                f"doppler_scale {self.doppler_scale} outside [0.999, 1.001]")


@njit(cache=True)
def _i0(x):
    # modified Bessel I0 by power series; converges fast for |x| <= beta
    acc = 1.0
    term = 1.0
    for k in range(1, 40):
        term *= (x / (2.0 * k)) ** 2
        acc += term
        if term < 1e-16 * acc:
            break
    return acc


@njit(cache=True)
def _kaiser_sinc(d):
    # interpolation kernel value at offset d (samples), 31-tap Kaiser window
    half = (FRAC_DELAY_TAPS - 1) / 2.0
    if abs(d) > half:
        return 0.0
    if d == 0.0:
        s = 1.0
    else:
        s = math.sin(math.pi * d) / (math.pi * d)
    w = _i0(_KAISER_BETA * math.sqrt(1.0 - (d / half) ** 2)) / _i0(_KAISER_BETA)
    return s * w


@njit(cache=True)
def _resample_kernel(x, scale, out):
    """out[m] = x(scale * m) via windowed-sinc interpolation."""
    half = (FRAC_DELAY_TAPS - 1) // 2
    n = len(x)
    for m in range(len(out)):
        t = scale * m
        i0 = int(math.floor(t))
        fr = t - i0
        if fr == 0.0:
            out[m] = x[i0] if 0 <= i0 < n else 0.0
            continue
        acc = x[0] * 0.0
        for j in range(-half, half + 1):
            idx = i0 + j
            if 0 <= idx < n:
                acc += x[idx] * _kaiser_sinc(fr - j)
        out[m] = acc
    return out


def fractional_delay_kernel(frac: float) -> np.ndarray:
    """FIR realizing a delay of (FRAC_DELAY_TAPS-1)/2 + frac samples."""
    half = (FRAC_DELAY_TAPS - 1) // 2
    return np.array([_kaiser_sinc(j - frac) for j in range(-half, half + 1)])


def apply_multipath(signal: SampleBuffer, taps) -> SampleBuffer:
    """Sum of delayed, scaled, phase-shifted copies of the input.

    Sub-sample delay parts use windowed-sinc interpolation.  On passband
    (real) signals a tap phase is applied to the analytic signal so it acts
    as a constant phase shift at every frequency.
    """
    x = signal.samples
    fs = signal.sample_rate_hz
    n = len(x)
    taps = [t if isinstance(t, ChannelTap) else ChannelTap(*t) for t in taps]
    for t in taps:
        if t.delay_s * fs >= n:
            raise DelayError(
                f"tap delay {t.delay_s:g} s exceeds signal duration {n / fs:g} s")

    passband = signal.domain is Domain.PASSBAND
    need_analytic = passband and any(t.phase != 0.0 for t in taps)
    z = hilbert(x) if need_analytic else x

    out = np.zeros(n, dtype=x.dtype)
    half = (FRAC_DELAY_TAPS - 1) // 2
    for t in taps:
        if t.gain == 0.0:
            continue
        d = t.delay_s * fs
        di = int(math.floor(d))
        fr = d - di
        if fr == 0.0 and t.phase == 0.0:
            contrib = t.gain * x[: n - di]
        else:
            src = z if t.phase != 0.0 and passband else x
            if fr == 0.0:
                delayed = src[: n - di]
            else:
                kern = fractional_delay_kernel(fr).astype(
                    np.float32 if x.dtype in (np.float32, np.complex64) else np.float64)
                delayed = fftconvolve(src, kern, mode="full")[half: half + n - di]
            rot = t.gain * np.exp(1j * t.phase) if t.phase != 0.0 else t.gain
            contrib = delayed * rot
            if passband:
                contrib = contrib.real
        out[di: di + len(contrib)] += contrib.astype(out.dtype, copy=False)
    return SampleBuffer(out, fs, signal.domain)


def apply_doppler(signal: SampleBuffer, scale: float) -> SampleBuffer:
    """Time-scale the waveform: output(t) = input(scale * t)."""
    if not (0.99 <= scale <= 1.01):
        raise ValueError(f"doppler scale {scale} outside [0.99, 1.01]")
    x = signal.samples
    if scale == 1.0:
        return SampleBuffer(x.copy(), signal.sample_rate_hz, signal.domain)
    nout = int(round(len(x) / scale))
    if np.iscomplexobj(x):
        out = np.empty(nout, dtype=np.complex128)
        _resample_kernel(x.astype(np.complex128), scale, out)
        out = out.astype(x.dtype, copy=False)
    else:
        out = np.empty(nout, dtype=np.float64)
        _resample_kernel(x.astype(np.float64), scale, out)
        out = out.astype(x.dtype, copy=False)
    return SampleBuffer(out, signal.sample_rate_hz, signal.domain)


def add_noise(signal: SampleBuffer, snr_db: float, seed: int) -> SampleBuffer:
    """White Gaussian noise at power = signal power / 10^(snr/10).

    snr_db = +inf is the no-noise sentinel.  Identical seeds give
    bit-identical noise.
    """
    x = signal.samples
    if math.isinf(snr_db) and snr_db > 0:
        return SampleBuffer(x.copy(), signal.sample_rate_hz, signal.domain)
    p_sig = float(np.mean(np.abs(x) ** 2, dtype=np.float64))
    p_noise = p_sig / (10.0 ** (snr_db / 10.0))
    rng = np.random.default_rng(seed)
    if np.iscomplexobj(x):
        noise = (rng.standard_normal(len(x)) + 1j * rng.standard_normal(len(x)))
        noise *= math.sqrt(p_noise / 2.0)
    else:
        noise = rng.standard_normal(len(x)) * math.sqrt(p_noise)
    return SampleBuffer((x + noise).astype(x.dtype),
                        signal.sample_rate_hz, signal.domain)


def apply_channel(signal: SampleBuffer, model: ChannelModel) -> SampleBuffer:
    """Multipath, then Doppler time-scaling, then additive noise."""
    out = apply_multipath(signal, model.taps)
    if model.doppler_scale != 1.0:
        out = apply_doppler(out, model.doppler_scale)
    return add_noise(out, model.snr_db, model.seed)


# --- presets ----------------------------------------------------------------

# Versioned synthetic tap sets (v1).  Regression tests lock these values.
_PRESETS = {
    # identity path
    "clean": (ChannelTap(0.0, 1.0, 0.0),),
    # short path: 3 arrivals over 20 us
    "rabbit_like": (
        ChannelTap(0.0, 1.0, 0.0),
        ChannelTap(8e-6, 0.35, 1.1),
        ChannelTap(20e-6, 0.20, -2.0),
    ),
    # longer path with stronger late reflections: 5 arrivals over 60 us
    "intestine_like": (
        ChannelTap(0.0, 1.0, 0.0),
        ChannelTap(12e-6, 0.40, 0.7),
        ChannelTap(28e-6, 0.28, -1.4),
        ChannelTap(44e-6, 0.32, 2.3),
        ChannelTap(60e-6, 0.22, -0.6),
    ),
}


def preset(name: str, snr_db: float = math.inf, seed: int = 0,
           doppler_scale: float = 1.0) -> ChannelModel:
    """Documented, versioned channel presets."""
    if name not in _PRESETS:
        raise UnknownPreset(
            f"unknown channel preset {name!r}; choose from {sorted(_PRESETS)}")
    return ChannelModel(_PRESETS[name], doppler_scale=doppler_scale,
                        snr_db=snr_db, seed=seed)
