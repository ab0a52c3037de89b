"""Fractionally-spaced, phase-tracking, sparse decision-feedback equalizer.

Feedforward taps operate at 2 samples/symbol on the complex baseband;
feedback taps are symbol spaced over past decisions.  Coefficients adapt by
exponentially-weighted RLS; a second-order decision-directed PLL tracks
residual carrier phase inside the loop.

Conventions: the input window for symbol k is r2[2k : 2k + n_ff], i.e. the
filter looks ahead of the nominal symbol instant, so the noncausal latency
is (n_ff / 2) symbol periods.  The equalizer output is
    y_k = ff . window_k * exp(-j*phase) - fb . decision_history_k
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .core import Modulation, Role, SymbolBlock, constellation, header_points

ERR_WINDOW = 512          # symbols in the divergence-detection window
DIVERGENCE_FACTOR = 4.0   # window MSE limit, in units of constellation power


class DivergenceError(RuntimeError):
    """Equalizer error energy exceeded the divergence limit."""

    def __init__(self, symbol_index: int):
        super().__init__(
            f"equalizer diverged near symbol {symbol_index}: mean |e|^2 over "
            f"{ERR_WINDOW} symbols exceeded {DIVERGENCE_FACTOR}x constellation power")
        self.symbol_index = symbol_index


@dataclass(frozen=True)
class EqualizerConfig:
    n_ff: int = 70                    # feedforward taps at 2 samples/symbol
    n_fb: int = 200                   # feedback taps, symbol spaced
    rls_lambda: float = 0.997
    sparse_keep: int | None = None    # active-tap budget after initial training
    pll_gains: tuple[float, float] = (1e-2, 1e-4)
    delta_init: float = 1e-2          # P(0) = I / delta_init

    def __post_init__(self) -> None:
        if self.n_ff < 1 or self.n_fb < 0:
            raise ValueError("n_ff must be >= 1 and n_fb >= 0")
        if not (0.9 < self.rls_lambda < 1.0):
            raise ValueError("rls_lambda must lie in (0.9, 1)")
        if self.delta_init <= 0:
            raise ValueError("delta_init must be positive")
        if self.sparse_keep is not None and not (
                1 <= self.sparse_keep <= self.n_ff + self.n_fb):
            raise ValueError("sparse_keep must lie in [1, n_ff + n_fb]")

    def noncausal_latency_s(self, symbol_rate_hz: float) -> float:
        """Look-ahead imposed by the feedforward filter: (n_ff/2) * T_b."""
        return (self.n_ff / 2.0) / symbol_rate_hz


@dataclass
class EqualizerState:
    """Single-owner mutable adaptation state; one instance per frame."""

    config: EqualizerConfig
    weights: np.ndarray        # combined [ff, -fb] coefficients, len n_ff+n_fb
    inv_corr: np.ndarray       # RLS P-matrix over the active tap set
    active: np.ndarray         # indices of active taps into weights
    decision_history: np.ndarray
    scalars: np.ndarray        # [phase, pll_integrator, err_sum, symbol_count]
    err_buf: np.ndarray        # circular window of recent |e|^2
    error_chunks: list = field(default_factory=list)

    @classmethod
    def fresh(cls, config: EqualizerConfig) -> "EqualizerState":
        nt = config.n_ff + config.n_fb
        return cls(
            config=config,
            weights=np.zeros(nt, dtype=np.complex128),
            inv_corr=np.eye(nt, dtype=np.complex128) / config.delta_init,
            active=np.arange(nt, dtype=np.int64),
            decision_history=np.zeros(config.n_fb, dtype=np.complex128),
            scalars=np.zeros(4, dtype=np.float64),
            err_buf=np.zeros(ERR_WINDOW, dtype=np.float64),
        )

    @property
    def error_trace(self) -> np.ndarray:
        if not self.error_chunks:
            return np.empty(0)
        return np.concatenate(self.error_chunks)

    @property
    def ff_coeffs(self) -> np.ndarray:
        return self.weights[: self.config.n_ff].copy()

    @property
    def fb_coeffs(self) -> np.ndarray:
        return -self.weights[self.config.n_ff:]

    @property
    def phase_est(self) -> float:
        return float(self.scalars[0])


@njit(cache=True)
def _dfe_kernel(r2, k0, nsym, mode, ref, const, hdr_c, hdr_e,
                n_ff, lam, kp, ki,
                w, P, act, dhist, err_buf, scal,
                dec, soft, e2):
    """Run nsym decision/update steps starting at global symbol k0.

    mode: 0 decision-directed, 1 known reference, 2 header (two-point set).
    Returns the global symbol index where divergence was detected, or -1.
    """
    m = len(act)
    n_fb = len(dhist)
    u = np.empty(m, dtype=np.complex128)
    g = np.empty(m, dtype=np.complex128)
    phase = scal[0]
    integ = scal[1]
    esum = scal[2]
    count = int(scal[3])
    nconst = len(const)
    diverged = -1

    for s in range(nsym):
        k = k0 + s
        rot = complex(math.cos(phase), -math.sin(phase))
        for a in range(m):
            j = act[a]
            if j < n_ff:
                u[a] = r2[2 * k + j] * rot
            else:
                u[a] = dhist[j - n_ff]
        y = 0.0 + 0.0j
        for a in range(m):
            y += w[act[a]] * u[a]

        md = mode[s]
        if md == 1:
            d = ref[s]
        elif md == 2:
            dc = (y.real - hdr_c.real) ** 2 + (y.imag - hdr_c.imag) ** 2
            de = (y.real - hdr_e.real) ** 2 + (y.imag - hdr_e.imag) ** 2
            d = hdr_c if dc <= de else hdr_e
        else:
            best = 0
            bd = 1e300
            for c in range(nconst):
                dd = (y.real - const[c].real) ** 2 + (y.imag - const[c].imag) ** 2
                if dd < bd:
                    bd = dd
                    best = c
            d = const[best]
        e = d - y

        # RLS: regressor conj(u); P approximates the inverse of the
        # exponentially weighted correlation matrix sum conj(u) u^T
        for a in range(m):
            acc = 0.0 + 0.0j
            for b in range(m):
                acc += P[a, b] * u[b].conjugate()
            g[a] = acc
        denom = lam
        for a in range(m):
            denom += (u[a] * g[a]).real
        # rank-1 downdate of the Hermitian P: compute the upper triangle
        # only and mirror it, which also pins the symmetry exactly
        inv_den = 1.0 / denom
        inv_lam = 1.0 / lam
        for a in range(m):
            kv = g[a] * inv_den
            w[act[a]] += kv * e
            P[a, a] = complex((P[a, a].real - (kv * g[a].conjugate()).real)
                              * inv_lam, 0.0)
            for b in range(a + 1, m):
                h = (P[a, b] - kv * g[b].conjugate()) * inv_lam
                P[a, b] = h
                P[b, a] = h.conjugate()

        # second-order decision-directed PLL on the residual rotation of y
        phi = math.atan2((y * d.conjugate()).imag, (y * d.conjugate()).real)
        integ += ki * phi
        phase += kp * phi + integ
        while phase > math.pi:
            phase -= 2.0 * math.pi
        while phase <= -math.pi:
            phase += 2.0 * math.pi

        for i in range(n_fb - 1, 0, -1):
            dhist[i] = dhist[i - 1]
        if n_fb > 0:
            dhist[0] = d

        dec[s] = d
        soft[s] = y
        e2v = e.real * e.real + e.imag * e.imag
        e2[s] = e2v
        slot = count % ERR_WINDOW
        esum += e2v - err_buf[slot]
        err_buf[slot] = e2v
        count += 1
        if count >= ERR_WINDOW and esum / ERR_WINDOW > DIVERGENCE_FACTOR:
            diverged = k
            break

    scal[0] = phase
    scal[1] = integ
    scal[2] = esum
    scal[3] = count
    return diverged


def run_segment(r2: np.ndarray, k0: int, state: EqualizerState,
                mode: np.ndarray, ref: np.ndarray,
                modulation: Modulation) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance the equalizer over len(mode) symbols; returns (dec, soft, e2)."""
    nsym = len(mode)
    cfg = state.config
    need = 2 * (k0 + nsym - 1) + cfg.n_ff
    if need > len(r2):
        raise ValueError(f"sample stream too short: need {need}, have {len(r2)}")
    const = constellation(modulation)
    hdr_c, hdr_e = header_points(modulation)
    dec = np.empty(nsym, dtype=np.complex128)
    soft = np.empty(nsym, dtype=np.complex128)
    e2 = np.empty(nsym, dtype=np.float64)
    div = _dfe_kernel(
        np.ascontiguousarray(r2, dtype=np.complex128), k0, nsym,
        np.ascontiguousarray(mode, dtype=np.int8),
        np.ascontiguousarray(ref, dtype=np.complex128),
        const, complex(hdr_c), complex(hdr_e),
        cfg.n_ff, cfg.rls_lambda, cfg.pll_gains[0], cfg.pll_gains[1],
        state.weights, state.inv_corr, state.active, state.decision_history,
        state.err_buf, state.scalars, dec, soft, e2)
    state.error_chunks.append(e2)
    if div >= 0:
        raise DivergenceError(div)
    return dec, soft, e2


def sparse_select(state: EqualizerState, keep: int) -> EqualizerState:
    """Restrict adaptation to the keep largest-magnitude coefficients.

    Dropped taps are zeroed and frozen; the inverse-correlation matrix is
    reduced to the surviving rows/columns so adaptation continues on the
    active set.
    """
    if keep > len(state.active):
        raise ValueError("keep exceeds the number of active taps")
    if keep == len(state.active):
        return state
    mags = np.abs(state.weights[state.active])
    order = np.argsort(mags)[::-1][:keep]
    order.sort()
    new_active = state.active[order]
    dropped = np.setdiff1d(state.active, new_active)
    state.weights[dropped] = 0.0
    state.inv_corr = np.ascontiguousarray(state.inv_corr[np.ix_(order, order)])
    state.active = np.ascontiguousarray(new_active)
    return state


def plan_modes(roles: np.ndarray, known: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Translate role tags into kernel modes and reference symbols."""
    mode = np.zeros(len(roles), dtype=np.int8)
    mode[roles == Role.TRAINING] = 1
    mode[(roles == Role.HEADER) | (roles == Role.EOF)] = 2
    ref = np.asarray(known, dtype=np.complex128)
    return mode, ref


def dfe_run(samples: np.ndarray, cfg: EqualizerConfig, plan: SymbolBlock,
            modulation: Modulation,
            sparse_after: int | None = None,
            ) -> tuple[SymbolBlock, EqualizerState, np.ndarray]:
    """One-shot DFE over a fully planned symbol sequence.

    plan.roles marks training/header/data positions; plan.symbols supplies
    the reference values at training positions (other positions are run
    decision-directed).  If cfg.sparse_keep is set, taps are pruned after
    `sparse_after` symbols (default: after the leading run of training
    symbols).
    """
    state = EqualizerState.fresh(cfg)
    mode, ref = plan_modes(plan.roles, plan.symbols)
    n = len(plan)
    if sparse_after is None:
        lead = np.flatnonzero(plan.roles != Role.TRAINING)
        sparse_after = int(lead[0]) if len(lead) else n
    dec = np.empty(n, dtype=np.complex128)
    soft = np.empty(n, dtype=np.complex128)
    split = min(sparse_after, n) if cfg.sparse_keep is not None else n
    if split > 0:
        dec[:split], soft[:split], _ = run_segment(
            samples, 0, state, mode[:split], ref[:split], modulation)
    if cfg.sparse_keep is not None and cfg.sparse_keep < len(state.active):
        sparse_select(state, cfg.sparse_keep)
    if split < n:
        dec[split:], soft[split:], _ = run_segment(
            samples, split, state, mode[split:], ref[split:], modulation)
    return SymbolBlock(dec, plan.roles.copy()), state, soft
