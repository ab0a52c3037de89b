"""Adaptive decision-feedback equalizer: RLS, PLL, sparse pruning."""

import numpy as np
import pytest

from ultramodem.core import Modulation, Role, SymbolBlock, constellation, training_sequence
from ultramodem.equalizer import (
    DivergenceError,
    EqualizerConfig,
    EqualizerState,
    dfe_run,
    plan_modes,
    run_segment,
    sparse_select,
)


def synth_r2(symbols, channel_t2, noise_db=None, seed=0, cfo_cycles_per_symbol=0.0):
    """2 samples/symbol stream: zero-stuffed symbols through a T/2 channel."""
    up = np.zeros(2 * len(symbols), dtype=complex)
    up[::2] = symbols
    r2 = np.convolve(up, np.asarray(channel_t2, dtype=complex))
    if cfo_cycles_per_symbol:
        n = np.arange(len(r2))
        r2 = r2 * np.exp(2j * np.pi * cfo_cycles_per_symbol * n / 2.0)
    if noise_db is not None:
        rng = np.random.default_rng(seed)
        p = np.mean(np.abs(r2) ** 2)
        sd = np.sqrt(p * 10 ** (-noise_db / 10) / 2)
        r2 = r2 + sd * (rng.standard_normal(len(r2))
                        + 1j * rng.standard_normal(len(r2)))
    return np.concatenate([r2, np.zeros(200, dtype=complex)])


def train_then_dd(r2, cfg, refs, n_dd, modulation=Modulation.QAM16):
    state = EqualizerState.fresh(cfg)
    n = len(refs)
    run_segment(r2, 0, state, np.ones(n, np.int8), refs, modulation)
    dec, soft, e2 = run_segment(r2, n, state, np.zeros(n_dd, np.int8),
                                np.zeros(n_dd, dtype=complex), modulation)
    return state, dec, e2


class TestRlsOracle:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_direct_weighted_solve(self, seed):
        lam, delta = 0.997, 1e-2
        n_ff, n_fb, n = 8, 4, 200
        r = np.random.default_rng(seed)
        cfg = EqualizerConfig(n_ff=n_ff, n_fb=n_fb, rls_lambda=lam,
                              pll_gains=(0.0, 0.0), delta_init=delta)
        pts = constellation(Modulation.QAM16)
        ref = pts[r.integers(0, 16, n)]
        r2 = r.standard_normal(2 * n + n_ff) + 1j * r.standard_normal(2 * n + n_ff)
        state = EqualizerState.fresh(cfg)
        run_segment(r2, 0, state, np.ones(n, np.int8), ref, Modulation.QAM16)

        # oracle: solve the exponentially weighted normal equations directly
        nt = n_ff + n_fb
        R = np.eye(nt, dtype=complex) * delta
        p = np.zeros(nt, dtype=complex)
        dhist = np.zeros(n_fb, dtype=complex)
        for k in range(n):
            u = np.concatenate([r2[2 * k:2 * k + n_ff], dhist])
            R = lam * R + np.outer(np.conj(u), u)
            p = lam * p + np.conj(u) * ref[k]
            dhist = np.roll(dhist, 1)
            dhist[0] = ref[k]
        w = np.linalg.solve(R, p)
        assert np.max(np.abs(w - state.weights)) < 1e-6


class TestConvergence:
    def test_isi_channel_equalized(self):
        refs = training_sequence(11, 1500, Modulation.QAM16)
        data = training_sequence(12, 3500, Modulation.QAM16)
        r2 = synth_r2(np.concatenate([refs, data]), [0.25, 1.0, 0.35, -0.15j],
                      noise_db=30.0)
        cfg = EqualizerConfig(n_ff=16, n_fb=8, rls_lambda=0.997)
        state, dec, e2 = train_then_dd(r2, cfg, refs, 3500)
        assert np.mean(e2[-1000:]) < 5e-3
        assert np.max(np.abs(dec[-1000:] - data[-1000:])) < 1e-9

    def test_static_phase_rotation_absorbed(self):
        refs = training_sequence(11, 1200, Modulation.QAM16)
        data = training_sequence(12, 1200, Modulation.QAM16)
        r2 = synth_r2(np.concatenate([refs, data]),
                      [np.exp(0.9j)], noise_db=35.0)
        cfg = EqualizerConfig(n_ff=8, n_fb=0, rls_lambda=0.997)
        state, dec, e2 = train_then_dd(r2, cfg, refs, 1200)
        assert np.mean(e2[-500:]) < 2e-3

    def test_pll_tracks_carrier_offset(self):
        # residual CFO after Doppler correction: a slow rotation ramp
        refs = training_sequence(11, 2000, Modulation.QAM16)
        data = training_sequence(12, 4000, Modulation.QAM16)
        r2 = synth_r2(np.concatenate([refs, data]), [1.0],
                      noise_db=35.0, cfo_cycles_per_symbol=5e-5)
        cfg = EqualizerConfig(n_ff=8, n_fb=0, rls_lambda=0.997)
        state, dec, e2 = train_then_dd(r2, cfg, refs, 4000)
        assert np.mean(e2[-1000:]) < 2e-3
        # the PLL, not the weights, should carry the rotation: the phase
        # estimate keeps advancing across the run
        assert abs(state.phase_est) > 0.01

    def test_half_sample_timing_offset(self):
        # fractionally spaced taps compensate a T/2 timing error
        refs = training_sequence(11, 1500, Modulation.QAM16)
        data = training_sequence(12, 1500, Modulation.QAM16)
        r2 = synth_r2(np.concatenate([refs, data]), [0.5, 0.5])
        cfg = EqualizerConfig(n_ff=12, n_fb=4, rls_lambda=0.997)
        state, dec, e2 = train_then_dd(r2, cfg, refs, 1500)
        assert np.mean(e2[-500:]) < 5e-3


class TestSparse:
    def test_echo_channel_pruned_but_still_equalized(self):
        # symbol-spaced echo 20 symbols late: needs one distant feedback tap
        refs = training_sequence(21, 2500, Modulation.QAM16)
        data = training_sequence(22, 2500, Modulation.QAM16)
        h = np.zeros(41, dtype=complex)
        h[0] = 1.0
        h[40] = 0.45
        r2 = synth_r2(np.concatenate([refs, data]), h, noise_db=30.0)
        cfg = EqualizerConfig(n_ff=12, n_fb=30, rls_lambda=0.997)
        state = EqualizerState.fresh(cfg)
        run_segment(r2, 0, state, np.ones(len(refs), np.int8), refs,
                    Modulation.QAM16)
        sparse_select(state, 12)
        assert len(state.active) == 12
        # the echo-cancelling feedback tap (lag 20 symbols) must survive
        fb_lags = state.active[state.active >= cfg.n_ff] - cfg.n_ff
        assert 19 in fb_lags
        assert state.inv_corr.shape == (12, 12)
        dropped = np.setdiff1d(np.arange(cfg.n_ff + cfg.n_fb), state.active)
        assert np.all(state.weights[dropped] == 0.0)
        dec, soft, e2 = run_segment(
            r2, len(refs), state, np.zeros(2500, np.int8),
            np.zeros(2500, dtype=complex), Modulation.QAM16)
        assert np.mean(e2[-1000:]) < 5e-3
        assert np.max(np.abs(dec[-1000:] - data[-1000:])) < 1e-9

    def test_keep_too_large_raises(self):
        state = EqualizerState.fresh(EqualizerConfig(n_ff=4, n_fb=4))
        with pytest.raises(ValueError):
            sparse_select(state, 9)

    def test_keep_all_is_noop(self):
        state = EqualizerState.fresh(EqualizerConfig(n_ff=4, n_fb=4))
        sparse_select(state, 8)
        assert len(state.active) == 8


class TestGuards:
    def test_divergence_detected(self):
        # a 100x amplitude step after convergence blows the error window
        refs = training_sequence(41, 800, Modulation.QAM16)
        data = training_sequence(42, 1200, Modulation.QAM16)
        r2 = synth_r2(np.concatenate([refs, data]), [1.0])
        r2[2 * 800:] *= 100.0
        cfg = EqualizerConfig(n_ff=8, n_fb=0)
        state = EqualizerState.fresh(cfg)
        run_segment(r2, 0, state, np.ones(800, np.int8), refs, Modulation.QAM16)
        with pytest.raises(DivergenceError) as e:
            run_segment(r2, 800, state, np.zeros(1200, np.int8),
                        np.zeros(1200, dtype=complex), Modulation.QAM16)
        assert e.value.symbol_index >= 800

    def test_stream_too_short(self):
        cfg = EqualizerConfig(n_ff=8, n_fb=0)
        state = EqualizerState.fresh(cfg)
        with pytest.raises(ValueError, match="too short"):
            run_segment(np.zeros(10, dtype=complex), 0, state,
                        np.ones(100, np.int8), np.zeros(100, dtype=complex),
                        Modulation.QPSK)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EqualizerConfig(n_ff=0)
        with pytest.raises(ValueError):
            EqualizerConfig(rls_lambda=1.5)
        with pytest.raises(ValueError):
            EqualizerConfig(n_ff=4, n_fb=4, sparse_keep=9)
        with pytest.raises(ValueError):
            EqualizerConfig(delta_init=0.0)

    def test_noncausal_latency(self):
        cfg = EqualizerConfig(n_ff=70, n_fb=200)
        assert cfg.noncausal_latency_s(1e6) == pytest.approx(35e-6)


class TestDfeRun:
    def test_planned_sequence(self):
        refs = training_sequence(31, 1500, Modulation.QAM16)
        data = training_sequence(32, 2000, Modulation.QAM16)
        sym = np.concatenate([refs, data])
        roles = np.concatenate([
            np.full(1500, Role.TRAINING, np.uint8),
            np.full(2000, Role.DATA, np.uint8)])
        r2 = synth_r2(sym, [1.0, 0.3], noise_db=30.0)
        cfg = EqualizerConfig(n_ff=12, n_fb=4, rls_lambda=0.997, sparse_keep=10)
        plan = SymbolBlock(sym, roles)
        decided, state, soft = dfe_run(r2, cfg, plan, Modulation.QAM16)
        assert len(decided) == len(plan)
        assert len(state.active) == 10
        assert np.max(np.abs(decided.symbols[-500:] - data[-500:])) < 1e-9
        assert len(state.error_trace) == len(plan)

    def test_plan_modes(self):
        roles = np.array([Role.TRAINING, Role.DATA, Role.HEADER, Role.EOF],
                         dtype=np.uint8)
        mode, ref = plan_modes(roles, np.zeros(4, dtype=complex))
        assert mode.tolist() == [1, 0, 2, 2]
