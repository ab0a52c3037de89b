"""Command-line surface: modulate, demodulate, simulate, ber-sweep."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import channel as chan
from . import framing, pipeline, rx, sigio, tx
from .core import (
    ChirpSpec,
    ConfigError,
    LinkConfig,
    Modulation,
    data_rate,
    default_chirp,
    link_preset,
    validate_config,
)
from .equalizer import DivergenceError, EqualizerConfig

EXIT_OK = 0
EXIT_DECODE = 1
EXIT_CONFIG = 2

_DECODE_ERRORS = (rx.NoFrameFound, DivergenceError, framing.ChecksumMismatch,
                  framing.MissingEOF, framing.ProtocolError,
                  sigio.SignalFormatError)


def _parse_kv(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out.setdefault(key, []).append(value)
    return out


def parse_link_config(text: str) -> LinkConfig:
    kv = {k: v[-1] for k, v in _parse_kv(text).items()}
    try:
        fc = float(kv.pop("carrier_freq_hz"))
        fb = float(kv.pop("symbol_rate_hz"))
        fs = float(kv.pop("sample_rate_hz"))
        mod = Modulation(kv.pop("modulation").lower())
    except KeyError as e:
        raise ConfigError(f"missing required config key {e.args[0]!r}") from None
    chirp = default_chirp(fc, fb)
    chirp = ChirpSpec(
        float(kv.pop("chirp_start_freq_hz", chirp.start_freq_hz)),
        float(kv.pop("chirp_end_freq_hz", chirp.end_freq_hz)),
        float(kv.pop("chirp_duration_s", chirp.duration_s)),
    )
    fields = {
        "rrc_rolloff": float, "rrc_span_symbols": int, "guard_samples": int,
        "training_symbols_per_frame": int, "header_interval_symbols": int,
        "ingest_chunk_bytes": int, "retrain_symbols_per_packet": int,
        "training_seed": int,
    }
    extra = {}
    for name, cast in fields.items():
        if name in kv:
            extra[name] = cast(kv.pop(name))
    if kv:
        raise ConfigError(f"unknown config keys: {sorted(kv)}")
    return validate_config(LinkConfig(fc, fb, fs, mod, chirp, **extra))


def parse_channel_file(text: str) -> chan.ChannelModel:
    kv = _parse_kv(text)
    taps = []
    for spec in kv.pop("tap", []):
        parts = [float(p) for p in spec.replace(",", " ").split()]
        if len(parts) not in (2, 3):
            raise ConfigError(f"tap needs 'delay gain [phase]', got {spec!r}")
        taps.append(chan.ChannelTap(*parts))
    if not taps:
        raise ConfigError("channel file defines no taps")
    scalars = {k: v[-1] for k, v in kv.items()}
    known = {"doppler_scale": 1.0, "snr_db": math.inf, "seed": 0}
    for k in list(scalars):
        if k not in known:
            raise ConfigError(f"unknown channel key {k!r}")
        known[k] = float(scalars[k]) if k != "seed" else int(scalars[k])
    return chan.ChannelModel(tuple(taps), known["doppler_scale"],
                             known["snr_db"], int(known["seed"]))


def _load_link_config(args) -> LinkConfig:
    if args.config:
        return parse_link_config(Path(args.config).read_text())
    return link_preset(args.preset)


def _load_channel(args) -> chan.ChannelModel:
    name = args.channel
    snr = args.snr_db if args.snr_db is not None else math.inf
    if name and Path(name).is_file():
        model = parse_channel_file(Path(name).read_text())
        if args.snr_db is not None or args.seed:
            model = dataclasses.replace(model, snr_db=snr, seed=args.seed)
        return model
    return chan.preset(name or "clean", snr_db=snr, seed=args.seed)


def _config_echo(cfg: LinkConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["modulation"] = cfg.modulation.value
    return d


def _equalizer_from(args, cfg: LinkConfig) -> EqualizerConfig:
    eq = pipeline.default_equalizer(cfg)
    overrides = {name: getattr(args, name)
                 for name in ("n_ff", "n_fb", "rls_lambda", "sparse_keep")
                 if getattr(args, name, None) is not None}
    return dataclasses.replace(eq, **overrides) if overrides else eq


def cmd_modulate(args) -> int:
    cfg = _load_link_config(args)
    payload = Path(args.input).read_bytes()
    t0 = time.perf_counter()
    frame, layout, meta = pipeline.transmit_file(payload, cfg)
    sigio.write_signal(args.out, frame)
    report = sigio.MetricsReport(
        config=_config_echo(cfg),
        data_rate_bps=data_rate(cfg),
        runtime_s=time.perf_counter() - t0,
        symbol_counts={
            "training_symbols": layout.training_len,
            "data_symbols": layout.data_symbols,
            "packets": layout.n_packets,
            "total_symbols": layout.total_symbols,
        },
    ).validate()
    if args.metrics:
        report.save(args.metrics)
    print(f"frame: {layout.n_packets} packets of {layout.packet_len} symbols "
          f"(last {layout.last_packet_len}), {layout.training_len} training "
          f"symbols, chirp {layout.chirp_len} + guard {layout.guard_len} samples, "
          f"{layout.total_symbols} symbols total")
    print(f"wrote {args.out}: {len(frame.samples)} samples at "
          f"{frame.sample_rate_hz:g} Hz, gross rate {data_rate(cfg) / 1e6:g} Mbps")
    return EXIT_OK


def _demodulate_report(cfg, result, truth: bytes | None, runtime: float,
                       eq: EqualizerConfig) -> sigio.MetricsReport:
    ber = errors = total = None
    if truth is not None:
        tb = np.unpackbits(np.frombuffer(truth, dtype=np.uint8))
        rb = np.unpackbits(np.frombuffer(result.payload, dtype=np.uint8))
        if len(tb) == len(rb):
            errors, total, ber = rx.compute_ber(tb, rb)
    trace = result.state.error_trace
    tail = float(np.mean(trace[-2048:])) if len(trace) else None
    counts = result.layout_counts
    return sigio.MetricsReport(
        config=_config_echo(cfg),
        data_rate_bps=data_rate(cfg),
        runtime_s=runtime,
        frame_start_sample=result.sync.frame_start_sample,
        sync_confidence=result.sync.confidence,
        doppler_scale=result.sync.doppler_scale,
        ber=ber, bit_errors=errors, total_bits=total,
        symbol_counts=counts,
        training_fraction=counts["training_symbols"] / max(1, counts["total_symbols"]),
        noncausal_latency_s=eq.noncausal_latency_s(cfg.symbol_rate_hz),
        error_tail_mse=tail,
        warnings=list(result.warnings),
    ).validate()


def cmd_demodulate(args) -> int:
    cfg = _load_link_config(args)
    eq = _equalizer_from(args, cfg)
    buf = sigio.read_signal(args.input)
    t0 = time.perf_counter()
    result = pipeline.receive_frame(buf, cfg, eq)
    runtime = time.perf_counter() - t0
    Path(args.out).write_bytes(result.payload)
    truth = Path(args.truth).read_bytes() if args.truth else None
    report = _demodulate_report(cfg, result, truth, runtime, eq)
    if args.metrics:
        report.save(args.metrics)
    lat_us = report.noncausal_latency_s * 1e6
    print(f"frame at sample {result.sync.frame_start_sample} "
          f"(confidence {result.sync.confidence:.3f}), doppler scale "
          f"{result.sync.doppler_scale:.6f}")
    print(f"recovered {len(result.payload)} bytes in {runtime:.1f} s; "
          f"noncausal equalizer latency {lat_us:.1f} us"
          + (f"; BER {report.ber:.3g}" if report.ber is not None else ""))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_link_config(args)
    eq = _equalizer_from(args, cfg)
    model = _load_channel(args)
    payload = Path(args.input).read_bytes()
    rep = pipeline.run_link(payload, cfg, model, eq, truth=payload)
    if args.out:
        Path(args.out).write_bytes(rep.payload)
    report = sigio.MetricsReport(
        config=_config_echo(cfg),
        data_rate_bps=data_rate(cfg),
        runtime_s=rep.runtime_s,
        frame_start_sample=rep.sync.frame_start_sample,
        sync_confidence=rep.sync.confidence,
        doppler_scale=rep.sync.doppler_scale,
        ber=rep.ber, bit_errors=rep.bit_errors, total_bits=rep.total_bits,
        symbol_counts=rep.counts,
        training_fraction=rep.training_fraction,
        noncausal_latency_s=rep.noncausal_latency_s,
        error_tail_mse=None if math.isnan(rep.error_tail_mse) else rep.error_tail_mse,
        warnings=list(rep.warnings),
    ).validate()
    if args.metrics:
        report.save(args.metrics)
    intact = "byte-identical" if rep.ber == 0.0 else f"BER {rep.ber}"
    print(f"simulated link: {len(payload)} bytes, {intact}, "
          f"runtime {rep.runtime_s:.1f} s")
    if rep.ber is not None and rep.ber > 0:
        print(f"bit errors: {rep.bit_errors} / {rep.total_bits}")
    return EXIT_OK


def cmd_ber_sweep(args) -> int:
    cfg = _load_link_config(args)
    ebn0 = [float(v) for v in args.ebn0_db.split(",")]
    rows = pipeline.ber_sweep(cfg, ebn0, args.bits_per_point, args.seed)

    def emit(stream):
        writer = csv.DictWriter(stream, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    if args.out:
        with open(args.out, "w", newline="") as f:
            emit(f)
        print(f"wrote {len(rows)} points to {args.out}")
    else:
        emit(sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ultramodem",
        description="Software-defined ultrasonic modem: single-carrier QAM "
                    "link with chirp synchronization and an RLS-adapted "
                    "decision-feedback equalizer.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, channel=False):
        sp.add_argument("--config", help="link config file (key = value lines)")
        sp.add_argument("--preset", default="rabbit",
                        choices=["rabbit", "porcine-hd", "endoscopy"],
                        help="named link configuration")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--metrics", help="write a JSON metrics report here")
        if channel:
            sp.add_argument("--channel", default="clean",
                            help="channel preset name or channel file path")
            sp.add_argument("--snr-db", dest="snr_db", type=float, default=None)
        sp.add_argument("--n-ff", dest="n_ff", type=int, default=None)
        sp.add_argument("--n-fb", dest="n_fb", type=int, default=None)
        sp.add_argument("--rls-lambda", dest="rls_lambda", type=float, default=None)
        sp.add_argument("--sparse-keep", dest="sparse_keep", type=int, default=None)

    sp = sub.add_parser("modulate", help="file bytes -> passband signal file")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_modulate)

    sp = sub.add_parser("demodulate", help="signal file -> recovered bytes")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", help="ground-truth file for BER reporting")
    common(sp)
    sp.set_defaults(func=cmd_demodulate)

    sp = sub.add_parser("simulate",
                        help="modulate -> simulated channel -> demodulate")
    sp.add_argument("input")
    sp.add_argument("--out")
    common(sp, channel=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("ber-sweep", help="AWGN waterfall table (CSV)")
    sp.add_argument("--ebn0-db", dest="ebn0_db", required=True,
                    help="comma-separated Eb/N0 points in dB")
    sp.add_argument("--bits-per-point", dest="bits_per_point", type=int,
                    default=2_000_000)
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(func=cmd_ber_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _DECODE_ERRORS as e:
        print(f"decode failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DECODE


if __name__ == "__main__":
    sys.exit(main())
