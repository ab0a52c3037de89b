"""Command-line interface and the signal-file / metrics formats."""

import csv
import json

import numpy as np
import pytest

from ultramodem import cli, sigio
from ultramodem.cli import EXIT_CONFIG, EXIT_DECODE, EXIT_OK, main
from ultramodem.core import Domain, SampleBuffer
from tests.conftest import random_payload

LINK_CONFIG = """\
# minimal link definition
carrier_freq_hz = 1.13e6
symbol_rate_hz  = 1e6
sample_rate_hz  = 1e7
modulation      = qam16
"""

CHANNEL_FILE = """\
tap = 0 1.0
tap = 8e-6 0.35 1.1
snr_db = 30
"""


class TestSignalFile:
    def test_passband_round_trip(self, tmp_path, rng):
        x = rng.standard_normal(1000).astype(np.float32)
        buf = SampleBuffer(x, 1e7, Domain.PASSBAND)
        path = tmp_path / "sig.bin"
        sigio.write_signal(path, buf)
        back = sigio.read_signal(path)
        assert back.domain is Domain.PASSBAND
        assert back.sample_rate_hz == 1e7
        assert np.array_equal(back.samples, x)

    def test_baseband_round_trip(self, tmp_path, rng):
        z = (rng.standard_normal(500) + 1j * rng.standard_normal(500)
             ).astype(np.complex64)
        buf = SampleBuffer(z, 5e6, Domain.BASEBAND)
        path = tmp_path / "sig.bin"
        sigio.write_signal(path, buf)
        back = sigio.read_signal(path)
        assert back.domain is Domain.BASEBAND
        assert np.array_equal(back.samples, z)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTASIG!" + b"\x00" * 40)
        with pytest.raises(sigio.SignalFormatError):
            sigio.read_signal(path)

    def test_truncated_body_rejected(self, tmp_path, rng):
        x = rng.standard_normal(100).astype(np.float32)
        path = tmp_path / "sig.bin"
        sigio.write_signal(path, SampleBuffer(x, 1e7, Domain.PASSBAND))
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(sigio.SignalFormatError, match="length"):
            sigio.read_signal(path)


class TestConfigParsing:
    def test_link_config_file(self):
        cfg = cli.parse_link_config(LINK_CONFIG)
        assert cfg.carrier_freq_hz == 1.13e6
        assert cfg.modulation.value == "qam16"

    def test_missing_key(self):
        with pytest.raises(cli.ConfigError, match="missing required"):
            cli.parse_link_config("carrier_freq_hz = 1e6\n")

    def test_unknown_key(self):
        with pytest.raises(cli.ConfigError, match="unknown config keys"):
            cli.parse_link_config(LINK_CONFIG + "bogus = 1\n")

    def test_channel_file(self):
        model = cli.parse_channel_file(CHANNEL_FILE)
        assert len(model.taps) == 2
        assert model.taps[1].delay_s == 8e-6
        assert model.snr_db == 30.0

    def test_channel_file_needs_taps(self):
        with pytest.raises(cli.ConfigError, match="no taps"):
            cli.parse_channel_file("snr_db = 10\n")


class TestCommands:
    def test_simulate_round_trip(self, tmp_path, capsys):
        payload = random_payload(2000, seed=8)
        inp = tmp_path / "in.bin"
        out = tmp_path / "out.bin"
        metrics = tmp_path / "metrics.json"
        inp.write_bytes(payload)
        rc = main(["simulate", str(inp), "--out", str(out),
                   "--preset", "endoscopy", "--metrics", str(metrics)])
        assert rc == EXIT_OK
        assert out.read_bytes() == payload
        rep = json.loads(metrics.read_text())
        assert rep["ber"] == 0.0
        assert rep["data_rate_bps"] == 4e6
        assert "byte-identical" in capsys.readouterr().out

    def test_modulate_then_demodulate(self, tmp_path, capsys):
        payload = random_payload(1500, seed=9)
        inp = tmp_path / "in.bin"
        sig = tmp_path / "sig.bin"
        out = tmp_path / "out.bin"
        inp.write_bytes(payload)
        assert main(["modulate", str(inp), "--out", str(sig),
                     "--preset", "endoscopy"]) == EXIT_OK
        rc = main(["demodulate", str(sig), "--out", str(out),
                   "--preset", "endoscopy", "--truth", str(inp)])
        assert rc == EXIT_OK
        assert out.read_bytes() == payload
        text = capsys.readouterr().out
        assert "noncausal equalizer latency" in text
        assert "BER 0" in text

    def test_simulate_with_channel_file(self, tmp_path):
        payload = random_payload(1200, seed=10)
        inp = tmp_path / "in.bin"
        out = tmp_path / "out.bin"
        chan = tmp_path / "chan.txt"
        inp.write_bytes(payload)
        chan.write_text(CHANNEL_FILE)
        rc = main(["simulate", str(inp), "--out", str(out),
                   "--preset", "endoscopy", "--channel", str(chan)])
        assert rc == EXIT_OK
        assert out.read_bytes() == payload

    def test_config_error_exit_code(self, tmp_path, capsys):
        inp = tmp_path / "in.bin"
        inp.write_bytes(b"hello")
        bad = tmp_path / "bad.cfg"
        bad.write_text("carrier_freq_hz = -1\nsymbol_rate_hz = 1e6\n"
                       "sample_rate_hz = 1e7\nmodulation = qpsk\n")
        rc = main(["modulate", str(inp), "--out", str(tmp_path / "o"),
                   "--config", str(bad)])
        assert rc == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_decode_failure_exit_code(self, tmp_path, capsys, rng):
        # a noise-only signal has no frame to lock onto
        noise = rng.standard_normal(50000).astype(np.float32)
        sig = tmp_path / "sig.bin"
        sigio.write_signal(sig, SampleBuffer(noise, 1e7, Domain.PASSBAND))
        rc = main(["demodulate", str(sig), "--out", str(tmp_path / "o"),
                   "--preset", "endoscopy"])
        assert rc == EXIT_DECODE
        assert "decode failure" in capsys.readouterr().err

    def test_ber_sweep_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rc = main(["ber-sweep", "--preset", "porcine-hd",
                   "--ebn0-db", "4,6", "--bits-per-point", "20000",
                   "--out", str(out)])
        assert rc == EXIT_OK
        with open(out) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert float(rows[0]["ebn0_db"]) == 4.0
        assert 0 < float(rows[0]["ber"]) < 0.1


class TestMetricsReport:
    def test_validate_rejects_nonfinite(self):
        rep = sigio.MetricsReport(config={}, data_rate_bps=float("nan"),
                                  runtime_s=1.0)
        with pytest.raises(ValueError, match="not finite"):
            rep.validate()

    def test_validate_training_fraction_range(self):
        rep = sigio.MetricsReport(config={}, data_rate_bps=1.0, runtime_s=1.0,
                                  training_fraction=1.5)
        with pytest.raises(ValueError, match="training_fraction"):
            rep.validate()

    def test_save_round_trip(self, tmp_path):
        rep = sigio.MetricsReport(config={"a": 1}, data_rate_bps=2e6,
                                  runtime_s=0.5, ber=0.0)
        path = tmp_path / "m.json"
        rep.save(path)
        assert json.loads(path.read_text())["ber"] == 0.0
