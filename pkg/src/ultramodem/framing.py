"""Byte-stream transport: chunked ingestion, packetization, reassembly.

Payloads are opaque byte streams.  A fixed 16-byte prologue (magic, payload
length, CRC-32) is prepended inside the first packet so a received stream is
self-describing and end-to-end integrity is checkable.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .core import LinkConfig, Modulation, Role, SymbolBlock
from .rx import demap
from .tx import map_bits

PROLOGUE_MAGIC = b"UMF1"
PROLOGUE_BYTES = 16
_PROLOGUE_FMT = "<4sQI"  # magic, payload length, crc32


class ChecksumMismatch(RuntimeError):
    def __init__(self, expected: int, actual: int, estimated_byte_errors: int):
        super().__init__(
            f"payload checksum mismatch: expected {expected:#010x}, "
            f"got {actual:#010x} (~{estimated_byte_errors} byte errors)")
        self.estimated_byte_errors = estimated_byte_errors


class MissingEOF(RuntimeError):
    pass


class ProtocolError(RuntimeError):
    """The stream prologue is absent or corrupted beyond recovery."""


@dataclass(frozen=True)
class StreamMeta:
    payload_length_bytes: int
    chunk_bytes: int = 1024
    frame_count: int = 1
    checksum: int = 0


@dataclass(frozen=True)
class Chunk:
    data: bytes
    is_tail: bool = False


def ingest(source: bytes, chunk_bytes: int = 1024) -> list[Chunk]:
    """Split a byte stream into full chunks plus a flagged tail remainder."""
    if chunk_bytes <= 0:
        raise ValueError("chunk_bytes must be positive")
    chunks = [Chunk(source[i:i + chunk_bytes])
              for i in range(0, len(source) - len(source) % chunk_bytes, chunk_bytes)]
    tail = len(source) % chunk_bytes
    if tail:
        chunks.append(Chunk(source[-tail:], is_tail=True))
    return chunks


def pack_prologue(meta: StreamMeta) -> bytes:
    return struct.pack(_PROLOGUE_FMT, PROLOGUE_MAGIC,
                       meta.payload_length_bytes, meta.checksum)


def parse_prologue(raw: bytes, chunk_bytes: int = 1024) -> StreamMeta:
    if len(raw) < PROLOGUE_BYTES:
        raise ProtocolError("stream shorter than the 16-byte prologue")
    magic, length, crc = struct.unpack(_PROLOGUE_FMT, raw[:PROLOGUE_BYTES])
    if magic != PROLOGUE_MAGIC:
        raise ProtocolError(f"bad prologue magic {magic!r}")
    return StreamMeta(length, chunk_bytes=chunk_bytes, checksum=crc)


def stream_meta_for(payload: bytes, chunk_bytes: int = 1024) -> StreamMeta:
    return StreamMeta(len(payload), chunk_bytes=chunk_bytes,
                      checksum=zlib.crc32(payload))


def packetize(source, cfg: LinkConfig) -> tuple[list[SymbolBlock], StreamMeta]:
    """Map a byte stream to header-interval-sized symbol packets.

    `source` is either raw bytes or a chunk list from ingest().  The 16-byte
    prologue is prepended; symbols are segmented into packets of
    cfg.header_interval_symbols (the last may be short).  Headers and the
    EOF marker are added at frame assembly.
    """
    if isinstance(source, (bytes, bytearray)):
        payload = bytes(source)
    else:
        payload = b"".join(c.data for c in source)
    meta = stream_meta_for(payload, cfg.ingest_chunk_bytes)
    bits = np.unpackbits(np.frombuffer(pack_prologue(meta) + payload,
                                       dtype=np.uint8))
    block = map_bits(bits, cfg.modulation)
    plen = cfg.header_interval_symbols
    packets = [SymbolBlock(block.symbols[i:i + plen], block.roles[i:i + plen])
               for i in range(0, len(block), plen)]
    return packets, meta


def symbols_for_payload(n_payload_bytes: int, modulation: Modulation) -> int:
    """Data symbols needed for prologue + payload, including bit padding."""
    bits = (PROLOGUE_BYTES + n_payload_bytes) * 8
    k = modulation.bits_per_symbol
    return (bits + k - 1) // k


def reassemble(decided, modulation: Modulation,
               ber_estimate: float | None = None) -> tuple[bytes, StreamMeta]:
    """Strip framing from decided symbol blocks and verify integrity.

    Accepts a single SymbolBlock or a list of them, in order.  Raises
    MissingEOF when the stream ends without an EOF marker and
    ChecksumMismatch when the recovered payload fails its CRC.
    """
    blocks = [decided] if isinstance(decided, SymbolBlock) else list(decided)
    roles = np.concatenate([b.roles for b in blocks]) if blocks else np.empty(0)
    if not np.any(roles == Role.EOF):
        raise MissingEOF("no end-of-frame marker in the decided stream")
    symbols = np.concatenate([b.symbols for b in blocks])
    merged = SymbolBlock(symbols, roles)
    bits = demap(merged, modulation)
    raw = np.packbits(bits).tobytes()
    meta = parse_prologue(raw)
    payload = raw[PROLOGUE_BYTES:PROLOGUE_BYTES + meta.payload_length_bytes]
    if len(payload) < meta.payload_length_bytes:
        raise ProtocolError(
            f"stream truncated: prologue promises {meta.payload_length_bytes} "
            f"bytes, got {len(payload)}")
    actual = zlib.crc32(payload)
    if actual != meta.checksum:
        nbits = 8 * (PROLOGUE_BYTES + meta.payload_length_bytes)
        est = max(1, int(round((ber_estimate or 0.0) * nbits / 8)))
        raise ChecksumMismatch(meta.checksum, actual, est)
    return payload, meta


# --- buffering-latency simulation -------------------------------------------

@dataclass(frozen=True)
class BufferEvent:
    time_s: float
    action: str              # fill | drain | underflow | start
    fill_bytes: int
    produced_bytes: int
    consumed_bytes: int


@dataclass
class BufferTrace:
    events: list[BufferEvent] = field(default_factory=list)

    def add(self, *args) -> None:
        ev = BufferEvent(*args)
        if ev.fill_bytes < 0:
            raise ValueError("buffer fill level went negative")
        self.events.append(ev)

    @property
    def underflows(self) -> int:
        return sum(1 for e in self.events if e.action == "underflow")

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(vars(e)) for e in self.events)


def simulate_buffering(frame_schedule, fill_threshold: int,
                       drain_rate_bytes_per_s: float,
                       pipeline_delay_s: float = 0.0,
                       ) -> tuple[BufferTrace, float]:
    """Producer/consumer buffer simulation.

    frame_schedule: iterable of (time_s, nbytes) production events (decoded
    bytes arriving at the channel rate).  The consumer starts once the fill
    level reaches fill_threshold and then drains continuously at
    drain_rate_bytes_per_s.  Returns the event trace and the first-byte
    latency (time from first byte produced to first byte consumed).
    """
    schedule = sorted(frame_schedule)
    if not schedule:
        return BufferTrace(), 0.0
    if fill_threshold > sum(n for _, n in schedule):
        raise ValueError("fill_threshold exceeds total scheduled bytes")

    trace = BufferTrace()
    fill = produced = consumed = 0
    start_time: float | None = None
    drain_from: float | None = None

    def drain_until(t: float) -> None:
        nonlocal fill, consumed, drain_from
        if drain_from is None or t <= drain_from:
            return
        want = int(drain_rate_bytes_per_s * (t - drain_from))
        take = min(want, fill)
        fill -= take
        consumed += take
        if want > take:
            t_empty = drain_from + take / drain_rate_bytes_per_s
            trace.add(t_empty, "underflow", fill, produced, consumed)
        else:
            trace.add(t, "drain", fill, produced, consumed)
        drain_from = t

    for t, nbytes in schedule:
        drain_until(t)
        fill += nbytes
        produced += nbytes
        trace.add(t, "fill", fill, produced, consumed)
        if start_time is None and fill >= fill_threshold:
            start_time = t + pipeline_delay_s
            drain_from = start_time
            trace.add(start_time, "start", fill, produced, consumed)

    if drain_from is not None and fill > 0:
        t_end = max(drain_from, schedule[-1][0]) + fill / drain_rate_bytes_per_s
        drain_until(t_end)

    latency = (start_time if start_time is not None else schedule[0][0]) - schedule[0][0]
    return trace, latency
