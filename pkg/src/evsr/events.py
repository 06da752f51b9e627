"""Address-event data model: timestamped, signed-polarity pixel events.

Timestamps are integer microseconds since the window origin, so every
serialization round-trips bit-exactly.  Streams are kept in a canonical
total order (t, then y, then x, then p) which makes all downstream
outputs byte-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

ON = 1
OFF = -1

MAGIC = b"EVSR"
_HEADER = struct.Struct("<4sHHII")
_RECORD_DTYPE = np.dtype(
    [("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1")]
)


class FormatError(ValueError):
    """A byte payload or text file violates the event-stream format."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval [t0, t1) in microseconds."""

    t0: int
    t1: int

    def __post_init__(self):
        if self.t0 < 0:
            raise ValueError(f"window start must be >= 0, got {self.t0}")
        if self.t0 >= self.t1:
            raise ValueError(f"window [{self.t0}, {self.t1}) is empty or inverted")

    @property
    def length(self) -> int:
        return self.t1 - self.t0


@dataclass(frozen=True, eq=False)
class EventStream:
    """Immutable event stream with sensor geometry and canonical ordering.

    Events are stored columnar (t, x, y, p arrays).  Construct through
    :meth:`create` or :meth:`from_events`, which validate ranges and sort
    into canonical order; the arrays are marked read-only afterwards.
    """

    width: int
    height: int
    duration: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    @classmethod
    def create(cls, width, height, duration, t, x, y, p) -> "EventStream":
        if width <= 0 or height <= 0:
            raise ValueError(f"sensor geometry must be positive, got {width}x{height}")
        if duration < 0:
            raise ValueError(f"duration must be >= 0, got {duration}")
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int32)
        y = np.asarray(y, dtype=np.int32)
        p = np.asarray(p, dtype=np.int8)
        if not (t.shape == x.shape == y.shape == p.shape) or t.ndim != 1:
            raise ValueError("event columns must be 1-D arrays of equal length")
        if t.size:
            if t.min() < 0 or t.max() > duration:
                raise ValueError("event timestamp outside [0, duration]")
            if x.min() < 0 or x.max() >= width:
                raise ValueError("x out of range")
            if y.min() < 0 or y.max() >= height:
                raise ValueError("y out of range")
            if not np.isin(p, (ON, OFF)).all():
                raise ValueError("polarity must be +1 or -1")
        # Canonical total order: t, then y, then x, then p.
        order = np.lexsort((p, x, y, t))
        t, x, y, p = t[order], x[order], y[order], p[order]
        for arr in (t, x, y, p):
            arr.setflags(write=False)
        return cls(int(width), int(height), int(duration), t, x, y, p)

    @classmethod
    def from_events(cls, width, height, duration,
                    events: Iterable[tuple]) -> "EventStream":
        ev = list(events)
        if ev:
            t, x, y, p = (np.array(col) for col in zip(*ev))
        else:
            t = x = y = p = np.empty(0)
        return cls.create(width, height, duration, t, x, y, p)

    @classmethod
    def empty(cls, width, height, duration) -> "EventStream":
        return cls.create(width, height, duration, [], [], [], [])

    def __len__(self) -> int:
        return self.t.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            (self.width, self.height, self.duration)
            == (other.width, other.height, other.duration)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def events(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def slice(self, window: TimeWindow) -> "EventStream":
        """Events with t0 <= t < t1, timestamps re-based to the window origin."""
        if window.t1 > self.duration:
            raise ValueError(
                f"window [{window.t0}, {window.t1}) exceeds duration {self.duration}"
            )
        mask = (self.t >= window.t0) & (self.t < window.t1)
        return EventStream.create(
            self.width, self.height, window.length,
            self.t[mask] - window.t0, self.x[mask], self.y[mask], self.p[mask],
        )

    def split_polarity(self) -> tuple["EventStream", "EventStream"]:
        """Partition into (ON stream, OFF stream) with unchanged geometry."""
        on = self.p == ON
        make = lambda m: EventStream.create(
            self.width, self.height, self.duration,
            self.t[m], self.x[m], self.y[m], self.p[m],
        )
        return make(on), make(~on)

    def downsample_spatial(self, factor: int) -> "EventStream":
        """Map every event address to its factor x factor block; counts are kept."""
        if factor < 2 or int(factor) != factor:
            raise ValueError(f"downsampling factor must be an integer >= 2, got {factor}")
        if self.width % factor or self.height % factor:
            raise ValueError(
                f"{self.width}x{self.height} not divisible by factor {factor}"
            )
        return EventStream.create(
            self.width // factor, self.height // factor, self.duration,
            self.t, self.x // factor, self.y // factor, self.p,
        )


def merge(*streams: EventStream) -> EventStream:
    """Union of event streams with identical geometry, in canonical order.

    Callers re-base timestamps into the common timeline before merging;
    the result's duration is the maximum input duration.
    """
    if not streams:
        raise ValueError("merge requires at least one stream")
    w, h = streams[0].width, streams[0].height
    for s in streams[1:]:
        if (s.width, s.height) != (w, h):
            raise ValueError(
                f"geometry mismatch: {s.width}x{s.height} vs {w}x{h}"
            )
    return EventStream.create(
        w, h, max(s.duration for s in streams),
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.p for s in streams]),
    )


def parse_text(data: bytes | str) -> EventStream:
    """Parse the ``.evt`` text format (header line, then one event per line)."""
    if isinstance(data, bytes):
        try:
            data = data.decode("ascii")
        except UnicodeDecodeError as e:
            raise FormatError(f"not ASCII text: {e}") from None
    lines = data.split("\n")
    if not lines or not lines[0].strip():
        raise FormatError("missing header line (line 1)")
    header = lines[0].split()
    if len(header) != 3:
        raise FormatError("header must be 'width height duration_us' (line 1)")
    try:
        width, height, duration = (int(v) for v in header)
    except ValueError:
        raise FormatError("non-integer field in header (line 1)") from None
    t, x, y, p = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FormatError(f"expected 't,x,y,p' (line {lineno})")
        try:
            ti, xi, yi, pi = (int(v) for v in parts)
        except ValueError:
            raise FormatError(f"non-integer field (line {lineno})") from None
        if ti < 0 or ti > duration:
            raise FormatError(f"t out of range (line {lineno})")
        if not 0 <= xi < width:
            raise FormatError(f"x out of range (line {lineno})")
        if not 0 <= yi < height:
            raise FormatError(f"y out of range (line {lineno})")
        if pi not in (ON, OFF):
            raise FormatError(f"polarity must be 1 or -1 (line {lineno})")
        t.append(ti); x.append(xi); y.append(yi); p.append(pi)
    return EventStream.create(width, height, duration, t, x, y, p)


def write_text(stream: EventStream) -> bytes:
    """Serialize to the ``.evt`` text format (LF newlines, ASCII)."""
    out = [f"{stream.width} {stream.height} {stream.duration}"]
    for i in range(len(stream)):
        out.append(f"{stream.t[i]},{stream.x[i]},{stream.y[i]},{stream.p[i]}")
    return ("\n".join(out) + "\n").encode("ascii")


def write_binary(stream: EventStream) -> bytes:
    """Serialize to the ``.evsr`` binary format (little-endian, canonical order)."""
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise FormatError("geometry exceeds u16 capacity of the binary format")
    if stream.duration > 0xFFFFFFFF:
        raise FormatError("duration exceeds u32 capacity of the binary format")
    header = _HEADER.pack(MAGIC, stream.width, stream.height,
                          stream.duration, len(stream))
    rec = np.zeros(len(stream), dtype=_RECORD_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    return header + rec.tobytes()


def read_binary(data: bytes) -> EventStream:
    """Parse the ``.evsr`` binary format, verifying order and ranges."""
    if len(data) < _HEADER.size:
        raise FormatError("truncated header")
    magic, width, height, duration, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    expected = _HEADER.size + count * _RECORD_DTYPE.itemsize
    if len(data) != expected:
        raise FormatError(
            f"payload size mismatch: expected {expected} bytes, got {len(data)}"
        )
    rec = np.frombuffer(data, dtype=_RECORD_DTYPE, offset=_HEADER.size, count=count)
    if count and rec["pad"].any():
        raise FormatError("nonzero pad byte in record")
    t = rec["t"].astype(np.int64)
    x = rec["x"].astype(np.int32)
    y = rec["y"].astype(np.int32)
    p = rec["p"].astype(np.int8)
    if count > 1:
        tt, yy, xx, pp = t[:-1], y[:-1], x[:-1], p[:-1]
        t2, y2, x2, p2 = t[1:], y[1:], x[1:], p[1:]
        ordered = (
            (t2 > tt)
            | ((t2 == tt) & ((y2 > yy)
               | ((y2 == yy) & ((x2 > xx)
                  | ((x2 == xx) & (p2 >= pp))))))
        )
        if not ordered.all():
            raise FormatError("records not in canonical order")
    try:
        return EventStream.create(width, height, duration, t, x, y, p)
    except ValueError as e:
        raise FormatError(str(e)) from None


def load_stream(path) -> EventStream:
    """Read a stream from a ``.evt`` (text) or ``.evsr`` (binary) file."""
    raw = open(path, "rb").read()
    if str(path).endswith(".evt"):
        return parse_text(raw)
    return read_binary(raw)


def save_stream(stream: EventStream, path) -> None:
    """Write a stream; text for ``.evt`` paths, binary otherwise."""
    data = write_text(stream) if str(path).endswith(".evt") else write_binary(stream)
    with open(path, "wb") as f:
        f.write(data)
