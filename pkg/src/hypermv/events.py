"""Event streams: data types, the EVT-CSV file format, temporal segmentation
into packets and signed event-frame rendering.

Streams are stored column-wise (one int64 array per field) so that rendering
and segmentation stay vectorised; ``ViewStream.events()`` gives the per-event
view when one is needed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

HEADER = "t_us,x,y,p"

_ROW_RE = re.compile(r"(-?\d+),(-?\d+),(-?\d+),(-?\d+)")
_BODY_RE = re.compile(r"(?:-?\d+,-?\d+,-?\d+,-?\d+\n)*")


class EventFormatError(ValueError):
    """Malformed EVT-CSV content. ``line`` is 1-based (the header is line 1)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EventOrderError(EventFormatError):
    """Timestamps go backwards."""


class EventBoundsError(EventFormatError):
    """Pixel coordinate outside the sensor."""


class EventPolarityError(EventFormatError):
    """Polarity other than -1 or +1."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.int64).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ViewStream:
    """Time-ordered events of one camera view.

    ``t``, ``x``, ``y``, ``p`` are parallel read-only int64 arrays.
    """

    width: int
    height: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    t_begin: int = 0
    t_end: int = 0

    def __post_init__(self):
        for name in ("t", "x", "y", "p"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns differ in length")
        validate_events(self.t, self.x, self.y, self.p, self.width, self.height)
        if n and (self.t[0] < self.t_begin or self.t[-1] > self.t_end):
            raise EventOrderError(
                f"events span [{self.t[0]}, {self.t[-1]}] outside "
                f"[{self.t_begin}, {self.t_end}]"
            )
        if self.t_end < self.t_begin:
            raise ValueError("t_end < t_begin")

    @classmethod
    def from_events(
        cls,
        events: Iterable[Event | tuple],
        width: int,
        height: int,
        t_begin: int | None = None,
        t_end: int | None = None,
    ) -> "ViewStream":
        rows = np.array([tuple(e) for e in events], dtype=np.int64).reshape(-1, 4)
        t, x, y, p = rows.T
        return cls.with_bounds(width, height, t, x, y, p, t_begin, t_end)

    @classmethod
    def with_bounds(cls, width, height, t, x, y, p, t_begin=None, t_end=None):
        """Build a stream; missing bounds default to the first/last timestamp."""
        t = np.asarray(t, dtype=np.int64)
        if t_begin is None:
            t_begin = int(t[0]) if len(t) else 0
        if t_end is None:
            t_end = int(t[-1]) if len(t) else t_begin
        return cls(width, height, t, x, y, p, int(t_begin), int(t_end))

    @classmethod
    def empty(cls, width: int, height: int, t_begin: int = 0, t_end: int = 0):
        z = np.zeros(0, dtype=np.int64)
        return cls(width, height, z, z, z, z, t_begin, t_end)

    def __len__(self) -> int:
        return len(self.t)

    def events(self) -> list[Event]:
        return [Event(*map(int, row)) for row in zip(self.t, self.x, self.y, self.p)]

    def same_events(self, other: "ViewStream") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("t", "x", "y", "p")
        )

    def __eq__(self, other):
        if not isinstance(other, ViewStream):
            return NotImplemented
        return (
            (self.width, self.height, self.t_begin, self.t_end)
            == (other.width, other.height, other.t_begin, other.t_end)
            and self.same_events(other)
        )

    __hash__ = None


def validate_events(t, x, y, p, width, height, line_offset: int = 0) -> None:
    """Check the Event/ViewStream invariants, reporting the first offending
    row as ``1-based row + line_offset``."""
    if width < 1 or height < 1:
        raise ValueError(f"bad sensor size {width}x{height}")
    if len(t) == 0:
        return
    bad = np.flatnonzero((p != 1) & (p != -1))
    if bad.size:
        raise EventPolarityError(f"polarity {p[bad[0]]} not in {{-1, +1}}", int(bad[0]) + 1 + line_offset)
    bad = np.flatnonzero((x < 0) | (x >= width) | (y < 0) | (y >= height))
    if bad.size:
        i = bad[0]
        raise EventBoundsError(
            f"pixel ({x[i]}, {y[i]}) outside {width}x{height} sensor", int(i) + 1 + line_offset
        )
    bad = np.flatnonzero(t < 0)
    if bad.size:
        raise EventFormatError(f"negative timestamp {t[bad[0]]}", int(bad[0]) + 1 + line_offset)
    bad = np.flatnonzero(np.diff(t) < 0)
    if bad.size:
        i = bad[0] + 1
        raise EventOrderError(f"timestamp {t[i]} precedes {t[i - 1]}", int(i) + 1 + line_offset)


def _locate_bad_line(lines: Sequence[str]) -> EventFormatError:
    for i, line in enumerate(lines):
        if not _ROW_RE.fullmatch(line):
            return EventFormatError(f"expected four integers 't_us,x,y,p', got {line!r}", i + 2)
    return EventFormatError("malformed content")


def read_events(
    path: str | Path,
    width: int,
    height: int,
    t_begin: int | None = None,
    t_end: int | None = None,
) -> ViewStream:
    """Read an EVT-CSV file.

    The file carries no sensor size or recording bounds; those come from the
    recording manifest. Without explicit bounds the stream spans its first to
    last timestamp (0, 0 when empty).
    """
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EventFormatError(f"not UTF-8: {exc}") from None
    head, sep, body = text.partition("\n")
    if head != HEADER:
        raise EventFormatError(f"header must be {HEADER!r}, got {head!r}", 1)
    if body and not body.endswith("\n"):
        body += "\n"
    if not _BODY_RE.fullmatch(body):
        raise _locate_bad_line(body.split("\n")[:-1])
    if body:
        vals = np.array(body.replace("\n", ",").split(",")[:-1], dtype=np.int64)
        t, x, y, p = vals.reshape(-1, 4).T
    else:
        t = x = y = p = np.zeros(0, dtype=np.int64)
    validate_events(t, x, y, p, width, height, line_offset=1)
    return ViewStream.with_bounds(width, height, t, x, y, p, t_begin, t_end)


def format_events(stream: ViewStream) -> str:
    rows = np.stack([stream.t, stream.x, stream.y, stream.p], axis=1)
    lines = [HEADER]
    lines.extend(f"{a},{b},{c},{d}" for a, b, c, d in rows.tolist())
    return "\n".join(lines) + "\n"


def write_events(stream: ViewStream, path: str | Path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_events(stream))


@dataclass(frozen=True, eq=False)
class EventPacket:
    """Events of window ``index`` (1-based) covering ``[lo, hi)``; the last
    window of a segmentation is closed at ``hi``."""

    index: int
    lo: float
    hi: float
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    closed: bool = False

    @property
    def count(self) -> int:
        return len(self.t)

    def events(self) -> list[Event]:
        return [Event(*map(int, row)) for row in zip(self.t, self.x, self.y, self.p)]


def window_indices(t: np.ndarray, t_begin: int, t_end: int, T: int) -> np.ndarray:
    """0-based window index of each timestamp; exact integer arithmetic."""
    t = np.asarray(t, dtype=np.int64)
    span = t_end - t_begin
    if span <= 0:
        return np.zeros(len(t), dtype=np.int64)
    idx = ((t - t_begin) * T) // span
    return np.minimum(idx, T - 1)


def segment(stream: ViewStream, T: int) -> list[EventPacket]:
    """Split a stream into T equal-length windows over [t_begin, t_end]."""
    if T < 1:
        raise ValueError(f"window count must be >= 1, got {T}")
    idx = window_indices(stream.t, stream.t_begin, stream.t_end, T)
    # idx is non-decreasing because t is sorted
    cuts = np.searchsorted(idx, np.arange(T + 1))
    span = stream.t_end - stream.t_begin
    packets = []
    for w in range(T):
        sl = slice(cuts[w], cuts[w + 1])
        packets.append(
            EventPacket(
                index=w + 1,
                lo=stream.t_begin + span * w / T,
                hi=stream.t_begin + span * (w + 1) / T,
                t=stream.t[sl],
                x=stream.x[sl],
                y=stream.y[sl],
                p=stream.p[sl],
                closed=(w == T - 1),
            )
        )
    return packets


def render_frame(packet: EventPacket, X: int, Y: int) -> np.ndarray:
    """Signed event frame of shape (Y, X): per-pixel sum of polarities."""
    flat = np.bincount(packet.y * X + packet.x, weights=packet.p, minlength=X * Y)
    return flat.astype(np.int64).reshape(Y, X)


@dataclass(frozen=True, eq=False)
class FrameVolume:
    """T signed event frames, ``frames[t-1]`` of shape (Y, X)."""

    frames: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        T, Y, X = self.frames.shape
        return X, Y, T

    @property
    def T(self) -> int:
        return self.frames.shape[0]


def render_volume(stream: ViewStream, T: int, X: int | None = None, Y: int | None = None) -> FrameVolume:
    X = stream.width if X is None else X
    Y = stream.height if Y is None else Y
    if len(stream) and (stream.x.max() >= X or stream.y.max() >= Y):
        raise EventBoundsError(f"events exceed render size {X}x{Y}")
    frames = np.stack([render_frame(pk, X, Y) for pk in segment(stream, T)])
    return FrameVolume(frames)


def normalize_volume(vol: FrameVolume | np.ndarray) -> np.ndarray:
    """Scale by the maximum absolute entry so values lie in [-1, 1]."""
    frames = vol.frames if isinstance(vol, FrameVolume) else np.asarray(vol)
    out = frames.astype(np.float64)
    peak = np.abs(out).max(initial=0.0)
    if peak > 0:
        out /= peak
    return out
