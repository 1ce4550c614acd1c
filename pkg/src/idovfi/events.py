"""Event streams: simulation from frame pairs, splitting, reversal, voxel grids."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels

LOG_EPS = 1e-3
DEFAULT_BINS = 5


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class EventRecord(NamedTuple):
    x: int
    y: int
    p: int
    t: float


def _empty(dtype):
    return np.zeros(0, dtype=dtype)


@dataclass
class EventStream:
    """Time-sorted events over ``interval``, stored as parallel arrays."""

    interval: tuple = (0.0, 1.0)
    x: np.ndarray = field(default_factory=lambda: _empty(np.int64))
    y: np.ndarray = field(default_factory=lambda: _empty(np.int64))
    p: np.ndarray = field(default_factory=lambda: _empty(np.int64))
    t: np.ndarray = field(default_factory=lambda: _empty(np.float64))

    def __post_init__(self):
        self.interval = (float(self.interval[0]), float(self.interval[1]))
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.float64)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise InvalidInputError("event arrays must have equal length")

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for x, y, p, t in zip(self.x.tolist(), self.y.tolist(), self.p.tolist(), self.t.tolist()):
            yield EventRecord(x, y, p, t)

    @classmethod
    def from_records(cls, records, interval=(0.0, 1.0)):
        records = list(records)
        if not records:
            return cls(interval)
        x, y, p, t = (np.array(col) for col in zip(*records))
        return cls(interval, x, y, p, t)

    def records(self):
        return list(self)

    @property
    def net_polarity(self):
        return int(self.p.sum())

    def validate(self, height=None, width=None):
        """Raise :class:`InvalidInputError` unless all stream invariants hold."""
        t0, t1 = self.interval
        if t0 > t1:
            raise InvalidInputError(f"bad interval {self.interval}")
        if len(self):
            if np.any(np.diff(self.t) < 0):
                raise InvalidInputError("events are not sorted by time")
            if self.t[0] < t0 or self.t[-1] > t1:
                raise InvalidInputError("event timestamps fall outside the interval")
            if not np.all(np.abs(self.p) == 1):
                raise InvalidInputError("polarity must be -1 or +1")
            if self.x.min() < 0 or self.y.min() < 0:
                raise InvalidInputError("negative pixel coordinate")
            if width is not None and self.x.max() >= width:
                raise InvalidInputError("x coordinate out of range")
            if height is not None and self.y.max() >= height:
                raise InvalidInputError("y coordinate out of range")
        return self


def _sorted_stream(interval, x, y, p, t):
    order = np.argsort(t, kind="stable")
    return EventStream(interval, x[order], y[order], p[order], t[order])


def _gray(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        frame = frame.mean(axis=2)
    if frame.ndim != 2:
        raise InvalidInputError(f"expected a grayscale frame, got shape {frame.shape}")
    return frame


def log_intensity(frame):
    return np.log(np.clip(_gray(frame), LOG_EPS, 1.0))


def simulate_events(frame0, frame1, threshold, t0=0.0, t1=1.0):
    """Emit an event every time the linearly interpolated log intensity of a
    pixel crosses a multiple of ``threshold`` between ``t0`` and ``t1``.

    RGB frames are converted to luminance by channel averaging.
    """
    if np.shape(frame0) != np.shape(frame1):
        raise InvalidInputError(f"frame shapes differ: {np.shape(frame0)} vs {np.shape(frame1)}")
    if not threshold > 0:
        raise InvalidInputError("contrast threshold must be positive")
    if not t0 < t1:
        raise InvalidInputError("t0 must precede t1")
    dlog = log_intensity(frame1) - log_intensity(frame0)
    x, y, p, t = kernels.emit_events(dlog, float(threshold), float(t0), float(t1))
    return _sorted_stream((t0, t1), x, y, p, t)


def split_stream(stream, t):
    """Split at ``t``; events stamped exactly ``t`` go to the first part."""
    t0, t1 = stream.interval
    if not (0.0 <= t <= 1.0) or not (t0 <= t <= t1):
        raise InvalidInputError(f"split time {t} outside {stream.interval}")
    cut = int(np.searchsorted(stream.t, t, side="right"))
    first = EventStream((t0, t), stream.x[:cut], stream.y[:cut], stream.p[:cut], stream.t[:cut])
    second = EventStream((t, t1), stream.x[cut:], stream.y[cut:], stream.p[cut:], stream.t[cut:])
    return first, second


def reverse_stream(stream):
    """Play the stream backwards: ``t -> a + b - t`` and flip polarity."""
    a, b = stream.interval
    t = (a + b) - stream.t
    return _sorted_stream(stream.interval, stream.x[::-1], stream.y[::-1], -stream.p[::-1], t[::-1])


def voxelize(stream, bins=DEFAULT_BINS, height=None, width=None):
    """Bilinear temporal binning into a signed float64 ``(bins, H, W)`` grid.

    Bin centres sit at normalised times ``k / (bins - 1)`` of the stream's
    interval, so events at the interval ends land fully in the first/last bin.
    """
    if bins < 2:
        raise InvalidInputError("voxel grid needs at least 2 bins")
    if height is None or width is None:
        raise InvalidInputError("voxel grid height and width are required")
    stream.validate(height, width)
    t_start, t_end = stream.interval
    grid = kernels.voxel_scatter(stream.x, stream.y, stream.p, stream.t,
                                 t_start, t_end, bins, height, width)
    return grid


# ---------------------------------------------------------------------------
# events.txt
# ---------------------------------------------------------------------------

def write_events(path, stream):
    """Write ``t x y p`` lines, one per event."""
    lines = [f"{t:.9f} {x} {y} {p}\n" for x, y, p, t in stream]
    Path(path).write_text("".join(lines))


def read_events(path, interval=(0.0, 1.0)):
    text = Path(path).read_text().split()
    if not text:
        return EventStream(interval)
    table = np.array(text, dtype=np.float64).reshape(-1, 4)
    stream = EventStream(interval, table[:, 1].astype(np.int64), table[:, 2].astype(np.int64),
                         table[:, 3].astype(np.int64), table[:, 0])
    return stream.validate()
