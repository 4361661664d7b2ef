"""Turn irregular raw streams into aligned, uniformly sampled 50 Hz streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensor_model import RawStream, Recording, SensorKind

RATE_HZ = 50
STEP_MS = 1000 // RATE_HZ


class NoOverlapError(ValueError):
    pass


class TooShortError(ValueError):
    pass


class ExtrapolationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class UniformStream:
    """Three channels sampled at ``start_ms + i * 20`` ms."""

    start_ms: int
    channels: np.ndarray  # (3, n)
    rate_hz: int = RATE_HZ

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != 3:
            raise ValueError(f"channels must have shape (3, n), got {ch.shape}")
        object.__setattr__(self, "channels", ch)

    def __len__(self) -> int:
        return self.channels.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, UniformStream):
            return NotImplemented
        return self.start_ms == other.start_ms and np.array_equal(self.channels, other.channels)

    @property
    def timestamps(self) -> np.ndarray:
        return self.start_ms + STEP_MS * np.arange(len(self), dtype=np.int64)

    def to_raw(self, kind: SensorKind) -> RawStream:
        return RawStream(kind, self.timestamps, self.channels.T.copy())


@dataclass(frozen=True)
class AlignedPair:
    accel: UniformStream
    gyro: UniformStream

    def __post_init__(self):
        if self.accel.start_ms != self.gyro.start_ms or len(self.accel) != len(self.gyro):
            raise ValueError("accel and gyro must share start time and length")

    def __len__(self) -> int:
        return len(self.accel)

    @property
    def start_ms(self) -> int:
        return self.accel.start_ms

    def stacked(self) -> np.ndarray:
        """All six channels as a ``(6, n)`` array: accel x,y,z then gyro x,y,z."""
        return np.vstack([self.accel.channels, self.gyro.channels])


def overlap_window(accel: RawStream, gyro: RawStream) -> tuple[int, int]:
    if len(accel) == 0 or len(gyro) == 0:
        raise NoOverlapError("both streams must be non-empty")
    lo = max(int(accel.timestamps[0]), int(gyro.timestamps[0]))
    hi = min(int(accel.timestamps[-1]), int(gyro.timestamps[-1]))
    if hi < lo:
        raise NoOverlapError(f"streams do not overlap (window [{lo}, {hi}] ms is empty)")
    return lo, hi


def truncate_overlap(accel: RawStream, gyro: RawStream) -> tuple[RawStream, RawStream]:
    """Drop samples outside the common window ``[max(firsts), min(lasts)]``."""
    lo, hi = overlap_window(accel, gyro)
    out = []
    for s in (accel, gyro):
        out.append(s.select((s.timestamps >= lo) & (s.timestamps <= hi)))
    return out[0], out[1]


def resample_uniform(stream: RawStream, grid_start_ms: int, n_samples: int) -> UniformStream:
    """Linearly interpolate ``stream`` onto ``grid_start_ms + 20 i``, i < n_samples.

    Grid instants that coincide with a raw timestamp return the raw value
    exactly. Instants outside the raw range raise ``ExtrapolationError``.
    """
    grid = grid_start_ms + STEP_MS * np.arange(n_samples, dtype=np.int64)
    ts = stream.timestamps
    if n_samples and (len(ts) == 0 or grid[0] < ts[0] or grid[-1] > ts[-1]):
        span = f"[{ts[0]}, {ts[-1]}]" if len(ts) else "(empty)"
        raise ExtrapolationError(
            f"grid [{grid[0]}, {grid[-1]}] ms extends outside raw range {span}"
        )
    # np.interp returns fp[i] exactly when x == xp[i]
    chans = np.vstack([np.interp(grid, ts, stream.values[:, j]) for j in range(3)])
    return UniformStream(int(grid_start_ms), chans)


def align(rec: Recording) -> AlignedPair:
    """Resample both streams of ``rec`` onto one 50 Hz grid over their overlap.

    The grid starts at the overlap start and ends at or before the overlap
    end. Interpolation uses the untruncated streams so grid instants next
    to the window edges still have a bracketing raw sample on each side.
    """
    lo, hi = overlap_window(rec.accel, rec.gyro)
    if hi - lo < STEP_MS:
        raise TooShortError(f"overlap of {hi - lo} ms is shorter than one {STEP_MS} ms grid step")
    n = (hi - lo) // STEP_MS + 1
    return AlignedPair(resample_uniform(rec.accel, lo, n), resample_uniform(rec.gyro, lo, n))
