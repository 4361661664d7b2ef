"""Sensor stream types, the on-disk stream format, and a synthetic generator.

A recording is stored as three files that share a stem::

    <stem>.json         {"subject_id", "session_id", "accel_path", "gyro_path"}
    <stem>_accel.csv    timestamp_ms,x,y,z
    <stem>_gyro.csv     timestamp_ms,x,y,z

CSV paths inside the manifest are relative to the manifest's directory.
Values are written with Python's shortest round-trip float repr, so a
write/read cycle reproduces every sample bit for bit.

Units: accelerometer in m/s^2, gyroscope in rad/s. Nothing downstream
depends on them because every segment is normalised before use.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .io_utils import atomic_write_text

NOMINAL_RATE_HZ = 50
CSV_HEADER = ("timestamp_ms", "x", "y", "z")
BAND_HZ = (4.0, 11.0)


class SensorKind(str, Enum):
    ACCELEROMETER = "accelerometer"
    GYROSCOPE = "gyroscope"


class StreamParseError(ValueError):
    """A stream file line could not be parsed."""


class StreamIntegrityError(ValueError):
    """Timestamps are not strictly increasing."""


@dataclass(frozen=True, eq=False)
class RawStream:
    """Irregularly timestamped 3-axis samples from one sensor.

    ``timestamps`` are integer milliseconds since recording start and must
    strictly increase. ``values`` has shape ``(n, 3)`` (x, y, z).
    """

    sensor_kind: SensorKind
    timestamps: np.ndarray
    values: np.ndarray
    nominal_rate_hz: int = NOMINAL_RATE_HZ

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1, 3)
        if len(ts) != len(vals):
            raise ValueError(f"{len(ts)} timestamps but {len(vals)} value rows")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            bad = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise StreamIntegrityError(
                f"{self.sensor_kind.value}: timestamp {ts[bad]} at row {bad} "
                f"does not exceed previous {ts[bad - 1]}"
            )
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RawStream):
            return NotImplemented
        return (
            self.sensor_kind == other.sensor_kind
            and self.nominal_rate_hz == other.nominal_rate_hz
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )

    def select(self, mask: np.ndarray) -> "RawStream":
        return RawStream(self.sensor_kind, self.timestamps[mask], self.values[mask], self.nominal_rate_hz)


@dataclass(frozen=True)
class Recording:
    """One data-collection interval: paired accelerometer and gyroscope streams."""

    subject_id: str
    session_id: str
    accel: RawStream
    gyro: RawStream

    def __post_init__(self):
        if self.accel.sensor_kind is not SensorKind.ACCELEROMETER:
            raise ValueError("accel stream must be an accelerometer stream")
        if self.gyro.sensor_kind is not SensorKind.GYROSCOPE:
            raise ValueError("gyro stream must be a gyroscope stream")


@dataclass(frozen=True)
class SynthSubjectProfile:
    """Parameters of one synthetic wearer.

    ``pulse_shape_coeffs`` has shape ``(6, K, 2)``: for each channel
    (accel x/y/z, gyro x/y/z) and harmonic ``k = 1..K`` of the heart rate,
    an amplitude and a phase in radians. ``drift_rate`` is a per-channel
    linear baseline slope in units per second.

    Beat-to-beat realism is controlled by three knobs, all zero-safe:
    ``hrv_std`` (relative std of a slow wander in instantaneous heart
    rate), ``resp_depth`` (amplitude modulation at ``resp_rate_hz``, as
    breathing does to BCG) and ``morph_var`` (log-std of slow random gain
    changes per channel and harmonic). With all three at zero, and no noise
    or drift, the pulse train is exactly periodic.
    """

    heart_rate_hz: float
    pulse_shape_coeffs: np.ndarray
    noise_std: float = 0.0
    drift_rate: tuple = (0.0,) * 6
    jitter_ms_range: tuple = (18, 20)
    hrv_std: float = 0.0
    gyro_offset_ms: int = 7
    resp_rate_hz: float = 0.25
    resp_depth: float = 0.0
    morph_var: float = 0.0

    def __post_init__(self):
        coeffs = np.asarray(self.pulse_shape_coeffs, dtype=np.float64)
        if coeffs.ndim != 3 or coeffs.shape[0] != 6 or coeffs.shape[2] != 2:
            raise ValueError(f"pulse_shape_coeffs must have shape (6, K, 2), got {coeffs.shape}")
        object.__setattr__(self, "pulse_shape_coeffs", coeffs)
        object.__setattr__(self, "drift_rate", tuple(float(d) for d in self.drift_rate))
        object.__setattr__(self, "jitter_ms_range", tuple(int(j) for j in self.jitter_ms_range))
        if not self.heart_rate_hz > 0:
            raise ValueError("heart_rate_hz must be positive")
        if min(self.noise_std, self.hrv_std, self.resp_depth, self.morph_var) < 0:
            raise ValueError("noise_std, hrv_std, resp_depth and morph_var must be non-negative")
        if self.resp_depth >= 1:
            raise ValueError("resp_depth must be below 1")
        if len(self.drift_rate) != 6:
            raise ValueError("drift_rate needs one slope per channel (6)")
        lo, hi = self.jitter_ms_range
        if not (5 <= lo <= hi <= 20):
            raise ValueError(f"jitter_ms_range {self.jitter_ms_range} must lie within [5, 20] ms")
        if self.gyro_offset_ms < 0:
            raise ValueError("gyro_offset_ms must be non-negative")

    def to_dict(self) -> dict:
        return {
            "heart_rate_hz": self.heart_rate_hz,
            "pulse_shape_coeffs": self.pulse_shape_coeffs.tolist(),
            "noise_std": self.noise_std,
            "drift_rate": list(self.drift_rate),
            "jitter_ms_range": list(self.jitter_ms_range),
            "hrv_std": self.hrv_std,
            "gyro_offset_ms": self.gyro_offset_ms,
            "resp_rate_hz": self.resp_rate_hz,
            "resp_depth": self.resp_depth,
            "morph_var": self.morph_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSubjectProfile":
        return cls(**d)

    def harmonic_frequencies(self) -> np.ndarray:
        k = np.arange(1, self.pulse_shape_coeffs.shape[1] + 1)
        return k * self.heart_rate_hz


@dataclass(frozen=True, eq=False)
class PopulationTemplate:
    """Shared pulse morphology that individual wearers deviate from.

    ``amplitudes`` and ``phases`` are ``(6, K)`` arrays indexed by channel
    and heart-rate harmonic.
    """

    amplitudes: np.ndarray
    phases: np.ndarray


def population_template(rng: np.random.Generator, n_harmonics: int = 12) -> PopulationTemplate:
    amp = rng.uniform(0.3, 1.0, size=(6, n_harmonics))
    # gyroscope channels are an order of magnitude smaller in rad/s
    amp[3:] *= 0.1
    phase = rng.uniform(-math.pi, math.pi, size=(6, n_harmonics))
    return PopulationTemplate(amp, phase)


def random_profile(rng: np.random.Generator, template: PopulationTemplate | None = None,
                   individuality: float = 0.15, noise_std: float = 1.5,
                   hrv_std: float = 0.05, resp_depth: float = 0.3,
                   morph_var: float = 0.3) -> SynthSubjectProfile:
    """Draw a synthetic wearer around a population template.

    Heart rate is uniform in [1.0, 1.5] Hz. Each harmonic amplitude is the
    template's scaled by ``exp(individuality * N(0, 1))`` and each phase is
    shifted by ``individuality * pi * N(0, 1)``, so ``individuality``
    controls how far wearers sit from one another. Harmonics outside
    4-11 Hz are attenuated (x0.15 below the band, silent above it) so the
    pulse energy sits in the band the pipeline keeps. Without a template,
    one is drawn from ``rng`` (every wearer then gets its own morphology).
    """
    if template is None:
        template = population_template(rng)
    n_harmonics = template.amplitudes.shape[1]
    hr = float(rng.uniform(1.0, 1.5))
    freqs = hr * np.arange(1, n_harmonics + 1)
    weight = np.where(freqs < BAND_HZ[0], 0.15, np.where(freqs <= BAND_HZ[1], 1.0, 0.0))
    amp = template.amplitudes * np.exp(individuality * rng.normal(size=template.amplitudes.shape))
    amp = amp * weight
    phase = template.phases + individuality * math.pi * rng.normal(size=template.phases.shape)
    coeffs = np.stack([amp, phase], axis=-1)
    scale = np.r_[np.ones(3), 0.1 * np.ones(3)]
    drift = tuple(float(d) for d in rng.uniform(-0.01, 0.01, size=6) * scale)
    return SynthSubjectProfile(
        heart_rate_hz=hr,
        pulse_shape_coeffs=coeffs,
        noise_std=noise_std,
        drift_rate=drift,
        jitter_ms_range=(18, 20),
        hrv_std=hrv_std,
        gyro_offset_ms=int(rng.integers(0, 16)),
        resp_rate_hz=float(rng.uniform(0.2, 0.33)),
        resp_depth=resp_depth,
        morph_var=morph_var,
    )


def _timestamps(rng: np.random.Generator, start_ms: int, end_ms: int, jitter: tuple) -> np.ndarray:
    lo, hi = jitter
    n_est = (end_ms - start_ms) // lo + 2
    steps = rng.integers(lo, hi + 1, size=n_est)
    ts = start_ms + np.concatenate([[0], np.cumsum(steps)])
    last = int(np.searchsorted(ts, end_ms, side="left"))
    # keep the first sample at or beyond end_ms so the stream covers it
    return ts[: last + 1]


_SLOW_DT = 0.1


def _slow_noise(rng: np.random.Generator, n_series: int, t_end_s: float, corr_s: float) -> np.ndarray:
    """Unit-variance smoothed Gaussian noise on a 0.1 s grid, shape (n_series, n)."""
    n = int(math.ceil(t_end_s / _SLOW_DT)) + 2
    half = max(int(round(corr_s / _SLOW_DT)), 1)
    kernel = np.hanning(2 * half + 1)
    kernel /= np.sqrt(np.sum(kernel ** 2))
    white = rng.normal(size=(n_series, n + 2 * half))
    return np.stack([np.convolve(w, kernel, mode="valid")[:n] for w in white])


class _Source:
    """The continuous wearer signal shared by both sensors of one recording."""

    def __init__(self, profile: SynthSubjectProfile, rng: np.random.Generator, t_end_s: float):
        self.profile = profile
        n_harm = profile.pulse_shape_coeffs.shape[1]
        self.grid = np.arange(int(math.ceil(t_end_s / _SLOW_DT)) + 2) * _SLOW_DT
        if profile.hrv_std > 0:
            wander = _slow_noise(rng, 1, t_end_s, corr_s=10.0)[0]
            rate = profile.heart_rate_hz * (1.0 + profile.hrv_std * wander)
            self.cycles = np.concatenate([[0.0], np.cumsum(0.5 * (rate[1:] + rate[:-1]) * _SLOW_DT)])
        else:
            self.cycles = None
        self.resp_phase = float(rng.uniform(0, 2 * math.pi)) if profile.resp_depth > 0 else 0.0
        if profile.morph_var > 0:
            self.log_gain = profile.morph_var * _slow_noise(rng, 6 * n_harm, t_end_s, corr_s=4.0)
        else:
            self.log_gain = None

    def phase(self, t: np.ndarray) -> np.ndarray:
        if self.cycles is None:
            return self.profile.heart_rate_hz * t
        return np.interp(t, self.grid, self.cycles)

    def sample(self, t: np.ndarray, channels: range) -> np.ndarray:
        p = self.profile
        coeffs = p.pulse_shape_coeffs
        n_harm = coeffs.shape[1]
        k = np.arange(1, n_harm + 1)
        ang = 2 * math.pi * np.multiply.outer(self.phase(t), k)  # (n, K)
        out = np.empty((len(t), len(channels)))
        for j, c in enumerate(channels):
            amp, ph = coeffs[c, :, 0], coeffs[c, :, 1]
            terms = np.cos(ang + ph)
            if self.log_gain is not None:
                g = self.log_gain[c * n_harm : (c + 1) * n_harm]
                gains = np.exp(np.stack([np.interp(t, self.grid, row) for row in g], axis=1))
                out[:, j] = np.sum(terms * gains * amp, axis=1)
            else:
                out[:, j] = terms @ amp
        if p.resp_depth > 0:
            out *= (1.0 + p.resp_depth * np.sin(2 * math.pi * p.resp_rate_hz * t + self.resp_phase))[:, None]
        return out


def synth_recording(profile: SynthSubjectProfile, duration_s: float, seed: int,
                    subject_id: str = "synthetic", session_id: str = "1") -> Recording:
    """Generate a recording from ``profile``; a pure function of its arguments.

    Each stream is a sum of heart-rate harmonics (shaped per channel by
    ``pulse_shape_coeffs``, modulated per the profile's variability knobs)
    plus a linear drift and white noise, sampled at jittered
    integer-millisecond timestamps. The accelerometer starts at t=0 and the
    gyroscope ``gyro_offset_ms`` later; both extend past ``duration_s`` far
    enough that the overlap covers the full duration.
    """
    if not duration_s > 0:
        raise ValueError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    end_ms = int(round(duration_s * 1000)) + profile.gyro_offset_ms + 40
    source = _Source(profile, rng, end_ms / 1000.0 + 1.0)
    drift = np.asarray(profile.drift_rate)

    streams = []
    for kind, start, chans in (
        (SensorKind.ACCELEROMETER, 0, range(0, 3)),
        (SensorKind.GYROSCOPE, profile.gyro_offset_ms, range(3, 6)),
    ):
        ts = _timestamps(rng, start, end_ms, profile.jitter_ms_range)
        t_s = ts / 1000.0
        vals = source.sample(t_s, chans)
        vals += np.outer(t_s, drift[chans.start : chans.stop])
        if profile.noise_std > 0:
            scale = 1.0 if kind is SensorKind.ACCELEROMETER else 0.1
            vals += rng.normal(scale=profile.noise_std * scale, size=vals.shape)
        streams.append(RawStream(kind, ts, vals))
    return Recording(subject_id, session_id, streams[0], streams[1])


# ---- file format --------------------------------------------------------

def _stream_to_csv(stream: RawStream) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for t, (x, y, z) in zip(stream.timestamps.tolist(), stream.values.tolist()):
        buf.write(f"{t},{x!r},{y!r},{z!r}\n")
    return buf.getvalue()


def _stream_from_csv(path: Path, kind: SensorKind) -> RawStream:
    ts: list[int] = []
    vals: list[tuple[float, float, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StreamParseError(f"{path}: line 1: missing header") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise StreamParseError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise StreamParseError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                t = int(row[0])
                v = (float(row[1]), float(row[2]), float(row[3]))
            except ValueError as exc:
                raise StreamParseError(f"{path}: line {lineno}: {exc}") from None
            if ts and t <= ts[-1]:
                raise StreamIntegrityError(
                    f"{path}: line {lineno}: timestamp {t} does not exceed previous {ts[-1]}"
                )
            ts.append(t)
            vals.append(v)
    return RawStream(kind, np.array(ts, dtype=np.int64), np.array(vals, dtype=np.float64).reshape(-1, 3))


def stream_paths(manifest_path: str | Path) -> tuple[Path, Path]:
    p = Path(manifest_path)
    stem = p.name[: -len(".json")] if p.name.endswith(".json") else p.name
    return p.with_name(f"{stem}_accel.csv"), p.with_name(f"{stem}_gyro.csv")


def write_recording(rec: Recording, path: str | Path) -> None:
    """Write ``rec`` as a JSON manifest at ``path`` plus two CSV stream files."""
    path = Path(path)
    accel_path, gyro_path = stream_paths(path)
    atomic_write_text(accel_path, _stream_to_csv(rec.accel))
    atomic_write_text(gyro_path, _stream_to_csv(rec.gyro))
    manifest = {
        "subject_id": rec.subject_id,
        "session_id": rec.session_id,
        "accel_path": accel_path.name,
        "gyro_path": gyro_path.name,
    }
    atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")


def read_recording(path: str | Path) -> Recording:
    """Load a recording from its JSON manifest."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise StreamParseError(f"{path}: line {exc.lineno}: invalid JSON manifest ({exc.msg})") from None
    missing = {"subject_id", "session_id", "accel_path", "gyro_path"} - set(manifest)
    if missing:
        raise StreamParseError(f"{path}: manifest missing keys {sorted(missing)}")
    base = path.parent
    accel = _stream_from_csv(base / manifest["accel_path"], SensorKind.ACCELEROMETER)
    gyro = _stream_from_csv(base / manifest["gyro_path"], SensorKind.GYROSCOPE)
    return Recording(str(manifest["subject_id"]), str(manifest["session_id"]), accel, gyro)


def write_profile(profile: SynthSubjectProfile, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(profile.to_dict(), indent=2) + "\n")


def read_profile(path: str | Path) -> SynthSubjectProfile:
    return SynthSubjectProfile.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
