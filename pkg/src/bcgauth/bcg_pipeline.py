"""Derive BCG waveforms from aligned sensor streams.

For each ``w``-second window (stride one second) the six channels are

1. normalised to zero mean / unit variance,
2. detrended by subtracting a centred 35-sample rolling average,
3. band-passed with a 4th-order Butterworth filter (4-11 Hz),

and the result is laid out as a ``(2, 3, w*50)`` tensor for the CNN.

The public per-``Segment`` functions wrap array kernels (``*_array``) that
work on any ``(..., 6, n)`` block, which is what the harness uses to push
hundreds of segments through at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .preprocess import AlignedPair, TooShortError


class FilterDesignError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    w_s: int = 3
    rate_hz: int = 50
    rolling_window: int = 35
    band_low_hz: float = 4.0
    band_high_hz: float = 11.0
    filter_order: int = 4
    norm_epsilon: float = 1e-12

    def __post_init__(self):
        if self.w_s < 1 or int(self.w_s) != self.w_s:
            raise ValueError("w_s must be a positive integer number of seconds")
        if self.rolling_window < 1 or self.rolling_window > self.w_s * self.rate_hz:
            raise ValueError("rolling_window must be in [1, w_s * rate_hz]")
        if self.norm_epsilon <= 0:
            raise ValueError("norm_epsilon must be positive")

    @property
    def segment_len(self) -> int:
        return self.w_s * self.rate_hz


@dataclass(frozen=True, eq=False)
class Segment:
    """Six equal-length channels: accel x, y, z then gyro x, y, z."""

    index: int
    channels: np.ndarray
    degenerate: tuple = field(default=(False,) * 6)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float64)
        if ch.ndim != 2 or ch.shape[0] != 6:
            raise ShapeError(f"segment needs 6 channels, got shape {ch.shape}")
        object.__setattr__(self, "channels", ch)


@dataclass(frozen=True, eq=False)
class BandPassFilter:
    b: np.ndarray
    a: np.ndarray
    order: int
    design_params: tuple

    def poles(self) -> np.ndarray:
        return np.roots(self.a)

    def response(self, freqs_hz, rate_hz: float | None = None) -> np.ndarray:
        """Complex frequency response at ``freqs_hz``."""
        fs = rate_hz if rate_hz is not None else self.design_params[2]
        z = np.exp(-1j * 2 * math.pi * np.asarray(freqs_hz, dtype=np.float64) / fs)
        # b, a are in powers of z^-1
        return np.polyval(self.b[::-1], z) / np.polyval(self.a[::-1], z)

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))


# ---- segmentation --------------------------------------------------------

def n_segments(n_samples: int, cfg: PipelineConfig) -> int:
    duration_s = n_samples // cfg.rate_hz
    return max(duration_s - cfg.w_s + 1, 0)


def segment_array(data: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Cut a ``(6, n)`` block into ``(n_segments, 6, w*rate)`` windows, 1 s stride."""
    data = np.asarray(data, dtype=np.float64)
    count = n_segments(data.shape[-1], cfg)
    if count < 1:
        raise TooShortError(
            f"{data.shape[-1]} samples is shorter than one {cfg.w_s} s segment "
            f"({cfg.segment_len} samples)"
        )
    starts = np.arange(count) * cfg.rate_hz
    idx = starts[:, None] + np.arange(cfg.segment_len)[None, :]
    return np.ascontiguousarray(data[:, idx].transpose(1, 0, 2))


def segmentize(pair: AlignedPair, cfg: PipelineConfig) -> list[Segment]:
    """Segment ``i`` covers seconds ``[i, i + w)`` of the aligned pair."""
    block = segment_array(pair.stacked(), cfg)
    return [Segment(i, block[i]) for i in range(len(block))]


# ---- three-step derivation ------------------------------------------------

def normalize_array(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean, unit-variance along the last axis.

    Channels whose variance is below ``eps`` become all zeros; the returned
    boolean array marks them.
    """
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    centred = x - mean
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    degenerate = var < eps
    safe = np.where(degenerate, 1.0, np.sqrt(var))
    out = np.where(degenerate, 0.0, centred / safe)
    return out, degenerate[..., 0]


def normalize_segment(seg: Segment, cfg: PipelineConfig) -> Segment:
    out, degen = normalize_array(seg.channels, cfg.norm_epsilon)
    return Segment(seg.index, out, tuple(bool(d) for d in degen))


def rolling_mean_array(x: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average along the last axis, window clipped at the edges.

    Output ``i`` is the mean of ``x[max(0, i-h) : min(n, i+h+1)]`` with
    ``h = window // 2``; an even window leans one sample to the right.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < window:
        raise TooShortError(f"channel length {n} is shorter than the {window}-sample window")
    left = window // 2
    right = window - left - 1
    i = np.arange(n)
    lo = np.maximum(i - left, 0)
    hi = np.minimum(i + right + 1, n)
    csum = np.concatenate([np.zeros(x.shape[:-1] + (1,)), np.cumsum(x, axis=-1)], axis=-1)
    return (csum[..., hi] - csum[..., lo]) / (hi - lo)


def rolling_average_detrend(seg: Segment, cfg: PipelineConfig) -> Segment:
    ch = seg.channels
    return Segment(seg.index, ch - rolling_mean_array(ch, cfg.rolling_window), seg.degenerate)


def _butter_analog_lowpass_poles(order: int) -> np.ndarray:
    k = np.arange(1, order + 1)
    return np.exp(1j * math.pi * (2 * k + order - 1) / (2 * order))


def design_bandpass(cfg: PipelineConfig) -> BandPassFilter:
    """Digital Butterworth band-pass via a prewarped bilinear transform.

    The analog low-pass prototype of order ``N`` is mapped to a band-pass
    (``s -> (s^2 + w0^2) / (B s)``) whose edges are the prewarped cutoffs,
    then each pole is carried to the z-plane with ``z = (2fs + s)/(2fs - s)``.
    The ``N`` zeros at ``s = 0`` land on ``z = 1`` and the ``N`` zeros at
    infinity on ``z = -1``. Result: a ``2N``-order transfer function whose
    magnitude is exactly ``1/sqrt(2)`` at both cutoffs.
    """
    fs = float(cfg.rate_hz)
    f1, f2 = float(cfg.band_low_hz), float(cfg.band_high_hz)
    if not (0.0 < f1 < f2 < fs / 2.0):
        raise FilterDesignError(
            f"band edges must satisfy 0 < {f1} < {f2} < Nyquist ({fs / 2.0} Hz)"
        )
    n = int(cfg.filter_order)
    if n < 1:
        raise FilterDesignError("filter order must be at least 1")
    fs2 = 2.0 * fs
    w1 = fs2 * math.tan(math.pi * f1 / fs)
    w2 = fs2 * math.tan(math.pi * f2 / fs)
    bw = w2 - w1
    w0sq = w1 * w2

    proto = _butter_analog_lowpass_poles(n)
    half = proto * bw / 2.0
    root = np.sqrt(half * half - w0sq)
    poles_s = np.concatenate([half + root, half - root])
    gain_s = bw ** n  # analog band-pass gain for the N zeros at s = 0

    poles_z = (fs2 + poles_s) / (fs2 - poles_s)
    zeros_z = np.concatenate([np.ones(n), -np.ones(n)])
    # bilinear gain: k * prod(fs2 - zeros_s) / prod(fs2 - poles_s), zeros_s = 0 (n times)
    gain_z = np.real(gain_s * fs2 ** n / np.prod(fs2 - poles_s))

    b = gain_z * np.real(np.poly(zeros_z))
    a = np.real(np.poly(poles_z))
    return BandPassFilter(b=b, a=a, order=n, design_params=(f1, f2, fs))


def apply_filter_array(filt: BandPassFilter, x: np.ndarray) -> np.ndarray:
    """Causal direct-form filtering along the last axis from zero state."""
    return signal.lfilter(filt.b, filt.a, np.asarray(x, dtype=np.float64), axis=-1)


def apply_filter(filt: BandPassFilter, seg: Segment) -> Segment:
    return Segment(seg.index, apply_filter_array(filt, seg.channels), seg.degenerate)


def derive_bcg_array(x: np.ndarray, filt: BandPassFilter, cfg: PipelineConfig):
    """Normalise, detrend and band-pass a ``(..., 6, n)`` block of segments."""
    z, degen = normalize_array(x, cfg.norm_epsilon)
    z = z - rolling_mean_array(z, cfg.rolling_window)
    return apply_filter_array(filt, z), degen


def derive_bcg(seg: Segment, filt: BandPassFilter, cfg: PipelineConfig) -> Segment:
    return apply_filter(filt, rolling_average_detrend(normalize_segment(seg, cfg), cfg))


# ---- tensor layout -------------------------------------------------------

def to_tensor(bcg: Segment | np.ndarray, w_s: int | None = None, rate_hz: int = 50) -> np.ndarray:
    """Rearrange six channels into ``(2, 3, w*50)``: source, axis, time.

    Accepts a :class:`Segment` or a ``(..., 6, n)`` array; leading axes are
    kept, so a stack of segments becomes ``(N, 2, 3, n)``.
    """
    ch = bcg.channels if isinstance(bcg, Segment) else np.asarray(bcg, dtype=np.float64)
    if ch.ndim < 2 or ch.shape[-2] != 6:
        raise ShapeError(f"expected 6 channels, got shape {ch.shape}")
    if w_s is not None and ch.shape[-1] != w_s * rate_hz:
        raise ShapeError(f"expected {w_s * rate_hz} samples per channel, got {ch.shape[-1]}")
    return ch.reshape(ch.shape[:-2] + (2, 3, ch.shape[-1]))


def from_tensor(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim < 3 or t.shape[-3:-1] != (2, 3):
        raise ShapeError(f"expected (..., 2, 3, n) tensor, got {t.shape}")
    return t.reshape(t.shape[:-3] + (6, t.shape[-1]))


def pair_to_tensors(pair: AlignedPair, cfg: PipelineConfig,
                    filt: BandPassFilter | None = None) -> np.ndarray:
    """Every segment of ``pair`` as a BCG tensor, shape ``(n_segments, 2, 3, w*50)``."""
    filt = filt if filt is not None else design_bandpass(cfg)
    bcg, _ = derive_bcg_array(segment_array(pair.stacked(), cfg), filt, cfg)
    return to_tensor(bcg)


def dump_segment_csv(bcg: Segment) -> str:
    """Debug dump of one segment's BCG channels for plotting."""
    lines = ["sample_index,ax,ay,az,gx,gy,gz"]
    for i, row in enumerate(bcg.channels.T.tolist()):
        lines.append(f"{i}," + ",".join(repr(v) for v in row))
    return "\n".join(lines) + "\n"
