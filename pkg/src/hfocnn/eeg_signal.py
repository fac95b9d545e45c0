"""Signal-domain preprocessing: z-scoring, high-pass FIR design and
application, and event-centred segment extraction.

Also owns the ``EEGS`` single-signal binary file format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    InvalidCutoff,
    InvalidOrder,
    OutOfBounds,
    SignalTooShort,
    ZeroVariance,
)

EEGS_MAGIC = b"EEGS"
EEGS_VERSION = 1
_EEGS_HEADER = struct.Struct("<4sHdQ")


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled 1-D trace."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise SignalTooShort("signal must be a non-empty 1-D sequence")
        if not self.sample_rate_hz > 0:
            raise InvalidCutoff(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class FirFilter:
    taps: np.ndarray
    order: int
    cutoff_hz: float
    sample_rate_hz: float

    @property
    def group_delay(self) -> int:
        return self.order // 2


@dataclass(frozen=True)
class EventWindow:
    center_sample: int
    length_samples: int

    @property
    def start(self) -> int:
        return self.center_sample - self.length_samples // 2

    @property
    def stop(self) -> int:
        return self.start + self.length_samples


def normalize(signal: SampledSignal) -> SampledSignal:
    """Z-score a signal (population standard deviation)."""
    x = signal.samples
    std = x.std()
    if std == 0 or not np.isfinite(std):
        raise ZeroVariance("signal has zero variance (dead channel?)")
    return SampledSignal((x - x.mean()) / std, signal.sample_rate_hz)


def design_highpass_fir(order: int = 30, cutoff_hz: float = 80.0,
                        sample_rate_hz: float = 1000.0) -> FirFilter:
    """Linear-phase high-pass built by spectral inversion of a
    Hamming-windowed sinc low-pass.

    The low-pass prototype is scaled to unit DC gain before inversion, so
    the high-pass taps sum to zero and the DC response is nulled exactly.
    """
    if int(order) != order or order < 2 or order % 2:
        raise InvalidOrder(f"order must be an even integer >= 2, got {order}")
    order = int(order)
    nyquist = sample_rate_hz / 2
    if not 0 < cutoff_hz < nyquist:
        raise InvalidCutoff(
            f"cutoff {cutoff_hz} Hz must lie strictly inside (0, {nyquist}) Hz")

    n = np.arange(order + 1) - order / 2
    fc = cutoff_hz / sample_rate_hz
    lowpass = 2 * fc * np.sinc(2 * fc * n) * np.hamming(order + 1)
    lowpass /= lowpass.sum()
    taps = -lowpass
    taps[order // 2] += 1.0
    # float rounding leaves a few ulp of asymmetry otherwise
    taps = 0.5 * (taps + taps[::-1])
    return FirFilter(taps, order, float(cutoff_hz), float(sample_rate_hz))


def frequency_response(fir: FirFilter, freqs_hz) -> np.ndarray:
    """Complex response of the taps at the given frequencies."""
    f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
    k = np.arange(fir.taps.size)
    phase = np.exp(-2j * np.pi * np.outer(f / fir.sample_rate_hz, k))
    return phase @ fir.taps


def apply_filter(signal: SampledSignal, fir: FirFilter) -> SampledSignal:
    """Zero-padded convolution trimmed back to the input length, with the
    ``order/2`` group delay compensated so events stay in place."""
    if len(signal) < fir.taps.size:
        raise SignalTooShort(
            f"signal has {len(signal)} samples, filter needs at least {fir.taps.size}")
    full = np.convolve(signal.samples, fir.taps, mode="full")
    d = fir.group_delay
    return SampledSignal(full[d:d + len(signal)], signal.sample_rate_hz)


def extract_segment(signal: SampledSignal, window: EventWindow) -> SampledSignal:
    if window.length_samples <= 0:
        raise OutOfBounds("window length must be positive")
    if window.start < 0 or window.stop > len(signal):
        raise OutOfBounds(
            f"window [{window.start}, {window.stop}) leaves the recording "
            f"[0, {len(signal)})")
    return SampledSignal(signal.samples[window.start:window.stop].copy(),
                         signal.sample_rate_hz)


def segment_window(center_sample: int, duration_ms: float = 200.0,
                   sample_rate_hz: float = 1000.0) -> EventWindow:
    return EventWindow(int(center_sample), int(round(duration_ms * sample_rate_hz / 1000)))


# --- file formats ---------------------------------------------------------

def write_eegs(path, signal: SampledSignal) -> None:
    header = _EEGS_HEADER.pack(EEGS_MAGIC, EEGS_VERSION,
                               float(signal.sample_rate_hz), len(signal))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(signal.samples.astype("<f8").tobytes())


def read_eegs(path) -> SampledSignal:
    raw = Path(path).read_bytes()
    if len(raw) < _EEGS_HEADER.size:
        raise FormatError(f"{path}: truncated EEGS header")
    magic, version, fs, count = _EEGS_HEADER.unpack_from(raw)
    if magic != EEGS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EEGS_VERSION:
        raise FormatError(f"{path}: unsupported EEGS version {version}")
    body = raw[_EEGS_HEADER.size:]
    if len(body) != 8 * count:
        raise FormatError(f"{path}: expected {count} samples, got {len(body) // 8}")
    return SampledSignal(np.frombuffer(body, dtype="<f8").astype(np.float64), fs)


def read_text_signal(path, sample_rate_hz: float) -> SampledSignal:
    """Headerless text, one sample per line."""
    return SampledSignal(np.loadtxt(path, dtype=np.float64, ndmin=1), sample_rate_hz)


def load_signal(path, sample_rate_hz: float | None = None) -> SampledSignal:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == EEGS_MAGIC:
        return read_eegs(path)
    if sample_rate_hz is None:
        raise FormatError(f"{path}: plain-text signal needs an explicit sample rate")
    return read_text_signal(path, sample_rate_hz)
