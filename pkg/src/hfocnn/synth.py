"""Seeded generator of labelled synthetic scalp-EEG records.

Each record is a short host recording (1 s by default) of pink background
noise with Poisson-placed IED-like sharp waves. HFO records additionally
carry one Tukey-enveloped oscillation burst centred on the annotated
sample, scaled to a requested in-band SNR. NHFO records never contain a
burst.

Every entry draws from its own generator keyed by ``(seed, class, index)``,
so any subset of entries can be produced in any order with identical bytes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal.windows import tukey

from .dataset import DatasetManifest, ManifestEntry
from .eeg_signal import SampledSignal
from .errors import ConfigError, TooFewCycles
from .tf_imaging import Label

HFO_BAND_HZ = (80.0, 500.0)
TUKEY_TAPER = 0.5


@dataclass(frozen=True)
class SynthConfig:
    n_per_class: int = 100
    sample_rate_hz: float = 1000.0
    hfo_freq_range_hz: tuple = (80.0, 500.0)
    hfo_duration_ms: tuple = (15.0, 100.0)
    min_cycles: int = 3
    snr_db_range: tuple = (0.0, 10.0)
    spike_rate_per_s: float = 0.5
    line_noise_hz: float = 50.0
    line_noise_amplitude: float = 0.0
    record_s: float = 1.0
    segment_ms: float = 200.0
    seed: int = 0

    def __post_init__(self):
        fs = self.sample_rate_hz
        lo, hi = self.hfo_freq_range_hz
        dlo, dhi = self.hfo_duration_ms
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        if fs <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if not 0 < lo < hi <= fs / 2:
            raise ConfigError(
                f"hfo_freq_range_hz {self.hfo_freq_range_hz} must satisfy "
                f"0 < low < high <= Nyquist ({fs / 2} Hz)")
        if not 0 < dlo <= dhi:
            raise ConfigError(f"hfo_duration_ms {self.hfo_duration_ms} must be 0 < min <= max")
        if hi * dhi / 1000 < self.min_cycles:
            raise ConfigError(
                f"no (frequency, duration) pair in range allows {self.min_cycles} cycles")
        if dhi > self.segment_ms:
            raise ConfigError("longest burst does not fit in the segment")
        if self.snr_db_range[0] > self.snr_db_range[1]:
            raise ConfigError(f"snr_db_range {self.snr_db_range} is reversed")
        if self.spike_rate_per_s < 0:
            raise ConfigError("spike_rate_per_s must be >= 0")
        if self.record_s * 1000 < self.segment_ms or self.record_s < 1:
            raise ConfigError("record_s must be >= 1 s and hold one segment")

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_ms * self.sample_rate_hz / 1000))

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Transient:
    """An IED-like sharp wave placed in the background."""

    center_sample: int
    duration_ms: float
    amplitude: float


def _rng(*key):
    return np.random.default_rng([int(k) for k in key])


def pink_noise(n, rng) -> np.ndarray:
    """Unit-variance noise with a 1/f power spectrum."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n)
    scale = np.zeros_like(f)
    scale[1:] = 1.0 / np.sqrt(f[1:])
    x = np.fft.irfft(spectrum * scale, n)
    return x / x.std()


def sharp_wave(n) -> np.ndarray:
    """Biphasic transient: fast negative deflection then a slower, smaller
    positive wave."""
    n1 = max(1, n // 3)
    n2 = max(1, n - n1)
    first = -np.sin(np.pi * (np.arange(n1) + 0.5) / n1)
    second = 0.5 * np.sin(np.pi * (np.arange(n2) + 0.5) / n2)
    return np.concatenate([first, second])[:n]


def gen_background(duration_s: float, cfg: SynthConfig, seed) -> tuple[SampledSignal, list]:
    """Pink noise plus IED-like transients; returns the signal and the
    transients that were injected."""
    if duration_s < 1:
        raise ConfigError(f"background duration must be >= 1 s, got {duration_s}")
    rng = np.random.default_rng(seed)
    fs = cfg.sample_rate_hz
    n = int(round(duration_s * fs))
    x = pink_noise(n, rng)
    if cfg.line_noise_amplitude:
        t = np.arange(n) / fs
        x += cfg.line_noise_amplitude * np.sin(2 * np.pi * cfg.line_noise_hz * t
                                               + rng.uniform(0, 2 * np.pi))
    transients = []
    for _ in range(rng.poisson(cfg.spike_rate_per_s * duration_s)):
        center = int(rng.integers(0, n))
        dur_ms = float(rng.uniform(20.0, 70.0))
        amp = float(rng.uniform(2.0, 6.0)) * rng.choice([-1.0, 1.0])
        width = max(2, int(round(dur_ms * fs / 1000)))
        wave = amp * sharp_wave(width)
        start = center - width // 2
        lo, hi = max(0, start), min(n, start + width)
        x[lo:hi] += wave[lo - start:hi - start]
        transients.append(Transient(center, dur_ms, amp))
    return SampledSignal(x, fs), transients


def gen_hfo_burst(freq_hz: float, duration_ms: float, amplitude: float,
                  cfg: SynthConfig, seed) -> SampledSignal:
    """Sinusoid under a Tukey (taper 0.5) envelope, ``duration_ms`` long."""
    lo, hi = cfg.hfo_freq_range_hz
    if not lo <= freq_hz <= hi:
        raise ConfigError(f"burst frequency {freq_hz} Hz outside {cfg.hfo_freq_range_hz}")
    # compare in integer-friendly form: freq * duration_ms >= 1000 * cycles
    if freq_hz * duration_ms < 1000 * cfg.min_cycles:
        raise TooFewCycles(
            f"{freq_hz} Hz for {duration_ms} ms gives {freq_hz * duration_ms / 1000:.2f} "
            f"cycles, fewer than {cfg.min_cycles}")
    rng = np.random.default_rng(seed)
    fs = cfg.sample_rate_hz
    n = max(2, int(round(duration_ms * fs / 1000)))
    t = np.arange(n) / fs
    phase = rng.uniform(0, 2 * np.pi)
    return SampledSignal(amplitude * tukey(n, TUKEY_TAPER) * np.sin(2 * np.pi * freq_hz * t + phase), fs)


def band_limit(x: np.ndarray, fs: float, band=HFO_BAND_HZ) -> np.ndarray:
    """Brick-wall FFT band-pass."""
    spectrum = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, d=1 / fs)
    spectrum[(f < band[0]) | (f > band[1])] = 0
    return np.fft.irfft(spectrum, x.size)


def _band_rms(x, fs, start, stop):
    y = band_limit(x, fs)[start:stop]
    return float(np.sqrt(np.mean(y ** 2)))


def inject_burst(background: SampledSignal, burst_unit: SampledSignal, center: int,
                 snr_db: float) -> tuple[SampledSignal, float]:
    """Add ``burst_unit`` centred at ``center``, scaled so the in-band RMS
    ratio over the burst window equals ``snr_db``. Returns the signal and
    the applied amplitude."""
    fs = background.sample_rate_hz
    n = len(background)
    m = len(burst_unit)
    start = center - m // 2
    if start < 0 or start + m > n:
        raise ConfigError("burst does not fit inside the record")
    placed = np.zeros(n)
    placed[start:start + m] = burst_unit.samples
    rms_bg = _band_rms(background.samples, fs, start, start + m)
    rms_burst = _band_rms(placed, fs, start, start + m)
    gain = 10 ** (snr_db / 20) * rms_bg / rms_burst
    return SampledSignal(background.samples + gain * placed, fs), gain


def make_entry(cfg: SynthConfig, label: Label, index: int):
    """Generate one record and its manifest entry."""
    rng = _rng(cfg.seed, int(label), index, 0)
    bg_seed = [cfg.seed, int(label), index, 1]
    background, _ = gen_background(cfg.record_s, cfg, bg_seed)
    n = len(background)
    half = cfg.segment_samples // 2
    center = int(rng.integers(half, n - (cfg.segment_samples - half) + 1))
    entry_id = f"{label.name.lower()}_{index:05d}"
    if label is Label.NHFO:
        return background, ManifestEntry(entry_id, label, center)

    lo, hi = cfg.hfo_freq_range_hz
    freq = float(rng.uniform(lo, hi))
    # relative slack keeps freq * duration >= 1000 * cycles after rounding
    dmin = max(cfg.hfo_duration_ms[0], 1000 * cfg.min_cycles / freq * (1 + 1e-12))
    dmin = min(dmin, cfg.hfo_duration_ms[1])
    duration = float(rng.uniform(dmin, cfg.hfo_duration_ms[1]))
    snr = float(rng.uniform(*cfg.snr_db_range))
    burst = gen_hfo_burst(freq, duration, 1.0, cfg, [cfg.seed, int(label), index, 2])
    signal, _ = inject_burst(background, burst, center, snr)
    return signal, ManifestEntry(entry_id, label, center, freq, duration, snr)


def build_dataset(cfg: SynthConfig) -> tuple[list[SampledSignal], DatasetManifest]:
    """``n_per_class`` HFO records followed by ``n_per_class`` NHFO records."""
    signals, entries = [], []
    for label in (Label.HFO, Label.NHFO):
        for i in range(cfg.n_per_class):
            sig, entry = make_entry(cfg, label, i)
            signals.append(sig)
            entries.append(entry)
    return signals, DatasetManifest(entries)
