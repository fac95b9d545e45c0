"""Record -> segment -> spectrogram -> color-set images, in the fixed order
normalize, high-pass, cut the 200 ms window, STFT, render."""

from __future__ import annotations

from dataclasses import dataclass, field

from .eeg_signal import (
    FirFilter,
    SampledSignal,
    apply_filter,
    design_highpass_fir,
    extract_segment,
    normalize,
    segment_window,
)
from .tf_imaging import IMAGE_SIZE, Label, Spectrogram, StftConfig, make_color_sets, stft


@dataclass(frozen=True)
class PreprocessConfig:
    filter_order: int = 30
    cutoff_hz: float = 80.0
    segment_ms: float = 200.0
    image_size: int = IMAGE_SIZE
    stft: StftConfig = field(default_factory=StftConfig)

    def highpass(self, sample_rate_hz: float) -> FirFilter:
        return design_highpass_fir(self.filter_order, self.cutoff_hz, sample_rate_hz)


def record_to_segment(record: SampledSignal, center_sample: int,
                      cfg: PreprocessConfig = PreprocessConfig()) -> SampledSignal:
    filtered = apply_filter(normalize(record), cfg.highpass(record.sample_rate_hz))
    window = segment_window(center_sample, cfg.segment_ms, record.sample_rate_hz)
    return extract_segment(filtered, window)


def record_to_spectrogram(record: SampledSignal, center_sample: int,
                          cfg: PreprocessConfig = PreprocessConfig()) -> Spectrogram:
    return stft(record_to_segment(record, center_sample, cfg), cfg.stft)


def record_to_images(record: SampledSignal, center_sample: int,
                     cfg: PreprocessConfig = PreprocessConfig(), label=Label.UNKNOWN):
    """All five color sets for one annotated record."""
    spec = record_to_spectrogram(record, center_sample, cfg)
    return make_color_sets(spec, cfg.image_size, label)
