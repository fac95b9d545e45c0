"""Time-frequency images: STFT power maps rendered through a jet colormap,
resized to a square image and split into the five color sets.

Also owns the ``TFIM`` tensor file format and 8-bit PNG export.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .eeg_signal import SampledSignal
from .errors import (
    ConfigError,
    DegenerateRange,
    FormatError,
    SegmentTooShort,
    SourceTooSmall,
    WrongColorSet,
)

EPS_POWER = 1e-12
IMAGE_SIZE = 256


class ColorSet(IntEnum):
    RGB = 0
    R = 1
    G = 2
    B = 3
    HSV = 4

    @property
    def n_channels(self) -> int:
        return 3 if self in (ColorSet.RGB, ColorSet.HSV) else 1

    @classmethod
    def parse(cls, name) -> "ColorSet":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ConfigError(f"unknown color set {name!r}; "
                              f"choose from {[c.name.lower() for c in cls]}") from None


class Label(IntEnum):
    NHFO = 0
    HFO = 1
    UNKNOWN = 255

    @classmethod
    def parse(cls, name) -> "Label":
        if isinstance(name, cls):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ConfigError(f"unknown label {name!r}") from None


@dataclass(frozen=True)
class StftConfig:
    window_len: int = 64
    hop: int = 2
    fft_len: int = 256
    window_fn: str = "hann"

    def __post_init__(self):
        if self.window_len <= 0 or self.hop <= 0:
            raise ConfigError("window_len and hop must be positive")
        if self.hop > self.window_len:
            raise ConfigError(f"hop {self.hop} exceeds window_len {self.window_len}")
        if self.fft_len < self.window_len or self.fft_len & (self.fft_len - 1):
            raise ConfigError(
                f"fft_len {self.fft_len} must be a power of two >= window_len")
        if self.window_fn not in ("hann", "boxcar"):
            raise ConfigError(f"unsupported window {self.window_fn!r}")

    def window(self) -> np.ndarray:
        if self.window_fn == "boxcar":
            return np.ones(self.window_len)
        # periodic (DFT-even) Hann
        n = np.arange(self.window_len)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.window_len)


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """STFT power, rows = frequency (ascending), columns = time."""

    power_db: np.ndarray
    freq_axis_hz: np.ndarray
    time_axis_s: np.ndarray
    power: np.ndarray = field(repr=False, default=None)


@dataclass(eq=False)
class TFImage:
    pixels: np.ndarray  # (n_H, n_W, n_C)
    color_set: ColorSet
    label: Label = Label.UNKNOWN

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        self.pixels = px
        self.color_set = ColorSet.parse(self.color_set)
        self.label = Label.parse(self.label)

    @property
    def shape(self):
        return self.pixels.shape


def stft(segment: SampledSignal, cfg: StftConfig = StftConfig()) -> Spectrogram:
    x = segment.samples
    if x.size < cfg.window_len:
        raise SegmentTooShort(
            f"segment has {x.size} samples, window needs {cfg.window_len}")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_len)[::cfg.hop]
    spectrum = np.fft.rfft(frames * cfg.window(), n=cfg.fft_len, axis=1)
    power = (spectrum.real ** 2 + spectrum.imag ** 2).T
    fs = segment.sample_rate_hz
    freqs = np.fft.rfftfreq(cfg.fft_len, d=1 / fs)
    times = (np.arange(frames.shape[0]) * cfg.hop + cfg.window_len / 2) / fs
    return Spectrogram(10 * np.log10(power + EPS_POWER), freqs, times, power)


def jet(v: np.ndarray) -> np.ndarray:
    """Closed-form jet colormap; ``v`` in [0, 1] -> (..., 3) RGB."""
    v = np.asarray(v, dtype=np.float64)
    r = np.clip(np.minimum(4 * v - 1.5, -4 * v + 4.5), 0.0, 1.0)
    g = np.clip(np.minimum(4 * v - 0.5, -4 * v + 3.5), 0.0, 1.0)
    b = np.clip(np.minimum(4 * v + 0.5, -4 * v + 2.5), 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def intensity_map(spec: Spectrogram) -> np.ndarray:
    """Min-max normalised dB power, flipped so frequency rises upward."""
    p = spec.power_db
    lo, hi = p.min(), p.max()
    if not hi > lo:
        raise DegenerateRange("spectrogram power is constant; nothing to render")
    return ((p - lo) / (hi - lo))[::-1, :]


def resize_bilinear(image: TFImage, out_h: int, out_w: int) -> TFImage:
    """Corner-aligned bilinear resize: output corners sample input corners."""
    px = image.pixels
    in_h, in_w = px.shape[:2]
    if in_h < 2 or in_w < 2:
        raise SourceTooSmall(f"cannot interpolate from a {in_h}x{in_w} source")
    if (in_h, in_w) == (out_h, out_w):
        return TFImage(px.copy(), image.color_set, image.label)

    def axis_weights(n_in, n_out):
        pos = np.linspace(0.0, n_in - 1, n_out) if n_out > 1 else np.zeros(1)
        i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
        return i0, pos - i0

    y0, wy = axis_weights(in_h, out_h)
    x0, wx = axis_weights(in_w, out_w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = px[y0][:, x0] * (1 - wx) + px[y0][:, x0 + 1] * wx
    bottom = px[y0 + 1][:, x0] * (1 - wx) + px[y0 + 1][:, x0 + 1] * wx
    out = np.clip(top * (1 - wy) + bottom * wy, 0.0, 1.0)
    return TFImage(out, image.color_set, image.label)


def render_jet(spec: Spectrogram, size: int = IMAGE_SIZE,
               label: Label = Label.UNKNOWN) -> TFImage:
    rgb = TFImage(jet(intensity_map(spec)), ColorSet.RGB, label)
    return resize_bilinear(rgb, size, size)


def rgb_to_hsv(image: TFImage) -> TFImage:
    if image.color_set is not ColorSet.RGB:
        raise WrongColorSet(f"expected an RGB image, got {image.color_set.name}")
    r, g, b = np.moveaxis(image.pixels, -1, 0)
    mx = image.pixels.max(axis=-1)
    mn = image.pixels.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, np.mod((g - b) / safe, 6.0),
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0)) / 6.0
    h = np.where(delta > 0, h, 0.0)
    h = np.where(h >= 1.0, 0.0, h)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return TFImage(np.stack([h, s, mx], axis=-1), ColorSet.HSV, image.label)


def extract_channel(image: TFImage, channel) -> TFImage:
    channel = ColorSet.parse(channel)
    if image.color_set is not ColorSet.RGB:
        raise WrongColorSet(f"expected an RGB image, got {image.color_set.name}")
    if channel.n_channels != 1:
        raise WrongColorSet(f"{channel.name} is not a single channel")
    idx = int(channel) - 1
    return TFImage(image.pixels[:, :, idx:idx + 1].copy(), channel, image.label)


def make_color_sets(spec: Spectrogram, size: int = IMAGE_SIZE,
                    label: Label = Label.UNKNOWN) -> dict[ColorSet, TFImage]:
    rgb = render_jet(spec, size, label)
    return {
        ColorSet.RGB: rgb,
        ColorSet.R: extract_channel(rgb, ColorSet.R),
        ColorSet.G: extract_channel(rgb, ColorSet.G),
        ColorSet.B: extract_channel(rgb, ColorSet.B),
        ColorSet.HSV: rgb_to_hsv(rgb),
    }


# --- file formats ---------------------------------------------------------

TFIM_MAGIC = b"TFIM"
TFIM_VERSION = 1
_TFIM_HEADER = struct.Struct("<4sHHHBBB")


def write_tfim(path, image: TFImage) -> None:
    n_h, n_w, n_c = image.shape
    header = _TFIM_HEADER.pack(TFIM_MAGIC, TFIM_VERSION, n_h, n_w, n_c,
                               int(image.color_set), int(image.label))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(image.pixels, dtype="<f4").tobytes())


def read_tfim(path) -> TFImage:
    raw = Path(path).read_bytes()
    if len(raw) < _TFIM_HEADER.size:
        raise FormatError(f"{path}: truncated TFIM header")
    magic, version, n_h, n_w, n_c, cs, lab = _TFIM_HEADER.unpack_from(raw)
    if magic != TFIM_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != TFIM_VERSION:
        raise FormatError(f"{path}: unsupported TFIM version {version}")
    body = raw[_TFIM_HEADER.size:]
    if len(body) != 4 * n_h * n_w * n_c:
        raise FormatError(f"{path}: pixel payload does not match {n_h}x{n_w}x{n_c}")
    px = np.frombuffer(body, dtype="<f4").reshape(n_h, n_w, n_c).astype(np.float64)
    return TFImage(px, ColorSet(cs), Label(lab))


def write_png(path, image: TFImage) -> None:
    """8-bit lossless export for eyeballing; not used by training."""
    from PIL import Image

    q = np.round(image.pixels * 255).astype(np.uint8)
    mode = "L" if q.shape[2] == 1 else "RGB"
    Image.fromarray(q[:, :, 0] if mode == "L" else q, mode=mode).save(path)
