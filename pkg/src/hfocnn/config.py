"""Pipeline configuration: an INI file whose sections mirror the config
dataclasses, with every key overridable from the command line.

Example::

    [synth]
    n_per_class = 100
    snr_db_range = 0, 10

    [preprocess]
    image_size = 256

    [stft]
    window_len = 64
    hop = 2

    [train]
    arch = A
    batch_size = 20
    filters = 8, 16, 32
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .pipeline import PreprocessConfig
from .synth import SynthConfig
from .tf_imaging import StftConfig
from .training import TrainConfig


@dataclass(frozen=True)
class PipelineConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def as_dict(self):
        return dataclasses.asdict(self)


def _convert(cls, name, raw: str):
    f = {f.name: f for f in fields(cls)}.get(name)
    if f is None:
        raise ConfigError(f"unknown key {name!r} for [{cls.__name__}]")
    default = f.default if f.default is not dataclasses.MISSING else None
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, tuple) or name == "filters":
            if raw.lower() in ("", "none"):
                return None
            items = [s.strip() for s in raw.split(",")]
            cast = int if name == "filters" else float
            return tuple(cast(s) for s in items)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r} ({exc})") from None


def _section(parser, name, cls, base):
    if not parser.has_section(name):
        return base
    return replace(base, **{k: _convert(cls, k, v) for k, v in parser.items(name)})


def load_config(path=None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    unknown = set(parser.sections()) - {"synth", "preprocess", "stft", "train", "pipeline"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    stft = _section(parser, "stft", StftConfig, cfg.preprocess.stft)
    pre = _section(parser, "preprocess", PreprocessConfig, cfg.preprocess)
    pre = replace(pre, stft=stft)
    seed = parser.getint("pipeline", "seed", fallback=cfg.seed)
    return PipelineConfig(
        synth=_section(parser, "synth", SynthConfig, cfg.synth),
        preprocess=pre,
        train=_section(parser, "train", TrainConfig, cfg.train),
        seed=seed,
    )


def with_seed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    return PipelineConfig(replace(cfg.synth, seed=seed), cfg.preprocess,
                          replace(cfg.train, seed=seed), seed)
