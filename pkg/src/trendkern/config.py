"""Flat ``key: value`` experiment configuration with per-dataset default profiles."""
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError
from .knowledge import SAMPLE_RANGE_GRID
from .model import LAMBDA_GRID, KernConfig
from .pipeline import TrainSettings

log = logging.getLogger(__name__)

_COMMON = dict(
    ext_kg=True, int_kg=True, triplet_lambda=0.002, sample_range=500, feat_size=10,
    rnn_hidden_size=50, lr=0.001, lr_decay=True, lr_decay_gamma=0.1, batch_size=400,
)

PROFILES = {
    "geostyle": dict(_COMMON, input_len=52, output_len=26, lr_decay_interval=15, epoch=20,
                     dataset_format="geostyle-raw"),
    "fit-half": dict(_COMMON, input_len=48, output_len=12, lr_decay_interval=10, epoch=15),
    "fit-one": dict(_COMMON, input_len=48, output_len=24, lr_decay_interval=10, epoch=15),
    # desk-scale profile for generated data; sample_range sized for small sets
    "synthetic": dict(_COMMON, input_len=26, output_len=13, sample_range=50, lr=0.005,
                      lr_decay_interval=15, epoch=20, batch_size=64),
}


@dataclass
class ExperimentConfig:
    dataset_profile: str = "geostyle"
    input_len: int = 52
    output_len: int = 26
    ext_kg: bool = True
    int_kg: bool = True
    triplet_lambda: float = 0.002
    sample_range: int = 500
    feat_size: int = 10
    rnn_hidden_size: int = 50
    lr: float = 0.001
    lr_decay: bool = True
    lr_decay_interval: int = 15
    lr_decay_gamma: float = 0.1
    epoch: int = 20
    batch_size: int = 400
    dataset_path: Optional[str] = None
    dataset_format: str = "trendkern-json"
    taxonomy_path: Optional[str] = None
    seed: int = 0
    margin: float = 0.5
    out_dir: str = "runs"
    # directory relative paths resolve against; not part of the file
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def kern_config(self):
        return KernConfig(
            input_len=self.input_len, output_len=self.output_len, ext_kg=self.ext_kg,
            int_kg=self.int_kg, triplet_lambda=self.triplet_lambda, sample_range=self.sample_range,
            feat_size=self.feat_size, rnn_hidden_size=self.rnn_hidden_size, margin=self.margin,
            seed=self.seed,
        )

    def train_settings(self):
        return TrainSettings(
            epochs=self.epoch, batch_size=self.batch_size, lr=self.lr, lr_decay=self.lr_decay,
            lr_decay_interval=self.lr_decay_interval, lr_decay_gamma=self.lr_decay_gamma,
        )

    def resolve(self, value):
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


FILE_KEYS = tuple(f.name for f in fields(ExperimentConfig) if f.name != "base_dir")
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def defaults_for(profile):
    if profile not in PROFILES:
        raise ConfigError(f"unknown dataset_profile {profile!r}; expected one of {sorted(PROFILES)}")
    return ExperimentConfig(dataset_profile=profile, **PROFILES[profile])


def _coerce(key, value):
    kind = _TYPES[key]
    if value is None:
        if kind in (Optional[str],):
            return None
        raise ConfigError(f"{key}: null is not allowed")
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponent floats without a dot (1e-4) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def parse_mapping(mapping, base_dir=Path(".")):
    unknown = sorted(set(mapping) - set(FILE_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = defaults_for(mapping.get("dataset_profile", "geostyle"))
    values = {k: _coerce(k, v) for k, v in mapping.items()}
    cfg = replace(cfg, base_dir=Path(base_dir), **values)
    validate(cfg)
    return cfg


def parse_config(path):
    """Read a flat ``key: value`` file; missing keys take the profile defaults."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected flat 'key: value' lines")
    nested = [k for k, v in doc.items() if isinstance(v, (dict, list))]
    if nested:
        raise ConfigError(f"{path}: nested values are not supported: {nested}")
    return parse_mapping(doc, path.parent)


def validate(cfg):
    if cfg.dataset_format not in ("trendkern-json", "geostyle-raw"):
        raise ConfigError(f"dataset_format {cfg.dataset_format!r} unknown")
    cfg.kern_config()
    cfg.train_settings().schedule
    if cfg.sample_range not in SAMPLE_RANGE_GRID:
        log.warning("sample_range=%s is outside the tuning grid %s", cfg.sample_range, SAMPLE_RANGE_GRID)
    if cfg.triplet_lambda not in LAMBDA_GRID:
        log.warning("triplet_lambda=%s is outside the tuning grid %s", cfg.triplet_lambda, LAMBDA_GRID)


def serialize_config(cfg):
    """Every key on its own line; ``parse_config`` of the result reproduces ``cfg``."""
    lines = []
    for key in FILE_KEYS:
        value = getattr(cfg, key)
        if value is None:
            text = "null"
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = _float_text(value)
        elif isinstance(value, int):
            text = str(value)
        else:
            text = json.dumps(value)
        lines.append(f"{key}: {text}")
    return "\n".join(lines) + "\n"


def _float_text(x):
    text = repr(x)
    mantissa, _, exponent = text.partition("e")
    if exponent and "." not in mantissa:
        text = f"{mantissa}.0e{exponent}"
    return text
