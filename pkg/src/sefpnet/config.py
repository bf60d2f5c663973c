"""Layered run configuration: defaults < config file < environment < command-line flags.

Keys are addressed by dotted paths such as ``train.base_lr`` or
``model.stft.window_ms``. Environment variables use the ``SEFPNET_`` prefix with
double underscores between levels (``SEFPNET_TRAIN__BASE_LR=1e-3``).
"""

import copy
import dataclasses
import difflib
import os
from dataclasses import dataclass

import yaml

from ._validation import ConfigError
from .backbone import ModelConfig
from .data import SimConfig
from .trainer import TrainConfig

ENV_PREFIX = "SEFPNET_"
PRESETS = ("full", "miniature")


@dataclass(frozen=True)
class DataConfig:
    train_manifest: str = None
    dev_manifest: str = None
    synthetic_train: int = 0
    synthetic_dev: int = 0
    condition: str = "two_spk"
    seed: int = 0
    alternate_targets: bool = False
    resample: bool = False
    sim: SimConfig = SimConfig()

    def to_dict(self):
        return dataclasses.asdict(self)


def _model_defaults(preset):
    if preset not in PRESETS:
        raise ConfigError(f"preset: must be one of {PRESETS}, got {preset!r}")
    return (ModelConfig.miniature() if preset == "miniature" else ModelConfig()).to_dict()


def defaults(preset="full"):
    return {
        "preset": preset,
        "run_dir": "runs/default",
        "device": "cpu",
        "model": _model_defaults(preset),
        "train": TrainConfig().to_dict(),
        "data": DataConfig().to_dict(),
    }


def _paths(tree, prefix=""):
    for k, v in tree.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _paths(v, path + ".")
        yield path


def _set(tree, path, value, known):
    if path not in known:
        hint = difflib.get_close_matches(path, known, n=1)
        suggestion = f" (did you mean {hint[0]!r}?)" if hint else ""
        raise ConfigError(f"{path}: unknown configuration key{suggestion}")
    node = tree
    parts = path.split(".")
    for p in parts[:-1]:
        node = node[p]
    if isinstance(node[parts[-1]], dict) and not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a section, got {value!r}")
    if isinstance(value, dict):
        for k, v in value.items():
            _set(tree, f"{path}.{k}", v, known)
    else:
        if isinstance(node[parts[-1]], float):
            value = _float_or_str(value)
        node[parts[-1]] = value


def parse_value(text):
    """Interpret a flag or environment string as YAML scalar/list."""
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    return _float_or_str(value)


def _float_or_str(value):
    # YAML 1.1 leaves exponent forms such as 1e-3 as strings
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def parse_assignment(item):
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, value = item.split("=", 1)
    return key.strip(), parse_value(value)


def load_layers(config_path=None, overrides=(), environ=None):
    """Merge all layers into a plain nested dict of effective settings."""
    environ = os.environ if environ is None else environ
    layers = []
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {config_path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"--config: {config_path} is not valid YAML/JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"--config: {config_path} must contain a mapping")
        layers += list(_flatten(file_cfg))
    for name, value in sorted(environ.items()):
        if name.startswith(ENV_PREFIX):
            path = name[len(ENV_PREFIX):].lower().replace("__", ".")
            layers.append((path, parse_value(value)))
    layers += [parse_assignment(o) if isinstance(o, str) else o for o in overrides]

    preset = "full"
    for path, value in layers:
        if path == "preset":
            preset = value
    tree = defaults(preset)
    known = list(_paths(tree))
    for path, value in layers:
        _set(tree, path, value, known)
    return tree


def _flatten(tree, prefix=""):
    for k, v in tree.items():
        path = f"{prefix}{k}"
        if isinstance(v, dict) and v:
            yield from _flatten(v, path + ".")
        else:
            yield path, v


def _build(cls, section, name):
    try:
        return cls.from_dict(section) if hasattr(cls, "from_dict") else cls(**section)
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def build(tree):
    """Typed ``(ModelConfig, TrainConfig, DataConfig)`` from an effective tree."""
    tree = copy.deepcopy(tree)
    model = _build(ModelConfig, tree["model"], "model")
    train = _build(TrainConfig, tree["train"], "train")
    data_section = dict(tree["data"])
    data_section["sim"] = _build(SimConfig, data_section["sim"], "data.sim")
    data = _build(DataConfig, data_section, "data")
    return model, train, data
