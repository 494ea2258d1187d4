"""Run configuration: an INI document with one section per pipeline stage.

Values are parsed as JSON when possible (numbers, booleans, lists) and kept
as strings otherwise.  Unknown sections or keys are rejected.  A single
``[run] seed`` feeds every random substream.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from .detector import DetectionConfig
from .evaluation import SyntheticSpec
from .model import ModelConfig
from .parser import DEFAULT_REGEXES, ParserConfig
from .trainer import TrainConfig


def _defaults(cls, skip=()) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            out[f.name] = f.default_factory()  # type: ignore[misc]
    return out


SECTION_DEFAULTS: dict[str, dict[str, Any]] = {
    "run": {"seed": 0},
    "parser": {**_defaults(ParserConfig), "preprocessing_regexes": [list(r) for r in DEFAULT_REGEXES],
               "adapter": "generic"},
    "sequencer": {"mode": "session", "session_pattern": r"(blk_-?\d+)", "window_seconds": 300.0,
                  "step_seconds": None},
    "model": _defaults(ModelConfig, skip=("vocab_size", "dtype")),
    "train": _defaults(TrainConfig, skip=("seed",)),
    "detect": {**_defaults(DetectionConfig, skip=("seed", "mask_ratio")), "mask_ratio": None},
    "synth": _defaults(SyntheticSpec, skip=("seed",)),
}


class ConfigError(ValueError):
    pass


def _parse_value(text: str) -> Any:
    text = text.strip()
    if text in ("inf", "+inf", "Infinity"):
        return float("inf")
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(section: str, key: str, value: Any) -> Any:
    default = SECTION_DEFAULTS[section][key]
    if value is None:
        return None
    if section == "synth" and key == "seq_len" and isinstance(value, list):
        if len(value) != 2 or not all(isinstance(v, int) for v in value):
            raise ConfigError("[synth] seq_len: expected an integer or [min, max]")
        return value
    if isinstance(default, bool):
        if isinstance(value, str):
            if value.lower() in ("true", "yes", "1"):
                return True
            if value.lower() in ("false", "no", "0"):
                return False
            raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float) or (default is None and key in ("step_seconds", "mask_ratio")):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}") from None
    if isinstance(default, (tuple, list)) and isinstance(value, list):
        return value
    if isinstance(default, str) and not isinstance(value, str):
        return str(value)
    return value


def _plain(value: Any) -> Any:
    # tuples become lists so a config equals its own text round trip
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    def set(self, section: str, key: str, value: Any) -> None:
        if section not in SECTION_DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SECTION_DEFAULTS[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        if isinstance(value, str):
            value = _parse_value(value)
        self.values.setdefault(section, {})[key] = _coerce(section, key, value)

    def get(self, section: str, key: str) -> Any:
        return self.values.get(section, {}).get(key, SECTION_DEFAULTS[section][key])

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # type: ignore[assignment]
        cp.read_string(text)
        cfg = cls()
        for section in cp.sections():
            for key, value in cp.items(section):
                cfg.set(section, key, value)
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def apply_overrides(self, overrides: Iterable[str]) -> "RunConfig":
        """``section.key=value`` strings, e.g. ``train.alpha=0.5``."""
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            lhs, value = item.split("=", 1)
            section, key = lhs.split(".", 1)
            self.set(section.strip(), key.strip(), value)
        return self

    def resolved(self) -> dict[str, dict[str, Any]]:
        return {s: {k: _plain(self.get(s, k)) for k in keys} for s, keys in SECTION_DEFAULTS.items()}

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # type: ignore[assignment]
        for section, vals in self.resolved().items():
            cp[section] = {k: json.dumps(v) for k, v in vals.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    # -- typed views -------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.get("run", "seed"))

    def parser_config(self) -> ParserConfig:
        vals = dict(self.resolved()["parser"])
        vals.pop("adapter")
        vals["preprocessing_regexes"] = tuple(tuple(r) for r in vals["preprocessing_regexes"])
        return ParserConfig(**vals)

    def model_settings(self) -> dict:
        return dict(self.resolved()["model"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.resolved()["train"], seed=self.seed)

    def detection_config(self) -> DetectionConfig:
        vals = dict(self.resolved()["detect"])
        if vals["mask_ratio"] is None:
            vals["mask_ratio"] = self.get("train", "mask_ratio")
        return DetectionConfig(**vals, seed=self.seed)

    def synthetic_spec(self) -> SyntheticSpec:
        vals = dict(self.resolved()["synth"])
        for k in ("seq_len", "anomaly_types"):
            if isinstance(vals[k], list):
                vals[k] = tuple(vals[k])
        return SyntheticSpec(**vals, seed=self.seed)
