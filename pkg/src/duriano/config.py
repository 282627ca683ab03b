"""Run configuration: a line-oriented ``key=value`` file plus command-line overrides.

Keys prefixed ``stft.`` and ``model.`` override fields of
:class:`~duriano.dsp.StftConfig` and :class:`~duriano.model.ModelConfig`.
The resolved configuration, with every default materialized, is written
next to the run outputs as a provenance record.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .dsp import StftConfig
from .model import ModelConfig

PRESETS = ("full", "miniature")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    corpus: str = ""
    workdir: str = ""
    checkpoint: str = ""
    seed: int = 0
    steps: int = 200
    checkpoint_every: int = 100
    batch_size: int = 4
    learning_rate: float = 1e-3
    decay_rate: float = 0.5
    decay_steps: int = 50_000
    l2: float = 1e-6
    preset: str = "full"
    conditioning_mode: str = "note"
    holdout_piece: str = ""
    gl_iterations: int = 60
    # wallclock makes logs differ between identical runs; off keeps them bit-identical
    log_wallclock: bool = False
    stft: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)

    def stft_config(self) -> StftConfig:
        cfg = StftConfig(**self.stft)
        cfg.validate()
        return cfg

    def model_config(self, **data_sizes) -> ModelConfig:
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        overrides = {**data_sizes, "conditioning_mode": self.conditioning_mode, **self.model}
        if self.preset == "miniature":
            return ModelConfig.miniature(**overrides)
        return ModelConfig(**overrides)

    def update(self, pairs: dict[str, str]) -> "RunConfig":
        for key, raw in pairs.items():
            _assign(self, key, raw)
        return self

    def resolved_text(self, model_cfg: ModelConfig | None = None) -> str:
        lines = []
        for f in dataclasses.fields(self):
            if f.name in ("stft", "model"):
                continue
            lines.append(f"{f.name}={_format(getattr(self, f.name))}")
        for k, v in dataclasses.asdict(self.stft_config()).items():
            lines.append(f"stft.{k}={_format(v)}")
        if model_cfg is not None:
            for k, v in model_cfg.to_dict().items():
                lines.append(f"model.{k}={_format(v)}")
        return "\n".join(lines) + "\n"

    def write_resolved(self, path: str | Path, model_cfg: ModelConfig | None = None) -> None:
        Path(path).write_text(self.resolved_text(model_cfg), encoding="utf-8")


def _format(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(raw: str, like, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def _assign(cfg: RunConfig, key: str, raw: str) -> None:
    if key.startswith("stft."):
        name = key[5:]
        defaults = {f.name: f.default for f in dataclasses.fields(StftConfig)}
        if name not in defaults:
            raise ConfigError(f"unknown key {key!r}")
        cfg.stft[name] = _parse(raw, defaults[name], key)
    elif key.startswith("model."):
        name = key[6:]
        defaults = dataclasses.asdict(ModelConfig())
        if name not in defaults:
            raise ConfigError(f"unknown key {key!r}")
        cfg.model[name] = _parse(raw, defaults[name], key)
    else:
        names = {f.name: f for f in dataclasses.fields(RunConfig)}
        if key not in names or key in ("stft", "model"):
            raise ConfigError(f"unknown key {key!r}")
        setattr(cfg, key, _parse(raw, getattr(RunConfig(), key), key))


def parse_pairs(lines, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg.update(parse_pairs(text.splitlines(), str(path)))
    cfg.update(overrides or {})
    return cfg
