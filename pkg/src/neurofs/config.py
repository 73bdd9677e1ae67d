"""Run configuration: flat ``key = value`` files plus command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .evolution import EvolutionConfig
from .network import NetConfig

# CLI spelling -> internal mode name
MODE_ALIASES = {
    "neurofs": "neurofs",
    "random-growth": "neurofs_random_growth",
    "neurofs_random_growth": "neurofs_random_growth",
    "rigl-fs": "rigl_fs",
    "rigl_fs": "rigl_fs",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = ""
    test_data: str = ""
    format: str = "csv"
    label_column: str = "-1"
    test_fraction: float = 0.2
    split_seed: int = 0
    subsample: int = 0
    scale: str = "minmax"
    K: int = 50
    epsilon: float = 30.0
    zeta_in: float = 0.2
    zeta_h: float = 0.3
    alpha: float = 0.65
    epochs: int = 100
    mode: str = "neurofs"
    seed: int = 0
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 0  # 0: 20 when the training set has <= 200 samples, else 100
    hidden: str = "1000,1000,1000"
    activation: str = "tanh"
    knn_k: int = 5
    log_interval: int = 10
    out: str = "neurofs_out"

    def __post_init__(self):
        if self.format not in ("csv", "idx", "synthetic"):
            raise ConfigError(f"format must be csv, idx or synthetic, got {self.format!r}")
        if self.scale not in ("minmax", "standard", "none"):
            raise ConfigError(f"scale must be minmax, standard or none, got {self.scale!r}")
        if self.mode not in MODE_ALIASES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.subsample < 0:
            raise ConfigError("subsample must be >= 0")
        try:
            self.hidden_sizes()
        except ValueError:
            raise ConfigError(f"hidden must be comma-separated integers, got {self.hidden!r}") from None

    def hidden_sizes(self) -> tuple:
        return tuple(int(h) for h in str(self.hidden).split(",") if h.strip())

    def evolution_config(self, m_train: int) -> EvolutionConfig:
        batch = self.batch_size or (20 if m_train <= 200 else 100)
        try:
            net = NetConfig(self.hidden_sizes(), self.activation, self.lr, self.momentum, batch)
            return EvolutionConfig(
                K=self.K, epsilon=self.epsilon, zeta_in=self.zeta_in, zeta_h=self.zeta_h,
                alpha=self.alpha, t_max=self.epochs, mode=MODE_ALIASES[self.mode],
                seed=self.seed, log_interval=self.log_interval, net=net,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def echo(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind}") from None
    return str(value)


def _normalize(key: str) -> str:
    key = key.strip().replace("-", "_")
    return "K" if key.lower() == "k" else key


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = _normalize(key)
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, value.strip())
    return values


def build_config(path=None, overrides=None) -> RunConfig:
    """File values first, then non-None ``overrides`` on top."""
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_config_text(p.read_text()))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        key = _normalize(key)
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, value)
    try:
        return RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
