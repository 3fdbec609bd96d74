"""Training configuration, built-in presets and the flat ``key=value`` config format."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace

from .graphdata import ConfigurationError


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "sync"
    conditional: bool = False
    T: int = 3                 # sync steps
    attr_steps: int = 6        # async |T_X|
    edge_steps: int = 9        # async |T_A|
    s: float = 0.008
    hidden: int = 512
    hidden_time: int = 32
    hidden_label: int = 64
    hidden_edge: int = 128
    hidden_attr_mlp: int = 512
    layers: int = 2
    dropout: float = 0.0
    lr_attr: float = 1e-3
    lr_edge: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 16384
    patience: int = 20
    max_norm: float = 10.0
    eval_interval: int = 100
    max_steps: int = 50000
    seed: int = 0

    def __post_init__(self):
        if self.variant not in ("sync", "async"):
            raise ConfigurationError(f"variant must be sync or async, got {self.variant!r}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.lr_attr <= 0 or self.lr_edge <= 0:
            raise ConfigurationError("learning rates must be > 0")
        if self.eval_interval < 1 or self.max_steps < 1:
            raise ConfigurationError("eval_interval and max_steps must be >= 1")
        if min(self.T, self.attr_steps, self.edge_steps) < 1:
            raise ConfigurationError("diffusion step counts must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigurationError("dropout must lie in [0, 1)")

    def to_items(self) -> dict[str, str]:
        return {k: _fmt(v) for k, v in asdict(self).items()}

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "TrainConfig":
        return replace(cls(), **_coerce(items))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(items: dict[str, str]) -> dict:
    out = {}
    for k, raw in items.items():
        if k not in _TYPES:
            raise ConfigurationError(f"unknown config key train.{k}")
        typ = _TYPES[k]
        try:
            if typ == "bool":
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                out[k] = raw.lower() in ("true", "1")
            elif typ == "int":
                out[k] = int(raw)
            elif typ == "float":
                out[k] = float(raw)
            else:
                out[k] = raw
        except ValueError:
            raise ConfigurationError(f"bad value for train.{k}: {raw!r}") from None
    return out


# Per-dataset settings; async overrides layered on top of the shared values.
PRESETS = {
    "cora": dict(hidden_time=32, batch_size=16384, patience=20),
    "amazon_photo": dict(hidden_time=16, batch_size=524288, patience=15),
    "amazon_computer": dict(hidden_time=16, batch_size=2097152, patience=15),
    "small": dict(hidden=64, hidden_time=16, hidden_label=16, hidden_edge=32, hidden_attr_mlp=64,
                  batch_size=4096, patience=10, eval_interval=25, max_steps=3000),
}
ASYNC_PRESETS = {
    "cora": dict(dropout=0.1, attr_steps=6, edge_steps=9),
    "amazon_photo": dict(dropout=0.0, attr_steps=6, edge_steps=9, batch_size=262144),
    "amazon_computer": dict(dropout=0.0, attr_steps=7, edge_steps=9, hidden_attr_mlp=1024),
    "small": dict(attr_steps=6, edge_steps=9),
}


def preset_name(n: int, name: str = "") -> str:
    if name in PRESETS:
        return name
    if n >= 10000:
        return "amazon_computer"
    if n >= 5000:
        return "amazon_photo"
    if n >= 2000:
        return "cora"
    return "small"


def default_config(n: int, variant: str = "sync", conditional: bool = False, name: str = "",
                   seed: int = 0) -> TrainConfig:
    key = preset_name(n, name)
    values = dict(PRESETS[key])
    if variant == "async":
        values.update(ASYNC_PRESETS[key])
    return TrainConfig(variant=variant, conditional=conditional, seed=seed, **values)


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``train.key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            ns, _, name = key.partition(".")
            if ns != "train" or not name:
                raise ConfigurationError(f"{path}:{lineno}: keys must look like train.<name>")
            out[name] = value
    return out


def apply_overrides(cfg: TrainConfig, items: dict[str, str]) -> TrainConfig:
    return replace(cfg, **_coerce(items))
