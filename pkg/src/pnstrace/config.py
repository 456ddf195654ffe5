"""Training configuration and its flat ``key = value`` text form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .errors import ConfigError


@dataclass
class TrainConfig:
    # optimiser
    lr: float = 1e-3
    lr_decay: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    # objective
    lam: float = 0.5
    tau: float = 1.0
    categorical_pns: bool = False
    # architecture
    hidden: int = 64
    k: int = 2
    n_modes: int = 20
    attention: str = "temporal"
    pt_enabled: bool = True
    # predecessor identification
    metric: str = "l2"
    filter_dmax: float | None = None
    filter_fov: float | None = None
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if self.n_modes < 1:
            raise ConfigError("n_modes must be at least 1")
        if self.hidden < 1:
            raise ConfigError("hidden must be at least 1")
        if self.lam < 0:
            raise ConfigError("lam must be non-negative")
        if self.metric not in ("l1", "l2"):
            raise ConfigError(f"metric must be l1 or l2, got {self.metric!r}")
        if self.attention not in ("temporal", "single"):
            raise ConfigError(f"attention must be temporal or single, got {self.attention!r}")
        if (self.filter_dmax is None) != (self.filter_fov is None):
            raise ConfigError("filter_dmax and filter_fov must be set together")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")

    @property
    def filter(self):
        if self.filter_dmax is None:
            return None
        return (self.filter_dmax, self.filter_fov)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)} - {"extra"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**{k: _coerce(k, v) for k, v in d.items()})


PRESETS = {
    # 2.5 Hz, 3.2 s observed, 4.8 s predicted
    "eth_ucy": {"n_modes": 20},
    # 2 Hz, 2 s observed, 6 s predicted
    "nuscenes": {"n_modes": 10},
}

_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key, value):
    kind = _TYPES[key]
    if value is None or (isinstance(value, str) and value.lower() in ("none", "")):
        if "None" in str(kind):
            return None
        raise ConfigError(f"{key} may not be empty")
    try:
        if kind in ("bool", bool):
            if isinstance(value, bool):
                return value
            s = str(value).lower()
            if s in ("1", "true", "yes", "on"):
                return True
            if s in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind in ("int", int):
            return int(value)
        if "float" in str(kind):
            return float(value)
        return str(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value.strip('"').strip("'")
    return out


def load_config(path, overrides=None):
    with open(path) as fh:
        values = parse_config_text(fh.read())
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(values)


def dump_config(cfg):
    lines = []
    for k, v in cfg.to_dict().items():
        lines.append(f"{k} = {'none' if v is None else v}")
    return "\n".join(lines) + "\n"
