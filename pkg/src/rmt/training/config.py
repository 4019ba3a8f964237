"""Training run configuration: JSON files plus ``key=value`` overrides."""

import dataclasses
import json
from dataclasses import dataclass, field

from ..models import check_arch, model_config


@dataclass
class TrainRunConfig:
    arch: str = "rmt"
    model: dict = field(default_factory=dict)
    preset: str | None = None
    seq_len: int = 64
    batch_size: int = 16
    steps: int = 1000
    lr_max: float = 3e-3
    warmup_frac: float = 0.05
    final_lr_frac: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    z_coef: float = 1e-4
    seed: int = 0
    corpus: str = ""
    dev_corpus: str | None = None
    dev_frac: float = 0.05
    out_dir: str = "runs/default"
    log_every: int = 1
    ckpt_every: int = 0
    eval_batch: int = 64
    dtype: str = "float32"
    record_wall_time: bool = True

    def __post_init__(self):
        check_arch(self.arch)
        for name in ("warmup_frac", "final_lr_frac"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.seq_len < 1 or self.batch_size < 1:
            raise ValueError("seq_len and batch_size must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        cfg = self.model_config()
        if self.seq_len > cfg.N:
            raise ValueError(f"seq_len {self.seq_len} exceeds model N={cfg.N}")

    def model_config(self):
        return model_config(self.arch, self.model, self.preset)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides: list[str]) -> dict:
    """Apply ``a.b=value`` overrides to a nested dict; values are parsed as JSON when possible."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        target = d
        for p in parts[:-1]:
            target = target.setdefault(p, {})
        target[parts[-1]] = parse_value(raw)
    return d


def load_config(path: str, overrides: list[str] | None = None) -> TrainRunConfig:
    with open(path) as f:
        d = json.load(f)
    return TrainRunConfig.from_dict(apply_overrides(d, overrides or []))
