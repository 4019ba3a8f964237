"""Construction of either architecture from plain config dictionaries."""

import dataclasses

import torch

from .rmt import RMTConfig, build_rmt
from .transformer import TransformerConfig, build_transformer

ARCHS = ("transformer", "rmt")

CONFIG_CLASSES = {"transformer": TransformerConfig, "rmt": RMTConfig}

PRESETS = {
    "transformer": {
        "tiny": dict(V=11, N=8, L=2, D=16, H=2, D_h=8, D_FF=32),
        "desk": dict(V=256, N=64, L=6, D=128, H=4, D_h=32, D_FF=512),
        "gpt2-medium": dict(V=50257, N=512, L=24, D=1024, H=16, D_h=64, D_FF=4096),
    },
    "rmt": {
        "tiny": dict(V=11, N=8, L=2, D_k=8, D_v=4, R=4, D_FF=32),
        "desk": dict(V=256, N=64, L=6, D_k=32, D_v=32, R=4, D_FF=768),
        "mirror": dict(V=50257, N=512, L=24, D_k=1024, D_v=64, R=16, D_FF=4096),
        "scaling": dict(V=50257, N=512, L=24, D_k=16, D_v=64, R=16, D_FF=4096),
    },
}

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def check_arch(arch: str) -> str:
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}; expected one of {ARCHS}")
    return arch


def model_config(arch: str, fields: dict | None = None, preset: str | None = None):
    check_arch(arch)
    values = {}
    if preset is not None:
        if preset not in PRESETS[arch]:
            raise ValueError(f"unknown preset {preset!r} for {arch}; have {sorted(PRESETS[arch])}")
        values.update(PRESETS[arch][preset])
    values.update(fields or {})
    cls = CONFIG_CLASSES[arch]
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {arch} config fields: {sorted(unknown)}")
    return cls(**values)


def build_model(arch: str, cfg, seed: int = 0, dtype: torch.dtype | str = torch.float32):
    if isinstance(dtype, str):
        dtype = DTYPES[dtype]
    if check_arch(arch) == "transformer":
        return build_transformer(cfg, seed, dtype)
    return build_rmt(cfg, seed, dtype)


def arch_of(cfg) -> str:
    for arch, cls in CONFIG_CLASSES.items():
        if isinstance(cfg, cls):
            return arch
    raise TypeError(f"not a model config: {type(cfg).__name__}")
