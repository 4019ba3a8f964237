"""Parameter and forward-FLOP accounting for both architectures.

Two independent routes are kept side by side: the compact closed forms
(``*_formula``, evaluated exactly as written, including their known omissions)
and line-item tallies (``*_itemized``) that enumerate every component.  The
itemized counts are the authoritative ones; LayerNorm gains are left out of
both, as in the usual accounting, and only show up in :func:`count_actual`.
"""

import dataclasses
from dataclasses import dataclass
from fractions import Fraction

import torch

from .rmt import RMTConfig
from .transformer import TransformerConfig

ARCHS = ("transformer", "rmt")


def _check_arch(arch: str, cfg) -> None:
    expected = {"transformer": TransformerConfig, "rmt": RMTConfig}.get(arch)
    if expected is None:
        raise ValueError(f"unknown arch {arch!r}; expected one of {ARCHS}")
    if not isinstance(cfg, expected):
        raise TypeError(f"arch {arch!r} needs a {expected.__name__}, got {type(cfg).__name__}")


def params_formula(arch: str, cfg) -> int:
    _check_arch(arch, cfg)
    if arch == "transformer":
        c = cfg
        return c.D * (c.L * (4 * c.H * c.D_h + 2 * c.D_FF) + c.V)
    c = cfg
    return c.R * (2 * c.D_k * (3 * c.L + 1) + c.D_v * (2 * c.L * c.D_FF + c.V + c.N))


def params_itemized(arch: str, cfg) -> tuple[int, dict[str, int]]:
    _check_arch(arch, cfg)
    c = cfg
    if arch == "transformer":
        items = {
            "word embeddings": c.D * c.V,
            "position embeddings": c.D * c.N,
            "attention QKV (x L)": c.L * 3 * c.H * c.D_h * c.D,
            "attention O (x L)": c.L * c.H * c.D_h * c.D,
            "feed-forward (x L)": c.L * 2 * c.D * c.D_FF,
            "unembedding": c.V * c.D,
        }
    else:
        items = {
            "word embeddings": c.R * c.V * c.D_v,
            "position embeddings": c.R * c.N * c.D_v,
            "embedding key vectors": 2 * c.R * c.D_k,
            "attention QKV key vectors (x L)": c.L * 3 * c.R * c.D_k,
            "attention O key vectors (x L)": c.L * c.R * c.D_k,
            "FF input key vectors (x L)": c.L * c.R * c.D_k,
            "FF core (x L)": c.L * 2 * c.R * c.D_v * c.D_FF,
            "FF output key vectors (x L)": c.L * c.R * c.D_k,
            "unembedding key vectors": c.R * c.D_k,
            "unembedding weights": c.R * c.V * c.D_v,
        }
    return sum(items.values()), items


def flops_formula(arch: str, cfg, seq_len: int | None = None) -> int:
    """Forward FLOPs per sequence from the compact closed forms."""
    _check_arch(arch, cfg)
    c = cfg
    N = c.N if seq_len is None else seq_len
    if arch == "transformer":
        inner = (c.V + c.L * c.D * (2 * c.D_h * c.H + c.D_FF)
                 + c.L * (N * c.D_h * c.H + Fraction(3, 4) * N * c.H))
        return round(4 * N * inner)
    return (6 * N * c.R * c.D_k * c.D_v * (1 + c.L)
            + N * c.R * (4 * c.V * c.D_v + c.L * (4 * N * c.D_v + 3 * N + 4 * c.D_v * c.D_FF)))


def flops_itemized(arch: str, cfg, seq_len: int | None = None) -> tuple[int, dict[str, int]]:
    """Forward FLOPs per sequence summed component by component.

    Transformer items follow the Chinchilla decomposition (embedding,
    QKV, logits, softmax, reduction, output projection, dense block,
    final logits).  RMT items are taken literally, including the
    position-embedding item counted as ``2 N V R D_v``.
    """
    _check_arch(arch, cfg)
    c = cfg
    N = c.N if seq_len is None else seq_len
    L = c.L
    if arch == "transformer":
        HD = c.H * c.D_h
        items = {
            "embeddings": 2 * N * c.V * c.D,
            "attention QKV (x L)": L * 2 * 3 * N * c.D * HD,
            "attention logits (x L)": L * 2 * N * N * HD,
            "attention softmax (x L)": L * 3 * c.H * N * N,
            "attention reduction (x L)": L * 2 * N * N * HD,
            "attention output (x L)": L * 2 * N * HD * c.D,
            "dense block (x L)": L * 2 * N * (c.D * c.D_FF + c.D * c.D_FF),
            "final logits": 2 * N * c.D * c.V,
        }
    else:
        kv = N * c.D_k * c.D_v * c.R
        items = {
            "word embeddings": 2 * N * c.V * c.R * c.D_v,
            "position embeddings": 2 * N * c.V * c.R * c.D_v,
            "embedding key vectors": 4 * kv,
            "attention QKV key vectors (x L)": L * 6 * kv,
            "attention SHA (x L)": L * (2 * N * N * c.D_v * c.R + 3 * c.R * N * N + 2 * N * N * c.D_v * c.R),
            "attention O key vectors (x L)": L * 2 * kv,
            "FF input key vectors (x L)": L * 2 * kv,
            "FF core (x L)": L * 4 * N * c.R * c.D_v * c.D_FF,
            "FF output key vectors (x L)": L * 2 * kv,
            "unembedding key vectors": 2 * kv,
            "unembedding weights": 2 * N * c.V * c.R * c.D_v,
        }
    return sum(items.values()), items


def ln_gain_count(arch: str, cfg) -> int:
    _check_arch(arch, cfg)
    width = cfg.D if arch == "transformer" else cfg.D_k * cfg.D_v
    return (2 * cfg.L + 1) * width


def count_actual(params) -> int:
    """Total element count of the learnable tensors.

    Accepts a module, a mapping of name to tensor, or an iterable of tensors.
    """
    if isinstance(params, torch.nn.Module):
        tensors = list(params.parameters())
    elif isinstance(params, dict):
        tensors = list(params.values())
    else:
        tensors = list(params)
    return sum(int(t.numel()) for t in tensors)


@dataclass
class ResourceReport:
    arch: str
    seq_len: int
    params_formula: int
    params_itemized: int
    params_actual: int | None
    flops_formula_fwd: int
    flops_itemized_fwd: int
    flops_train_per_token: int
    params_items: dict[str, int]
    flops_items: dict[str, int]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def train_flops_per_token(arch: str, cfg, seq_len: int | None = None) -> int:
    """Training FLOPs per token: forward plus a backward pass counted as twice the forward."""
    N = cfg.N if seq_len is None else seq_len
    fwd, _ = flops_itemized(arch, cfg, N)
    return 3 * fwd // N


def resource_report(arch: str, cfg, seq_len: int | None = None, model=None) -> ResourceReport:
    N = cfg.N if seq_len is None else seq_len
    p_item, p_lines = params_itemized(arch, cfg)
    f_item, f_lines = flops_itemized(arch, cfg, N)
    return ResourceReport(
        arch=arch,
        seq_len=N,
        params_formula=params_formula(arch, cfg),
        params_itemized=p_item,
        params_actual=None if model is None else count_actual(model),
        flops_formula_fwd=flops_formula(arch, cfg, N),
        flops_itemized_fwd=f_item,
        flops_train_per_token=train_flops_per_token(arch, cfg, N),
        params_items=p_lines,
        flops_items=f_lines,
    )


SERIES_COLUMNS = ("resid_size", "params_formula", "params_itemized", "flops_formula", "flops_itemized")


def scaling_series(arch: str, base, values, seq_len: int | None = None) -> list[dict[str, int]]:
    """Resource counts while sweeping the residual stream.

    ``values`` are settings of ``D`` for the transformer and of ``D_k`` for
    the RMT (with ``D_v`` held at its base value); every other dimension stays
    fixed.  The residual stream size is ``D`` or ``D_k * D_v`` respectively.
    """
    _check_arch(arch, base)
    rows = []
    for v in values:
        if arch == "transformer":
            cfg = dataclasses.replace(base, D=int(v))
            resid = cfg.D
        else:
            cfg = dataclasses.replace(base, D_k=int(v))
            resid = cfg.D_k * cfg.D_v
        rows.append({
            "resid_size": resid,
            "params_formula": params_formula(arch, cfg),
            "params_itemized": params_itemized(arch, cfg)[0],
            "flops_formula": flops_formula(arch, cfg, seq_len),
            "flops_itemized": flops_itemized(arch, cfg, seq_len)[0],
        })
    return rows


# Reference shapes: GPT2-medium and the RMT that mirrors it.
GPT2_MEDIUM = TransformerConfig(V=50257, N=512, D=1024, L=24, H=16, D_h=64, D_FF=4096)
RMT_MIRROR = RMTConfig(V=50257, N=512, D_k=1024, D_v=64, R=16, L=24, D_FF=4096)
