"""Numerical building blocks shared by both architectures.

Activations are token-major throughout the package: a sequence of ``n``
residual vectors is a ``(..., n, D)`` tensor, one row per token position.
"""

import math

import torch
import torch.nn.functional as F

LN_EPS = 1e-6


def gelu(x: torch.Tensor, approximate: bool = False) -> torch.Tensor:
    return F.gelu(x, approximate="tanh" if approximate else "none")


def layer_norm(x: torch.Tensor, gain: torch.Tensor, ndim: int = 1, eps: float = LN_EPS) -> torch.Tensor:
    """Bias-free LayerNorm over the last ``ndim`` dims (population variance).

    ``gain`` may cover fewer trailing dims than the full shape being scaled,
    e.g. a per-entry ``(D_k, D_v)`` gain with per-row normalization.
    """
    shape = x.shape[-ndim:]
    if tuple(gain.shape) == tuple(shape):
        return F.layer_norm(x, shape, gain, None, eps)
    return F.layer_norm(x, shape, None, None, eps) * gain


def causal_mask(n: int, device=None) -> torch.Tensor:
    """Boolean ``(n, n)`` mask, True where key position > query position."""
    return torch.ones(n, n, dtype=torch.bool, device=device).triu(1)


def causal_sha(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, scale_dim: int, upcast: bool = True) -> torch.Tensor:
    """Single-head causal attention on token-major ``(..., n, d)`` inputs.

    Row ``t`` of the result is ``sum_s a[t, s] v[s]`` where ``a`` is the
    softmax over ``s <= t`` of ``q[t] . k[s] / sqrt(scale_dim)``.  With
    ``upcast`` the softmax runs in float64 whatever the activation dtype.
    """
    n = q.shape[-2]
    scores = q @ k.transpose(-1, -2) / math.sqrt(scale_dim)
    scores = scores.masked_fill(causal_mask(n, q.device), float("-inf"))
    if upcast and scores.dtype != torch.float64:
        attn = torch.softmax(scores.double(), dim=-1).to(q.dtype)
    else:
        attn = torch.softmax(scores, dim=-1)
    return attn @ v


def xavier_var(fan_in: int, fan_out: int) -> float:
    return 2.0 / (fan_in + fan_out)


def normal_(t: torch.Tensor, var: float, gen: torch.Generator) -> torch.Tensor:
    with torch.no_grad():
        t.normal_(0.0, math.sqrt(var), generator=gen)
    return t


def check_tokens(tokens: torch.Tensor, V: int, N: int) -> torch.Tensor:
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    if tokens.ndim not in (1, 2):
        raise ValueError(f"tokens must be 1-D or 2-D, got shape {tuple(tokens.shape)}")
    n = tokens.shape[-1]
    if n < 1 or n > N:
        raise ValueError(f"sequence length {n} outside [1, {N}]")
    if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= V):
        raise ValueError(f"token id out of range [0, {V})")
    return tokens
