"""Outer-product associative memory primitives.

A memory matrix ``M`` of shape ``(d_k, d_v)`` stores key/data pairs as a sum of
outer products ``q x^T``; a key reads it back by contracting against the first
dimension.  These are the storage and retrieval operations every RMT layer is
built from.  All functions are pure and differentiable through autograd.
"""

from collections.abc import Sequence

import torch

from .common import LN_EPS


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def outer_store(pairs: Sequence[tuple]) -> torch.Tensor:
    """Sum of ``q (x)^T`` over ``(key, data)`` pairs.

    Normalization is intentionally left out; apply :func:`matrix_layernorm`
    when a normalized store is wanted.
    """
    if len(pairs) == 0:
        raise ValueError("outer_store needs at least one (key, data) pair")
    keys = [_as_tensor(q) for q, _ in pairs]
    vals = [_as_tensor(x) for _, x in pairs]
    d_k, d_v = keys[0].shape, vals[0].shape
    for q, x in zip(keys, vals):
        if q.ndim != 1 or x.ndim != 1:
            raise ValueError("keys and data vectors must be 1-D")
        if q.shape != d_k or x.shape != d_v:
            raise ValueError(f"shape mismatch: key {tuple(q.shape)} / data {tuple(x.shape)}, "
                             f"expected {tuple(d_k)} / {tuple(d_v)}")
    return torch.einsum("pk,pv->kv", torch.stack(keys), torch.stack(vals))


def retrieve(key, M) -> torch.Tensor:
    """Contract ``key`` against the first dimension of ``M`` (``key^T M``)."""
    key, M = _as_tensor(key), _as_tensor(M)
    if key.ndim != 1 or M.ndim < 2 or key.shape[0] != M.shape[0]:
        raise ValueError(f"cannot contract key {tuple(key.shape)} with memory {tuple(M.shape)}")
    return torch.tensordot(key, M, dims=([0], [0]))


def matrix_layernorm(M, gain=None, eps: float = LN_EPS, mode: str = "matrix") -> torch.Tensor:
    """LayerNorm of a memory matrix (or a stack of them in the leading dims).

    ``mode="matrix"`` normalizes over all ``d_k * d_v`` entries of each matrix;
    ``mode="row"`` normalizes each row over ``d_v`` separately.  No bias.
    """
    M = _as_tensor(M)
    if M.ndim < 2:
        raise ValueError("memory matrix must have at least 2 dimensions")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if gain is None:
        gain = torch.ones(M.shape[-2:], dtype=M.dtype)
    gain = _as_tensor(gain)
    if tuple(gain.shape) != tuple(M.shape[-2:]):
        raise ValueError(f"gain shape {tuple(gain.shape)} does not match memory {tuple(M.shape[-2:])}")
    if mode == "matrix":
        dims = (-2, -1)
    elif mode == "row":
        dims = (-1,)
    else:
        raise ValueError(f"unknown layernorm mode {mode!r}")
    mu = M.mean(dim=dims, keepdim=True)
    var = (M - mu).square().mean(dim=dims, keepdim=True)
    return (M - mu) / torch.sqrt(var + eps) * gain
