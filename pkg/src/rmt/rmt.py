"""Residual Matrix Transformer.

Each token's residual state is a ``D_k x D_v`` outer-product memory instead of
a ``D``-vector.  States are token-major, ``(B, n, D_k, D_v)``, so every
token's memory matrix is contiguous.  Layers read the
memory with retrieval keys (contraction over ``D_k``) and write to it with
storage keys (outer products).  Per-channel tensors are stacked along a leading
``R`` axis: ``r_Q`` is ``(R, D_k)``, ``W_E`` is ``(R, D_v, V)``, ``W_U`` is
``(R, V, D_v)``.
"""

from collections.abc import Callable
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .common import causal_sha, check_tokens, gelu, layer_norm, normal_, xavier_var

RETRIEVAL_KEYS = ("r_Q", "r_K", "r_V", "r_FF", "r_U")
STORAGE_KEYS = ("w_E", "w_PE", "w_O", "w_FF")


@dataclass
class RMTConfig:
    V: int = 256
    N: int = 64
    D_k: int = 32
    D_v: int = 32
    R: int = 4
    L: int = 4
    D_FF: int = 512
    upcast: bool = True
    gelu_approx: bool = False
    scale_residual: bool = False
    ln_eps: float = 1e-6
    ln_mode: str = "matrix"  # or "row"
    key_init: str = "unit"  # or "xavier"

    def __post_init__(self):
        for name in ("V", "N", "D_k", "D_v", "R", "D_FF"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.L < 0:
            raise ValueError("L must be non-negative")
        if self.ln_mode not in ("matrix", "row"):
            raise ValueError(f"unknown ln_mode {self.ln_mode!r}")
        if self.key_init not in ("unit", "xavier"):
            raise ValueError(f"unknown key_init {self.key_init!r}")

    @property
    def resid_size(self) -> int:
        return self.D_k * self.D_v

    def to_dict(self) -> dict:
        return asdict(self)


class RMTLayer(nn.Module):
    def __init__(self, cfg: RMTConfig):
        super().__init__()
        R, D_k, D_v = cfg.R, cfg.D_k, cfg.D_v
        self.r_Q = nn.Parameter(torch.empty(R, D_k))
        self.r_K = nn.Parameter(torch.empty(R, D_k))
        self.r_V = nn.Parameter(torch.empty(R, D_k))
        self.w_O = nn.Parameter(torch.empty(R, D_k))
        self.r_FF = nn.Parameter(torch.empty(R, D_k))
        self.W_1 = nn.Parameter(torch.empty(cfg.D_FF, R * D_v))
        self.W_2 = nn.Parameter(torch.empty(R * D_v, cfg.D_FF))
        self.w_FF = nn.Parameter(torch.empty(R, D_k))
        self.ln_attn = nn.Parameter(torch.ones(D_k, D_v))
        self.ln_ff = nn.Parameter(torch.ones(D_k, D_v))


def read(keys: torch.Tensor, X: torch.Tensor) -> torch.Tensor:
    """Retrieve one data vector per key and token: ``(R, D_k) x (..., n, D_k, D_v) -> (..., R, n, D_v)``."""
    return torch.einsum("hk,...nkv->...hnv", keys, X)


def write(keys: torch.Tensor, data: torch.Tensor) -> torch.Tensor:
    """Store ``sum_h keys[h] (x) data[..., h, t]`` per token: ``(..., R, n, D_v) -> (..., n, D_k, D_v)``."""
    return torch.einsum("hk,...hnv->...nkv", keys, data)


def rmt_embed(tokens, w_E, W_E, w_PE, W_PE) -> torch.Tensor:
    tokens = check_tokens(tokens, W_E.shape[2], W_PE.shape[2])
    n = tokens.shape[-1]
    word = W_E.permute(2, 0, 1)[tokens]  # (..., n, R, D_v)
    X = torch.einsum("hk,...nhv->...nkv", w_E, word)
    return X + torch.einsum("hk,hvn->nkv", w_PE, W_PE[:, :, :n])


def rmt_mha(Xn: torch.Tensor, layer, upcast: bool = True) -> torch.Tensor:
    Q, K, V = read(layer.r_Q, Xn), read(layer.r_K, Xn), read(layer.r_V, Xn)
    heads = causal_sha(Q, K, V, scale_dim=Q.shape[-1], upcast=upcast)
    return write(layer.w_O, heads)


def rmt_ff(Xn: torch.Tensor, layer, approximate: bool = False,
           activation: Callable[[torch.Tensor], torch.Tensor] | None = None) -> torch.Tensor:
    """Key-vector adapters around the standard ``W_2 act(W_1 x)`` core.

    Channel ``h`` occupies entries ``[h*D_v, (h+1)*D_v)`` of the core input
    and output.  ``activation`` replaces Gelu (used by tests to linearize the
    core).
    """
    parts = read(layer.r_FF, Xn)  # (..., R, n, D_v)
    R, n, D_v = parts.shape[-3:]
    X_ff = parts.movedim(-3, -2).reshape(*parts.shape[:-3], n, R * D_v)
    act = activation if activation is not None else (lambda z: gelu(z, approximate))
    core = act(X_ff @ layer.W_1.T) @ layer.W_2.T
    return torch.einsum("hk,...nhv->...nkv", layer.w_FF, core.reshape(*core.shape[:-1], R, D_v))


def rmt_unembed(Xn: torch.Tensor, r_U: torch.Tensor, W_U: torch.Tensor) -> torch.Tensor:
    return torch.einsum("hxv,...hnv->...nx", W_U, read(r_U, Xn))


class ResidualMatrixTransformer(nn.Module):
    def __init__(self, cfg: RMTConfig):
        super().__init__()
        self.cfg = cfg
        R, D_k, D_v = cfg.R, cfg.D_k, cfg.D_v
        self.w_E = nn.Parameter(torch.empty(R, D_k))
        self.W_E = nn.Parameter(torch.empty(R, D_v, cfg.V))
        self.w_PE = nn.Parameter(torch.empty(R, D_k))
        self.W_PE = nn.Parameter(torch.empty(R, D_v, cfg.N))
        self.layers = nn.ModuleList(RMTLayer(cfg) for _ in range(cfg.L))
        self.ln_final = nn.Parameter(torch.ones(D_k, D_v))
        self.r_U = nn.Parameter(torch.empty(R, D_k))
        self.W_U = nn.Parameter(torch.empty(R, cfg.V, D_v))

    def ln(self, X: torch.Tensor, gain: torch.Tensor) -> torch.Tensor:
        ndim = 2 if self.cfg.ln_mode == "matrix" else 1
        return layer_norm(X, gain, ndim=ndim, eps=self.cfg.ln_eps)

    def embed(self, tokens) -> torch.Tensor:
        return rmt_embed(tokens, self.w_E, self.W_E, self.w_PE, self.W_PE)

    def forward(self, tokens) -> torch.Tensor:
        cfg = self.cfg
        X = self.embed(tokens)
        for layer in self.layers:
            X = X + rmt_mha(self.ln(X, layer.ln_attn), layer, cfg.upcast)
            X = X + rmt_ff(self.ln(X, layer.ln_ff), layer, cfg.gelu_approx)
        return rmt_unembed(self.ln(X, self.ln_final), self.r_U, self.W_U)


def rmt_param_vars(cfg: RMTConfig) -> dict[str, float]:
    """Initial variance of every non-gain tensor.

    In ``unit`` mode retrieval keys get ``1/D_k`` and storage keys ``1/R``,
    giving unit forward variance ratios for retrieval and storage.  In
    ``xavier`` mode storage keys use fans ``(R, D_k)``, retrieval keys
    ``(D_k, R)``, except ``r_Q``, ``r_K`` and ``r_V`` which are treated as one
    fused ``(D_k, 3R)`` map, mirroring the transformer's fused Q/K/V.
    """
    RD = cfg.R * cfg.D_v
    out = {
        "W_E": xavier_var(cfg.V, cfg.D_v),
        "W_PE": xavier_var(cfg.N, cfg.D_v),
        "W_1": xavier_var(RD, cfg.D_FF),
        "W_2": xavier_var(cfg.D_FF, RD),
        "W_U": xavier_var(RD, cfg.V),
    }
    for name in RETRIEVAL_KEYS:
        fan_out = 3 * cfg.R if name in ("r_Q", "r_K", "r_V") else cfg.R
        out[name] = 1.0 / cfg.D_k if cfg.key_init == "unit" else xavier_var(cfg.D_k, fan_out)
    for name in STORAGE_KEYS:
        out[name] = 1.0 / cfg.R if cfg.key_init == "unit" else xavier_var(cfg.R, cfg.D_k)
    return out


def init_rmt(model: ResidualMatrixTransformer, seed: int = 0) -> ResidualMatrixTransformer:
    cfg = model.cfg
    gen = torch.Generator().manual_seed(seed)
    variances = rmt_param_vars(cfg)
    resid_scale = 1.0 / (2 * cfg.L) if cfg.scale_residual and cfg.L > 0 else 1.0
    for name, p in model.named_parameters():
        short = name.rsplit(".", 1)[-1]
        if short.startswith("ln_"):
            with torch.no_grad():
                p.fill_(1.0)
            continue
        var = variances[short]
        if short in ("w_O", "w_FF"):
            var *= resid_scale
        normal_(p, var, gen)
    return model


def build_rmt(cfg: RMTConfig, seed: int = 0, dtype=torch.float32) -> ResidualMatrixTransformer:
    model = ResidualMatrixTransformer(cfg).to(dtype)
    return init_rmt(model, seed)
