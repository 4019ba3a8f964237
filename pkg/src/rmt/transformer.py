"""Baseline pre-LN decoder-only transformer.

Residual states are token-major ``(B, n, D)`` (or ``(n, D)`` for a single
sequence) and logits come out as ``(B, n, V)``.  Weights keep their textbook
orientation: ``W_E`` is ``D x V``, per-head ``W_Q`` is ``D_h x D`` and so on,
with the heads of a layer stacked along a leading axis.  There are no biases
and no weight tying.
"""

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .common import causal_sha, check_tokens, gelu, layer_norm, normal_, xavier_var


@dataclass
class TransformerConfig:
    V: int = 256
    N: int = 64
    D: int = 128
    L: int = 4
    H: int = 4
    D_h: int = 32
    D_FF: int = 512
    # runtime / init options
    upcast: bool = True
    gelu_approx: bool = False
    scale_residual: bool = False
    ln_eps: float = 1e-6

    def __post_init__(self):
        for name in ("V", "N", "D", "H", "D_h", "D_FF"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.L < 0:
            raise ValueError("L must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class TransformerLayer(nn.Module):
    """Parameters of one attention + feed-forward pair."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        D, H, D_h, D_FF = cfg.D, cfg.H, cfg.D_h, cfg.D_FF
        self.W_Q = nn.Parameter(torch.empty(H, D_h, D))
        self.W_K = nn.Parameter(torch.empty(H, D_h, D))
        self.W_V = nn.Parameter(torch.empty(H, D_h, D))
        self.W_O = nn.Parameter(torch.empty(H, D, D_h))
        self.W_1 = nn.Parameter(torch.empty(D_FF, D))
        self.W_2 = nn.Parameter(torch.empty(D, D_FF))
        self.ln_attn = nn.Parameter(torch.ones(D))
        self.ln_ff = nn.Parameter(torch.ones(D))


def tfm_embed(tokens, W_E: torch.Tensor, W_PE: torch.Tensor) -> torch.Tensor:
    """Row ``t`` is ``W_E[:, tokens[t]] + W_PE[:, t]``."""
    tokens = check_tokens(tokens, W_E.shape[1], W_PE.shape[1])
    n = tokens.shape[-1]
    return W_E.T[tokens] + W_PE.T[:n]


def tfm_mha(Xn: torch.Tensor, layer, upcast: bool = True) -> torch.Tensor:
    """Sum over heads of ``W_O^(h) SHA(Q^(h), K^(h), V^(h))``; the residual is not added."""
    Q = torch.einsum("hed,...nd->...hne", layer.W_Q, Xn)
    K = torch.einsum("hed,...nd->...hne", layer.W_K, Xn)
    V = torch.einsum("hed,...nd->...hne", layer.W_V, Xn)
    heads = causal_sha(Q, K, V, scale_dim=Q.shape[-1], upcast=upcast)
    return torch.einsum("hde,...hne->...nd", layer.W_O, heads)


def tfm_ff(Xn: torch.Tensor, layer, approximate: bool = False) -> torch.Tensor:
    return gelu(Xn @ layer.W_1.T, approximate) @ layer.W_2.T


class Transformer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.W_E = nn.Parameter(torch.empty(cfg.D, cfg.V))
        self.W_PE = nn.Parameter(torch.empty(cfg.D, cfg.N))
        self.layers = nn.ModuleList(TransformerLayer(cfg) for _ in range(cfg.L))
        self.ln_final = nn.Parameter(torch.ones(cfg.D))
        self.W_U = nn.Parameter(torch.empty(cfg.V, cfg.D))

    def ln(self, X: torch.Tensor, gain: torch.Tensor) -> torch.Tensor:
        return layer_norm(X, gain, ndim=1, eps=self.cfg.ln_eps)

    def forward(self, tokens) -> torch.Tensor:
        cfg = self.cfg
        X = tfm_embed(tokens, self.W_E, self.W_PE)
        for layer in self.layers:
            X = X + tfm_mha(self.ln(X, layer.ln_attn), layer, cfg.upcast)
            X = X + tfm_ff(self.ln(X, layer.ln_ff), layer, cfg.gelu_approx)
        return self.ln(X, self.ln_final) @ self.W_U.T


def transformer_fans(cfg: TransformerConfig) -> dict[str, tuple[int, int]]:
    """Declared Xavier fan pairs.

    Q/K/V are treated as one fused ``3*H*D_h x D`` map and the output
    projections as one fused ``D x H*D_h`` map.
    """
    HD = cfg.H * cfg.D_h
    return {
        "W_E": (cfg.V, cfg.D),
        "W_PE": (cfg.N, cfg.D),
        "W_Q": (cfg.D, 3 * HD),
        "W_K": (cfg.D, 3 * HD),
        "W_V": (cfg.D, 3 * HD),
        "W_O": (HD, cfg.D),
        "W_1": (cfg.D, cfg.D_FF),
        "W_2": (cfg.D_FF, cfg.D),
        "W_U": (cfg.D, cfg.V),
    }


def init_transformer(model: Transformer, seed: int = 0) -> Transformer:
    cfg = model.cfg
    gen = torch.Generator().manual_seed(seed)
    fans = transformer_fans(cfg)
    resid_scale = 1.0 / (2 * cfg.L) if cfg.scale_residual and cfg.L > 0 else 1.0
    for name, p in model.named_parameters():
        short = name.rsplit(".", 1)[-1]
        if short.startswith("ln_"):
            with torch.no_grad():
                p.fill_(1.0)
            continue
        var = xavier_var(*fans[short])
        if short in ("W_O", "W_2"):
            var *= resid_scale
        normal_(p, var, gen)
    return model


def build_transformer(cfg: TransformerConfig, seed: int = 0, dtype=torch.float32) -> Transformer:
    model = Transformer(cfg).to(dtype)
    return init_transformer(model, seed)
