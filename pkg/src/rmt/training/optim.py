"""Loss, learning-rate schedule and AdamW with decoupled weight decay."""

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

# Tensors never decayed: LayerNorm gains, embeddings and unembeddings.
NO_DECAY = ("W_E", "W_PE", "W_U")


def loss_fn(logits: torch.Tensor, targets: torch.Tensor, z_coef: float = 1e-4) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy and z-loss for token-major ``(..., n, V)`` logits.

    ``ce`` is the mean negative log-likelihood per position in nats;
    ``z`` is ``z_coef`` times the mean squared log-partition function.
    The optimized objective is ``ce + z``.
    """
    targets = torch.as_tensor(targets, dtype=torch.long)
    V = logits.shape[-1]
    ce = F.cross_entropy(logits.reshape(-1, V), targets.reshape(-1))
    log_z = torch.logsumexp(logits, dim=-1)
    z = z_coef * log_z.square().mean()
    return ce, z


def warmup_steps(steps: int, warmup_frac: float) -> int:
    return math.ceil(warmup_frac * steps)


def lr_at(step: int, steps: int, lr_max: float, warmup_frac: float = 0.05, final_frac: float = 0.1) -> float:
    """Linear warmup from 0, then cosine decay to ``final_frac * lr_max`` at ``step == steps``."""
    warm = warmup_steps(steps, warmup_frac)
    if step <= warm:
        return lr_max * step / warm
    progress = min((step - warm) / max(steps - warm, 1), 1.0)
    lr_min = final_frac * lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))


def decays(name: str) -> bool:
    short = name.rsplit(".", 1)[-1]
    return not (short.startswith("ln_") or short in NO_DECAY)


@dataclass
class AdamWConfig:
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 1e-4


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamWState,
               lr: float, cfg: AdamWConfig) -> AdamWState:
    """One in-place AdamW update with bias correction.

    Decay ``lr * wd * w`` uses the pre-update weights and is skipped for
    names rejected by :func:`decays`.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, w in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = torch.zeros_like(w)
            state.v[name] = torch.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m.mul_(cfg.beta1).add_(g, alpha=1.0 - cfg.beta1)
        v.mul_(cfg.beta2).addcmul_(g, g, value=1.0 - cfg.beta2)
        update = (m / bc1) / ((v / bc2).sqrt() + cfg.eps)
        if cfg.weight_decay and decays(name):
            w.sub_(w, alpha=lr * cfg.weight_decay)
        w.sub_(update, alpha=lr)
    return state
