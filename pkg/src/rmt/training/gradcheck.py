"""Central finite-difference check of every parameter gradient."""

from dataclasses import dataclass

import numpy as np
import torch

from ..models import build_model, model_config
from .optim import loss_fn


@dataclass
class TensorCheck:
    name: str
    numel: int
    checked: int
    rel_err: float


@dataclass
class GradCheckResult:
    max_rel_err: float
    tensors: list[TensorCheck]


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, or 0 when both are exactly zero."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return diff / scale


def grad_check(model, tokens, targets, fd_step: float = 1e-5, z_coef: float = 1e-4,
               max_full: int = 10_000, sample: int = 2_000, seed: int = 0) -> GradCheckResult:
    """Compare autograd gradients of ``ce + z`` against central differences.

    Tensors with more than ``max_full`` entries are checked on ``sample``
    randomly chosen entries; the per-tensor ``checked`` count records this.
    """
    def objective() -> torch.Tensor:
        ce, z = loss_fn(model(tokens), targets, z_coef)
        return ce + z

    model.zero_grad()
    objective().backward()
    rng = np.random.default_rng(seed)
    results = []
    for name, p in model.named_parameters():
        analytic = p.grad.detach().reshape(-1).cpu().numpy().copy()
        flat = p.data.view(-1)
        if flat.numel() > max_full:
            idx = np.sort(rng.choice(flat.numel(), size=sample, replace=False))
        else:
            idx = np.arange(flat.numel())
        numeric = np.empty(len(idx))
        with torch.no_grad():
            for j, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + fd_step
                up = objective().item()
                flat[i] = orig - fd_step
                down = objective().item()
                flat[i] = orig
                numeric[j] = (up - down) / (2 * fd_step)
        results.append(TensorCheck(name, flat.numel(), len(idx), rel_error(analytic[idx], numeric)))
    return GradCheckResult(max(r.rel_err for r in results), results)


def grad_check_preset(arch: str, preset: str = "tiny", fd_step: float = 1e-5, batch: int = 2,
                      seed: int = 0, z_coef: float = 1e-4) -> GradCheckResult:
    """Gradient check of a freshly initialized double-precision model on random tokens."""
    cfg = model_config(arch, preset=preset)
    model = build_model(arch, cfg, seed=seed, dtype=torch.float64)
    gen = torch.Generator().manual_seed(seed + 1)
    data = torch.randint(0, cfg.V, (batch, cfg.N + 1), generator=gen)
    return grad_check(model, data[:, :-1], data[:, 1:], fd_step=fd_step, z_coef=z_coef, seed=seed)
