"""Data, optimization, checkpointing and training loops."""

from .checkpoint import Checkpoint
from .config import TrainRunConfig, load_config
from .data import BatchSampler, batch_iter, detokenize, split_dev, tokenize_bytes
from .gradcheck import grad_check, grad_check_preset
from .loop import MetricsRecord, evaluate, evaluate_checkpoint, sweep, train
from .optim import AdamWConfig, AdamWState, adamw_step, loss_fn, lr_at

__all__ = [
    "AdamWConfig", "AdamWState", "BatchSampler", "Checkpoint", "MetricsRecord", "TrainRunConfig",
    "adamw_step", "batch_iter", "detokenize", "evaluate", "evaluate_checkpoint", "grad_check",
    "grad_check_preset", "load_config", "loss_fn", "lr_at", "split_dev", "sweep", "tokenize_bytes", "train",
]
