"""Byte-level corpus handling and deterministic batching."""

import os
from collections.abc import Iterator

import numpy as np
import torch

VOCAB_SIZE = 256


def tokenize_bytes(text: bytes | str) -> np.ndarray:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return np.frombuffer(bytes(text), dtype=np.uint8).astype(np.int64)


def detokenize(tokens) -> bytes:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= VOCAB_SIZE):
        raise ValueError("byte token out of range")
    return arr.astype(np.uint8).tobytes()


def load_corpus(path: str | os.PathLike) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(f"corpus not found: {path}")
    with open(path, "rb") as f:
        return tokenize_bytes(f.read())


def split_dev(tokens: np.ndarray, dev_frac: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """Hold out the final ``dev_frac`` of the corpus as the dev split."""
    if not 0 < dev_frac < 1:
        raise ValueError("dev_frac must be in (0, 1)")
    cut = len(tokens) - int(round(len(tokens) * dev_frac))
    return tokens[:cut], tokens[cut:]


class BatchSampler:
    """Random-access batches of ``(inputs, targets)`` windows.

    The corpus is cut into non-overlapping windows of ``n + 1`` tokens
    starting every ``n`` positions; consecutive windows share one boundary
    token so targets never run past the corpus end.  Each epoch visits every
    window once in an order fixed by ``(seed, epoch)``, so the batch for any
    step can be recomputed without replaying earlier steps.
    """

    def __init__(self, tokens, n: int, batch_size: int, seed: int = 0, shuffle: bool = True):
        self.tokens = np.asarray(tokens, dtype=np.int64)
        if n < 1 or batch_size < 1:
            raise ValueError("seq_len and batch_size must be positive")
        if len(self.tokens) < n + 1:
            raise ValueError(f"corpus of {len(self.tokens)} tokens is shorter than seq_len + 1 = {n + 1}")
        self.n, self.batch_size, self.seed, self.shuffle = n, batch_size, seed, shuffle
        self.num_windows = (len(self.tokens) - 1) // n
        self._perm_epoch, self._perm = None, None

    def _order(self, epoch: int) -> np.ndarray:
        if not self.shuffle:
            return np.arange(self.num_windows)
        if self._perm_epoch != epoch:
            self._perm = np.random.default_rng([self.seed, epoch]).permutation(self.num_windows)
            self._perm_epoch = epoch
        return self._perm

    def window(self, index: int) -> np.ndarray:
        epoch, pos = divmod(index, self.num_windows)
        start = int(self._order(epoch)[pos]) * self.n
        return self.tokens[start:start + self.n + 1]

    def batch(self, step: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Batch number ``step`` (0-based)."""
        first = step * self.batch_size
        rows = np.stack([self.window(first + b) for b in range(self.batch_size)])
        rows = torch.from_numpy(rows)
        return rows[:, :-1], rows[:, 1:]


def batch_iter(tokens, n: int, batch_size: int, seed: int = 0, shuffle: bool = True,
               start: int = 0) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
    sampler = BatchSampler(tokens, n, batch_size, seed, shuffle)
    step = start
    while True:
        yield sampler.batch(step)
        step += 1


def eval_windows(tokens, n: int) -> tuple[torch.Tensor, torch.Tensor]:
    """All non-overlapping ``n``-token prediction windows of a corpus, in order."""
    sampler = BatchSampler(tokens, n, 1, shuffle=False)
    rows = torch.from_numpy(np.stack([sampler.window(i) for i in range(sampler.num_windows)]))
    return rows[:, :-1], rows[:, 1:]
