"""Binary checkpoint format.

Layout::

    b"RMTCKPT1"
    uint64 little-endian header length
    header: UTF-8 JSON (sorted keys) with format_version, arch, model_config,
            step, train_config, meta and a tensor directory of
            {name, shape, dtype, offset, nbytes}
    raw little-endian IEEE-754 payloads in directory order

Offsets are relative to the first payload byte.  Parameter tensors are
stored as ``param/<name>``, AdamW moments as ``adam_m/<name>`` and
``adam_v/<name>``.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

MAGIC = b"RMTCKPT1"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": (torch.float32, np.dtype("<f4")),
    "float64": (torch.float64, np.dtype("<f8")),
}
_NAMES = {v[0]: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arch: str
    model_config: dict
    step: int
    tensors: dict[str, torch.Tensor]
    train_config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def params(self) -> dict[str, torch.Tensor]:
        return {k.split("/", 1)[1]: t for k, t in self.tensors.items() if k.startswith("param/")}

    def moments(self, which: str) -> dict[str, torch.Tensor]:
        prefix = f"adam_{which}/"
        return {k[len(prefix):]: t for k, t in self.tensors.items() if k.startswith(prefix)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory, payloads, offset = [], [], 0
    for name, t in ckpt.tensors.items():
        if t.dtype not in _NAMES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        dname = _NAMES[t.dtype]
        raw = t.detach().cpu().contiguous().numpy().astype(_DTYPES[dname][1], copy=False).tobytes()
        directory.append({"name": name, "shape": list(t.shape), "dtype": dname,
                          "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "arch": ckpt.arch,
        "model_config": ckpt.model_config,
        "step": ckpt.step,
        "train_config": ckpt.train_config,
        "meta": ckpt.meta,
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(payloads)


def from_bytes(data: bytes) -> Checkpoint:
    if data[:8] != MAGIC:
        raise CheckpointError("not an RMT checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    base = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        tdtype, ndtype = _DTYPES[entry["dtype"]]
        start = base + entry["offset"]
        raw = data[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"truncated payload for {entry['name']}")
        arr = np.frombuffer(raw, dtype=ndtype).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(ndtype.newbyteorder("="), copy=True)).to(tdtype)
    return Checkpoint(header["arch"], header["model_config"], header["step"], tensors,
                      header.get("train_config", {}), header.get("meta", {}))


def save(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(ckpt))


def load(path) -> Checkpoint:
    with open(path, "rb") as f:
        return from_bytes(f.read())
