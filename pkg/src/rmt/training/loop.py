"""Training, evaluation and residual-stream sweeps."""

import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass

import torch

from .. import resources
from ..models import build_model, model_config
from . import checkpoint as ckpt_io
from .config import TrainRunConfig
from .data import BatchSampler, eval_windows, load_corpus, split_dev
from .optim import AdamWConfig, AdamWState, adamw_step, loss_fn, lr_at

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
SUMMARY_FILE = "summary.json"
FINAL_CKPT = "final.ckpt"


@dataclass
class MetricsRecord:
    step: int
    tokens_seen: int
    ce_loss: float
    z_loss: float
    lr: float
    flops_cum: int
    wall_seconds: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))


@dataclass
class TrainResult:
    out_dir: str
    step: int
    dev_ce_initial: float
    dev_ce_final: float | None
    params_actual: int


@torch.no_grad()
def evaluate(model, tokens, seq_len: int, batch: int = 64) -> tuple[float, float]:
    """Mean cross-entropy over every non-overlapping window, and its perplexity."""
    inputs, targets = eval_windows(tokens, seq_len)
    total, count = 0.0, 0
    for i in range(0, len(inputs), batch):
        logits = model(inputs[i:i + batch])
        tgt = targets[i:i + batch]
        nll = torch.nn.functional.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt.reshape(-1),
                                                reduction="sum")
        total += float(nll.double())
        count += tgt.numel()
    ce = total / count
    return ce, math.exp(ce)


def model_from_checkpoint(ck: ckpt_io.Checkpoint):
    cfg = model_config(ck.arch, ck.model_config)
    params = ck.params()
    dtype = next(iter(params.values())).dtype
    model = build_model(ck.arch, cfg, seed=0, dtype=dtype)
    model.load_state_dict(params)
    return model


def evaluate_checkpoint(path: str, corpus: str, seq_len: int | None = None) -> tuple[float, float]:
    ck = ckpt_io.load(path)
    model = model_from_checkpoint(ck)
    if seq_len is None:
        seq_len = ck.train_config.get("seq_len", model.cfg.N)
    return evaluate(model, load_corpus(corpus), seq_len, ck.train_config.get("eval_batch", 64))


def _splits(cfg: TrainRunConfig):
    tokens = load_corpus(cfg.corpus)
    if cfg.dev_corpus:
        return tokens, load_corpus(cfg.dev_corpus)
    return split_dev(tokens, cfg.dev_frac)


def _make_checkpoint(cfg: TrainRunConfig, model, opt: AdamWState, wall: float) -> ckpt_io.Checkpoint:
    tensors = {f"param/{k}": v.detach().clone() for k, v in model.named_parameters()}
    for k in opt.m:
        tensors[f"adam_m/{k}"] = opt.m[k].clone()
        tensors[f"adam_v/{k}"] = opt.v[k].clone()
    return ckpt_io.Checkpoint(cfg.arch, model.cfg.to_dict(), opt.step, tensors, cfg.to_dict(),
                              {"wall_seconds": wall})


def train(cfg: TrainRunConfig, resume: str | None = None, stop_after: int | None = None) -> TrainResult:
    """Run (or resume) a training job, writing metrics and checkpoints to ``cfg.out_dir``.

    ``stop_after`` halts after that many total steps, checkpointing there, while
    keeping the schedule of the full ``cfg.steps`` run.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    train_tokens, dev_tokens = _splits(cfg)
    mcfg = cfg.model_config()
    sampler = BatchSampler(train_tokens, cfg.seq_len, cfg.batch_size, cfg.seed)
    opt_cfg = AdamWConfig(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
    tpt = resources.train_flops_per_token(cfg.arch, mcfg, cfg.seq_len)
    tokens_per_step = cfg.batch_size * cfg.seq_len
    metrics_path = os.path.join(cfg.out_dir, METRICS_FILE)

    if resume:
        ck = ckpt_io.load(resume)
        model = model_from_checkpoint(ck)
        opt = AdamWState(ck.step, ck.moments("m"), ck.moments("v"))
        wall_offset = ck.meta.get("wall_seconds", 0.0)
        summary_path = os.path.join(cfg.out_dir, SUMMARY_FILE)
        dev_initial = json.load(open(summary_path))["dev_ce_initial"] if os.path.exists(summary_path) else float("nan")
        mode = "a"
    else:
        model = build_model(cfg.arch, mcfg, seed=cfg.seed, dtype=cfg.dtype)
        opt = AdamWState()
        wall_offset = 0.0
        dev_initial = evaluate(model, dev_tokens, cfg.seq_len, cfg.eval_batch)[0]
        mode = "w"

    params = dict(model.named_parameters())
    last = cfg.steps if stop_after is None else min(stop_after, cfg.steps)
    t0 = time.perf_counter()

    def wall() -> float:
        return wall_offset + (time.perf_counter() - t0) if cfg.record_wall_time else 0.0

    with open(metrics_path, mode) as mf:
        for step in range(opt.step + 1, last + 1):
            inputs, targets = sampler.batch(step - 1)
            model.zero_grad(set_to_none=True)
            ce, z = loss_fn(model(inputs), targets, cfg.z_coef)
            (ce + z).backward()
            lr = lr_at(step, cfg.steps, cfg.lr_max, cfg.warmup_frac, cfg.final_lr_frac)
            adamw_step(params, {k: p.grad for k, p in params.items()}, opt, lr, opt_cfg)
            if step == 1 or step % cfg.log_every == 0 or step == last:
                rec = MetricsRecord(step, step * tokens_per_step, ce.item(), z.item(), lr,
                                    step * tokens_per_step * tpt, wall())
                mf.write(rec.to_json() + "\n")
            if cfg.ckpt_every and step % cfg.ckpt_every == 0 and step != last:
                ckpt_io.save(os.path.join(cfg.out_dir, f"step_{step:06d}.ckpt"),
                             _make_checkpoint(cfg, model, opt, wall()))

    final_name = FINAL_CKPT if last == cfg.steps else f"step_{last:06d}.ckpt"
    ckpt_io.save(os.path.join(cfg.out_dir, final_name), _make_checkpoint(cfg, model, opt, wall()))
    dev_final = evaluate(model, dev_tokens, cfg.seq_len, cfg.eval_batch)[0] if last == cfg.steps else None
    params_actual = resources.count_actual(model)
    summary = {
        "arch": cfg.arch,
        "step": last,
        "dev_ce_initial": dev_initial,
        "dev_ce_final": dev_final,
        "params_actual": params_actual,
        "params_itemized": resources.params_itemized(cfg.arch, mcfg)[0],
        "flops_train_per_token": tpt,
    }
    with open(os.path.join(cfg.out_dir, SUMMARY_FILE), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    log.info("finished %s at step %d: dev ce %s -> %s", cfg.out_dir, last, dev_initial, dev_final)
    return TrainResult(cfg.out_dir, last, dev_initial, dev_final, params_actual)


def read_metrics(path: str) -> list[MetricsRecord]:
    with open(path) as f:
        return [MetricsRecord(**json.loads(line)) for line in f if line.strip()]


# Short names accepted by ``sweep --vary``.
FIELD_ALIASES = {"dk": "D_k", "dv": "D_v", "r": "R", "l": "L", "dff": "D_FF", "d": "D", "h": "H", "dh": "D_h"}

SWEEP_COLUMNS = ("field", "value", "resid_size", "params_itemized", "params_actual",
                 "flops_itemized_fwd", "dev_ce_initial", "dev_ce_final")


def parse_vary(spec: str) -> tuple[str, list[int]]:
    """``"dk=4,16,64"`` -> ``("D_k", [4, 16, 64])``."""
    if "=" not in spec:
        raise ValueError(f"--vary expects field=v1,v2,..., got {spec!r}")
    key, values = spec.split("=", 1)
    key = key.strip()
    field_name = FIELD_ALIASES.get(key.lower().replace("_", ""), key)
    return field_name, [int(v) for v in values.split(",") if v.strip()]


def sweep(cfg: TrainRunConfig, field_name: str, values: list[int]) -> list[dict]:
    """Train one run per value of a single model field and tabulate final dev loss."""
    rows = []
    for v in values:
        model_fields = dict(cfg.model, **{field_name: v})
        run_cfg = dataclasses.replace(cfg, model=model_fields,
                                      out_dir=os.path.join(cfg.out_dir, f"{field_name}_{v}"))
        result = train(run_cfg)
        mcfg = run_cfg.model_config()
        resid = mcfg.D if cfg.arch == "transformer" else mcfg.D_k * mcfg.D_v
        rows.append({
            "field": field_name,
            "value": v,
            "resid_size": resid,
            "params_itemized": resources.params_itemized(cfg.arch, mcfg)[0],
            "params_actual": result.params_actual,
            "flops_itemized_fwd": resources.flops_itemized(cfg.arch, mcfg, cfg.seq_len)[0],
            "dev_ce_initial": result.dev_ce_initial,
            "dev_ce_final": result.dev_ce_final,
        })
    with open(os.path.join(cfg.out_dir, "sweep.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def is_monotone_improving(rows: list[dict]) -> bool:
    ordered = sorted(rows, key=lambda r: r["resid_size"])
    losses = [r["dev_ce_final"] for r in ordered]
    return all(b <= a for a, b in zip(losses, losses[1:]))
