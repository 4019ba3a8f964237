"""Mean/variance propagation through storage, retrieval and linear maps at init.

Closed forms assume zero-mean weights drawn independently of the inputs and
of each other; they only depend on the first two moments of each
distribution.  :func:`monte_carlo_moments` checks them empirically by drawing
weights, inputs and output gradients and pushing them through the actual
forward operation and its adjoint.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .rmt import RMTConfig, rmt_param_vars
from .transformer import TransformerConfig, transformer_fans
from .common import xavier_var

KINDS = ("storage", "retrieval", "linear")


@dataclass(frozen=True)
class MomentSpec:
    var_w: float
    mu_x: float = 0.0
    var_x: float = 1.0
    mu_g: float = 0.0
    var_g: float = 1.0
    mu_w: float = 0.0
    R: int | None = None
    d_k: int | None = None
    d_in: int | None = None
    d_out: int | None = None

    def __post_init__(self):
        if min(self.var_w, self.var_x, self.var_g) < 0:
            raise ValueError("variances must be non-negative")
        if self.mu_w != 0:
            raise ValueError("closed forms assume zero-mean weights (mu_w = 0)")


class Moments(NamedTuple):
    mu_out: float
    var_out: float
    mu_gin: float
    var_gin: float


def _require(spec: MomentSpec, *names: str) -> None:
    missing = [n for n in names if getattr(spec, n) is None]
    if missing:
        raise ValueError(f"MomentSpec is missing {', '.join(missing)}")


def storage_moments(spec: MomentSpec) -> Moments:
    """``X_out = sum_h w_h (x) x_h`` with ``R`` keys of length ``d_k``."""
    _require(spec, "R", "d_k")
    var_out = spec.R * spec.var_w * (spec.var_x + spec.mu_x ** 2)
    var_gin = spec.d_k * spec.var_w * (spec.var_g + spec.mu_g ** 2)
    return Moments(0.0, var_out, 0.0, var_gin)


def retrieval_moments(spec: MomentSpec) -> Moments:
    """``x_out = w ._1 X_in``; the backward pass stores into ``R`` keys."""
    _require(spec, "R", "d_k")
    var_out = spec.d_k * spec.var_w * (spec.var_x + spec.mu_x ** 2)
    var_gin = spec.R * spec.var_w * (spec.var_g + spec.mu_g ** 2)
    return Moments(0.0, var_out, 0.0, var_gin)


def linear_moments(spec: MomentSpec) -> Moments:
    """``x_out = W x_in`` with ``W`` of shape ``d_out x d_in``."""
    _require(spec, "d_in", "d_out")
    var_out = spec.d_in * spec.var_w * (spec.var_x + spec.mu_x ** 2)
    var_gin = spec.d_out * spec.var_w * (spec.var_g + spec.mu_g ** 2)
    return Moments(0.0, var_out, 0.0, var_gin)


CLOSED_FORMS = {"storage": storage_moments, "retrieval": retrieval_moments, "linear": linear_moments}


def closed_form(kind: str, spec: MomentSpec) -> Moments:
    if kind not in CLOSED_FORMS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    return CLOSED_FORMS[kind](spec)


class MonteCarloResult(NamedTuple):
    moments: Moments
    stderr: Moments
    trials: int


def _draw(rng: np.random.Generator, shape, mean: float, var: float, dist: str) -> np.ndarray:
    if dist == "gaussian":
        return rng.normal(mean, math.sqrt(var), size=shape)
    if dist == "uniform":
        half = math.sqrt(3.0 * var)
        return rng.uniform(mean - half, mean + half, size=shape)
    raise ValueError(f"unknown distribution {dist!r}")


def _forward_backward(kind: str, spec: MomentSpec, T: int, d_v: int, rng, dist: str):
    """One chunk of ``T`` trials; returns entry ``[0, 0]`` of the output and of the input gradient."""
    draw = lambda shape, mean, var: _draw(rng, shape, mean, var, dist)  # noqa: E731
    if kind == "storage":
        w = draw((T, spec.R, spec.d_k), 0.0, spec.var_w)
        x = draw((T, spec.R, d_v), spec.mu_x, spec.var_x)
        G = draw((T, spec.d_k, d_v), spec.mu_g, spec.var_g)
        out = np.einsum("thk,thv->tkv", w, x)
        g_in = np.einsum("thk,tkv->thv", w, G)
    elif kind == "retrieval":
        w = draw((T, spec.R, spec.d_k), 0.0, spec.var_w)
        X = draw((T, spec.d_k, d_v), spec.mu_x, spec.var_x)
        g = draw((T, spec.R, d_v), spec.mu_g, spec.var_g)
        out = np.einsum("thk,tkv->thv", w, X)
        g_in = np.einsum("thk,thv->tkv", w, g)
    elif kind == "linear":
        W = draw((T, spec.d_out, spec.d_in), 0.0, spec.var_w)
        x = draw((T, spec.d_in), spec.mu_x, spec.var_x)
        g = draw((T, spec.d_out), spec.mu_g, spec.var_g)
        out = np.einsum("toi,ti->to", W, x)[:, :, None]
        g_in = np.einsum("toi,to->ti", W, g)[:, :, None]
    else:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    return out[:, 0, 0], g_in[:, 0, 0]


def _mean_var_se(s: np.ndarray) -> tuple[float, float, float, float]:
    n = s.size
    mu = float(s.mean())
    c = s - mu
    var = float(c.var())
    m4 = float((c ** 4).mean())
    se_mu = math.sqrt(var / n)
    se_var = math.sqrt(max(m4 - var ** 2, 0.0) / n)
    return mu, var, se_mu, se_var


def monte_carlo_moments(kind: str, spec: MomentSpec, trials: int = 100_000, seed: int = 0,
                        dist: str = "gaussian", d_v: int = 2, chunk: int = 4096) -> MonteCarloResult:
    """Empirical output and input-gradient moments over independent trials.

    One output entry and one gradient entry are kept per trial so the samples
    are i.i.d. and the standard errors are honest.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng(seed)
    outs, grads = [], []
    done = 0
    while done < trials:
        T = min(chunk, trials - done)
        o, g = _forward_backward(kind, spec, T, d_v, rng, dist)
        outs.append(o)
        grads.append(g)
        done += T
    mo, vo, se_mo, se_vo = _mean_var_se(np.concatenate(outs))
    mg, vg, se_mg, se_vg = _mean_var_se(np.concatenate(grads))
    return MonteCarloResult(Moments(mo, vo, mg, vg), Moments(se_mo, se_vo, se_mg, se_vg), trials)


def z_scores(kind: str, spec: MomentSpec, result: MonteCarloResult) -> Moments:
    """Distance of each empirical moment from its closed form, in standard errors."""
    exact = closed_form(kind, spec)
    zs = []
    for e, m, se in zip(exact, result.moments, result.stderr):
        zs.append(abs(m - e) / se if se > 0 else (0.0 if m == e else math.inf))
    return Moments(*zs)


# Settings exercised by ``moments`` on the command line and by the test suite.
DEFAULT_SETTINGS: dict[str, list[MomentSpec]] = {
    "storage": [
        MomentSpec(var_w=0.1, R=4, d_k=8),
        MomentSpec(var_w=0.25, R=1, d_k=16),
        MomentSpec(var_w=1 / 16, R=16, d_k=4, var_x=2.0, mu_x=0.5),
        MomentSpec(var_w=0.02, R=8, d_k=64, var_g=3.0, mu_g=-1.0),
        MomentSpec(var_w=0.5, R=2, d_k=2, var_x=0.3, mu_x=1.0, var_g=0.5, mu_g=0.2),
    ],
    "retrieval": [
        MomentSpec(var_w=1 / 8, R=4, d_k=8),
        MomentSpec(var_w=1 / 64, R=12, d_k=64),
        MomentSpec(var_w=0.2, R=3, d_k=5, var_x=0.5, mu_x=-0.7),
        MomentSpec(var_w=0.05, R=16, d_k=32, var_g=2.0, mu_g=0.3),
        MomentSpec(var_w=1.0, R=1, d_k=1, var_x=4.0, mu_x=2.0, var_g=0.1, mu_g=1.0),
    ],
    "linear": [
        MomentSpec(var_w=xavier_var(16, 8), d_in=16, d_out=8),
        MomentSpec(var_w=xavier_var(32, 96), d_in=32, d_out=96),
        MomentSpec(var_w=0.1, d_in=4, d_out=4, var_x=2.0, mu_x=1.0),
        MomentSpec(var_w=1 / 64, d_in=64, d_out=16, var_g=0.5, mu_g=-0.5),
        MomentSpec(var_w=0.3, d_in=3, d_out=7, var_x=0.2, mu_x=0.1, var_g=5.0, mu_g=2.0),
    ],
}


@dataclass(frozen=True)
class RatioRow:
    layer: str
    operation: str
    model: str
    fwd_ratio: float
    bwd_ratio: float


REPORT_COLUMNS = ("layer", "operation", "model", "fwd_ratio", "bwd_ratio")


def _ratios(m: Moments) -> tuple[float, float]:
    # unit-variance, zero-mean inputs and output gradients, so the moments are the ratios
    return m.var_out, m.var_gin


def variance_ratio_report(tfm: TransformerConfig, rmt: RMTConfig) -> list[RatioRow]:
    """Forward and backward variance ratios of every storage/retrieval site.

    Transformer fans come from :func:`transformer_fans` (fused QKV and fused
    output projection); RMT key variances come from the RMT init mode.  The
    attention reads are treated as one fused map with ``3R`` keys, so their
    backward ratio sums the gradient paths of ``r_Q``, ``r_K`` and ``r_V``.
    """
    fans = transformer_fans(tfm)
    HD = tfm.H * tfm.D_h

    def linear(name, d_in, d_out):
        return _ratios(linear_moments(MomentSpec(var_w=xavier_var(*fans[name]), d_in=d_in, d_out=d_out)))

    kvars = rmt_param_vars(rmt)

    def rmt_op(fn, key, channels=rmt.R):
        return _ratios(fn(MomentSpec(var_w=kvars[key], R=channels, d_k=rmt.D_k)))

    rows = [
        ("Attn", "Storage", "RMT", rmt_op(storage_moments, "w_O")),
        ("Attn", "Storage", "Transformer", linear("W_O", HD, tfm.D)),
        ("Attn", "Retrieval", "RMT", rmt_op(retrieval_moments, "r_Q", 3 * rmt.R)),
        ("Attn", "Retrieval", "Transformer", linear("W_Q", tfm.D, 3 * HD)),
        ("FF", "Storage", "RMT", rmt_op(storage_moments, "w_FF")),
        ("FF", "Storage", "Transformer", linear("W_2", tfm.D_FF, tfm.D)),
        ("FF", "Retrieval", "RMT", rmt_op(retrieval_moments, "r_FF")),
        ("FF", "Retrieval", "Transformer", linear("W_1", tfm.D, tfm.D_FF)),
    ]
    return [RatioRow(layer, op, model, f, b) for layer, op, model, (f, b) in rows]


def format_report(rows: list[RatioRow], fmt: str = "table") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r.layer, r.operation, r.model, repr(r.fwd_ratio), repr(r.bwd_ratio)])
        return buf.getvalue()
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    header = f"{'layer':<6}{'operation':<11}{'model':<13}{'fwd':>10}{'bwd':>10}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.layer:<6}{r.operation:<11}{r.model:<13}{r.fwd_ratio:>10.4g}{r.bwd_ratio:>10.4g}")
    return "\n".join(lines) + "\n"
