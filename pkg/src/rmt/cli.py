"""Command-line entry point: ``rmt <command> ...``."""

import argparse
import csv
import io
import json
import logging
import sys

from . import moments, resources
from .models import PRESETS, model_config
from .training import gradcheck, loop
from .training.config import load_config, parse_value

log = logging.getLogger("rmt")


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", newline="") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def parse_sweep_values(spec: str) -> tuple[str, list[int]]:
    """``dk=16:4096`` doubles from 16 to 4096; ``dk=16,32,48`` lists values."""
    key, _, values = spec.partition("=")
    if not values:
        raise ValueError(f"--sweep expects field=lo:hi or field=v1,v2,..., got {spec!r}")
    if ":" in values:
        lo, hi = (int(v) for v in values.split(":"))
        if lo < 1 or hi < lo:
            raise ValueError(f"bad sweep range {values!r}")
        out = []
        while lo <= hi:
            out.append(lo)
            lo *= 2
    else:
        out = [int(v) for v in values.split(",") if v.strip()]
    field_name, _ = loop.parse_vary(f"{key}=1")
    return field_name, out


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    result = loop.train(cfg, resume=args.resume, stop_after=args.stop_after)
    print(json.dumps(vars(result), sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    ce, ppl = loop.evaluate_checkpoint(args.checkpoint, args.corpus, args.seq_len)
    _emit(json.dumps({"ce": ce, "perplexity": ppl}, sort_keys=True) + "\n", args.out)
    return 0


def cmd_gradcheck(args) -> int:
    res = gradcheck.grad_check_preset(args.arch, args.preset, args.fd_step, args.batch, args.seed)
    for t in res.tensors:
        print(f"{t.name:<24} checked {t.checked:>6}/{t.numel:<6} rel_err {t.rel_err:.3e}")
    ok = res.max_rel_err <= args.tol
    print(f"max relative error {res.max_rel_err:.3e} ({'PASS' if ok else 'FAIL'} at tol {args.tol:g})")
    return 0 if ok else 1


def _resource_config(args):
    fields = {}
    for item in args.set or []:
        k, _, v = item.partition("=")
        fields[k] = parse_value(v)
    return model_config(args.arch, fields, args.preset)


def cmd_resources(args) -> int:
    cfg = _resource_config(args)
    if args.sweep:
        field_name, values = parse_sweep_values(args.sweep)
        expected = "D" if args.arch == "transformer" else "D_k"
        if field_name != expected:
            raise ValueError(f"{args.arch} sweeps vary {expected}, not {field_name}")
        rows = resources.scaling_series(args.arch, cfg, values, args.seq_len)
        if args.format == "json":
            text = json.dumps(rows, indent=2) + "\n"
        elif args.format == "csv":
            buf = io.StringIO()
            w = csv.DictWriter(buf, fieldnames=resources.SERIES_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
            text = buf.getvalue()
        else:
            header = "".join(f"{c:>20}" for c in resources.SERIES_COLUMNS)
            text = header + "\n" + "".join(
                "".join(f"{r[c]:>20,}" for c in resources.SERIES_COLUMNS) + "\n" for r in rows)
        _emit(text, args.out)
        return 0
    rep = resources.resource_report(args.arch, cfg, args.seq_len)
    if args.format == "json":
        text = json.dumps(rep.to_dict(), indent=2) + "\n"
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=resources.SERIES_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerow({
            "resid_size": cfg.D if args.arch == "transformer" else cfg.D_k * cfg.D_v,
            "params_formula": rep.params_formula,
            "params_itemized": rep.params_itemized,
            "flops_formula": rep.flops_formula_fwd,
            "flops_itemized": rep.flops_itemized_fwd,
        })
        text = buf.getvalue()
    else:
        lines = [f"{args.arch} (seq_len={rep.seq_len})", "parameters:"]
        lines += [f"  {k:<34}{v:>20,}" for k, v in rep.params_items.items()]
        lines += [f"  {'itemized total':<34}{rep.params_itemized:>20,}",
                  f"  {'closed form':<34}{rep.params_formula:>20,}",
                  "forward FLOPs per sequence:"]
        lines += [f"  {k:<34}{v:>20,}" for k, v in rep.flops_items.items()]
        lines += [f"  {'itemized total':<34}{rep.flops_itemized_fwd:>20,}",
                  f"  {'closed form':<34}{rep.flops_formula_fwd:>20,}",
                  f"train FLOPs per token{'':<15}{rep.flops_train_per_token:>20,}"]
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


MC_COLUMNS = ("kind", "setting", "R", "d_k", "d_in", "d_out", "var_w", "mu_x", "var_x", "mu_g", "var_g",
              "var_out_exact", "var_out_mc", "z_var_out", "mu_out_mc", "z_mu_out",
              "var_gin_exact", "var_gin_mc", "z_var_gin", "mu_gin_mc", "z_mu_gin")


def monte_carlo_rows(trials: int, seed: int) -> list[dict]:
    rows = []
    for k, kind in enumerate(moments.KINDS):
        for i, spec in enumerate(moments.DEFAULT_SETTINGS[kind]):
            res = moments.monte_carlo_moments(kind, spec, trials, seed=seed * 1000 + 10 * k + i)
            exact = moments.closed_form(kind, spec)
            z = moments.z_scores(kind, spec, res)
            rows.append({
                "kind": kind, "setting": i, "R": spec.R, "d_k": spec.d_k, "d_in": spec.d_in, "d_out": spec.d_out,
                "var_w": spec.var_w, "mu_x": spec.mu_x, "var_x": spec.var_x, "mu_g": spec.mu_g, "var_g": spec.var_g,
                "var_out_exact": exact.var_out, "var_out_mc": res.moments.var_out, "z_var_out": z.var_out,
                "mu_out_mc": res.moments.mu_out, "z_mu_out": z.mu_out,
                "var_gin_exact": exact.var_gin, "var_gin_mc": res.moments.var_gin, "z_var_gin": z.var_gin,
                "mu_gin_mc": res.moments.mu_gin, "z_mu_gin": z.mu_gin,
            })
    return rows


def cmd_moments(args) -> int:
    if args.table2:
        tfm = model_config("transformer", preset="gpt2-medium")
        fields = {"key_init": args.rmt_init}
        if args.rmt_dk:
            fields["D_k"] = args.rmt_dk
        rmt_cfg = model_config("rmt", fields, preset="mirror")
        _emit(moments.format_report(moments.variance_ratio_report(tfm, rmt_cfg), args.format), args.out)
        return 0
    rows = monte_carlo_rows(args.trials, args.seed)
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=MC_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    else:
        lines = [f"{'kind':<10}{'#':>2}{'var_out':>12}{'mc':>12}{'z':>6}{'var_gin':>12}{'mc':>12}{'z':>6}"]
        for r in rows:
            lines.append(f"{r['kind']:<10}{r['setting']:>2}{r['var_out_exact']:>12.5g}{r['var_out_mc']:>12.5g}"
                         f"{r['z_var_out']:>6.2f}{r['var_gin_exact']:>12.5g}{r['var_gin_mc']:>12.5g}{r['z_var_gin']:>6.2f}")
        worst = max(max(r["z_var_out"], r["z_var_gin"], r["z_mu_out"], r["z_mu_gin"]) for r in rows)
        lines.append(f"largest deviation: {worst:.2f} standard errors")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.override)
    field_name, values = loop.parse_vary(args.vary)
    rows = loop.sweep(cfg, field_name, values)
    for r in rows:
        print(f"{r['field']}={r['value']:<6} resid {r['resid_size']:>7}  params {r['params_itemized']:>10,}"
              f"  dev ce {r['dev_ce_final']:.4f}")
    trend = "monotone" if loop.is_monotone_improving(rows) else "not monotone"
    print(f"dev loss vs residual size: {trend} (informational)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rmt", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--stop-after", type=int, help="stop after this many total steps")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="dev cross-entropy of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--seq-len", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--arch", choices=("transformer", "rmt"), required=True)
    g.add_argument("--preset", default="tiny")
    g.add_argument("--fd-step", type=float, default=1e-5)
    g.add_argument("--batch", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("resources", help="parameter and FLOP counts")
    r.add_argument("--arch", choices=("transformer", "rmt"), required=True)
    r.add_argument("--preset", help=f"named shape; transformer: {sorted(PRESETS['transformer'])}, "
                                    f"rmt: {sorted(PRESETS['rmt'])}")
    r.add_argument("--set", action="append", metavar="FIELD=VALUE", help="override a model dimension")
    r.add_argument("--seq-len", type=int)
    r.add_argument("--format", choices=("table", "csv", "json"), default="table")
    r.add_argument("--sweep", help="e.g. dk=16:4096 (doubling) or d=512,1024")
    r.add_argument("--out")
    r.set_defaults(func=cmd_resources)

    m = sub.add_parser("moments", help="Monte Carlo check of the moment closed forms")
    m.add_argument("--trials", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--table2", action="store_true", help="print variance ratios at GPT2-medium shapes instead")
    m.add_argument("--rmt-init", choices=("unit", "xavier"), default="unit")
    m.add_argument("--rmt-dk", type=int, help="RMT key dimension for --table2 (default: mirror preset)")
    m.add_argument("--format", choices=("table", "csv"), default="table")
    m.add_argument("--out")
    m.set_defaults(func=cmd_moments)

    s = sub.add_parser("sweep", help="train one run per value of a model dimension")
    s.add_argument("--config", required=True)
    s.add_argument("--vary", required=True, help="e.g. dk=4,16,64")
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
