import csv
import io
import json

import pytest

from rmt.cli import main, parse_sweep_values


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def write_config(tmp_path, corpus, **kw):
    cfg = dict(arch="rmt", preset="tiny", model={"V": 256}, seq_len=8, batch_size=4, steps=6, corpus=corpus,
               out_dir=str(tmp_path / "run"), record_wall_time=False)
    cfg.update(kw)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_parse_sweep_values():
    assert parse_sweep_values("dk=16:128") == ("D_k", [16, 32, 64, 128])
    assert parse_sweep_values("d=512,1024") == ("D", [512, 1024])
    with pytest.raises(ValueError):
        parse_sweep_values("dk=")
    with pytest.raises(ValueError):
        parse_sweep_values("dk=64:16")


def test_resources_json(capsys):
    code, out = run(capsys, "resources", "--arch", "transformer", "--preset", "gpt2-medium", "--format", "json")
    assert code == 0
    rep = json.loads(out)
    assert rep["params_formula"] == 353_453_056 and rep["params_itemized"] == 405_440_512
    assert rep["flops_formula_fwd"] == 335_412_365_312


def test_resources_sweep_csv(capsys):
    code, out = run(capsys, "resources", "--arch", "rmt", "--preset", "scaling", "--sweep", "dk=16:4096", "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == ["resid_size", "params_formula", "params_itemized", "flops_formula", "flops_itemized"]
    assert [int(r["resid_size"]) for r in rows] == [64 * 2 ** i for i in range(4, 13)]


def test_resources_table_and_set(capsys):
    code, out = run(capsys, "resources", "--arch", "rmt", "--preset", "tiny", "--set", "D_k=16")
    assert code == 0
    assert "itemized total                                   3,488" in out


def test_moments_table2_csv(capsys, tmp_path):
    out_path = tmp_path / "t2.csv"
    code, _ = run(capsys, "moments", "--table2", "--format", "csv", "--out", str(out_path))
    assert code == 0
    rows = list(csv.DictReader(out_path.open()))
    tfm = {(r["layer"], r["operation"]): (float(r["fwd_ratio"]), float(r["bwd_ratio"]))
           for r in rows if r["model"] == "Transformer"}
    assert tfm[("FF", "Storage")] == pytest.approx((1.6, 0.4))


def test_moments_monte_carlo_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["moments", "--trials", "2000", "--seed", "5", "--format", "csv", "--out", str(a)]) == 0
    assert main(["moments", "--trials", "2000", "--seed", "5", "--format", "csv", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 16


def test_gradcheck_command(capsys):
    code, out = run(capsys, "gradcheck", "--arch", "transformer", "--preset", "tiny")
    assert code == 0 and "PASS" in out


def test_train_eval_and_resume(capsys, tmp_path, small_corpus):
    cfg = write_config(tmp_path, small_corpus)
    code, out = run(capsys, "train", "--config", cfg, "--override", "steps=6", "--stop-after", "3")
    assert code == 0 and json.loads(out)["step"] == 3
    code, out = run(capsys, "train", "--config", cfg, "--resume", str(tmp_path / "run/step_000003.ckpt"))
    assert code == 0 and json.loads(out)["step"] == 6
    metrics = (tmp_path / "run/metrics.jsonl").read_text().splitlines()
    assert [json.loads(line)["step"] for line in metrics] == [1, 2, 3, 4, 5, 6]
    assert set(json.loads(metrics[0])) == {"step", "tokens_seen", "ce_loss", "z_loss", "lr", "flops_cum",
                                           "wall_seconds"}
    e1, e2 = tmp_path / "e1.json", tmp_path / "e2.json"
    for path in (e1, e2):
        assert main(["eval", "--checkpoint", str(tmp_path / "run/final.ckpt"), "--corpus", small_corpus,
                     "--out", str(path)]) == 0
    assert e1.read_bytes() == e2.read_bytes()
    assert set(json.loads(e1.read_text())) == {"ce", "perplexity"}


def test_sweep_command(capsys, tmp_path, small_corpus):
    cfg = write_config(tmp_path, small_corpus, steps=2)
    code, out = run(capsys, "sweep", "--config", cfg, "--vary", "dk=4,8")
    assert code == 0 and "informational" in out
    assert (tmp_path / "run/sweep.csv").exists()


def test_errors_return_nonzero(capsys, tmp_path):
    assert main(["resources", "--arch", "rmt", "--preset", "nope"]) == 2
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"arch": "rmt", "preset": "tiny", "seq_len": 8, "corpus": str(tmp_path / "missing")}))
    assert main(["train", "--config", str(cfg)]) == 2
    with pytest.raises(SystemExit):
        main(["resources"])
