from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from rsvol.backward import black_scholes_call
from rsvol.cli import run

FAST = ["--grid=-3,3,151", "--steps-per-unit", "100"]


def write_model(path, **overrides):
    cfg = {"regimes": 2, "generator": [[-1, 1], [1, -1]], "rates": [0.03, 0.03],
           "dividends": [0.0, 0.0], "vol_curves": [0.2, [[-0.5, 0.35], [0.5, 0.25]]]}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def model(tmp_path):
    return write_model(tmp_path / "m.json")


def test_price_contract(tmp_path, model):
    out = tmp_path / "p.csv"
    code = run(["price", "--model", model, "--strikes", "0.8,1.0,1.2", "--maturity", "1", "--state", "1",
                "--out", str(out)])
    assert code == 0
    assert out.read_text().splitlines()[0] == "K,i,j,price"
    rows = read_csv(out)
    assert len(rows) == 3 * 2 * 2
    assert {(r["i"], r["j"]) for r in rows} == {("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")}
    assert all(float(r["price"]) >= 0 for r in rows)


def test_price_scalar_value(tmp_path):
    m = tmp_path / "bs.json"
    m.write_text(json.dumps({"regimes": 1, "rates": [0.05], "vol_curves": [0.2]}))
    out = tmp_path / "p.csv"
    assert run(["price", "--model", str(m), "--strikes", "1", "--maturity", "1", "--out", str(out)]) == 0
    price = float(read_csv(out)[0]["price"])
    assert price == pytest.approx(black_scholes_call(1, 1, 0.05, 0, 0.2, 1), abs=1e-3)


def test_floats_have_seventeen_digits(tmp_path, model):
    out = tmp_path / "p.csv"
    run(["price", "--model", model, "--strikes", "1.0", "--maturity", "0.5", "--out", str(out), *FAST])
    price = read_csv(out)[0]["price"]
    assert float(price) == float(f"{float(price):.17g}")
    assert len(price.replace(".", "").lstrip("0")) >= 15


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["price", "--strikes", "1", "--maturity", "1", "--out", "x.csv"],
    ["price", "--model", "{model}", "--strikes", "1", "--maturity", "-1", "--out", "{out}"],
    ["price", "--model", "{model}", "--strikes", "1", "--maturity", "1", "--state", "3", "--out", "{out}"],
    ["price", "--model", "{missing}", "--strikes", "1", "--maturity", "1", "--out", "{out}"],
    ["mc", "--model", "{model}", "--strike", "1", "--maturity", "1", "--state", "1", "--paths", "0",
     "--out", "{out}"],
])
def test_validation_errors_exit_two(tmp_path, model, argv, capsys):
    argv = [a.format(model=model, out=tmp_path / "o.csv", missing=tmp_path / "nope.json") for a in argv]
    assert run(argv) == 2
    err = capsys.readouterr().err.strip()
    assert err and (len(err.splitlines()) == 1 or "usage" in err)


@pytest.mark.parametrize("bad", [
    {"generator": [[-1, -1], [1, 1]]},
    {"generator": [[-1, 1], [1, -2]]},
    {"vol_curves": [0.2]},
    {"vol_curves": [0.2, 0.0]},
])
def test_bad_model_configs(tmp_path, bad):
    m = write_model(tmp_path / "bad.json", **bad)
    assert run(["price", "--model", m, "--strikes", "1", "--maturity", "1", "--out", str(tmp_path / "o.csv")]) == 2


def test_malformed_json(tmp_path):
    m = tmp_path / "bad.json"
    m.write_text("{not json")
    assert run(["price", "--model", str(m), "--strikes", "1", "--maturity", "1",
                "--out", str(tmp_path / "o.csv")]) == 2


def test_dupire_and_aux_fields(tmp_path, model):
    for cmd, name in (("dupire", "w.csv"), ("density-aux", "v.csv")):
        out = tmp_path / name
        assert run([cmd, "--model", model, "--state", "2", "--tau-max", "0.5", "--out", str(out), *FAST]) == 0
        rows = read_csv(out)
        assert list(rows[0]) == ["y", "tau", "component_1", "component_2"]
        assert len(rows) == 151 and all(float(r["tau"]) == 0.5 for r in rows)


def test_density(tmp_path, model):
    out = tmp_path / "d.csv"
    assert run(["density", "--model", model, "--maturity", "1", "--state", "1", "--out", str(out), *FAST]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["K", "i", "j", "density"]
    assert min(float(r["density"]) for r in rows) >= -1e-6


def test_funsol_schema(tmp_path):
    m = write_model(tmp_path / "hv.json", vol_curves=[0.8, 1.0], rates=[0.02, 0.02])
    out = tmp_path / "f.json"
    assert run(["funsol-check", "--model", m, "--out", str(out), *FAST]) == 0
    rep = json.loads(out.read_text())
    assert set(rep) == {"min_gap", "delta0_star", "violated"}
    assert rep["violated"] is False and rep["delta0_star"] > 0


def test_mc_deterministic_and_thread_invariant(tmp_path, model, monkeypatch):
    base = ["mc", "--model", model, "--strike", "1", "--maturity", "0.5", "--state", "1",
            "--paths", "20000", "--steps", "20", "--seed", "7"]
    outs = []
    for threads in ("1", "1", "3"):
        out = tmp_path / f"mc{len(outs)}.csv"
        monkeypatch.setenv("RSVOL_THREADS", threads)
        assert run([*base, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    rows = read_csv(tmp_path / "mc0.csv")
    assert [r["i"] for r in rows] == ["1", "2", "all"]
    assert float(rows[2]["price"]) == pytest.approx(float(rows[0]["price"]) + float(rows[1]["price"]), rel=1e-12)


def test_bad_thread_env(tmp_path, model, monkeypatch):
    monkeypatch.setenv("RSVOL_THREADS", "zero")
    assert run(["price", "--model", model, "--strikes", "1", "--maturity", "1",
                "--out", str(tmp_path / "o.csv")]) == 2


def test_stability_scan_byte_identical(tmp_path, model):
    outs = []
    for k in range(2):
        out = tmp_path / f"s{k}.csv"
        assert run(["stability-scan", "--model", model, "--bumps", "random:2", "--seed", "11",
                    "--amplitudes", "0,0.02,0.04", "--out", str(out), *FAST]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].decode().splitlines()[0] == "amplitude,lhs,rhs,ratio"


def test_stability_scan_json_rows(tmp_path, model):
    out = tmp_path / "s.json"
    assert run(["stability-scan", "--model", model, "--bumps", "1:0:0.15", "--amplitudes", "0,0.02",
                "--out", str(out), *FAST]) == 0
    rows = json.loads(out.read_text())
    assert [set(r) for r in rows] == [{"amplitude", "lhs", "rhs", "ratio"}] * 2
    assert rows[0]["ratio"] is None and rows[1]["ratio"] > 0


def test_calibrate_round_trip(tmp_path, model):
    # observed prices from a model whose first regime carries a bump in A = sigma^2 / 2
    bumped = write_model(tmp_path / "a1.json", vol_curves=[[[-0.2, 0.2], [0.0, 0.21], [0.2, 0.2]],
                                                           [[-0.5, 0.35], [0.5, 0.25]]])
    w = tmp_path / "w.csv"
    assert run(["dupire", "--model", bumped, "--state", "1", "--tau-max", "0.5", "--out", str(w), *FAST]) == 0
    out = tmp_path / "g.csv"
    assert run(["calibrate", "--model-base", model, "--data", str(w), "--basis", "8", "--relinearize", "1",
                "--out", str(out), *FAST]) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["y", "i", "g"]
    g1 = np.array([float(r["g"]) for r in rows if r["i"] == "1" and abs(float(r["y"])) < 1e-9])
    assert g1.size == 1 and g1[0] > 0


def test_calibrate_filters_price_rows_by_state(tmp_path, model):
    bumped = write_model(tmp_path / "a1.json", vol_curves=[[[-0.2, 0.2], [0.0, 0.21], [0.2, 0.2]],
                                                           [[-0.5, 0.35], [0.5, 0.25]]])
    y = np.linspace(-3, 3, 151)
    strikes = ",".join(repr(float(k)) for k in np.exp(y[np.abs(y) <= 0.6]))
    full = tmp_path / "full.csv"
    assert run(["price", "--model", bumped, "--strikes", strikes, "--maturity", "0.5", "--out", str(full),
                *FAST]) == 0
    lines = full.read_text().splitlines()
    only = tmp_path / "only.csv"
    only.write_text("\n".join([lines[0]] + [ln for ln in lines[1:] if ln.split(",")[2] == "2"]) + "\n")
    outs = []
    for data in (full, only):
        out = tmp_path / f"g_{data.stem}.csv"
        assert run(["calibrate", "--model-base", model, "--data", str(data), "--state", "2", "--basis", "8",
                    "--out", str(out), *FAST]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_norm_check(tmp_path, model):
    out = tmp_path / "n.json"
    assert run(["norm-check", "--model", model, "--out", str(out), *FAST]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["rows"]) == 10 and rep["w_variation"] <= 5 and rep["wy_variation"] <= 5


def test_console_script(tmp_path, model):
    out = tmp_path / "p.csv"
    proc = subprocess.run([sys.executable, "-m", "rsvol.cli", "price", "--model", model, "--strikes", "1",
                           "--maturity", "0.25", "--out", str(out), *FAST], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
