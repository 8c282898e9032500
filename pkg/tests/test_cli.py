import json
from fractions import Fraction

import pytest

from qtube.cli import RunManifest, atomic_write, main


def _run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_calc_rate_power_schedule(capsys, tmp_path):
    code, out = _run(["calc-rate", "--q", "2", "--phi", "1", "--alpha", "2/3", "--eta", "2/3",
                      "--out", str(tmp_path)], capsys)
    assert code == 0
    res = json.loads(out.out)
    assert res["lambda_exp"] == pytest.approx(1 / 6, abs=1e-12)
    assert (tmp_path / "rate_exponent.json").exists()
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "calc-rate" and man["outputs"][0]["path"] == "rate_exponent.json"


def test_calc_rate_rejects_w_and_phi(capsys):
    code, out = _run(["calc-rate", "--q", "2", "--phi", "1", "--w", "2"], capsys)
    assert code == 2 and "configuration error" in out.err


def test_calc_rate_invalid_params(capsys):
    assert _run(["calc-rate", "--q", "0.5", "--w", "1"], capsys)[0] == 2
    assert _run(["calc-rate", "--q", "two", "--w", "1"], capsys)[0] == 2


def test_unknown_subcommand(capsys):
    code, out = _run(["frobnicate"], capsys)
    assert code == 2 and "usage" in out.err


def test_missing_config_file(capsys, tmp_path):
    code, out = _run(["rates", str(tmp_path / "nope.json")], capsys)
    assert code == 2


def test_bad_json_config(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json", encoding="utf-8")
    assert _run(["rates", str(cfg)], capsys)[0] == 2
    cfg.write_text('{"T_grid": [64, 32]}', encoding="utf-8")
    assert _run(["rates", str(cfg)], capsys)[0] == 2
    cfg.write_text('{"bogus": 1}', encoding="utf-8")
    assert _run(["rates", str(cfg)], capsys)[0] == 2


def test_rates_roundtrip_identical_bytes(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"T_grid": [16, 32, 64], "repeats": 1, "n_mc": 256, "eta": "inf"}),
                   encoding="utf-8")
    outs = []
    for name in ("a", "b"):
        code, _ = _run(["rates", str(cfg), "--out", str(tmp_path / name), "--seed", "3"], capsys)
        assert code == 0
        outs.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir()
                     if p.name != "manifest.json"})
    assert outs[0] == outs[1]
    assert set(outs[0]) == {"rates.json", "rates.csv", "rates_plot.csv"}
    assert b"\r\n" not in outs[0]["rates.csv"]
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 3 and len(man["config_hash"]) == 64
    assert {o["path"] for o in man["outputs"]} == set(outs[0])


def test_rates_flag_overrides(capsys, tmp_path):
    code, out = _run(["rates", "--T-grid", "16,32,64", "--repeats", "1", "--q", "1.5",
                      "--alpha", "1/2", "--eta", "inf", "--out", str(tmp_path)], capsys)
    assert code == 0
    report = json.loads((tmp_path / "rates.json").read_text())
    assert report["config"]["q"] == 1.5 and report["config"]["eta"] == "inf"
    assert report["config"]["alpha"] == 0.5


def test_threads_env_fallback(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("QTUBE_THREADS", "zero")
    assert _run(["rates", "--T-grid", "16,32,64", "--repeats", "1", "--out", str(tmp_path)],
                capsys)[0] == 2
    assert _run(["rates", "--threads", "0", "--out", str(tmp_path)], capsys)[0] == 2


def test_fit_generate_and_data(capsys, tmp_path):
    cfg = tmp_path / "fit.json"
    cfg.write_text(json.dumps({"generate": {"model": {"kind": "uniform", "halfwidth": 0.2},
                                            "T": 30}, "q": 1.5, "eps": 0.05}), encoding="utf-8")
    code, out = _run(["fit", str(cfg), "--lam", "0.01", "--seed", "1",
                      "--out", str(tmp_path / "a")], capsys)
    assert code == 0 and "converged=True" in out.out
    first = json.loads((tmp_path / "a" / "fit.json").read_text())
    assert len(first["coeffs"]) == 30
    # refitting the written dataset reproduces the coefficients
    code, _ = _run(["fit", "--data", str(tmp_path / "a" / "dataset.csv"), "--q", "1.5",
                    "--eps", "0.05", "--lam", "0.01", "--out", str(tmp_path / "b")], capsys)
    assert code == 0
    second = json.loads((tmp_path / "b" / "fit.json").read_text())
    assert second["coeffs"] == first["coeffs"]


def test_fit_needs_data(capsys, tmp_path):
    cfg = tmp_path / "fit.json"
    cfg.write_text("{}", encoding="utf-8")
    assert _run(["fit", str(cfg), "--out", str(tmp_path)], capsys)[0] == 2


def test_sparsity_command(capsys, tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"generate": {"model": {"kind": "power", "phi": 1.0}, "T": 40},
                               "n_mc": 256}), encoding="utf-8")
    code, out = _run(["sparsity", str(cfg), "--eps-grid", "0,0.05,1", "--out", str(tmp_path)],
                     capsys)
    assert code == 0
    lines = out.out.strip().splitlines()
    assert lines[0] == "eps,ratio,objective,error" and len(lines) == 4
    assert lines[-1].split(",")[1] == "0.0"


def test_verify_single_suite(capsys, tmp_path):
    code, out = _run(["verify", "--suite", "loss", "--quick", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert out.out.count("[PASS]") == 5 and "5/5 checks passed" in out.out
    assert len(json.loads((tmp_path / "verify.json").read_text())) == 5


def test_verify_unknown_suite(capsys):
    assert _run(["verify", "--suite", "nope"], capsys)[0] == 2


def test_verify_failure_exits_one(capsys, monkeypatch):
    from qtube import verify

    monkeypatch.setitem(verify.SUITES, "loss", [("always_fails", lambda quick, seed: (False, "x"))])
    code, out = _run(["verify", "--suite", "loss"], capsys)
    assert code == 1 and "[FAIL] loss.always_fails" in out.out


def test_atomic_write_lf(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write(p, "a\nb\n")
    assert p.read_bytes() == b"a\nb\n"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]


def test_manifest_hash_stable():
    a = RunManifest("rates", {"q": 2.0, "alpha": Fraction(2, 3)}, 0)
    b = RunManifest("rates", {"alpha": Fraction(2, 3), "q": 2.0}, 0)
    assert a.config_hash == b.config_hash
