import csv
import json

import pytest
import yaml

from itpgreen.cli import main


def _write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_roots_example(tmp_path):
    out = tmp_path / "roots"
    assert main(["roots", "--out", str(out)]) == 0
    row = _rows(out / "roots.csv")[0]
    assert float(row["lambda_plus_re"]) == 2.0 and float(row["mu_plus_re"]) == 1.0
    man = json.loads((out / "manifest.json").read_text())
    assert man["headline"]["lambda_plus_re"] == float(row["lambda_plus_re"])
    assert all((out / f).exists() for f in man["files"])


def test_contrast_one_is_a_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, "c.yaml", {"k": 1.0})
    assert main(["roots", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "'k'" in capsys.readouterr().err


@pytest.mark.parametrize("bad,path", [({"tolerances": {"roots": -1}}, "tolerances.roots"),
                                      ({"metric": {"kind": "weird"}}, "metric.kind"),
                                      ({"colour": 1}, "colour")])
def test_invalid_fields_are_named(tmp_path, capsys, bad, path):
    cfg = _write(tmp_path, "c.yaml", bad)
    assert main(["roots", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert f"'{path}'" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    assert pytest.raises(SystemExit, main, ["nope"]).value.code == 1


def test_same_seed_same_bytes(tmp_path):
    cfg = _write(tmp_path, "a.yaml", {"metric": {"kind": "random", "seed": 2}, "params": {"n": 10}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["amplitudes", "--config", cfg, "--out", str(a), "--seed", "5"]) == 0
    assert main(["amplitudes", "--config", cfg, "--out", str(b), "--seed", "5"]) == 0
    assert (a / "amplitudes.csv").read_bytes() == (b / "amplitudes.csv").read_bytes()
    c = tmp_path / "c"
    main(["amplitudes", "--config", cfg, "--out", str(c), "--seed", "6"])
    assert (a / "amplitudes.csv").read_bytes() != (c / "amplitudes.csv").read_bytes()


def test_levi_needs_parametrix_artifact(tmp_path, capsys):
    cfg = _write(tmp_path, "l.yaml", {"params": {"mode": "green",
                                                 "parametrix_dir": str(tmp_path / "missing")}})
    assert main(["levi", "--config", cfg, "--out", str(tmp_path / "l")]) == 1
    assert "DependencyError" in capsys.readouterr().err


def test_levi_pipeline(tmp_path):
    pdir = tmp_path / "p"
    assert main(["parametrix", "--config", _write(tmp_path, "p.yaml", {"params": {"dimension": 1}}),
                 "--out", str(pdir)]) == 0
    cfg = _write(tmp_path, "l.yaml", {"params": {"mode": "green", "parametrix_dir": str(pdir),
                                                 "levels": [[64, 4e-4]]},
                                      "tolerances": {"levi_green": 0.05}})
    assert main(["levi", "--config", cfg, "--out", str(tmp_path / "l")]) == 0
    rows = _rows(tmp_path / "l" / "levi.csv")
    assert {r["ell"] for r in rows} == {"1", "2"}


def test_failed_check_exit_code(tmp_path):
    cfg = _write(tmp_path, "d.yaml", {"params": {"n": [200]}})
    assert main(["duality", "--config", cfg, "--out", str(tmp_path / "d")]) == 2


@pytest.mark.parametrize("cmd,params,files", [
    ("solve", {"kind": "time"}, ["solve.csv"]),
    ("green", {"n": 50, "T": 0.01}, ["green.csv"]),
    ("kernel", {"selection": "free", "fit_exponent": 1.5}, ["kernel.csv"]),
    ("levi", {"mode": "scalar", "c": [1.0]}, ["levi.csv"]),
])
def test_experiments_write_declared_files(tmp_path, cmd, params, files):
    out = tmp_path / cmd
    assert main([cmd, "--config", _write(tmp_path, "c.yaml", {"params": params}),
                 "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert set(files) <= set(man["files"]) and man["passed"]


def test_sample_outputs(tmp_path):
    cfg = _write(tmp_path, "s.yaml", {"params": {"n": 50, "dt": 5e-3, "probe_step": 0.05,
                                                 "alphas": [1e-8]}})
    main(["sample", "--config", cfg, "--out", str(tmp_path / "s"), "--workers", "2"])
    rows = _rows(tmp_path / "s" / "indicator.csv")
    assert len(rows) == 19 and set(rows[0]) == {"y", "s", "alpha", "value"}
    rec = json.loads((tmp_path / "s" / "reconstruction.json").read_text())
    assert rec["true"] == [0.4, 0.7] and len(rec["estimate"]) == 2


def test_accept_subset(tmp_path, capsys):
    cfg = _write(tmp_path, "a.yaml", {"params": {"only": [10, 12]}})
    assert main(["accept", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert capsys.readouterr().out.count("[PASS]") == 2
    assert len(_rows(tmp_path / "a" / "acceptance.csv")) == 2
