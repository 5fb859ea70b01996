import csv
import hashlib
import json
import subprocess
import sys

import pytest

from ibvplab import cli

SMALL = {"surface": {"grid_resolution": 16}, "domain": {"n_s": 13, "n_x": 13}, "count": 40}


def run(tmp_path, sub, cfg=None, *flags, name="out"):
    out = tmp_path / name
    argv = [sub, "--out", str(out), *flags]
    if cfg is not None:
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(cfg))
        argv += ["--config", str(p)]
    return cli.main(argv), out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_poisson_table(tmp_path):
    code, out = run(tmp_path, "poisson")
    assert code == 0
    rows = read_csv(out / "poisson.csv")
    assert len(rows) == 20
    r = [x for x in rows if float(x["x"]) == 0.0 and float(x["y"]) == 1.0][0]
    assert float(r["majorant"]) == -0.5
    assert max(float(x["abs_diff"]) for x in rows) < 1e-8
    res = json.loads((out / "result.json").read_text())
    assert res["value_at_0_1"] == -0.5
    assert {x["config_hash"] for x in rows} == {res["config_hash"]}


def test_dist_identical_potentials(tmp_path):
    code, out = run(tmp_path, "dist", {"domain": {"n_s": 13, "n_x": 13}})
    assert code == 0
    assert json.loads((out / "result.json").read_text())["epsilon"] == 0.0


def test_sweep_records_and_plot(tmp_path):
    cfg = dict(SMALL, eps_list=[1e-4, 1e-8, 1e-12])
    code, out = run(tmp_path, "sweep", cfg, "--plots")
    assert code == 0
    rows = read_csv(out / "stability_records.csv")
    assert len(rows) == 3
    h = rows[0]["config_hash"]
    svg = (out / "stability_loglog.svg").read_text()
    assert svg.startswith("<svg") and f"<desc>{h}</desc>" in svg
    res = json.loads((out / "result.json").read_text())
    assert res["all_bounded"] and res["records"] == 3
    manifest = json.loads((out / "manifest.json").read_text())
    for f, digest in manifest["artifacts"].items():
        assert hashlib.sha256((out / f).read_bytes()).hexdigest() == digest


def test_plots_are_optional(tmp_path):
    code, out = run(tmp_path, "geodesic", {"surface": {"grid_resolution": 16}})
    assert code == 0 and not list(out.glob("*.svg"))
    code, out = run(tmp_path, "geodesic", {"surface": {"grid_resolution": 16}}, "--plots", name="plots")
    assert code == 0 and (out / "geodesics.svg").exists()


def test_float_round_trip(tmp_path):
    code, out = run(tmp_path, "geodesic", {"surface": {"grid_resolution": 16}})
    for row in read_csv(out / "geodesics.csv"):
        v = row["exit_time"]
        assert float(repr(float(v))) == float(v) and len(v.replace("-", "").replace(".", "").split("e")[0]) >= 15


@pytest.mark.parametrize("cfg", [{"no_such_key": 1}])
def test_config_errors_exit_2(tmp_path, cfg):
    code, _ = run(tmp_path, "poisson", cfg)
    assert code == 2
    assert cli.main(["poisson", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 2


def test_admissibility_rejection_exit_2(tmp_path, capsys):
    cfg = dict(SMALL, c2="-1+0*x", amplitudes=[0.05])
    code, _ = run(tmp_path, "calderon-sweep", cfg)
    assert code == 2
    assert "NonPositiveFactor" in capsys.readouterr().err


def test_solver_failure_exit_1(tmp_path, capsys):
    cfg = {"surface": {"grid_resolution": 16}, "tau": 2.0, "q": {"expression": "400", "radius": 0.9}}
    code, _ = run(tmp_path, "cgo-check", cfg)
    assert code == 1
    assert "NoContraction" in capsys.readouterr().err


@pytest.mark.parametrize("sub,cfg", [
    ("poisson", None),
    ("geodesic", {"surface": {"grid_resolution": 16}}),
    ("identity-check", {"surface": {"grid_resolution": 32}, "domain": {"n_s": 13, "n_x": 13}, "placements": 2,
                        "tau": 8.0, "ds": 0.03125}),
])
def test_deterministic_artifacts(tmp_path, sub, cfg):
    ca, a = run(tmp_path, sub, cfg, "--plots", "--seed", "7", name="a")
    cb, b = run(tmp_path, sub, cfg, "--plots", "--seed", "7", name="b")
    assert ca == cb == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_seed_changes_hash(tmp_path):
    _, a = run(tmp_path, "poisson", None, "--seed", "1", name="a")
    _, b = run(tmp_path, "poisson", None, "--seed", "2", name="b")
    ha = json.loads((a / "result.json").read_text())["config_hash"]
    hb = json.loads((b / "result.json").read_text())["config_hash"]
    assert ha != hb and len(ha) == 16


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ibvplab.cli", "poisson", "--out", str(tmp_path / "o")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "o" / "manifest.json").exists()
