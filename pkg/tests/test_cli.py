import csv
import json

import numpy as np
import pytest

from szilard_battery.cli import main, table_bytes
from szilard_battery.config import RunConfig, load_config, parse_config
from szilard_battery.errors import ConfigError
from szilard_battery.metrics import binomial_ergotropy

FAST = """
[run]
seed = 7
shots = 4000
cycles = 10
p_up = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
backends = ["ideal_markov", "exact_channel", "trajectory"]

[engine]
recoil_samples = 5000

[figure4]
p_grid = [0.1, 0.2, 0.3, 0.4, 0.5]

[calibrate]
shots = 100000
m1_shots = 2000
m2_samples = 5000
verify_shots = 2000

[jarzynski]
p_grid = [0.1, 0.3, 0.5]
shots = 20000
"""


def read(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# schema_version: 1"
    return list(csv.DictReader(lines[1:]))


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "run.toml"
    path.write_text(FAST)
    return path


@pytest.fixture(scope="module")
def simulate_dir(config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--config", str(config_file), "--out", str(out)]) == 0
    return out


# -- config ---------------------------------------------------------------------------------------


def test_defaults_parse():
    cfg = RunConfig()
    assert cfg.run.p_up == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    assert parse_config(cfg.as_dict()) == cfg


def test_unknown_key_reports_line(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[run]\nseed = 1\n\n[engine]\nheating_per_cycel = 0.1\n")
    with pytest.raises(ConfigError, match=r"bad.toml:5: \[engine\] heating_per_cycel"):
        load_config(path)


def test_unknown_section_and_bad_type(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[detectr]\neps_dark = 0.1\n")
    with pytest.raises(ConfigError, match="bad.toml:1"):
        load_config(path)
    path.write_text("[run]\nshots = 'many'\n")
    with pytest.raises(ConfigError, match="expected an integer"):
        load_config(path)
    path.write_text("[run]\np_up = [0.7]\n")
    with pytest.raises(ConfigError, match="outside"):
        load_config(path)


def test_cli_reports_config_errors(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[run]\nbogus = 1\n")
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "bogus" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


# -- tables ---------------------------------------------------------------------------------------


def test_table_format():
    text = table_bytes(["a", "b"], [[1, 0.1 + 0.2], ["x", True]]).decode()
    assert text == "# schema_version: 1\na,b\n1,0.3\nx,true\n"


def test_simulate_columns_and_ideal_rows(simulate_dir):
    rows = read(simulate_dir / "simulate.csv")
    assert list(rows[0]) == ["backend", "p_up", "cycle", "mean_phonon", *[f"p{i}" for i in range(11)], "leakage"]
    for r in rows:
        if r["backend"] == "ideal_markov":
            assert float(r["mean_phonon"]) == pytest.approx(float(r["p_up"]) * int(r["cycle"]), abs=1e-12)
        probs = [float(r[f"p{i}"]) for i in range(11)]
        assert sum(probs) == pytest.approx(1.0, abs=1e-9)


def test_simulate_error_model_above_ideal(simulate_dir):
    for r in read(simulate_dir / "simulate.csv"):
        p = float(r["p_up"])
        if r["backend"] == "exact_channel" and p >= 0.1 and int(r["cycle"]) > 0:
            assert float(r["mean_phonon"]) >= p * int(r["cycle"])


def test_simulate_is_byte_identical(config_file, simulate_dir, tmp_path):
    out = tmp_path / "again"
    assert main(["simulate", "--config", str(config_file), "--out", str(out), "--threads", "3"]) == 0
    for name in ("simulate.csv", "simulate_state.csv"):
        assert (out / name).read_bytes() == (simulate_dir / name).read_bytes()
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((simulate_dir / "manifest.json").read_text())
    assert a["files"] == b["files"] and a["seed"] == 7 and "SeedSequence" in a["seed_scheme"]


def test_seed_flag_changes_trajectory_only(config_file, simulate_dir, tmp_path):
    out = tmp_path / "seed"
    assert main(["simulate", "--config", str(config_file), "--out", str(out), "--seed", "8",
                 "--backend", "trajectory"]) == 0
    rows = read(out / "simulate.csv")
    assert {r["backend"] for r in rows} == {"trajectory"}
    old = [r for r in read(simulate_dir / "simulate.csv") if r["backend"] == "trajectory"]
    assert [r["mean_phonon"] for r in rows] != [r["mean_phonon"] for r in old]


def test_figure4(config_file, tmp_path):
    out = tmp_path / "f4"
    assert main(["figure4", "--config", str(config_file), "--out", str(out)]) == 0
    erg = read(out / "ergotropy.csv")
    ideal = {(float(r["p_up"]), int(r["cycle"])): float(r["ergotropy"]) for r in erg if r["source"] == "ideal"}
    sim = {(float(r["p_up"]), int(r["cycle"])): float(r["ergotropy"]) for r in erg if r["source"] != "ideal"}
    assert ideal[(0.5, 10)] == pytest.approx(2.92, abs=0.01)
    for p in (0.2, 0.3, 0.4, 0.5):
        assert sim[(p, 10)] < ideal[(p, 10)]
    eff = read(out / "efficiency.csv")
    iw = [float(r["ideal_info_work_eff"]) for r in eff]
    assert np.all(np.diff(iw) < 0) and iw[-1] == 0.0


def test_calibrate(config_file, tmp_path):
    out = tmp_path / "cal"
    assert main(["calibrate", "--config", str(config_file), "--out", str(out)]) == 0
    geom = read(out / "geometry.csv")[0]
    assert 0.495 <= float(geom["mc_mean_kick"]) <= 0.505
    m1 = np.array([[float(v) for k, v in r.items() if k != "result"] for r in read(out / "m1.csv")])
    assert m1.shape == (11, 11) and np.allclose(m1.sum(axis=0), 1.0)
    assert all(float(r["tvd"]) < 0.05 for r in read(out / "m2_verify.csv"))


def test_calibrate_identity_tables(tmp_path):
    path = tmp_path / "perfect.toml"
    path.write_text(
        "[detector]\neps_dark = 0.0\neps_bright = 0.0\nn_photon_pairs = 0\n"
        "[calibrate]\ntarget = 0.5\nshots = 1000\nm1_shots = 1000\nm2_samples = 1000\nverify_shots = 1000\n"
    )
    out = tmp_path / "o"
    assert main(["calibrate", "--config", str(path), "--out", str(out)]) == 0
    for name in ("m1.csv", "m2.csv"):
        mat = np.array([[float(v) for k, v in r.items() if k != "result"] for r in read(out / name)])
        assert np.array_equal(mat, np.eye(11))


def test_jarzynski(config_file, tmp_path):
    out = tmp_path / "jz"
    assert main(["jarzynski", "--config", str(config_file), "--out", str(out)]) == 0
    rows = read(out / "jarzynski.csv")
    for r in rows:
        assert r["agree"] == "true"
        if r["backend"] != "trajectory":
            assert float(r["lhs"]) == pytest.approx(2 * (1 - float(r["p_up"])), abs=1e-12)
    path = tmp_path / "sweep.toml"
    path.write_text(FAST.replace('shots = 20000', 'shots = 20000\nmode = "sweep"'))
    assert main(["jarzynski", "--config", str(path), "--out", str(tmp_path / "sw"), "--backend", "exact_channel"]) == 0
    for r in read(tmp_path / "sw" / "jarzynski.csv"):
        assert float(r["gamma"]) < float(r["ideal"])


# -- plots ---------------------------------------------------------------------------------------------


def test_emit_plots(simulate_dir, tmp_path):
    assert main(["emit-plots", str(simulate_dir), "--out", str(tmp_path / "a")]) == 0
    assert main(["emit-plots", str(simulate_dir), "--out", str(tmp_path / "b")]) == 0
    svg = (tmp_path / "a" / "fig3_mean_phonon.svg").read_bytes()
    assert svg == (tmp_path / "b" / "fig3_mean_phonon.svg").read_bytes()
    text = svg.decode()
    # one legend entry per bath in each panel
    assert text.count("p = 0.3") >= 3


def test_emit_plots_empty_dir(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["emit-plots", str(empty)]) == 2
    assert list(empty.iterdir()) == []


def test_ideal_ergotropy_reference():
    assert binomial_ergotropy(10, 0.5) == pytest.approx(2.916, abs=1e-3)
