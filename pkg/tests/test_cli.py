import csv
import os

import numpy as np
import pytest

from mfldp import ConfigError, parse_config
from mfldp.cli import main, run_experiment

BENCH = """\
# quadratic benchmark
[model]
d = 1
x = [1.0]
V = [(0.5, [2])]
H = [1.0]

[grid]
T = 1.0
n = 64

[experiment]
kind = {kind}
N = {N}

[run]
seed = 12345
"""


def doc(kind="convergence", N="[2, 4, 8, 16, 32]", extra=""):
    return BENCH.format(kind=kind, N=N) + extra


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_parse_benchmark():
    cfg = parse_config(doc())
    assert cfg.dimension == 1
    assert cfg.values["model"]["V"] == [(0.5, [2])]
    assert cfg.values["model"]["H"] == [1.0]
    assert cfg.experiment["N"] == [2, 4, 8, 16, 32]
    assert cfg.kind == "convergence"
    assert cfg.seed == 12345


def test_missing_grid_n_is_named():
    text = doc().replace("n = 64\n", "")
    with pytest.raises(ConfigError, match=r"'n'.*\[grid\]"):
        parse_config(text)


@pytest.mark.parametrize(
    "bad, line, pattern",
    [
        ("T = 1.0", "Tmax = 1.0", "unknown key 'Tmax'"),
        ("T = 1.0", "T = 1.0.0", "malformed value"),
        ("n = 64", "n = 6.5", "integer"),
        ("[grid]", "[grids]", "unknown section"),
    ],
)
def test_errors_carry_line_numbers(bad, line, pattern):
    text = doc().replace(bad, line)
    lineno = text.splitlines().index(line) + 1
    with pytest.raises(ConfigError, match=pattern) as err:
        parse_config(text)
    assert err.value.line == lineno
    assert str(err.value).startswith(f"line {lineno}:")


def test_cross_field_checks():
    with pytest.raises(ConfigError, match="d = 2"):
        parse_config(doc().replace("d = 1", "d = 2"))
    with pytest.raises(ConfigError, match="single N"):
        parse_config(doc(kind="slope"))
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(doc() + "[grid]\nT = 2.0\n")


def test_manifest_round_trips_and_lists_defaults():
    cfg = parse_config(doc(kind="slope", N="[8]"))
    text = cfg.to_text()
    for key in ("sigma", "delta", "R", "M", "check_radius", "samples", "max_iterations",
                "gradient_tolerance", "symmetric", "out"):
        assert any(line.startswith(f"{key} = ") and line.endswith("# default") for line in text.splitlines())
    again = parse_config(text)
    assert again.values == cfg.values


def test_convergence_experiment(tmp_path):
    files = run_experiment(parse_config(doc()), str(tmp_path))
    assert sorted(os.path.basename(f) for f in files) == ["convergence.csv", "manifest.txt"]
    with open(tmp_path / "convergence.csv") as fh:
        assert fh.readline().strip() == "N,J_N_closed,J_N_variational,J_infinity,abs_gap,gap_times_N"
    rows = read_rows(tmp_path / "convergence.csv")
    assert [int(r["N"]) for r in rows] == [2, 4, 8, 16, 32]
    scaled = [float(r["gap_times_N"]) for r in rows]
    assert max(scaled) / min(scaled) < 2.0
    for r in rows:
        assert float(r["J_N_variational"]) <= float(r["J_N_closed"])


def test_flow_at_equilibrium(tmp_path):
    cfg = parse_config(doc(kind="flow").replace("x = [1.0]", "x = [0.0]"))
    run_experiment(cfg, str(tmp_path))
    rows = read_rows(tmp_path / "flow.csv")
    assert len(rows) == 65
    assert list(rows[0]) == ["t", "comp_0"]
    assert all(float(r["comp_0"]) == 0.0 for r in rows)


def test_general_model_flow(tmp_path):
    text = """\
[model]
x = [0.0]
V = [(0.0, [2])]
W = [(0.5, [2])]
l = [[0.0, 1.0]]

[grid]
T = 1.0
n = 16
"""
    run_experiment(parse_config(text).with_overrides(kind="flow"), str(tmp_path))
    rows = read_rows(tmp_path / "flow.csv")
    np.testing.assert_allclose([float(r["comp_0"]) for r in rows], [-float(r["t"]) for r in rows], atol=1e-14)
    on_flow = text.replace("l = [[0.0, 1.0]]", "l = [[0.0, 1.0]]\nf = [[0.0, -1.0]]")
    run_experiment(parse_config(on_flow).with_overrides(kind="rate"), str(tmp_path))
    assert float(read_rows(tmp_path / "rate.csv")[0]["J_infinity"]) < 1e-10
    run_experiment(parse_config(text).with_overrides(kind="rate"), str(tmp_path))
    assert float(read_rows(tmp_path / "rate.csv")[0]["J_infinity"]) > 0.1


def test_csv_headers(tmp_path):
    sim = "sigma = [0.5, 0.4]\nR = 200\nM = 64\n"
    cfg = parse_config(doc(kind="slope", N="[4]", extra="").replace("[run]", sim.replace("\n", "\n") + "[run]"))
    run_experiment(cfg, str(tmp_path / "s"))
    with open(tmp_path / "s" / "slope.csv") as fh:
        assert fh.readline().strip() == "sigma,p_hat,ci_low,ci_high,half_sigma2_log_p"
    cfg = parse_config(doc(kind="coupling", N="[2, 4]").replace("[run]", sim + "[run]"))
    run_experiment(cfg, str(tmp_path / "c"))
    rows = read_rows(tmp_path / "c" / "coupling.csv")
    assert list(rows[0]) == ["sigma", "N", "p_hat", "ci_low", "ci_high"]
    assert [(r["sigma"], r["N"]) for r in rows] == [
        ("0.5", "2"), ("0.40000000000000002", "2"), ("0.5", "4"), ("0.40000000000000002", "4")]


def test_runs_are_byte_identical(tmp_path):
    text = doc(kind="slope", N="[4]").replace("[run]", "sigma = [0.5, 0.4]\nR = 300\nM = 64\n[run]")
    for sub in ("a", "b"):
        run_experiment(parse_config(text), str(tmp_path / sub))
    for name in ("slope.csv", "slope_oracle.csv", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_main_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text(doc(kind="flow"))
    assert main(["flow", "--config", str(good), "--out", str(tmp_path / "o"), "--seed", "7"]) == 0
    manifest = (tmp_path / "o" / "manifest.txt").read_text()
    assert "seed = 7" in manifest

    bad = tmp_path / "bad.cfg"
    bad.write_text(doc().replace("T = 1.0", "T = oops"))
    assert main(["flow", "--config", str(bad)]) == 1
    assert "line" in capsys.readouterr().err

    assert main(["flow", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["rate", "--config", str(good)]) == 1  # kind clash with the document

    blow = tmp_path / "blow.cfg"
    blow.write_text(doc(kind="flow").replace("V = [(0.5, [2])]", "V = [(-0.25, [4])]").replace("n = 64", "n = 256")
                    .replace("T = 1.0", "T = 2.0"))
    assert main(["flow", "--config", str(blow), "--out", str(tmp_path / "x")]) == 2
    assert "kind=flow" in capsys.readouterr().err
