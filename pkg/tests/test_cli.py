import copy
import csv
import json
import math

import numpy as np
import pytest

from georabi import cli

LAMBDA_MIN = {
    "model": {"kind": "lambda"},
    "path": {"kind": "circle", "radius": 1.0, "omega": 0.02},
}


def read_csv(path):
    lines = [l for l in open(path) if not l.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def column(path, name):
    head, rows = read_csv(path)
    i = head.index(name)
    return np.array([float(r[i]) for r in rows])


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_minimal_config_round_trips():
    cfg = cli.parse_config(LAMBDA_MIN)
    again = cli.parse_config(cfg.canonical())
    assert again.dumps() == cfg.dumps() and again.digest() == cfg.digest()


def test_misspelled_key_is_named():
    doc = copy.deepcopy(cli.PRESETS["fig2"])
    doc["model"]["gama_left"] = doc["model"].pop("gamma_l")
    with pytest.raises(cli.ConfigError, match="model.gama_left"):
        cli.parse_config(doc)


@pytest.mark.parametrize("bad,where", [
    ({"drive": {"F": float("nan")}}, "drive.F"),
    ({"path": {"kind": "circle", "omega": 0.02}}, "path.radius"),
    ({"run": {"mode": "fast"}}, "run.mode"),
    ({"extra": 1}, "extra"),
])
def test_config_errors_carry_field_path(bad, where):
    doc = cli._merge(LAMBDA_MIN, bad)
    with pytest.raises(cli.ConfigError, match=where.replace(".", r"\.")):
        cli.parse_config(doc)


def test_fig2_preset_expands_to_reference_values():
    exp = cli.build(cli.parse_config(cli.PRESETS["fig2"]))
    pot = exp.potential
    assert pot.a == 44.0 and pot.gamma_l == 1.0
    assert pot.gamma_r == pytest.approx(22 / pot.a) and pot.beta == pytest.approx(7.8 / pot.a)
    eu = pot.gamma_r**2 - pot.beta**2
    assert exp.path.cos_amp[1] == pytest.approx(0.037 * eu)
    assert exp.path.sin_amp[0] == pytest.approx(0.024 * eu)


def test_spectrum_command_writes_headed_csv(tmp_path, capsys):
    out = str(tmp_path / "run")
    assert cli.main(["spectrum", "--preset", "fig2", "--out", out]) == 0
    text = open(out + "_spectrum.csv").read()
    assert text.startswith("# georabi") and "hbar = 1, 2m = 1" in text
    labels = [r[3] for r in read_csv(out + "_spectrum.csv")[1]]
    assert labels[:2] == ["localized-left", "localized-right"]


def test_outputs_are_byte_identical(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for prefix in (a, b):
        assert cli.main(["evolve", "--preset", "lambda-circle", "--mode", "geometric", "--out", prefix]) == 0
    for name in ("kappa_timeseries", "populations_geometric", "gamma_per_cycle"):
        assert open(f"{a}_{name}.csv", "rb").read() == open(f"{b}_{name}.csv", "rb").read()


def test_stamp_adds_only_a_header_line(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    cli.main(["gamma", "--preset", "lambda-circle", "--out", a])
    cli.main(["gamma", "--preset", "lambda-circle", "--out", b, "--stamp"])
    plain, stamped = open(a + "_gamma.csv").read(), open(b + "_gamma.csv").read()
    assert "generated:" in stamped and "generated:" not in plain
    assert [l for l in stamped.splitlines() if not l.startswith("# generated")] == plain.splitlines()


def test_evolve_all_modes_on_lambda_circle(tmp_path):
    out = str(tmp_path / "lc")
    assert cli.main(["evolve", "--preset", "lambda-circle", "--out", out]) == 0
    expected = -math.pi * 0.01
    g = column(out + "_gamma_per_cycle.csv", "gamma_per_cycle")[0]
    assert g == pytest.approx(expected, rel=1e-6)
    for name in ("populations_full", "populations_rwa", "populations_geometric"):
        a2 = column(f"{out}_{name}.csv", "a2_re")[-1] + 1j * column(f"{out}_{name}.csv", "a2_im")[-1]
        assert abs(abs(a2) - abs(math.sin(expected))) < 0.02


def test_geometric_cycles_follow_composition(tmp_path):
    out = str(tmp_path / "n")
    doc = cli._merge(cli.PRESETS["lambda-circle"], {"model": {"field": 0.05}})
    cfg = write_config(tmp_path, doc)
    assert cli.main(["evolve", "--config", cfg, "--mode", "geometric", "--cycles", "5", "--out", out,
                     "--force"]) == 0
    g = column(out + "_gamma_per_cycle.csv", "gamma_per_cycle")[0]
    p2 = column(out + "_populations_geometric.csv", "P2")[-1]
    p0 = column(out + "_populations_geometric.csv", "P0")[-1]
    assert p2 == pytest.approx(math.sin(5 * g) ** 2, abs=1e-6)
    assert p0 == pytest.approx(math.cos(5 * g) ** 2, abs=1e-6)


def test_static_path_gives_constant_populations(tmp_path):
    doc = {"model": {"kind": "lambda"}, "path": {"kind": "static", "point": [1.0, 0.3], "duration": 300.0}}
    out = str(tmp_path / "s")
    assert cli.main(["evolve", "--config", write_config(tmp_path, doc), "--out", out]) == 0
    for name, cols in (("populations_full", ("P0", "P1", "P2")), ("populations_rwa", ("P0", "P2")),
                       ("populations_geometric", ("P0", "P2"))):
        for c in cols:
            v = column(f"{out}_{name}.csv", c)
            assert np.ptp(v) <= 1e-4, (name, c)


def test_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, {"model": {"kind": "lambda", "feild": 1}, "path": LAMBDA_MIN["path"]})
    assert cli.main(["spectrum", "--config", bad]) == 2
    assert "model.feild" in capsys.readouterr().err
    violated = write_config(tmp_path, cli._merge(LAMBDA_MIN, {"model": {"field": 0.5}}), "v.json")
    out = str(tmp_path / "v")
    assert cli.main(["check", "--config", violated, "--out", out]) == 3
    assert cli.main(["evolve", "--config", violated, "--mode", "geometric", "--out", out]) == 3
    assert cli.main(["evolve", "--config", violated, "--mode", "geometric", "--out", out, "--force"]) == 0
    origin = write_config(tmp_path, {"model": {"kind": "lambda"},
                                     "path": {"kind": "static", "point": [0.0, 0.0], "duration": 1.0}}, "o.json")
    assert cli.main(["gamma", "--config", origin, "--out", out]) == 4
    assert cli.main(["spectrum", "--preset", "nope"]) == 2


def test_help_documents_columns(capsys):
    with pytest.raises(SystemExit):
        cli.main(["gamma", "--help"])
    assert "gamma_per_cycle" in capsys.readouterr().out


def test_lambda_radius_sweep_is_ordered_and_thread_safe(tmp_path, monkeypatch):
    doc = cli.PRESETS["lambda-circle"]
    serial = cli.sweep(doc, "radius=0.5,1,1.5,2,3", threads=1)
    monkeypatch.setenv("GEORABI_THREADS", "4")
    parallel = cli.sweep(doc, "radius=0.5,1,1.5,2,3")
    assert serial.rows == parallel.rows
    radii = np.array(serial.column("radius"))
    g = np.array(serial.column("gamma_per_cycle"))
    assert np.allclose(g * radii, -math.pi * 0.01, rtol=1e-6)


def test_sweep_errors_stay_in_row():
    t = cli.sweep(cli.PRESETS["lambda-circle"], "radius=1,-1", threads=1)
    assert t.column("flag")[1] == "error" and "radius" in t.column("error")[1]
    assert math.isfinite(t.column("gamma_per_cycle")[0])


@pytest.mark.slow
def test_fig2_scale_sweep(tmp_path):
    out = str(tmp_path / "sw")
    assert cli.main(["gamma", "--preset", "fig2", "--sweep", "scale=0,0.25,0.5,0.75,1", "--out", out]) == 0
    g = column(out + "_gamma_sweep.csv", "gamma_per_cycle")
    assert g[0] == 0.0
    assert np.all(np.diff(g) > 0)


def test_sweep_grid_parsing():
    grid = cli._sweep_grid("lambda_r=0.01,0.02:lambda_c=0.03")
    assert grid == [{"lambda_r": 0.01, "lambda_c": 0.03}, {"lambda_r": 0.02, "lambda_c": 0.03}]
    with pytest.raises(cli.ConfigError):
        cli._sweep_grid("bogus=1")
