"""Config-driven experiment runner.

A config is a JSON document with sections ``model``, ``path``, ``drive``,
``run`` and ``output``. Presets supply complete documents; ``--config``
entries override preset values key by key.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dy
from .deltawell import DeltaWellPotential, as_model, bound_spectrum, classify, energy_unit, depth_ellipse
from .lambda_system import LambdaParams, excited_amplitude, gamma_analytic, to_generic
from .paths import ChainPath, EllipsePath, SampledPath, StaticPath
from .spectrum import MatrixModel, ParamVector, Roles, SpectrumError

EXIT_OK, EXIT_CONFIG, EXIT_VALIDITY, EXIT_NUMERIC = 0, 2, 3, 4

REQUIRED = object()


class ConfigError(ValueError):
    pass


class ValidityError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schema

def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{where}: value must be finite")
    return v


def _pos(v, where):
    v = _num(v, where)
    if v <= 0:
        raise ConfigError(f"{where}: must be positive")
    return v


def _int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if v < 1:
        raise ConfigError(f"{where}: must be ≥ 1")
    return v


def _vec(v, where):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list of numbers")
    return [_num(x, f"{where}[{i}]") for i, x in enumerate(v)]


def _mat(v, where):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a list of rows")
    rows = [_vec(r, f"{where}[{i}]") for i, r in enumerate(v)]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{where}: rows differ in length")
    return rows


def _str(v, where):
    if not isinstance(v, str):
        raise ConfigError(f"{where}: expected a string")
    return v


def _choice(*options):
    def check(v, where):
        if v not in options:
            raise ConfigError(f"{where}: must be one of {', '.join(options)}, got {v!r}")
        return v
    return check


def _opt(check):
    def inner(v, where):
        return None if v is None else check(v, where)
    return inner


def _tables(v, where):
    if not isinstance(v, dict) or "const" not in v:
        raise ConfigError(f"{where}: expected an object of matrices with at least a 'const' entry")
    return {k: _mat(m, f"{where}.{k}") for k, m in v.items()}


def _names(v, where):
    if not isinstance(v, list) or not v or not all(isinstance(x, str) for x in v):
        raise ConfigError(f"{where}: expected a list of parameter names")
    return list(v)


def _roles(v, where):
    return _section(v, where, {"state0": (_int0, REQUIRED), "auxiliary": (_intlist, REQUIRED),
                               "state2": (_int0, REQUIRED)})


def _int0(v, where):
    if isinstance(v, bool) or not isinstance(v, int) or v < 0:
        raise ConfigError(f"{where}: expected a non-negative integer")
    return v


def _intlist(v, where):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list of indices")
    return [_int0(x, f"{where}[{i}]") for i, x in enumerate(v)]


MODEL_FIELDS = {
    "deltawell": {
        "a": (_pos, REQUIRED), "gamma_l": (_pos, REQUIRED), "gamma_r": (_pos, REQUIRED),
        "beta": (_num, REQUIRED), "truncation": (_pos, 0.99), "n_grid": (_int, 2000),
    },
    "lambda": {
        "e_ground": (_num, 0.0), "e_excited": (_num, 20.0), "dipole": (_num, 1.0), "field": (_num, 0.01),
    },
    "matrix": {
        "params": (_names, REQUIRED), "h0": (_tables, REQUIRED), "hprime": (_tables, REQUIRED),
        "roles": (_roles, REQUIRED),
    },
}

PATH_FIELDS = {
    "fig2": {"lambda_r": (_num, 0.037), "lambda_c": (_num, 0.024), "omega": (_pos, 2e-3)},
    "ellipse": {"center": (_vec, REQUIRED), "cos_amp": (_vec, REQUIRED), "sin_amp": (_vec, REQUIRED),
                "omega": (_pos, REQUIRED), "phase": (_num, 0.0)},
    "circle": {"center": (_vec, [0.0, 0.0]), "radius": (_pos, REQUIRED), "omega": (_pos, REQUIRED),
               "phase": (_num, 0.0)},
    "sector": {"r_inner": (_pos, REQUIRED), "r_outer": (_pos, REQUIRED), "phi_start": (_num, REQUIRED),
               "phi_end": (_num, REQUIRED), "speed": (_pos, 1.0)},
    "sampled": {"times": (_vec, REQUIRED), "points": (_mat, REQUIRED)},
    "static": {"point": (_vec, REQUIRED), "duration": (_pos, REQUIRED)},
}

DRIVE_FIELDS = {
    "F": (_num, 1.0),
    "omega_rule": (_choice("tracked", "fixed"), "tracked"),
    "omega": (_opt(_pos), None),
    "stark_rule": (_choice(*dy.STARK_RULES), "sideband"),
}

RUN_FIELDS = {
    "mode": (_choice("full", "rwa", "geometric", "all"), "all"),
    "cycles": (_int, 1),
    "steps_per_period": (_int, 48),
    "frames_per_cycle": (_int, 200),
    "segments": (_int, 400),
    "probes": (_int, 64),
    "couplings": (_choice("star", "all"), "star"),
    "initial": (_choice("state0", "state2"), "state0"),
}

OUTPUT_FIELDS = {"prefix": (_str, "georabi"), "stride": (_int, 1)}


def _section(doc, where, fields):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"{where}.{unknown[0]}: unknown key {unknown[0]!r}")
    out = {}
    for key, (check, default) in fields.items():
        if key in doc:
            out[key] = check(doc[key], f"{where}.{key}")
        elif default is REQUIRED:
            raise ConfigError(f"{where}.{key}: missing required field")
        else:
            out[key] = copy.deepcopy(default)
    return out


def _kinded(doc, where, table):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    kind = doc.get("kind")
    if kind not in table:
        raise ConfigError(f"{where}.kind: must be one of {', '.join(table)}, got {kind!r}")
    body = {k: v for k, v in doc.items() if k != "kind"}
    return {"kind": kind, **_section(body, where, table[kind])}


@dataclass(frozen=True)
class ExperimentConfig:
    model: dict
    path: dict
    drive: dict
    run: dict
    output: dict

    def canonical(self) -> dict:
        return {"model": self.model, "path": self.path, "drive": self.drive, "run": self.run,
                "output": self.output}

    def dumps(self) -> str:
        return json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config tree; errors name the offending field as section.key."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected an object at top level")
    sections = ("model", "path", "drive", "run", "output")
    unknown = sorted(set(doc) - set(sections))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown top-level key {unknown[0]!r}")
    if "model" not in doc:
        raise ConfigError("model: missing required section")
    model = _kinded(doc["model"], "model", MODEL_FIELDS)
    if "path" not in doc:
        raise ConfigError("path: missing required section")
    path = _kinded(doc["path"], "path", PATH_FIELDS)
    drive = _section(doc.get("drive", {}), "drive", DRIVE_FIELDS)
    run = _section(doc.get("run", {}), "run", RUN_FIELDS)
    output = _section(doc.get("output", {}), "output", OUTPUT_FIELDS)
    _cross_check(model, path, drive)
    return ExperimentConfig(model, path, drive, run, output)


def _cross_check(model, path, drive):
    if drive["omega_rule"] == "fixed" and drive["omega"] is None:
        raise ConfigError("drive.omega: required when omega_rule is 'fixed'")
    if path["kind"] == "fig2" and model["kind"] != "deltawell":
        raise ConfigError("path.kind: 'fig2' needs a deltawell model")
    if model["kind"] == "deltawell" and model["gamma_r"] > model["gamma_l"]:
        raise ConfigError("model.gamma_r: must not exceed gamma_l")
    if path["kind"] == "sector" and path["r_outer"] <= path["r_inner"]:
        raise ConfigError("path.r_outer: must exceed r_inner")
    if path["kind"] == "sampled" and len(path["times"]) != len(path["points"]):
        raise ConfigError("path.points: needs one point per time")
    if model["kind"] == "matrix":
        n = len(model["h0"]["const"])
        for sec in ("h0", "hprime"):
            for k, m in model[sec].items():
                if k != "const" and k not in model["params"]:
                    raise ConfigError(f"model.{sec}.{k}: not a declared parameter")
                if len(m) != n or len(m[0]) != n:
                    raise ConfigError(f"model.{sec}.{k}: must be {n}×{n}")


PRESETS = {
    "fig2": {
        "model": {"kind": "deltawell", "a": 44.0, "gamma_l": 1.0, "gamma_r": 22.0 / 44.0, "beta": 7.8 / 44.0},
        "path": {"kind": "fig2", "lambda_r": 0.037, "lambda_c": 0.024, "omega": 2e-3},
        "drive": {"F": 0.005, "omega_rule": "tracked", "stark_rule": "sideband"},
        "run": {"mode": "all", "cycles": 1},
        "output": {"prefix": "fig2"},
    },
    "lambda-circle": {
        "model": {"kind": "lambda", "e_ground": 0.0, "e_excited": 20.0, "dipole": 1.0, "field": 0.01},
        "path": {"kind": "circle", "center": [0.0, 0.0], "radius": 1.0, "omega": 0.02},
        "drive": {"F": 1.0, "omega_rule": "tracked", "stark_rule": "sideband"},
        "run": {"mode": "all", "cycles": 1},
        "output": {"prefix": "lambda_circle"},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and "kind" not in v:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# ---------------------------------------------------------------------------
# building objects


@dataclass
class Experiment:
    config: ExperimentConfig
    model: object
    path: object  # full run, all cycles
    cycle: object  # one cycle
    drive: dy.DriveSchedule
    potential: DeltaWellPotential | None = None
    lambda_params: LambdaParams | None = None


def _affine(tables, names):
    const = np.array(tables["const"])
    terms = [(names.index(k), np.array(m)) for k, m in tables.items() if k != "const"]

    def at(lam: ParamVector):
        out = const.copy()
        for i, m in terms:
            out = out + lam.values[i] * m
        return out

    return at


def _one_cycle(cfg: ExperimentConfig, names, pot=None):
    p = cfg.path
    kind = p["kind"]
    if kind == "fig2":
        return depth_ellipse(pot, p["lambda_r"], p["lambda_c"], p["omega"])
    if kind == "ellipse":
        return EllipsePath(names, p["center"], p["cos_amp"], p["sin_amp"], p["omega"], phase=p["phase"])
    if kind == "circle":
        return EllipsePath.circle(names, p["center"], p["radius"], p["omega"], phase=p["phase"])
    if kind == "sector":
        return ChainPath.annular_sector(names, p["r_inner"], p["r_outer"], p["phi_start"], p["phi_end"], p["speed"])
    if kind == "sampled":
        return SampledPath(names, p["times"], p["points"])
    return StaticPath(names, p["point"], p["duration"])


def _repeat(path, cycles: int):
    if cycles == 1:
        return path
    if isinstance(path, EllipsePath):
        return path.with_cycles(cycles)
    if isinstance(path, StaticPath):
        return StaticPath(path.names, path.point_value, path.duration * cycles)
    if not path.cyclic:
        raise ConfigError("run.cycles: only closed paths can be repeated")
    return ChainPath([path] * cycles)


def build(cfg: ExperimentConfig) -> Experiment:
    m = cfg.model
    d = cfg.drive
    drive = dy.DriveSchedule(amplitude=d["F"], omega_rule=d["omega_rule"], omega=d["omega"],
                             stark_rule=d["stark_rule"])
    pot = lp = None
    if m["kind"] == "deltawell":
        pot = DeltaWellPotential(m["a"], m["gamma_l"], m["gamma_r"], m["beta"])
        cycle = _one_cycle(cfg, ("eps_c", "eps_r"), pot)
        model, cycle = as_model(pot, cycle, F=1.0, threshold=m["truncation"], n_grid=m["n_grid"])
    elif m["kind"] == "lambda":
        cycle = _one_cycle(cfg, ("epsilon", "delta"))
        start = cycle.position(0.0)
        lp = LambdaParams(e_ground=m["e_ground"], e_excited=m["e_excited"], epsilon=float(start[0]),
                          delta=float(start[1]), dipole=m["dipole"], field=m["field"])
        model, cycle, _ = to_generic(lp, cycle, stark_rule=d["stark_rule"])
    else:
        names = m["params"]
        r = m["roles"]
        model = MatrixModel(names, _affine(m["h0"], names), _affine(m["hprime"], names),
                            Roles(r["state0"], tuple(r["auxiliary"]), r["state2"]))
        cycle = _one_cycle(cfg, tuple(names))
    if tuple(cycle.names) != tuple(model.param_names):
        raise ConfigError(f"path: expected parameters {model.param_names}")
    return Experiment(cfg, model, _repeat(cycle, cfg.run["cycles"]), cycle, drive, pot, lp)


# ---------------------------------------------------------------------------
# tables


@dataclass
class ResultTable:
    name: str
    columns: list
    rows: list
    notes: tuple = ()

    def __post_init__(self):
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"{self.name}: row length {len(r)} ≠ {len(self.columns)} columns")

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12e")
    return str(v)


def _units(exp: Experiment) -> list[str]:
    lines = ["units: hbar = 1, 2m = 1, times in 1/energy"]
    if exp.potential is not None:
        lines.append(f"lengths in zeta = 1/gamma_l = {exp.potential.zeta:.12g}; energies in global units "
                     f"(E_u = gamma_r^2 - beta^2 = {energy_unit(exp.potential):.12g})")
    elif exp.lambda_params is not None:
        lines.append("energies in the units of epsilon, delta; dE = dipole * field")
    return lines


def render(table: ResultTable, exp: Experiment, command: str, stamp: bool = False) -> str:
    buf = io.StringIO()
    head = [f"georabi {__version__} {command} {table.name}", f"config_sha256: {exp.config.digest()}",
            *_units(exp), *table.notes]
    if stamp:
        head.append("generated: " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    for line in head:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_tables(tables, exp: Experiment, command: str, stamp: bool = False, prefix: str | None = None):
    prefix = prefix or exp.config.output["prefix"]
    written = []
    for t in tables:
        target = Path(f"{prefix}_{t.name}.csv")
        if target.parent != Path(""):
            target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(render(t, exp, command, stamp))
        written.append(str(target))
    return written


# ---------------------------------------------------------------------------
# runs


def spectrum_table(exp: Experiment) -> ResultTable:
    if exp.potential is not None:
        states = bound_spectrum(exp.potential)
        eu = energy_unit(exp.potential)
        rows = []
        for s in states:
            c = classify(s, exp.potential)
            rows.append([s.index, s.energy, s.energy / eu, c.label, s.interior_character,
                         c.weights["left"], c.weights["right"], c.weights["central"]])
        return ResultTable("spectrum", ["index", "energy", "energy_over_Eu", "label", "interior",
                                        "weight_left", "weight_right", "weight_central"], rows)
    lam = exp.path.point(0.0)
    frame = exp.model.eigenframe(lam)
    r = exp.model.roles
    role = {r.state0: "state0", r.state2: "state2", **{a: "auxiliary" for a in r.auxiliary}}
    rows = [[i, float(e), role.get(i, "spectator")] for i, e in enumerate(frame.energies)]
    return ResultTable("spectrum", ["index", "energy", "role"], rows, (f"evaluated at {lam.as_dict()}",))


def check_table(exp: Experiment) -> tuple[ResultTable, dy.AdiabaticityReport]:
    rep = dy.adiabaticity_report(exp.model, exp.cycle, exp.drive, probes=exp.config.run["probes"])
    rows = []
    for k, t in enumerate(rep.times):
        rows.append([t, float(rep.nonadiabatic[k].max(initial=0.0)), float(rep.offresonance[k].max(initial=0.0)),
                     dy.flag_for(max(rep.nonadiabatic[k].max(initial=0.0), rep.offresonance[k].max(initial=0.0)))])
    notes = (f"nonadiabatic_max = {rep.nonadiabatic_max:.6e}", f"offresonance_max = {rep.offresonance_max:.6e}",
             f"flag = {rep.flag}")
    if getattr(exp.model, "validity", None):
        notes += tuple(f"{k} = {v}" for k, v in exp.model.validity.items())
    return ResultTable("adiabaticity", ["t", "nonadiabatic", "offresonance", "flag"], rows, notes), rep


def _kappa_table(exp: Experiment, sampler: dy.PathSampler) -> ResultTable:
    names = list(exp.model.param_names)
    scale = None
    if exp.potential is not None and exp.drive.amplitude != 0:
        omega = exp.config.path.get("omega")
        if omega:
            scale = exp.drive.amplitude * exp.potential.zeta * omega / energy_unit(exp.potential)
    cols = ["t", *names, "kappa_re", "kappa_im", "rate", "omega", "stark0", "stark2"]
    if scale:
        cols.append("kappa_scaled")
    rows = []
    for k, t in enumerate(sampler.times):
        lam = exp.path.position(t)
        kap = sampler.kappa[k]
        row = [t, *lam, kap.real, kap.imag, (1j * kap).real, sampler.omega[k], *sampler.stark[k]]
        if scale:
            row.append(kap.imag / scale)
        rows.append(row)
    notes = ("rate = Re(i kappa), the real rotation rate",)
    if scale:
        notes += ("kappa_scaled = Im(kappa) / (F zeta Omega / E_u)",)
    return ResultTable("kappa_timeseries", cols, rows, notes)


def _initial(exp: Experiment):
    r = exp.model.roles
    full = np.zeros(exp.model.dimension, dtype=complex)
    idx = r.state0 if exp.config.run["initial"] == "state0" else r.state2
    full[idx] = 1.0
    two = np.array([1.0, 0.0], dtype=complex) if idx == r.state0 else np.array([0.0, 1.0], dtype=complex)
    return full, two


def _pop_table(name, rec: dy.EvolutionRecord, stride: int, roles=None) -> ResultTable:
    if rec.rotating is not None:
        two = rec.rotating
        n = rec.populations.shape[1]
        cols = ["t", *[f"P{j}" for j in range(n)], "a0_re", "a0_im", "a2_re", "a2_im", "theta", "gamma"]
        rows = []
        for k in range(0, len(rec.times), stride):
            rows.append([rec.times[k], *rec.populations[k], two[k, 0].real, two[k, 0].imag, two[k, 1].real,
                         two[k, 1].imag, rec.theta[k], rec.gamma_accumulated[k]])
        notes = (f"P_j lab-frame eigenstate populations; roles state0={roles.state0} state2={roles.state2}",
                 "a0, a2 rotating-frame amplitudes (a2 = exp(i theta) c2)")
        return ResultTable(name, cols, rows, notes)
    cols = ["t", "P0", "P2", "a0_re", "a0_im", "a2_re", "a2_im", "gamma"]
    rows = []
    for k in range(0, len(rec.times), stride):
        a = rec.amplitudes[k]
        rows.append([rec.times[k], *rec.populations[k], a[0].real, a[0].imag, a[1].real, a[1].imag,
                     rec.gamma_accumulated[k]])
    return ResultTable(name, cols, rows, ("rotating-frame amplitudes of states 0 and 2",))


def _gamma_cycle(exp: Experiment):
    """(Γ per cycle or NaN, residual, note)."""
    if isinstance(exp.cycle, StaticPath):
        return 0.0, 0.0, "static path"
    try:
        g, res = dy.gamma_line(exp.model, exp.cycle, exp.drive.amplitude, realness_tol=1e-6, return_residual=True)
        return g, res, ""
    except dy.RealnessError as err:
        return math.nan, math.nan, str(err)


def evolve_tables(exp: Experiment, mode: str) -> list[ResultTable]:
    run = exp.config.run
    stride = exp.config.output["stride"]
    ctl = dy.StepControl(steps_per_period=run["steps_per_period"], frames_per_cycle=run["frames_per_cycle"])
    psi_full, psi_two = _initial(exp)
    sampler = dy.PathSampler.build(exp.model, exp.path, exp.drive, run["frames_per_cycle"])
    tables = [_kappa_table(exp, sampler)]
    if mode in ("full", "all"):
        rec = dy.evolve_full(exp.model, exp.path, exp.drive, psi_full, ctl, sampler=sampler,
                             couplings=run["couplings"])
        tables.append(_pop_table("populations_full", rec, stride, exp.model.roles))
    if mode in ("rwa", "all"):
        rec = dy.evolve_rwa(exp.model, exp.path, exp.drive, psi_two, ctl, sampler=sampler)
        tables.append(_pop_table("populations_rwa", rec, stride))
    geo = None
    if mode in ("geometric", "all"):
        geo = dy.evolve_geometric(exp.model, exp.path, exp.drive.amplitude, psi_two,
                                  segments=run["segments"] * run["cycles"])
        tables.append(_pop_table("populations_geometric", geo, stride))
    g, res, note = _gamma_cycle(exp)
    n = run["cycles"]
    row = [n, g, res, n * g, math.sin(n * g) ** 2 if math.isfinite(g) else math.nan]
    cols = ["cycles", "gamma_per_cycle", "realness_residual", "gamma_total", "transfer_sin2"]
    if geo is not None:
        row.append(float(geo.populations[-1, 1]))
        cols.append("transfer_geometric")
    notes = (note,) if note else ()
    if not math.isfinite(g):
        notes += ("gamma undefined: realness marginal or violated; transfer_geometric from the ordered product",)
    tables.append(ResultTable("gamma_per_cycle", cols, [row], notes))
    return tables


def _sweep_grid(spec: str) -> list[dict]:
    """'scale=0.25,0.5' or 'lambda_r=0.01,0.02:lambda_c=0.01' (cartesian product over ':' groups)."""
    axes = []
    for group in spec.split(":"):
        if "=" not in group:
            raise ConfigError(f"--sweep: expected key=v1,v2,... in {group!r}")
        key, vals = group.split("=", 1)
        key = key.strip()
        if key not in ("scale", "lambda_r", "lambda_c", "radius", "field", "F"):
            raise ConfigError(f"--sweep: unknown sweep key {key!r}")
        try:
            values = [float(v) for v in vals.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"--sweep: bad number in {vals!r}") from exc
        if not values or not all(math.isfinite(v) for v in values):
            raise ConfigError(f"--sweep: values for {key} must be finite")
        axes.append((key, values))
    grid = [{}]
    for key, values in axes:
        grid = [{**g, key: v} for g in grid for v in values]
    return grid


def _apply_point(doc: dict, point: dict) -> dict:
    doc = copy.deepcopy(doc)
    path = doc["path"]
    for key, v in point.items():
        if key == "scale":
            if path["kind"] == "fig2":
                path["lambda_r"] = path.get("lambda_r", 0.037) * v
                path["lambda_c"] = path.get("lambda_c", 0.024) * v
            elif path["kind"] == "ellipse":
                path["cos_amp"] = [v * x for x in path["cos_amp"]]
                path["sin_amp"] = [v * x for x in path["sin_amp"]]
            elif path["kind"] == "circle":
                path["radius"] = path["radius"] * v
            else:
                raise ConfigError(f"--sweep scale: not supported for path kind {path['kind']!r}")
        elif key in ("lambda_r", "lambda_c", "radius"):
            path[key] = v
        elif key == "field":
            doc["model"]["field"] = v
        elif key == "F":
            doc.setdefault("drive", {})["F"] = v
    return doc


def _sweep_row(doc: dict, point: dict) -> list:
    try:
        cfg = parse_config(_apply_point(doc, point))
        exp = build(cfg)
        g, res, note = _gamma_cycle(exp)
        rep = dy.adiabaticity_report(exp.model, exp.cycle, exp.drive, probes=min(cfg.run["probes"], 32))
        return [g, res, rep.nonadiabatic_max, rep.offresonance_max, rep.flag, note]
    except (ConfigError, SpectrumError, dy.ConvergenceError, ValueError, ArithmeticError) as err:
        return [math.nan, math.nan, math.nan, math.nan, "error", f"{type(err).__name__}: {err}"]


def sweep(doc: dict, spec: str, threads: int | None = None) -> ResultTable:
    """Γ per cycle over a parameter grid; rows keep grid order, failures stay in-row."""
    grid = _sweep_grid(spec)
    keys = list(grid[0])
    threads = threads or _threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: _sweep_row(doc, p), grid))
    else:
        results = [_sweep_row(doc, p) for p in grid]
    rows = [[i, *[p[k] for k in keys], *res] for i, (p, res) in enumerate(zip(grid, results))]
    cols = ["index", *keys, "gamma_per_cycle", "realness_residual", "nonadiabatic_max", "offresonance_max",
            "flag", "error"]
    return ResultTable("gamma_sweep", cols, rows, (f"sweep: {spec}",))


def _threads() -> int:
    raw = os.environ.get("GEORABI_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GEORABI_THREADS must be an integer, got {raw!r}") from None
    return max(n, 1)


def lambda_tables(exp: Experiment, doc: dict, spec: str | None) -> list[ResultTable]:
    if exp.lambda_params is None:
        raise ConfigError("model.kind: the lambda command needs a lambda model")
    points = _sweep_grid(spec) if spec else [{}]
    rows = []
    keys = list(points[0])
    for i, p in enumerate(points):
        e = build(parse_config(_apply_point(doc, p))) if p else exp
        ga = gamma_analytic(e.lambda_params, e.path)
        gl = dy.gamma_line(e.model, e.path, e.drive.amplitude)
        psi = np.array([1.0, 0.0, 0.0], dtype=complex)
        rec = dy.evolve_full(e.model, e.path, e.drive, psi, dy.StepControl(
            steps_per_period=e.config.run["steps_per_period"], frames_per_cycle=e.config.run["frames_per_cycle"]))
        geo = dy.evolve_geometric(e.model, e.path, e.drive.amplitude, np.array([1.0, 0.0], dtype=complex),
                                  segments=e.config.run["segments"] * e.config.run["cycles"])
        rho = float(np.hypot(*e.path.position(0.0)))
        rows.append([i, *[p[k] for k in keys], e.lambda_params.coupling, rho, ga, gl,
                     abs(excited_amplitude(ga)), float(abs(rec.rotating[-1, 1])), float(abs(geo.final[1])),
                     e.model.validity["gap_ok"], e.model.validity["offresonance_ok"]])
    cols = ["index", *keys, "dE", "rho_start", "gamma_analytic", "gamma_line", "abs_ae_analytic", "abs_ae_full",
            "abs_ae_geometric", "gap_ok", "offresonance_ok"]
    return [ResultTable("lambda", cols, rows, ("abs_ae = |amplitude in e| at the end of the run",))]


# ---------------------------------------------------------------------------
# entry point


def _load(args) -> dict:
    doc = {}
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"--preset: unknown preset {args.preset!r} (choose {', '.join(PRESETS)})")
        doc = copy.deepcopy(PRESETS[args.preset])
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except OSError as err:
            raise ConfigError(f"--config: cannot read {args.config}: {err}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"--config: invalid JSON at line {err.lineno}: {err.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError("config: expected an object at top level")
        doc = _merge(doc, user)
    if not doc:
        raise ConfigError("give --preset or --config")
    if args.cycles is not None:
        doc.setdefault("run", {})["cycles"] = args.cycles
    if getattr(args, "mode", None):
        doc.setdefault("run", {})["mode"] = args.mode
    return doc


COLUMN_HELP = {
    "spectrum": "spectrum.csv: index, energy, energy_over_Eu, label, interior, weight_left/right/central "
                "(delta well); index, energy, role otherwise.",
    "evolve": "kappa_timeseries.csv: t, path parameters, kappa_re, kappa_im, rate, omega, stark0, stark2 "
              "[, kappa_scaled]; populations_{full,rwa,geometric}.csv: t, populations, a0/a2 re/im, "
              "theta (full), gamma; gamma_per_cycle.csv: cycles, gamma_per_cycle, realness_residual, "
              "gamma_total, transfer_sin2, transfer_geometric.",
    "gamma": "gamma.csv or gamma_sweep.csv: swept keys, gamma_per_cycle, realness_residual, nonadiabatic_max, "
             "offresonance_max, flag, error.",
    "lambda": "lambda.csv: dE, rho_start, gamma_analytic, gamma_line, abs_ae_analytic, abs_ae_full, "
              "abs_ae_geometric, gap_ok, offresonance_ok.",
    "check": "adiabaticity.csv: t, nonadiabatic, offresonance, flag (worst over auxiliaries).",
}


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config; overrides preset values")
    common.add_argument("--preset", metavar="NAME", help=f"one of: {', '.join(PRESETS)}")
    common.add_argument("--out", metavar="PREFIX", help="output file prefix (default from config)")
    common.add_argument("--cycles", type=int, metavar="N", help="number of path cycles")
    common.add_argument("--force", action="store_true", help="run even if validity is violated")
    common.add_argument("--stamp", action="store_true", help="add a generation timestamp to headers")
    p = argparse.ArgumentParser(prog="georabi", description="Population transfer between undriven eigenstates by cyclic parameter motion.")
    p.add_argument("--version", action="version", version=f"georabi {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("spectrum", parents=[common], help="bound-state table", epilog=COLUMN_HELP["spectrum"])
    ev = sub.add_parser("evolve", parents=[common], help="time series", epilog=COLUMN_HELP["evolve"])
    ev.add_argument("--mode", choices=["full", "rwa", "geometric", "all"])
    ga = sub.add_parser("gamma", parents=[common], help="rotation angle per cycle", epilog=COLUMN_HELP["gamma"])
    ga.add_argument("--sweep", metavar="SPEC", help="grid such as scale=0.25,0.5,1 or lambda_r=..:lambda_c=..")
    la = sub.add_parser("lambda", parents=[common], help="Λ system: analytic vs simulated",
                        epilog=COLUMN_HELP["lambda"])
    la.add_argument("--sweep", metavar="SPEC", help="grid such as field=0.005,0.01,0.02 or radius=...")
    sub.add_parser("check", parents=[common], help="adiabaticity report", epilog=COLUMN_HELP["check"])
    return p


def run(args) -> int:
    doc = _load(args)
    cfg = parse_config(doc)
    exp = build(cfg)
    cmd = args.command
    tables: list[ResultTable] = []
    status = EXIT_OK
    if cmd == "spectrum":
        tables = [spectrum_table(exp)]
    elif cmd == "check":
        table, rep = check_table(exp)
        tables = [table]
        if rep.flag == "violated":
            status = EXIT_VALIDITY
    elif cmd == "gamma":
        if args.sweep:
            tables = [sweep(doc, args.sweep)]
        else:
            g, res, note = _gamma_cycle(exp)
            tables = [ResultTable("gamma", ["gamma_per_cycle", "realness_residual"], [[g, res]],
                                  (note,) if note else ())]
    else:
        _, rep = check_table(exp)
        if rep.flag == "violated" and not args.force:
            print(f"validity violated (worst ratio {rep.worst:.3g}); rerun with --force", file=sys.stderr)
            return EXIT_VALIDITY
        if cmd == "evolve":
            tables = evolve_tables(exp, cfg.run["mode"])
        else:
            tables = lambda_tables(exp, doc, args.sweep)
    for path in write_tables(tables, exp, cmd, args.stamp, args.out):
        print(path)
    return status


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpectrumError, dy.ConvergenceError, dy.RealnessError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
