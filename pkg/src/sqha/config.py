"""Run configuration: strict INI parsing with every error collected.

Sections and keys (all optional; defaults are echoed into every report)::

    [constants] hbar, mass, boltzmann, light_speed
    [grid]      x_min, x_max, n_cells, boundary
    [profile]   kind, sigma, q0, h, scale, omega, momentum, path
    [potential] kind (none | harmonic | table), omega, center, path
    [noise]     theta, kernel, form_factor, vessel_side
    [evolve]    dt, t_end, record_every, integrator, c_cfl, floor,
                reanchor_interval, positivity_policy, renormalize_each_step,
                max_retries, include_qp
    [ensemble]  members, base_seed, threads
    [scan]      thetas, window, form_factor, n_cells, spacing, members, synthetic
    [analysis]  resolution, system_length, macro_ratio, local_ratio, floor
    [gen_noise] samples, dt
    [output]    directory
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grid_state import PhysicalConstants, ProfileSpec, make_grid, read_profile_table

_FLOAT, _INT, _STR, _BOOL, _FLOATS, _OPT_FLOAT = "float", "int", "str", "bool", "floats", "optfloat"

SCHEMA = {
    "constants": {"hbar": (_FLOAT, 1.0), "mass": (_FLOAT, 1.0), "boltzmann": (_FLOAT, 1.0),
                  "light_speed": (_FLOAT, 137.035999)},
    "grid": {"x_min": (_FLOAT, -10.0), "x_max": (_FLOAT, 10.0), "n_cells": (_INT, 512),
             "boundary": (_STR, "periodic")},
    "profile": {"kind": (_STR, "harmonic_ground"), "sigma": (_FLOAT, 1.0), "q0": (_FLOAT, 0.0), "h": (_FLOAT, 1.0),
                "scale": (_FLOAT, 1.0), "omega": (_FLOAT, 1.0), "momentum": (_FLOAT, 0.0), "path": (_STR, "")},
    "potential": {"kind": (_STR, "harmonic"), "omega": (_FLOAT, 1.0), "center": (_FLOAT, 0.0), "path": (_STR, "")},
    "noise": {"theta": (_FLOAT, 0.0), "kernel": (_STR, "gaussian"), "form_factor": (_OPT_FLOAT, None),
              "vessel_side": (_OPT_FLOAT, None)},
    "evolve": {"dt": (_OPT_FLOAT, None), "t_end": (_FLOAT, 1.0), "record_every": (_INT, 100),
               "integrator": (_STR, "rk4_madelung"), "c_cfl": (_FLOAT, 0.1), "floor": (_FLOAT, 1e-12),
               "reanchor_interval": (_OPT_FLOAT, None), "positivity_policy": (_STR, "clip_renormalize"),
               "renormalize_each_step": (_BOOL, True), "max_retries": (_INT, 20), "include_qp": (_BOOL, True)},
    "ensemble": {"members": (_INT, 1), "base_seed": (_INT, 0), "threads": (_INT, 1)},
    "scan": {"thetas": (_FLOATS, ()), "window": (_STR, "coherence"), "form_factor": (_FLOAT, 1e-9),
             "n_cells": (_INT, 1024), "spacing": (_FLOAT, 1.0), "members": (_INT, 200), "synthetic": (_BOOL, False)},
    "analysis": {"resolution": (_OPT_FLOAT, None), "system_length": (_OPT_FLOAT, None),
                 "macro_ratio": (_FLOAT, 10.0), "local_ratio": (_FLOAT, 0.1), "floor": (_FLOAT, 1e-250)},
    "gen_noise": {"samples": (_INT, 10), "dt": (_FLOAT, 1.0)},
    "output": {"directory": (_STR, "out")},
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(kind: str, raw: str):
    raw = raw.strip()
    if kind == _FLOAT:
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
        return v
    if kind == _OPT_FLOAT:
        return None if raw.lower() in ("", "none", "auto") else _convert(_FLOAT, raw)
    if kind == _INT:
        return int(raw)
    if kind == _BOOL:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ValueError("expected true or false")
    if kind == _FLOATS:
        return tuple(_convert(_FLOAT, p) for p in raw.replace(",", " ").split())
    return raw


@dataclass
class RunConfig:
    """Fully defaulted, validated configuration (one dict per section)."""

    sections: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def echo(self) -> dict:
        return {k: dict(v) for k, v in self.sections.items()}

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(**self["constants"])

    def grid(self):
        g = self["grid"]
        return make_grid(g["x_min"], g["x_max"], g["n_cells"], g["boundary"])

    def profile_spec(self, grid=None) -> ProfileSpec:
        p = self["profile"]
        if p["kind"] == "table":
            return ProfileSpec.table(read_profile_table(p["path"], grid or self.grid()))
        return ProfileSpec(p["kind"], sigma=p["sigma"], q0=p["q0"], h=p["h"], scale=p["scale"], omega=p["omega"],
                           momentum=p["momentum"])

    def potential(self, grid=None) -> np.ndarray:
        from .deterministic_solver import harmonic_potential

        grid = grid or self.grid()
        p = self["potential"]
        if p["kind"] == "none":
            return np.zeros(grid.n_cells)
        if p["kind"] == "harmonic":
            return harmonic_potential(grid, p["omega"], self.constants, p["center"])
        data = np.loadtxt(Path(p["path"]), skiprows=1, ndmin=2)
        order = np.argsort(data[:, 0])
        return np.interp(grid.centers, data[order, 0], data[order, 1])

    def noise_model(self, theta: float | None = None):
        from .correlated_noise import NoiseModel, load_kernel

        n = self["noise"]
        return NoiseModel(n["theta"] if theta is None else theta, self.constants, n["form_factor"], n["vessel_side"],
                          load_kernel(n["kernel"]))

    def dt(self) -> float:
        e = self["evolve"]
        if e["dt"] is not None:
            return e["dt"]
        c = self.constants
        if c.hbar == 0:
            return 1e-3
        return e["c_cfl"] * c.mass * self.grid().spacing ** 2 / c.hbar


def _validate(sec: dict, errors: list) -> None:
    def need(cond, key, msg):
        if not cond:
            errors.append(f"{key}: {msg}")

    c = sec["constants"]
    need(c["hbar"] >= 0, "constants.hbar", "must be >= 0")
    for k in ("mass", "boltzmann", "light_speed"):
        need(c[k] > 0, f"constants.{k}", "must be > 0")
    g = sec["grid"]
    need(g["x_max"] > g["x_min"], "grid.x_max", "must exceed grid.x_min")
    need(g["n_cells"] >= 8, "grid.n_cells", "must be >= 8")
    need(g["boundary"] in ("periodic", "clamped"), "grid.boundary", "must be periodic or clamped")
    p = sec["profile"]
    need(p["kind"] in ProfileSpec.KINDS, "profile.kind", f"must be one of {', '.join(ProfileSpec.KINDS)}")
    for k in ("sigma", "h", "scale", "omega"):
        need(p[k] > 0, f"profile.{k}", "must be > 0")
    need(p["kind"] != "table" or p["path"], "profile.path", "required for a table profile")
    v = sec["potential"]
    need(v["kind"] in ("none", "harmonic", "table"), "potential.kind", "must be none, harmonic or table")
    need(v["kind"] != "table" or v["path"], "potential.path", "required for a table potential")
    n = sec["noise"]
    need(n["theta"] >= 0, "noise.theta", "must be >= 0")
    need(n["kernel"] == "gaussian" or n["kernel"].startswith("table:"), "noise.kernel", "must be gaussian or table:<path>")
    need(n["form_factor"] is None or n["form_factor"] > 0, "noise.form_factor", "must be > 0")
    need(n["vessel_side"] is None or n["vessel_side"] > 0, "noise.vessel_side", "must be > 0")
    need(n["form_factor"] is None or n["vessel_side"] is None, "noise.vessel_side", "give form_factor or vessel_side, not both")
    e = sec["evolve"]
    need(e["dt"] is None or e["dt"] > 0, "evolve.dt", "must be > 0")
    need(e["t_end"] >= 0, "evolve.t_end", "must be >= 0")
    need(e["record_every"] >= 1, "evolve.record_every", "must be >= 1")
    need(e["integrator"] in ("rk4_madelung", "split_step_oracle"), "evolve.integrator",
         "must be rk4_madelung or split_step_oracle")
    need(e["c_cfl"] > 0, "evolve.c_cfl", "must be > 0")
    need(e["floor"] > 0, "evolve.floor", "must be > 0")
    need(e["reanchor_interval"] is None or e["reanchor_interval"] > 0, "evolve.reanchor_interval", "must be > 0")
    need(e["positivity_policy"] in ("clip_renormalize", "clip_only", "reject_step"), "evolve.positivity_policy",
         "must be clip_renormalize, clip_only or reject_step")
    need(e["max_retries"] >= 0, "evolve.max_retries", "must be >= 0")
    m = sec["ensemble"]
    need(m["members"] >= 1, "ensemble.members", "must be >= 1")
    need(0 <= m["base_seed"] < 2**64, "ensemble.base_seed", "must be an unsigned 64-bit integer")
    need(m["threads"] >= 1, "ensemble.threads", "must be >= 1")
    s = sec["scan"]
    need(all(t > 0 for t in s["thetas"]), "scan.thetas", "must all be > 0")
    need(s["window"] == "coherence" or _is_positive_float(s["window"]), "scan.window", "must be coherence or a duration > 0")
    need(s["form_factor"] > 0, "scan.form_factor", "must be > 0")
    need(s["n_cells"] >= 8, "scan.n_cells", "must be >= 8")
    need(s["spacing"] > 0, "scan.spacing", "must be > 0")
    need(s["members"] >= 2, "scan.members", "must be >= 2")
    a = sec["analysis"]
    need(a["resolution"] is None or a["resolution"] > 0, "analysis.resolution", "must be > 0")
    need(a["system_length"] is None or a["system_length"] > 0, "analysis.system_length", "must be > 0")
    need(a["macro_ratio"] > 0, "analysis.macro_ratio", "must be > 0")
    need(a["local_ratio"] > 0, "analysis.local_ratio", "must be > 0")
    need(a["floor"] > 0, "analysis.floor", "must be > 0")
    gn = sec["gen_noise"]
    need(gn["samples"] >= 1, "gen_noise.samples", "must be >= 1")
    need(gn["dt"] > 0, "gen_noise.dt", "must be > 0")


def _is_positive_float(raw: str) -> bool:
    try:
        return float(raw) > 0
    except ValueError:
        return False


def parse_config_text(text: str, source: str | None = None) -> RunConfig:
    """Parse INI text; raise ConfigurationError listing every problem found."""
    parser = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False,
                                       inline_comment_prefixes=("#", ";"), default_section="\x00unused")
    parser.optionxform = str
    errors = []
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax: {exc}") from None
    sections = {name: {k: d for k, (_, d) in keys.items()} for name, keys in SCHEMA.items()}
    for name in parser.sections():
        if name not in SCHEMA:
            errors.append(f"[{name}]: unknown section")
            continue
        for key, raw in parser.items(name):
            if key not in SCHEMA[name]:
                errors.append(f"{name}.{key}: unknown key")
                continue
            try:
                sections[name][key] = _convert(SCHEMA[name][key][0], raw)
            except ValueError as exc:
                errors.append(f"{name}.{key}: cannot parse {raw!r} ({exc})")
    _validate(sections, errors)
    if errors:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(errors))
    return RunConfig(sections, source)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def default_config() -> RunConfig:
    return parse_config_text("")


def config_errors(text: str) -> list:
    """Error lines for ``text`` (empty when valid)."""
    try:
        parse_config_text(text)
    except ConfigurationError as exc:
        return [line.strip() for line in str(exc).splitlines()[1:]] or [str(exc)]
    return []
