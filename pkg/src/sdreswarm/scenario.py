"""Scenario files: INI text that resolves to a :class:`SimConfig` plus run options.

Sections and keys (all optional; missing keys take the :class:`SimConfig`
defaults)::

    [scenario]   name, seeds, out
    [sim]        n_robots, dt, duration, noise_sigma, seed, collisions,
                 controller, heading_spread, init_margin
    [arena]      x_min, x_max, y_min, y_max, radius
    [robot]      m, L, inputs
    [target]     x, y, theta
    [sdre]       q_diag, q_scale, angle_weight, r_weight, lever_gain, lever_tau
    [pd]         kp_x, kp_y, kd_x, kd_y
    [supervisor] enter_mult, exit_mult, sigma_enter, sigma_exit, gather_x, gather_y

Values precedence is command-line flag, then file, then default.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from typing import Optional

from .control import PDGains
from .dynamics import HolonomicParams
from .sim import SimConfig

__all__ = ["Scenario", "ScenarioError", "parse_scenario", "load_scenario", "dump_scenario", "apply_overrides"]


class ScenarioError(ValueError):
    """The scenario file or an override is invalid."""


@dataclass(frozen=True)
class Scenario:
    sim: SimConfig = field(default_factory=SimConfig)
    name: str = "scenario"
    seeds: int = 1
    out: str = "runs"

    def __post_init__(self):
        if self.seeds < 1:
            raise ScenarioError("seeds must be at least 1")

    def seed_configs(self):
        """One config per seed, ``sim.seed``, ``sim.seed + 1``, ..."""
        return [replace(self.sim, seed=self.sim.seed + i) for i in range(self.seeds)]


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ScenarioError(f"not a boolean: {text!r}")


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def parse_scenario(text: str) -> Scenario:
    """Parse scenario INI text.

    Raises
    ------
    ScenarioError
        On unknown sections or keys, malformed values, or a config that
        violates the simulator's invariants.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc
    known = {
        "scenario": {"name", "seeds", "out"},
        "sim": {"n_robots", "dt", "duration", "noise_sigma", "seed", "collisions", "controller",
                "heading_spread", "init_margin"},
        "arena": {"x_min", "x_max", "y_min", "y_max", "radius"},
        "robot": {"m", "L", "inputs"},
        "target": {"x", "y", "theta"},
        "sdre": {"q_diag", "q_scale", "angle_weight", "r_weight", "lever_gain", "lever_tau"},
        "pd": {"kp_x", "kp_y", "kd_x", "kd_y"},
        "supervisor": {"enter_mult", "exit_mult", "sigma_enter", "sigma_exit", "gather_x", "gather_y"},
    }
    for sec in cp.sections():
        if sec not in known:
            raise ScenarioError(f"unknown section [{sec}]")
        extra = set(cp[sec]) - known[sec]
        if extra:
            raise ScenarioError(f"unknown keys in [{sec}]: {sorted(extra)}")

    d = SimConfig()
    kw = {}
    try:
        s = cp["sim"] if cp.has_section("sim") else {}
        conv = {"n_robots": int, "dt": float, "duration": float, "noise_sigma": float, "seed": int,
                "collisions": _bool, "controller": str.strip, "heading_spread": float, "init_margin": float}
        for key, fn in conv.items():
            if key in s:
                kw[key] = fn(s[key])
        if cp.has_section("arena"):
            a = cp["arena"]
            arena = list(d.arena)
            for i, key in enumerate(("x_min", "x_max", "y_min", "y_max")):
                if key in a:
                    arena[i] = float(a[key])
            kw["arena"] = tuple(arena)
            if "radius" in a:
                kw["radius"] = float(a["radius"])
        if cp.has_section("robot"):
            r = cp["robot"]
            kw["params"] = HolonomicParams(float(r.get("m", d.params.m)), float(r.get("L", d.params.L)),
                                           r.get("inputs", d.params.inputs).strip())
        if cp.has_section("target"):
            t = cp["target"]
            kw["target"] = (float(t.get("x", d.target[0])), float(t.get("y", d.target[1])),
                            float(t.get("theta", d.target[2])))
        if cp.has_section("sdre"):
            q = cp["sdre"]
            if "q_diag" in q:
                kw["q_diag"] = _floats(q["q_diag"])
            for key in ("q_scale", "angle_weight", "r_weight", "lever_gain", "lever_tau"):
                if key in q:
                    kw[key] = float(q[key])
        if cp.has_section("pd"):
            p = cp["pd"]
            kw["pd_gains"] = PDGains(*(float(p.get(k, getattr(d.pd_gains, k))) for k in ("kp_x", "kp_y", "kd_x", "kd_y")))
        if cp.has_section("supervisor"):
            v = cp["supervisor"]
            for key in ("enter_mult", "exit_mult"):
                if key in v:
                    kw[key] = float(v[key])
            for key in ("sigma_enter", "sigma_exit"):
                if key in v:
                    kw[key] = _opt_float(v[key])
            if "gather_x" in v or "gather_y" in v:
                arena = kw.get("arena", d.arena)
                kw["gather_corner"] = (float(v.get("gather_x", arena[0])), float(v.get("gather_y", arena[2])))
        sim = SimConfig(**kw)
        sc = cp["scenario"] if cp.has_section("scenario") else {}
        return Scenario(sim, sc.get("name", "scenario").strip(), int(sc.get("seeds", 1)), sc.get("out", "runs").strip())
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ScenarioError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def dump_scenario(sc: Scenario) -> str:
    """Fully resolved INI text; ``parse_scenario(dump_scenario(s)) == s``."""
    c = sc.sim
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["scenario"] = {"name": sc.name, "seeds": str(sc.seeds), "out": sc.out}
    cp["sim"] = {"n_robots": str(c.n_robots), "dt": repr(c.dt), "duration": repr(c.duration),
                 "noise_sigma": repr(c.noise_sigma), "seed": str(c.seed), "collisions": str(c.collisions).lower(),
                 "controller": c.controller, "heading_spread": repr(c.heading_spread),
                 "init_margin": repr(c.init_margin)}
    cp["arena"] = {"x_min": repr(c.arena[0]), "x_max": repr(c.arena[1]), "y_min": repr(c.arena[2]),
                   "y_max": repr(c.arena[3]), "radius": repr(c.radius)}
    cp["robot"] = {"m": repr(c.params.m), "L": repr(c.params.L), "inputs": c.params.inputs}
    cp["target"] = {"x": repr(c.target[0]), "y": repr(c.target[1]), "theta": repr(c.target[2])}
    cp["sdre"] = {"q_diag": ", ".join(repr(float(v)) for v in c.q_diag), "q_scale": repr(c.q_scale),
                  "angle_weight": repr(c.angle_weight), "r_weight": repr(c.r_weight),
                  "lever_gain": repr(c.lever_gain), "lever_tau": repr(c.lever_tau)}
    g = c.pd_gains
    cp["pd"] = {"kp_x": repr(g.kp_x), "kp_y": repr(g.kp_y), "kd_x": repr(g.kd_x), "kd_y": repr(g.kd_y)}
    corner = c.gather_corner if c.gather_corner is not None else (c.arena[0], c.arena[2])
    cp["supervisor"] = {"enter_mult": repr(c.enter_mult), "exit_mult": repr(c.exit_mult),
                        "sigma_enter": "auto" if c.sigma_enter is None else repr(c.sigma_enter),
                        "sigma_exit": "auto" if c.sigma_exit is None else repr(c.sigma_exit),
                        "gather_x": repr(float(corner[0])), "gather_y": repr(float(corner[1]))}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def apply_overrides(sc: Scenario, controller=None, seeds=None, noise=None, dt=None, duration=None,
                    out=None, sigma_enter=None, sigma_exit=None) -> Scenario:
    """Command-line overrides on top of the file values."""
    sim_kw = {}
    if controller is not None:
        sim_kw["controller"] = controller
    if noise is not None:
        sim_kw["noise_sigma"] = noise
    if dt is not None:
        sim_kw["dt"] = dt
    if duration is not None:
        sim_kw["duration"] = duration
    if sigma_enter is not None:
        sim_kw["sigma_enter"] = sigma_enter
    if sigma_exit is not None:
        sim_kw["sigma_exit"] = sigma_exit
    try:
        sim = replace(sc.sim, **sim_kw)
        return replace(sc, sim=sim, seeds=sc.seeds if seeds is None else seeds, out=sc.out if out is None else out)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
