"""Experiment configuration documents.

A config is a YAML mapping.  Rationals are written as ``"p/q"`` strings so
they survive serialization exactly; decimal strings such as ``"1e-3"`` are
accepted wherever a real number is expected.

.. code-block:: yaml

    system:
      maps:
        - times: 2                       # x -> 2x mod 1
        - branches:                      # rows (lo, hi, slope, intercept)
            - ["0", "1/3", "3", "0"]
            - ["1/3", "2/3", "3", "-1"]
            - ["2/3", "1", "3", "-2"]
      noise: {bernoulli: ["1/2", "1/2"]} # or {markov: [[...], [...]]}
      target: {x0: "1/6", x1: "1/6"}
    analysis: {ell_max: 10, period_horizon: 64, word_horizon: 12}
    simulation: {t: 1, rho0: "1e-3", gamma: 2, schedule_length: 1,
                 samples: 100000, L: 64, q: 1, seed: 1, omega_mode: fixed_word}
    blockcheck: {enabled: true, Delta: [1, 2], n_max: 8}
    output: {directory: out, formats: [csv, json]}
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import yaml

from .maps import BranchMap, FamilyError, MapFamily, parse_number, times_map, validate_family
from .noise import NoiseModel
from .targets import TargetSpec, target_problems

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]

ANALYSIS_DEFAULTS = {
    "ell_max": 10,
    "period_horizon": 64,
    "word_horizon": 12,
    "enumeration_cap": 2**20,
    "boundary_targets": "reject",
    "method": "exact",
}
SIMULATION_DEFAULTS = {
    "t": 1.0,
    "rho0": 1e-3,
    "gamma": 2.0,
    "schedule_length": 1,
    "samples": 100_000,
    "L": 64,
    "q": 1.0,
    "seed": 0,
    "omega_mode": "fixed_word",
    "omega_repeats": 1,
    "n_max": 32,
}
BLOCKCHECK_DEFAULTS = {"enabled": False, "Delta": [1, 2], "n_max": 8, "L": "sqrt", "samples": 20_000,
                       "bootstrap": 100}
ENTRYRATIO_DEFAULTS = {"L": [1, 16, 64], "rho": [1e-3, 1e-4], "method": "last_hit"}
POINTPROCESS_DEFAULTS = {"partition": [["0", "1/2"], ["1/2", "1"]], "t": None}
OUTPUT_DEFAULTS = {"directory": "out", "formats": ["csv", "json"]}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _real(value, name: str) -> float:
    try:
        if isinstance(value, str):
            return float(Fraction(value.strip()))
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError([f"{name}: {value!r} is not a number"]) from None


def _int(value, name: str) -> int:
    x = _real(value, name)
    if x != int(x):
        raise ConfigError([f"{name}: {value!r} is not an integer"])
    return int(x)


def _merge(defaults: dict, given, section: str) -> dict:
    given = given or {}
    if not isinstance(given, dict):
        raise ConfigError([f"{section} must be a mapping"])
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError([f"{section}: unknown keys {sorted(unknown)}"])
    out = dict(defaults)
    out.update(given)
    return out


def _parse_map(spec, v: int) -> BranchMap:
    if not isinstance(spec, dict):
        raise ConfigError([f"system.maps[{v}] must be a mapping"])
    if "times" in spec:
        return times_map(_int(spec["times"], f"system.maps[{v}].times"), spec.get("name", ""))
    rows = spec.get("branches")
    if not rows:
        raise ConfigError([f"system.maps[{v}] needs 'branches' or 'times'"])
    try:
        return BranchMap.from_table([tuple(r) for r in rows], spec.get("name", ""))
    except (TypeError, ValueError, ZeroDivisionError) as err:
        raise ConfigError([f"system.maps[{v}]: {err}"]) from None


def _parse_noise(spec) -> NoiseModel:
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError(["system.noise must be {bernoulli: [...]} or {markov: [[...], ...]}"])
    ((kind, data),) = spec.items()
    try:
        if kind == "bernoulli":
            return NoiseModel.bernoulli([parse_number(x) for x in data])
        if kind == "markov":
            if isinstance(data, dict):
                return NoiseModel.markov([[parse_number(x) for x in r] for r in data["matrix"]],
                                         [parse_number(x) for x in data.get("initial", [])])
            return NoiseModel.markov([[parse_number(x) for x in r] for r in data])
    except (TypeError, ValueError, ZeroDivisionError, KeyError) as err:
        raise ConfigError([f"system.noise: {err}"]) from None
    raise ConfigError([f"system.noise: unknown kind {kind!r}"])


@dataclass(frozen=True)
class ExperimentConfig:
    family: MapFamily
    noise: NoiseModel
    target: TargetSpec
    analysis: dict
    simulation: dict
    blockcheck: dict
    entryratio: dict
    pointprocess: dict
    output: dict
    digest: str = ""
    source: str = ""
    problems: tuple = field(default=())

    @property
    def seed(self) -> int:
        return int(self.simulation["seed"])

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        sim = dict(self.simulation, seed=int(seed))
        return ExperimentConfig(**{**self.__dict__, "simulation": sim})


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and statically validate a config document.

    Structural errors raise `ConfigError`.  Violations of the system's
    conditions (family, target, schedule) are collected in ``problems`` so
    that ``validate`` can list all of them.
    """
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as err:
        raise ConfigError([f"{source}: not valid YAML ({err})"]) from None
    if not isinstance(doc, dict):
        raise ConfigError([f"{source}: top level must be a mapping"])
    unknown = set(doc) - {"system", "analysis", "simulation", "blockcheck", "entryratio", "pointprocess", "output"}
    if unknown:
        raise ConfigError([f"unknown sections {sorted(unknown)}"])
    system = doc.get("system")
    if not isinstance(system, dict):
        raise ConfigError(["missing 'system' section"])
    maps = system.get("maps")
    if not maps:
        raise ConfigError(["system.maps must list at least one map"])
    family = MapFamily(tuple(_parse_map(m, v) for v, m in enumerate(maps)))
    noise = _parse_noise(system.get("noise"))
    tgt = system.get("target") or {}
    try:
        x0 = parse_number(tgt["x0"])
        x1 = parse_number(tgt.get("x1", tgt["x0"]))
    except (KeyError, TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(["system.target needs rational x0 (and optionally x1)"]) from None
    target = TargetSpec(x0, x1)

    analysis = _merge(ANALYSIS_DEFAULTS, doc.get("analysis"), "analysis")
    for k in ("ell_max", "period_horizon", "word_horizon", "enumeration_cap"):
        analysis[k] = _int(analysis[k], f"analysis.{k}")
    if analysis["boundary_targets"] not in ("reject", "absorb"):
        raise ConfigError(["analysis.boundary_targets must be 'reject' or 'absorb'"])
    sim = _merge(SIMULATION_DEFAULTS, doc.get("simulation"), "simulation")
    for k in ("t", "rho0", "gamma", "q"):
        sim[k] = _real(sim[k], f"simulation.{k}")
    for k in ("schedule_length", "samples", "L", "seed", "omega_repeats", "n_max"):
        sim[k] = _int(sim[k], f"simulation.{k}")
    block = _merge(BLOCKCHECK_DEFAULTS, doc.get("blockcheck"), "blockcheck")
    block["Delta"] = [_int(d, "blockcheck.Delta") for d in (block["Delta"] if isinstance(block["Delta"], list)
                                                              else [block["Delta"]])]
    if block["L"] != "sqrt":
        block["L"] = [_int(x, "blockcheck.L") for x in (block["L"] if isinstance(block["L"], list) else [block["L"]])]
    for k in ("n_max", "samples", "bootstrap"):
        block[k] = _int(block[k], f"blockcheck.{k}")
    entry = _merge(ENTRYRATIO_DEFAULTS, doc.get("entryratio"), "entryratio")
    entry["L"] = [_int(x, "entryratio.L") for x in entry["L"]]
    entry["rho"] = [_real(x, "entryratio.rho") for x in entry["rho"]]
    pp = _merge(POINTPROCESS_DEFAULTS, doc.get("pointprocess"), "pointprocess")
    pp["partition"] = [(parse_number(a), parse_number(b)) for a, b in pp["partition"]]
    pp["t"] = sim["t"] if pp["t"] is None else _real(pp["t"], "pointprocess.t")
    out = _merge(OUTPUT_DEFAULTS, doc.get("output"), "output")

    problems = list(validate_family(family).problems)
    if noise.u != family.u:
        problems.append(f"noise has {noise.u} symbols but there are {family.u} maps")
    problems += target_problems(family, target, allow_boundary=analysis["boundary_targets"] == "absorb")
    if not sim["gamma"] * sim["q"] > 1:
        problems.append(f"schedule not summable: gamma*q = {sim['gamma'] * sim['q']:g} must exceed 1")
    if not sim["t"] > 0:
        problems.append("simulation.t must be positive")
    if sim["omega_mode"] not in ("fixed_word", "resampled_per_replicate"):
        problems.append(f"simulation.omega_mode {sim['omega_mode']!r} is not fixed_word or resampled_per_replicate")
    if all(0 < x < 1 for x in (target.x0, target.x1)):
        gap = min(min(x, 1 - x) for x in (target.x0, target.x1))
        if not 0 < sim["rho0"] < gap:
            problems.append(f"simulation.rho0={sim['rho0']:g} must be below the target's distance to 0 and 1")
    digest = hashlib.sha256(text.encode()).hexdigest()
    return ExperimentConfig(family, noise, target, analysis, sim, block, entry, pp, out, digest, source,
                            tuple(problems))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError([f"cannot read {path}: {err.strerror}"]) from None
    try:
        return parse_config(text, str(path))
    except FamilyError as err:
        raise ConfigError(err.problems) from None
