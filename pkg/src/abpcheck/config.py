"""Experiment configuration.

A config is an INI file.  ``[run]`` holds batch settings and each
``[case.<id>]`` section describes one case with dotted keys::

    [run]
    seed = 42

    [case.euclid_disk]
    theorem = sobolev_domain
    manifold.preset = euclidean
    manifold.dim = 2
    domain.kind = ball
    domain.radius = 1.0
    density.preset = constant
    solver.method = radial

Values are Python literals (numbers, quoted strings, lists) or bare words.
Preset parameters are the keyword arguments of the preset factory, so
``manifold.alpha`` is accepted for ``cone_smoothed`` and rejected for
``euclidean``.  ``manifold.profile`` and ``manifold.class`` are accepted as
spellings of ``manifold.preset`` and ``manifold.curvature_class``.  Unknown
keys are errors.
"""

from __future__ import annotations

import ast
import configparser
import inspect
from dataclasses import dataclass, field
from pathlib import Path

from .models import PROFILE_PRESETS, RICCI, SECTIONAL, curvature_class
from .potential import DENSITY_PRESETS
from .submanifold import PATCH_PRESETS, SURFACE_FUNCTIONS

THEOREMS = ("sobolev_domain", "isoperimetric", "michael_simon", "minimal_isoperimetric")
DOMAIN_KINDS = ("ball", "annulus")
SOLVER_METHODS = ("radial", "mesh")
EXPERIMENTS = ("capture", "coverage", "jacobian", "shell")


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text.strip()


def _as_list(value):
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _factory_params(factory) -> set[str]:
    return set(inspect.signature(factory).parameters)


@dataclass(frozen=True)
class ExperimentConfig:
    """One case: model, domain or patch, density, solver and transport settings."""

    case_id: str
    theorem: str
    manifold: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)
    sigma: dict = field(default_factory=dict)
    density: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    transport: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def is_submanifold(self) -> bool:
        return self.theorem in ("michael_simon", "minimal_isoperimetric")

    def key(self) -> tuple:
        """Hashable canonical form, used for ordering and provenance."""
        parts = []
        for name in ("manifold", "domain", "sigma", "density", "solver", "transport"):
            parts.append((name, tuple(sorted((k, repr(v)) for k, v in getattr(self, name).items()))))
        return (self.case_id, self.theorem, tuple(parts), self.seed)


@dataclass(frozen=True)
class RunConfig:
    seed: int
    threads: int = 1
    cases: tuple = ()


_SECTIONS = {
    "manifold": {"preset": str, "dim": int, "curvature_class": str},
    "domain": {"kind": str, "radius": float, "inner_radius": float},
    "sigma": {"preset": str, "codim": int},
    "density": {"preset": str},
    "solver": {"method": str, "h": float},
    "transport": {"r": list, "sigma": list, "budget": int, "targets": int, "starts": int, "experiments": list},
}

# alternative spellings, mapped onto the canonical keys before validation
_ALIASES = {"manifold.profile": "manifold.preset", "manifold.class": "manifold.curvature_class"}

_DEFAULTS = {
    "manifold": {"preset": "euclidean", "dim": 2, "curvature_class": RICCI},
    "domain": {"kind": "ball", "radius": 1.0},
    "density": {"preset": "constant"},
    "solver": {"method": "radial", "h": 0.025},
    "transport": {"r": [], "sigma": [0.0], "budget": 10**5, "targets": 100, "starts": 3, "experiments": []},
}


def _coerce(section, key, value, kind):
    if kind is list:
        return [float(v) if not isinstance(v, str) else v for v in _as_list(value)]
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if kind is str and isinstance(value, str):
        return value
    raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {value!r}")


def _preset_params(section: str, preset: str) -> set[str]:
    table = {
        "manifold": PROFILE_PRESETS,
        "sigma": PATCH_PRESETS,
    }
    if section in table:
        if preset not in table[section]:
            raise ConfigError(f"{section}.preset: unknown preset {preset!r}; known: {sorted(table[section])}")
        return _factory_params(table[section][preset]) - {"codim"}
    return set()


def _density_params(preset: str, patch: bool) -> set[str]:
    table = SURFACE_FUNCTIONS if patch else DENSITY_PRESETS
    if preset not in table:
        raise ConfigError(f"density.preset: unknown preset {preset!r}; known: {sorted(table)}")
    return _factory_params(table[preset])


def parse_case(case_id: str, items: dict, seed: int) -> ExperimentConfig:
    theorem = items.pop("theorem", None)
    if theorem not in THEOREMS:
        raise ConfigError(f"case {case_id}: theorem must be one of {THEOREMS}, got {theorem!r}")
    sections: dict[str, dict] = {name: dict(_DEFAULTS.get(name, {})) for name in _SECTIONS}
    params: dict[str, dict] = {name: {} for name in _SECTIONS}
    for alias, canonical in _ALIASES.items():
        if alias in items:
            if canonical in items:
                raise ConfigError(f"case {case_id}: both {alias!r} and {canonical!r} given")
            items[canonical] = items.pop(alias)
    for dotted, raw in items.items():
        if "." not in dotted:
            raise ConfigError(f"case {case_id}: unknown key {dotted!r}")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"case {case_id}: unknown section {section!r} in key {dotted!r}")
        value = _literal(raw)
        if key in _SECTIONS[section]:
            sections[section][key] = _coerce(section, key, value, _SECTIONS[section][key])
        else:
            params[section][key] = value
    patch = theorem in ("michael_simon", "minimal_isoperimetric")
    if patch and "preset" not in sections["sigma"]:
        raise ConfigError(f"case {case_id}: submanifold theorems need sigma.preset")
    for section in ("manifold", "sigma"):
        if section == "sigma" and not patch:
            if params["sigma"] or len(sections["sigma"]) > 0:
                raise ConfigError(f"case {case_id}: sigma.* keys only apply to submanifold theorems")
            continue
        allowed = _preset_params(section, sections[section]["preset"]) if "preset" in sections[section] else set()
        unknown = set(params[section]) - allowed
        if unknown:
            raise ConfigError(f"case {case_id}: unknown {section} parameter(s) {sorted(unknown)}")
    unknown = set(params["density"]) - _density_params(sections["density"]["preset"], patch)
    if unknown:
        raise ConfigError(f"case {case_id}: unknown density parameter(s) {sorted(unknown)}")
    for section in ("domain", "solver", "transport"):
        if params[section]:
            raise ConfigError(f"case {case_id}: unknown {section} key(s) {sorted(params[section])}")
    if sections["domain"]["kind"] not in DOMAIN_KINDS:
        raise ConfigError(f"case {case_id}: domain.kind must be one of {DOMAIN_KINDS}")
    if sections["solver"]["method"] not in SOLVER_METHODS:
        raise ConfigError(f"case {case_id}: solver.method must be one of {SOLVER_METHODS}")
    try:
        sections["manifold"]["curvature_class"] = curvature_class(sections["manifold"]["curvature_class"])
    except ValueError:
        raise ConfigError(f"case {case_id}: manifold.curvature_class must name {RICCI!r} or {SECTIONAL!r}") from None
    bad = [e for e in sections["transport"]["experiments"] if e not in EXPERIMENTS]
    if bad:
        raise ConfigError(f"case {case_id}: unknown transport experiments {bad}; known: {EXPERIMENTS}")
    for name, value in (("solver.h", sections["solver"]["h"]), ("domain.radius", sections["domain"]["radius"])):
        if not value > 0:
            raise ConfigError(f"case {case_id}: {name} must be positive")
    for section in ("manifold", "sigma", "density"):
        sections[section].update(params[section])
    return ExperimentConfig(case_id, theorem, sections["manifold"], sections["domain"], sections["sigma"],
                            sections["density"], sections["solver"], sections["transport"], seed)


def parse_config(text: str, seed: int | None = None, source: str = "<config>") -> RunConfig:
    """Parse config text; ``seed`` overrides ``[run] seed``."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    run = dict(parser["run"]) if parser.has_section("run") else {}
    unknown = set(run) - {"seed", "threads"}
    if unknown:
        raise ConfigError(f"[run]: unknown key(s) {sorted(unknown)}")
    if seed is None:
        if "seed" not in run:
            raise ConfigError("a seed is required: set [run] seed or pass --seed")
        seed = _literal(run["seed"])
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    threads = _literal(run.get("threads", "1"))
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer")
    cases = []
    for name in parser.sections():
        if name == "run":
            continue
        if not name.startswith("case."):
            raise ConfigError(f"unknown section [{name}]")
        cases.append(parse_case(name[5:], dict(parser[name]), seed))
    if not cases:
        raise ConfigError(f"{source}: no [case.*] sections")
    ids = [c.case_id for c in cases]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate case ids")
    return RunConfig(seed, threads, tuple(cases))


def load_config(path, seed: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, seed, str(path))
