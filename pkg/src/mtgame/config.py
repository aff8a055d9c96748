"""Run configuration files.

A config is an INI file with named sections. Expression values are written
in double quotes; lists are comma separated. Example::

    [game]
    catalog = remark1
    m = 1
    k = 21

    [grid]
    time_nodes = 50
    state_lo = -1
    state_hi = 1
    state_nodes = 41

An inline game replaces ``catalog`` with ``m, n, p, q, horizon``, one
``X<alpha>_<i>`` key per dynamics entry, ``running_cost``,
``terminal_cost`` and control sets given either as ``u_lo, u_hi, u_k`` or
``u_points`` (points separated by ``;``, components by ``,``), likewise for
``v``. The full key list is in the README.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .expr import ExpressionError, parse
from .game import CatalogError, ControlSet, GameInstance, InvalidSpecError, catalog_instance
from .grid import GridError, MultitimeGrid
from .solver import SolverOptions

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]

CHECKS = ("oracle", "dpp", "viscosity", "ordering")

_SECTIONS = {
    "game": {
        "catalog", "m", "k", "n", "p", "q", "horizon", "running_cost", "terminal_cost",
        "u_lo", "u_hi", "u_k", "u_points", "v_lo", "v_hi", "v_k", "v_points", "name",
    },
    "grid": {"time_nodes", "state_lo", "state_hi", "state_nodes"},
    "solver": {"which", "refinement", "clamp", "backend"},
    "verify": {
        "checks", "seed", "test_family", "dpp_box_steps", "dpp_tol", "viscosity_tol_factor",
        "oracle_tol", "ordering_tol",
    },
    "synthesize": {"start_t", "start_x"},
    "output": {"directory", "formats"},
}
_DYNAMICS_KEY = re.compile(r"x(\d+)_(\d+)\Z")  # keys are lower-cased by configparser


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``path:line:``."""


@dataclass
class RunConfig:
    path: str
    sha256: str
    instance: GameInstance
    grid: MultitimeGrid
    solver: SolverOptions
    checks: tuple = CHECKS
    seed: int = 0
    test_family: int = 100
    dpp_box_steps: int = 1
    dpp_tol: float = 1e-9
    viscosity_tol_factor: float = 10.0
    oracle_tol: float = 0.1
    ordering_tol: float = 1e-9
    start_t: tuple | None = None
    start_x: tuple | None = None
    output_dir: str = "out"
    formats: tuple = ("csv", "json")
    extra: dict = field(default_factory=dict)


def _line_index(text: str) -> dict:
    """``(section, key) -> line number`` for every entry, plus section headers."""
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            lines[(section, None)] = no
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        lines[(section, key)] = no
    return lines


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, lines: dict, path: str):
        self.parser = parser
        self.lines = lines
        self.path = path

    def fail(self, section: str, key: str | None, message: str):
        no = self.lines.get((section, key)) or self.lines.get((section, None)) or 1
        where = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigError(f"{self.path}:{no}: {where}: {message}")

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None):
        if not self.has(section, key):
            if default is None:
                raise self.fail(section, None, f"missing required key {key!r}")
            return default
        return self.parser.get(section, key).strip()

    def int(self, section, key, default=None) -> int:
        text = self.raw(section, key, None if default is None else str(default))
        try:
            return int(text)
        except ValueError:
            raise self.fail(section, key, f"expected an integer, got {text!r}") from None

    def float(self, section, key, default=None) -> float:
        text = self.raw(section, key, None if default is None else repr(default))
        try:
            return float(text)
        except ValueError:
            raise self.fail(section, key, f"expected a number, got {text!r}") from None

    def floats(self, section, key, default=None) -> tuple:
        text = self.raw(section, key, default)
        try:
            return tuple(float(p) for p in text.split(",") if p.strip())
        except ValueError:
            raise self.fail(section, key, f"expected comma separated numbers, got {text!r}") from None

    def ints(self, section, key, default=None) -> tuple:
        vals = self.floats(section, key, default)
        if any(v != int(v) for v in vals):
            raise self.fail(section, key, "expected integers")
        return tuple(int(v) for v in vals)

    def expr(self, section, key):
        text = self.raw(section, key)
        if len(text) < 2 or text[0] != '"' or text[-1] != '"':
            raise self.fail(section, key, f"expression must be double-quoted, got {text}")
        source = text[1:-1]
        try:
            parse(source)
        except ExpressionError as exc:
            raise self.fail(section, key, f"in expression {source!r}: {exc}") from None
        return source

    def bool(self, section, key, default: bool) -> bool:
        if not self.has(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise self.fail(section, key, "expected true or false") from None


def _control_set(r: _Reader, who: str, dim: int) -> ControlSet:
    if dim == 0:
        return ControlSet.empty()
    if r.has("game", f"{who}_points"):
        text = r.raw("game", f"{who}_points")
        try:
            pts = [[float(c) for c in p.split(",")] for p in text.split(";") if p.strip()]
            return ControlSet.from_points(pts)
        except (ValueError, InvalidSpecError) as exc:
            raise r.fail("game", f"{who}_points", str(exc)) from None
    lo = r.floats("game", f"{who}_lo")
    hi = r.floats("game", f"{who}_hi")
    if len(lo) == 1:
        lo *= dim
    if len(hi) == 1:
        hi *= dim
    try:
        return ControlSet.from_box(lo, hi, r.int("game", f"{who}_k"))
    except InvalidSpecError as exc:
        raise r.fail("game", f"{who}_lo", str(exc)) from None


def _game(r: _Reader) -> GameInstance:
    if r.has("game", "catalog"):
        name = r.raw("game", "catalog")
        try:
            return catalog_instance(name, m=r.int("game", "m", 1), k=r.int("game", "k", 21))
        except (CatalogError, InvalidSpecError) as exc:
            msg = exc.args[0] if exc.args else str(exc)
            raise r.fail("game", "catalog", msg) from None
    m, n = r.int("game", "m"), r.int("game", "n")
    p, q = r.int("game", "p", 0), r.int("game", "q", 0)
    horizon = r.floats("game", "horizon", "1")
    if len(horizon) == 1:
        horizon *= m
    dynamics = []
    for a in range(m):
        row = []
        for i in range(n):
            key = f"x{a + 1}_{i + 1}"
            if not r.has("game", key):
                raise r.fail("game", None, f"missing dynamics entry X{a + 1}_{i + 1}")
            row.append(r.expr("game", key))
        dynamics.append(row)
    for key in r.parser.options("game"):
        match = _DYNAMICS_KEY.match(key)
        if match and not (1 <= int(match.group(1)) <= m and 1 <= int(match.group(2)) <= n):
            raise r.fail("game", key, f"dynamics entry outside the {m}x{n} array")
    terminal = r.expr("game", "terminal_cost") if r.has("game", "terminal_cost") else "0"
    try:
        return GameInstance(
            name=r.raw("game", "name", "inline"),
            m=m,
            n=n,
            p=p,
            q=q,
            horizon=horizon,
            dynamics=dynamics,
            running_cost=r.expr("game", "running_cost"),
            terminal_cost=terminal,
            u_set=_control_set(r, "u", p),
            v_set=_control_set(r, "v", q),
        )
    except InvalidSpecError as exc:
        raise r.fail("game", None, str(exc)) from None


def parse_config(text: str, path: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        no = getattr(exc, "lineno", 1)
        raise ConfigError(f"{path}:{no}: {exc.message if hasattr(exc, 'message') else exc}") from None
    r = _Reader(parser, _line_index(text), path)
    for section in parser.sections():
        if section not in _SECTIONS:
            raise r.fail(section, None, f"unknown section; expected one of {', '.join(_SECTIONS)}")
        for key in parser.options(section):
            if key not in _SECTIONS[section] and not (section == "game" and _DYNAMICS_KEY.match(key)):
                raise r.fail(section, key, "unknown key")
    for section in ("game", "grid"):
        if not parser.has_section(section):
            raise ConfigError(f"{path}:1: missing section [{section}]")

    instance = _game(r)
    try:
        grid = MultitimeGrid.for_instance(
            instance,
            r.ints("grid", "time_nodes"),
            r.floats("grid", "state_lo"),
            r.floats("grid", "state_hi"),
            r.ints("grid", "state_nodes"),
        )
    except GridError as exc:
        raise r.fail("grid", None, str(exc)) from None
    if grid.m != instance.m or grid.n != instance.n:
        raise r.fail("grid", None, f"grid is {grid.m}x{grid.n}, game is {instance.m}x{instance.n}")

    sec = "solver"
    try:
        solver = SolverOptions(
            which=r.raw(sec, "which", "both") if parser.has_section(sec) else "both",
            refinement=r.int(sec, "refinement", 0) if parser.has_section(sec) else 0,
            clamp=r.bool(sec, "clamp", True) if parser.has_section(sec) else True,
            backend=(r.raw(sec, "backend") if r.has(sec, "backend") else None) if parser.has_section(sec) else None,
        )
    except ValueError as exc:
        raise r.fail(sec, None, str(exc)) from None

    cfg = RunConfig(
        path=str(path),
        sha256=hashlib.sha256(text.encode("utf-8")).hexdigest(),
        instance=instance,
        grid=grid,
        solver=solver,
    )
    if parser.has_section("verify"):
        sec = "verify"
        if r.has(sec, "checks"):
            checks = tuple(c.strip() for c in r.raw(sec, "checks").split(",") if c.strip())
            bad = [c for c in checks if c not in CHECKS]
            if bad:
                raise r.fail(sec, "checks", f"unknown check(s) {', '.join(bad)}; known: {', '.join(CHECKS)}")
            cfg.checks = checks
        cfg.seed = r.int(sec, "seed", cfg.seed)
        cfg.test_family = r.int(sec, "test_family", cfg.test_family)
        cfg.dpp_box_steps = r.int(sec, "dpp_box_steps", cfg.dpp_box_steps)
        if cfg.dpp_box_steps < 1:
            raise r.fail(sec, "dpp_box_steps", "must be >= 1")
        cfg.dpp_tol = r.float(sec, "dpp_tol", cfg.dpp_tol)
        cfg.viscosity_tol_factor = r.float(sec, "viscosity_tol_factor", cfg.viscosity_tol_factor)
        cfg.oracle_tol = r.float(sec, "oracle_tol", cfg.oracle_tol)
        cfg.ordering_tol = r.float(sec, "ordering_tol", cfg.ordering_tol)
    if parser.has_section("synthesize"):
        if r.has("synthesize", "start_t"):
            cfg.start_t = r.floats("synthesize", "start_t")
        if r.has("synthesize", "start_x"):
            cfg.start_x = r.floats("synthesize", "start_x")
    if parser.has_section("output"):
        cfg.output_dir = r.raw("output", "directory", cfg.output_dir)
        if r.has("output", "formats"):
            formats = tuple(f.strip() for f in r.raw("output", "formats").split(",") if f.strip())
            if any(f not in ("csv", "json") for f in formats):
                raise r.fail("output", "formats", "formats must be csv and/or json")
            cfg.formats = formats
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path))
