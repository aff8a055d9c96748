"""Command-line front end: ``mtgame solve|verify|synthesize|catalog``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .expr import ExpressionError, NumericDomainError
from .game import CATALOG, catalog_instance
from .grid import (
    ExtrapolationError,
    GeneratingField,
    GridError,
    divergence_residual,
    read_field_csv,
    write_field_csv,
    write_json,
)
from .solver import ClampError, DivergenceError, solve
from .synthesis import feedback_controls, integrate_flow, realized_vs_value, write_sheet_csv
from .verify import (
    UnsupportedError,
    compare_fields,
    discrete_game_oracle,
    dpp_residual,
    ordering_check,
    viscosity_check,
)

__all__ = ["main"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
FIELD_FILES = {"upper": ("M.csv", "M_alpha.csv"), "lower": ("m.csv", "m_alpha.csv")}

log = logging.getLogger("mtgame")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    solver = cfg.solver
    if args.refine:
        solver = replace(solver, refinement=solver.refinement + args.refine)
    if args.threads:
        solver = replace(solver, threads=args.threads)
    cfg.solver = solver
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"{cfg.path}:0: cannot create output directory {out}: {exc.strerror}") from None
    return cfg, out


def _effective(cfg: RunConfig):
    """Instance and grid after the configured refinement."""
    r = cfg.solver.refinement
    return cfg.instance.with_refined_controls(r), cfg.grid.refined(r)


def _base_meta(cfg: RunConfig, command: str) -> dict:
    instance, grid = _effective(cfg)
    options = asdict(cfg.solver)
    options.pop("threads")  # does not affect results
    return {
        "command": command,
        "config": cfg.path,
        "config_sha256": cfg.sha256,
        "version": __version__,
        "instance": instance.describe(),
        "grid": grid.describe(),
        "solver": options,
    }


def _solve(cfg: RunConfig, which: str | None = None) -> dict:
    opts = cfg.solver if which is None else replace(cfg.solver, which=which)
    return solve(cfg.instance, cfg.grid, opts)


def _write_fields(results: dict, out: Path, cfg: RunConfig) -> dict:
    files = {}
    if "csv" not in cfg.formats:
        return files
    for which, (value, gen) in results.items():
        for name, fld in zip(FIELD_FILES[which], (value, gen)):
            write_field_csv(fld, out / name)
            files[name] = _sha256(out / name)
    return files


def _load_fields(directory: Path, grid, which_list) -> dict:
    results = {}
    for which in which_list:
        scalar, gen = FIELD_FILES[which]
        try:
            value = read_field_csv(directory / scalar, grid, kind=which)
        except OSError as exc:
            raise ConfigError(f"{directory / scalar}:0: cannot read field: {exc.strerror}") from None
        except (GridError, ValueError, IndexError) as exc:
            raise ConfigError(f"{directory / scalar}:0: {exc}") from None
        if (directory / gen).exists():
            comps = read_field_csv(directory / gen, grid, kind=which)
        else:
            comps = GeneratingField(
                grid, np.broadcast_to(value.values / grid.m, (grid.m,) + grid.shape).copy(), kind=which
            )
        results[which] = (value, comps)
    return results


def _kinds(cfg: RunConfig) -> tuple:
    return ("upper", "lower") if cfg.solver.which == "both" else (cfg.solver.which,)


# --------------------------------------------------------------------------
# subcommands


def run_solve(args) -> int:
    cfg, out = _prepare(args)
    results = _solve(cfg)
    meta = _base_meta(cfg, "solve")
    meta["files"] = _write_fields(results, out, cfg)
    meta["results"] = {
        which: {
            "max_abs_value": float(np.abs(value.values).max()),
            "clamp_count": value.meta["clamp_count"],
            "backend": value.meta["backend"],
        }
        for which, (value, _) in results.items()
    }
    if "json" in cfg.formats:
        write_json(meta, out / "meta.json")
    if args.timings:
        write_json({w: v.meta["level_seconds"] for w, (v, _) in results.items()}, out / "timings.json")
    for which, info in meta["results"].items():
        print(f"{which}: max|value| = {info['max_abs_value']:.6g}, clamp events = {info['clamp_count']}")
    return EXIT_OK


def run_verify(args) -> int:
    cfg, out = _prepare(args)
    instance, grid = _effective(cfg)
    kinds = _kinds(cfg)
    if args.fields:
        results = _load_fields(Path(args.fields), grid, kinds)
    else:
        results = _solve(cfg)
    checks = {}
    failed = False

    def record(name, report_dict, ok):
        nonlocal failed
        report_dict["passed"] = ok
        checks[name] = report_dict
        failed = failed or not ok

    for name in cfg.checks:
        if name == "oracle":
            for which in kinds:
                try:
                    oracle = discrete_game_oracle(instance, grid, which)
                except UnsupportedError:
                    checks[f"oracle_{which}"] = {"skipped": f"m={instance.m}, oracle needs m=1"}
                    continue
                sup, l2, node = compare_fields(results[which][0], oracle)
                record(
                    f"oracle_{which}",
                    {"sup_norm": sup, "l2_norm": l2, "argmax_node": list(node), "tolerance": cfg.oracle_tol},
                    sup <= cfg.oracle_tol,
                )
        elif name == "dpp":
            for which in kinds:
                rep = dpp_residual(results[which][0], instance, cfg.dpp_box_steps, tol=cfg.dpp_tol, which=which)
                record(f"dpp_{which}", rep.to_dict(), rep.ok)
        elif name == "viscosity":
            for which in kinds:
                rep = viscosity_check(
                    results[which][1], instance, cfg.test_family, cfg.seed, cfg.viscosity_tol_factor, which
                )
                record(f"viscosity_{which}", rep.to_dict(), rep.ok)
        elif name == "ordering":
            if len(kinds) < 2:
                checks["ordering"] = {"skipped": "needs both upper and lower fields"}
                continue
            rep = ordering_check(results["lower"][0], results["upper"][0], cfg.ordering_tol)
            record("ordering", rep.to_dict(), rep.ok)
    report = _base_meta(cfg, "verify")
    report["seed"] = cfg.seed
    report["fields"] = str(args.fields) if args.fields else "solved"
    report["checks"] = checks
    report["passed"] = not failed
    write_json(report, out / "report.json")
    for name, res in checks.items():
        status = "skipped" if "skipped" in res else ("ok" if res["passed"] else "FAILED")
        print(f"{name}: {status}")
    return EXIT_VERIFY if failed else EXIT_OK


def run_synthesize(args) -> int:
    cfg, out = _prepare(args)
    instance, grid = _effective(cfg)
    start_t = args.start_t if args.start_t is not None else cfg.start_t
    start_x = args.start_x if args.start_x is not None else cfg.start_x
    start_t = tuple(start_t) if start_t is not None else (0.0,) * grid.m
    if start_x is None:
        raise ConfigError(f"{cfg.path}:0: no start state; set [synthesize] start_x or pass --start-x")
    if len(start_t) != grid.m or len(start_x) != grid.n:
        raise ConfigError(f"{cfg.path}:0: start needs {grid.m} time and {grid.n} state coordinates")
    pos = np.array(start_t) / grid.dt
    index = tuple(int(k) for k in np.rint(pos))
    if not np.allclose(pos, index, atol=1e-9) or any(not 0 <= k < N for k, N in zip(index, grid.time_nodes)):
        raise ConfigError(f"{cfg.path}:0: start time {list(start_t)} is not a node of the time grid")
    if not grid.contains_state(start_x):
        raise ConfigError(f"{cfg.path}:0: start state {list(start_x)} lies outside the state box")
    if args.fields:
        value, gen = _load_fields(Path(args.fields), grid, ("upper",))["upper"]
    else:
        value, gen = _solve(cfg, "upper")["upper"]
    policy = feedback_controls(value, instance)
    sheet = integrate_flow(instance, policy, index, start_x, grid)
    realized, at_start, gap = realized_vs_value(instance, value, policy, index, start_x)
    try:
        div = divergence_residual(gen, sheet.start, sheet.end, sheet.state_array(), sheet.time_index)
    except ExtrapolationError:
        div = None
    meta = _base_meta(cfg, "synthesize")
    meta.update(
        {
            "start_t": list(start_t),
            "start_x": list(start_x),
            "realized_payoff": realized,
            "value_at_start": at_start,
            "gap": gap,
            "compatibility_residual": sheet.compatibility_residual,
            "clamp_count": sheet.clamp_count,
            "divergence_residual": div,
            "final_state": sheet.states[-1].tolist(),
        }
    )
    files = {}
    if "csv" in cfg.formats:
        write_sheet_csv(sheet, instance, out / "sheet.csv")
        files["sheet.csv"] = _sha256(out / "sheet.csv")
    meta["files"] = files
    if "json" in cfg.formats:
        write_json(meta, out / "synth.json")
    print(f"realized payoff {realized:.6g}, value {at_start:.6g}, gap {gap:.3g}")
    return EXIT_OK


def run_catalog(args) -> int:
    entries = {name: catalog_instance(name, m=args.m).describe() for name in CATALOG}
    text = json.dumps(entries, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "catalog.json").write_text(text + "\n")
    print(text)
    return EXIT_OK


# --------------------------------------------------------------------------


def _floats(text: str) -> tuple:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtgame", description="Multitime differential game solver")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=False):
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=0, metavar="N", help="worker threads per level")
        p.add_argument("--refine", type=int, default=0, metavar="K", help="halve all grid spacings K times")
        if seed:
            p.add_argument("--seed", type=int, default=None, metavar="N", help="seed for random test fields")

    p = sub.add_parser("solve", help="solve for the upper/lower values")
    common(p)
    p.add_argument("--timings", action="store_true", help="also write per-level timings (timings.json)")
    p.set_defaults(func=run_solve)

    p = sub.add_parser("verify", help="run the verification suite")
    common(p, seed=True)
    p.add_argument("--fields", metavar="DIR", help="check fields from a previous solve instead of solving")
    p.set_defaults(func=run_verify)

    p = sub.add_parser("synthesize", help="extract feedback and integrate a sheet")
    common(p)
    p.add_argument("--start-t", type=_floats, default=None, metavar="T1,..")
    p.add_argument("--start-x", type=_floats, default=None, metavar="X1,..")
    p.add_argument("--fields", metavar="DIR", help="use a previously solved upper field")
    p.set_defaults(func=run_synthesize)

    p = sub.add_parser("catalog", help="list the built-in games")
    p.add_argument("--m", type=int, default=1, help="number of time axes")
    p.add_argument("--out", metavar="DIR")
    p.set_defaults(func=run_catalog)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "threads", 0) < 0 or getattr(args, "refine", 0) < 0:
        print("error: --threads and --refine must be non-negative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, ExpressionError) as exc:
        if isinstance(exc, NumericDomainError):
            print(f"numeric error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, ClampError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
