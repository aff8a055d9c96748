"""Backward semi-Lagrangian solver for the multitime upper and lower values.

Time nodes are visited in anti-diagonal order from the terminal corner. At a
node every time axis that has not reached its end is stepped by one node
(``h``); the update is the one-box dynamic programming step

    M(t, x) = min_v max_u { L(t, x, u, v) * vol(h) + M(t + h, x + sum_a X_a h^a) }

(``max_u min_v`` for the lower value), with the successor value read off the
state grid by multilinear interpolation. On faces where some axis is already
at its end the box is degenerate and no running cost accrues.

The generating field is split isotropically, ``M^alpha = M / m``.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .expr import NumericDomainError, evaluate
from .game import GameInstance
from .grid import GeneratingField, MultitimeGrid, ValueField, antidiagonal_levels
from .kernels import BACKEND, get_kernel

__all__ = [
    "ClampError",
    "DivergenceError",
    "SolverOptions",
    "dpp_update",
    "solve",
    "solve_lower",
    "solve_upper",
    "terminal_fill",
]

logger = logging.getLogger(__name__)


class DivergenceError(ArithmeticError):
    """A node update produced a non-finite value."""


class ClampError(RuntimeError):
    """A saddle foot point left the state box while clamping was disabled."""


@dataclass(frozen=True)
class SolverOptions:
    scheme: str = "semi_lagrangian"
    which: str = "both"  # upper | lower | both
    clamp: bool = True
    refinement: int = 0
    threads: int = 1
    backend: str | None = None
    batch_elements: int = 1_000_000

    def __post_init__(self):
        if self.scheme != "semi_lagrangian":
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        if self.which not in ("upper", "lower", "both"):
            raise ValueError(f"which must be upper, lower or both, got {self.which!r}")
        if self.refinement < 0:
            raise ValueError("refinement level must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


def _check_compatible(instance: GameInstance, grid: MultitimeGrid) -> None:
    if (instance.m, instance.n) != (grid.m, grid.n):
        raise ValueError(f"grid is {grid.m}x{grid.n}, instance is {instance.m}x{instance.n}")
    if not np.allclose(instance.horizon, grid.horizon, rtol=0, atol=1e-12):
        raise ValueError(f"grid horizon {grid.horizon} differs from instance horizon {instance.horizon}")


def terminal_fill(instance: GameInstance, grid: MultitimeGrid) -> tuple[ValueField, GeneratingField]:
    """Fields holding only the terminal data (NaN elsewhere).

    The scalar field gets ``g(x)`` at the terminal corner and every component
    of the generating field gets ``g(x) / m``.
    """
    _check_compatible(instance, grid)
    values = np.full(grid.shape, np.nan)
    g = np.broadcast_to(instance.terminal(grid.state_points()), (int(np.prod(grid.state_nodes)),))
    values[grid.terminal_index] = g.reshape(grid.state_nodes)
    comps = np.broadcast_to(values / grid.m, (grid.m,) + grid.shape).copy()
    return ValueField(grid, values, kind="terminal"), GeneratingField(grid, comps, kind="terminal")


class _StepTables:
    """Cost and interpolation tables for a given step vector, built lazily.

    For instances whose data do not depend on time the tables are shared by
    every node with the same step vector.
    """

    def __init__(self, instance: GameInstance, grid: MultitimeGrid):
        self.instance = instance
        self.grid = grid
        self.x = grid.state_points()[:, None, None, :]  # (S, 1, 1, n)
        self.u = instance.u_set.points[None, :, None, :]
        self.v = instance.v_set.points[None, None, :, :]
        self.lo = np.array(grid.state_lo)
        self.hi = np.array(grid.state_hi)
        nodes = np.array(grid.state_nodes)
        self.nodes = nodes
        self.strides = np.array([int(np.prod(nodes[i + 1 :])) for i in range(grid.n)], dtype=np.int64)
        self.time_dependent = instance.time_dependent()
        self._cache: dict = {}

    def tables(self, steps: tuple, t: np.ndarray):
        """``(cost, base, theta, clamped)`` for step counts ``steps``.

        ``t`` has shape ``(B, m)``; the leading table axis is 1 when the
        tables are shared, else ``B``.
        """
        if not self.time_dependent:
            key = steps
            if key not in self._cache:
                self._cache[key] = self._build(steps, t[:1])
            return self._cache[key]
        return self._build(steps, t)

    def _build(self, steps: tuple, t: np.ndarray):
        inst, grid = self.instance, self.grid
        h = np.array(steps, dtype=float) * grid.dt
        vol = float(np.prod(h))
        tb = t[:, None, None, None, :]  # (Bc, 1, 1, 1, m)
        xb = self.x[None]
        ub = self.u[None]
        vb = self.v[None]
        shape = (t.shape[0], self.x.shape[0], len(inst.u_set), len(inst.v_set))
        bindings = inst.bindings(tb, xb, ub, vb)
        if vol > 0.0:
            cost = np.broadcast_to(evaluate(inst.running_cost, bindings), shape) * vol
        else:
            cost = np.zeros(shape)
        foot = np.broadcast_to(xb, shape + (grid.n,)).copy()
        for a in range(grid.m):
            if h[a] == 0.0:
                continue
            for i, e in enumerate(inst.dynamics[a]):
                foot[..., i] += np.broadcast_to(evaluate(e, bindings), shape) * h[a]
        xc = np.clip(foot, self.lo, self.hi)
        clamped = np.any(xc != foot, axis=-1)
        pos = (xc - self.lo) / grid.dx
        cell = np.clip(np.floor(pos).astype(np.int64), 0, self.nodes - 2)
        theta = np.clip(pos - cell, 0.0, 1.0)
        base = (cell * self.strides).sum(axis=-1)
        return (
            np.ascontiguousarray(cost, dtype=np.float64),
            np.ascontiguousarray(base, dtype=np.int64),
            np.ascontiguousarray(theta, dtype=np.float64),
            clamped,
        )


def dpp_update(
    instance: GameInstance,
    grid: MultitimeGrid,
    values: np.ndarray,
    time_indices: list[tuple],
    steps: tuple,
    which: str,
    backend: str | None = None,
    tables: _StepTables | None = None,
):
    """One dynamic programming step at ``time_indices`` with step counts ``steps``.

    ``steps[alpha]`` is the number of nodes moved along time axis alpha (0
    leaves the axis fixed). Successor values are read from ``values``.
    Returns ``(new_values, iu, iv, clamped)`` with shapes ``(B, S)``.
    """
    kernel = get_kernel(backend)
    tables = tables or _StepTables(instance, grid)
    idx = np.array(time_indices, dtype=np.int64).reshape(-1, grid.m)
    nxt = idx + np.array(steps, dtype=np.int64)
    if np.any(nxt >= np.array(grid.time_nodes)):
        raise IndexError("step leaves the time grid")
    t = idx * grid.dt
    try:
        cost, base, theta, clamped = tables.tables(tuple(int(s) for s in steps), t)
    except NumericDomainError as exc:
        raise DivergenceError(f"non-finite data near time node {tuple(int(k) for k in idx[0])}: {exc}") from None
    stot = int(np.prod(grid.state_nodes))
    vnext = np.ascontiguousarray(values[tuple(nxt.T)].reshape(len(idx), stot))
    val, iu, iv = kernel(cost, base, theta, vnext, tables.strides, which == "upper")
    sel = clamped[0] if clamped.shape[0] == 1 else None
    s_index = np.arange(val.shape[1])[None, :]
    if sel is not None:
        was_clamped = sel[s_index, iu, iv]
    else:
        was_clamped = clamped[np.arange(val.shape[0])[:, None], s_index, iu, iv]
    return val, iu, iv, was_clamped


def _march(instance, grid, which, options: SolverOptions):
    values = np.full(grid.shape, np.nan)
    term, _ = terminal_fill(instance, grid)
    values[grid.terminal_index] = term.values[grid.terminal_index]
    tables = _StepTables(instance, grid)
    state_shape = grid.state_nodes
    S = int(np.prod(state_shape))
    per_node = S * len(instance.u_set) * len(instance.v_set)
    batch = max(1, options.batch_elements // per_node)
    last = np.array(grid.time_nodes) - 1
    clamp_count = 0
    level_seconds = []
    levels = antidiagonal_levels(grid)
    pool = ThreadPoolExecutor(options.threads) if options.threads > 1 else None

    def run(job):
        steps, chunk = job
        return chunk, dpp_update(instance, grid, values, chunk, steps, which, options.backend, tables)

    try:
        for level in levels[1:]:
            start = time.perf_counter()
            groups: dict[tuple, list] = {}
            for j in level:
                steps = tuple(int(s) for s in (np.array(j) < last))
                groups.setdefault(steps, []).append(j)
            jobs = [
                (steps, nodes[k : k + batch])
                for steps, nodes in sorted(groups.items())
                for k in range(0, len(nodes), batch)
            ]
            results = pool.map(run, jobs) if pool else map(run, jobs)
            for chunk, (val, _iu, _iv, was_clamped) in results:
                bad = ~np.isfinite(val)
                if np.any(bad):
                    b, s = np.argwhere(bad)[0]
                    node = tuple(chunk[b]) + tuple(int(k) for k in np.unravel_index(s, state_shape))
                    raise DivergenceError(f"non-finite {which} value at node {node}")
                n_clamped = int(np.count_nonzero(was_clamped))
                if n_clamped and not options.clamp:
                    b, s = np.argwhere(was_clamped)[0]
                    node = tuple(chunk[b]) + tuple(int(k) for k in np.unravel_index(s, state_shape))
                    raise ClampError(f"saddle foot point leaves the state box at node {node}")
                clamp_count += n_clamped
                for b, j in enumerate(chunk):
                    values[j] = val[b].reshape(state_shape)
            level_seconds.append(time.perf_counter() - start)
    finally:
        if pool:
            pool.shutdown()
    logger.debug("%s solve: %d levels in %.3fs", which, len(levels), sum(level_seconds))
    return values, clamp_count, level_seconds


def solve(instance: GameInstance, grid: MultitimeGrid, options: SolverOptions | None = None) -> dict:
    """Solve for the requested values.

    Returns a dict mapping ``"upper"`` / ``"lower"`` to
    ``(ValueField, GeneratingField)`` pairs. With ``options.refinement = r``
    the grid and all box control sets have their spacing halved ``r`` times
    before solving, and the fields live on the refined grid.
    """
    options = options or SolverOptions()
    if options.refinement:
        grid = grid.refined(options.refinement)
        instance = instance.with_refined_controls(options.refinement)
    _check_compatible(instance, grid)
    kinds = ("upper", "lower") if options.which == "both" else (options.which,)
    out = {}
    for which in kinds:
        values, clamp_count, seconds = _march(instance, grid, which, options)
        meta = {
            "instance": instance.name,
            "which": which,
            "clamp_count": clamp_count,
            "options": asdict(options),
            "backend": options.backend or BACKEND,
            "level_seconds": seconds,
        }
        comps = np.broadcast_to(values / grid.m, (grid.m,) + grid.shape).copy()
        out[which] = (
            ValueField(grid, values, kind=which, meta=meta),
            GeneratingField(grid, comps, kind=which, meta=meta),
        )
    return out


def solve_upper(instance: GameInstance, grid: MultitimeGrid, options: SolverOptions | None = None):
    """Upper value ``M`` and its generating field (``min_v max_u`` update)."""
    opts = options or SolverOptions()
    return solve(instance, grid, SolverOptions(**{**asdict(opts), "which": "upper"}))["upper"]


def solve_lower(instance: GameInstance, grid: MultitimeGrid, options: SolverOptions | None = None):
    """Lower value ``m`` and its generating field (``max_u min_v`` update)."""
    opts = options or SolverOptions()
    return solve(instance, grid, SolverOptions(**{**asdict(opts), "which": "lower"}))["lower"]
