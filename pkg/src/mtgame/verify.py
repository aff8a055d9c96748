"""Independent checks on solved fields.

* a brute-force backward-induction oracle for single-time games,
* dynamic programming residuals over larger boxes,
* viscosity sub/supersolution tests against random quadratic test fields,
* payoff evaluation for given control paths,
* field comparison and ordering audits.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .game import GameInstance
from .grid import GeneratingField, MultitimeGrid, ValueField, box_integral
from .hamiltonian import objective_table, saddle_reduce
from .solver import _StepTables, dpp_update

__all__ = [
    "PayoffResult",
    "UnsupportedError",
    "ViolationReport",
    "compare_fields",
    "discrete_game_oracle",
    "dpp_residual",
    "ordering_check",
    "payoff_details",
    "payoff_of_controls",
    "quadratic_test_field",
    "remark2_constraint_residual",
    "viscosity_check",
]

KINDS = ("supersolution", "subsolution", "dpp", "ordering")


class UnsupportedError(ValueError):
    pass


@dataclass
class ViolationReport:
    """Nodes where a check failed, with the amount by which it failed.

    ``max_residual`` is the largest checked quantity including the ones that
    stayed within tolerance; ``max_magnitude`` only covers violations.
    """

    check: str
    violations: list = field(default_factory=list)  # (node, kind, magnitude)
    tested: int = 0
    tolerance: float = 0.0
    max_residual: float = 0.0

    def add(self, node, kind: str, magnitude: float) -> None:
        if kind not in KINDS:
            raise ValueError(f"unknown violation kind {kind!r}")
        self.violations.append((tuple(int(k) for k in node), kind, float(abs(magnitude))))

    @property
    def max_magnitude(self) -> float:
        return max((v[2] for v in self.violations), default=0.0)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self, limit: int | None = 1000) -> dict:
        shown = self.violations if limit is None else self.violations[:limit]
        return {
            "check": self.check,
            "tested": self.tested,
            "tolerance": self.tolerance,
            "max_residual": self.max_residual,
            "max_magnitude": self.max_magnitude,
            "violation_count": len(self.violations),
            "violations": [{"node": list(n), "kind": k, "magnitude": mag} for n, k, mag in shown],
        }


# --------------------------------------------------------------------------
# oracle


def discrete_game_oracle(instance: GameInstance, grid: MultitimeGrid, which: str = "upper") -> ValueField:
    """Backward induction ``V_j(x) = minmax {L dt + V_{j+1}(x + X dt)}`` for m = 1.

    Shares no update code with the solver: interpolation goes through
    scipy's ``RegularGridInterpolator`` and the min-max is reduced here.
    """
    if instance.m != 1 or grid.m != 1:
        raise UnsupportedError(f"the oracle handles single-time games only (m={instance.m})")
    if which not in ("upper", "lower"):
        raise ValueError(f"which must be 'upper' or 'lower', got {which!r}")
    N = grid.time_nodes[0]
    dt = float(grid.dt[0])
    axes = [grid.state_axis(i) for i in range(grid.n)]
    lo, hi = np.array(grid.state_lo), np.array(grid.state_hi)
    xs = grid.state_points()
    U, V = instance.u_set.points, instance.v_set.points
    nu, nv = len(U), len(V)

    out = np.empty(grid.shape)
    out[N - 1] = np.reshape(np.broadcast_to(instance.terminal(xs), (len(xs),)), grid.state_nodes)
    xb = xs[:, None, None, :]
    ub = U[None, :, None, :]
    vb = V[None, None, :, :]
    shape = (len(xs), nu, nv)
    for j in range(N - 2, -1, -1):
        tb = np.full((1, 1, 1, 1), j * dt)
        cost = np.broadcast_to(instance.running(tb, xb, ub, vb), shape)
        vel = np.stack(
            [np.broadcast_to(c, shape) for c in instance.velocity(0, tb, xb, ub, vb)], axis=-1
        )
        foot = np.clip(xb + vel * dt, lo, hi)
        interp = RegularGridInterpolator(axes, out[j + 1], method="linear")
        table = cost * dt + interp(foot.reshape(-1, grid.n)).reshape(shape)
        if which == "upper":
            best = table.max(axis=1).min(axis=1)
        else:
            best = table.min(axis=2).max(axis=1)
        out[j] = best.reshape(grid.state_nodes)
    return ValueField(grid, out, kind="oracle", meta={"instance": instance.name, "which": which})


# --------------------------------------------------------------------------
# dynamic programming residual


def dpp_residual(
    field: ValueField,
    instance: GameInstance,
    box_steps,
    tol: float | None = None,
    which: str | None = None,
) -> ViolationReport:
    """``|M - minmax {L vol(h) + M(t + h, x + sum X h)}|`` at every non-terminal node.

    ``box_steps`` gives the step count per time axis; near the end of an
    axis the step is truncated to what remains. ``which`` defaults to the
    field's kind (``lower`` uses ``max_u min_v``). Default tolerance is 1e-9
    for unit boxes and ``max dt + max dx`` otherwise.
    """
    grid = field.grid
    steps = np.broadcast_to(np.asarray(box_steps, dtype=np.int64), (grid.m,))
    if np.any(steps < 1):
        raise ValueError("box_steps must be >= 1 on every axis")
    which = which or ("lower" if field.kind == "lower" else "upper")
    if tol is None:
        tol = 1e-9 if np.all(steps == 1) else float(grid.dt.max() + grid.dx.max())
    report = ViolationReport(check="dpp", tolerance=tol)
    last = np.array(grid.time_nodes) - 1
    groups: dict[tuple, list] = {}
    for j in itertools.product(*[range(N) for N in grid.time_nodes]):
        h = tuple(int(s) for s in np.minimum(steps, last - np.array(j)))
        if any(h):
            groups.setdefault(h, []).append(j)
    tables = _StepTables(instance, grid)
    for h, nodes in sorted(groups.items()):
        val, _, _, _ = dpp_update(instance, grid, field.values, nodes, h, which, tables=tables)
        current = np.stack([field.values[j].ravel() for j in nodes])
        resid = np.abs(current - val)
        report.tested += resid.size
        report.max_residual = max(report.max_residual, float(resid.max()))
        for b, s in zip(*np.nonzero(resid > tol)):
            node = tuple(nodes[b]) + np.unravel_index(s, grid.state_nodes)
            report.add(node, "dpp", resid[b, s])
    return report


# --------------------------------------------------------------------------
# viscosity inequalities


@dataclass(frozen=True)
class QuadraticField:
    """``w(z) = c + b.(z - z0) + (z - z0).A.(z - z0)`` with ``z = (t_1..t_m, x_1..x_n)``."""

    c: float
    b: np.ndarray
    A: np.ndarray  # symmetric
    z0: np.ndarray

    def __call__(self, z: np.ndarray) -> np.ndarray:
        d = z - self.z0
        return self.c + d @ self.b + np.einsum("...i,ij,...j->...", d, self.A, d)

    def grad(self, z: np.ndarray) -> np.ndarray:
        return self.b + 2.0 * (z - self.z0) @ self.A

    def scale(self) -> float:
        return max(1.0, float(np.abs(self.b).max(initial=0.0)), float(np.abs(self.A).max(initial=0.0)))


def quadratic_test_field(rng: np.random.Generator, grid: MultitimeGrid) -> QuadraticField:
    """Random quadratic centred at a uniform point of the grid's domain.

    Every coefficient is uniform on [-1, 1]; the quadratic form is
    ``sum_{k <= l} a_kl d_k d_l``.
    """
    d = grid.m + grid.n
    lo = np.concatenate([np.zeros(grid.m), grid.state_lo])
    hi = np.concatenate([grid.horizon, grid.state_hi])
    z0 = rng.uniform(lo, hi)
    c = float(rng.uniform(-1.0, 1.0))
    b = rng.uniform(-1.0, 1.0, d)
    A = np.triu(rng.uniform(-1.0, 1.0, (d, d)))
    return QuadraticField(c, b, 0.5 * (A + A.T), z0)


def _local_extrema(diff: np.ndarray):
    """Masks of interior nodes that are >= (resp. <=) all axis neighbours."""
    core = tuple(slice(1, -1) for _ in range(diff.ndim))
    centre = diff[core]
    is_max = np.ones(centre.shape, dtype=bool)
    is_min = np.ones(centre.shape, dtype=bool)
    for ax in range(diff.ndim):
        for shift in (-1, 1):
            sl = list(core)
            sl[ax] = slice(1 + shift, diff.shape[ax] - 1 + shift)
            nb = diff[tuple(sl)]
            is_max &= centre >= nb
            is_min &= centre <= nb
    return is_max, is_min


def viscosity_check(
    field: GeneratingField,
    instance: GameInstance,
    test_family: int = 100,
    rng_seed: int = 0,
    tol_factor: float = 10.0,
    which: str | None = None,
    fields: list | None = None,
) -> ViolationReport:
    """Test the sub/supersolution inequalities with random quadratic fields.

    Each test field ``w`` is split as ``w^alpha = w / m``. At interior nodes
    where ``sum_alpha (field^alpha - w^alpha)`` is a grid-local maximum the
    check is ``sum_alpha dw^alpha/dt^alpha + H(t, x, dw/dx) >= -tol``; at
    local minima it is ``<= tol``. ``H`` is ``H+`` unless the field is a
    lower field. ``tol = tol_factor * (max dt + max dx) * scale(w)`` where
    ``scale(w)`` is the largest absolute coefficient of ``w``, floored at 1.
    ``fields`` replaces the random family with explicit test fields.
    """
    grid = field.grid
    m, n = grid.m, grid.n
    which = which or ("lower" if field.kind == "lower" else "upper")
    rng = np.random.default_rng(rng_seed)
    total = field.total()
    mesh = np.meshgrid(
        *[grid.time_axis(a) for a in range(m)], *[grid.state_axis(i) for i in range(n)], indexing="ij"
    )
    z = np.stack(mesh, axis=-1)
    step = float(grid.dt.max() + grid.dx.max())
    report = ViolationReport(check="viscosity", tolerance=tol_factor * step)
    if any(s < 3 for s in grid.shape):
        return report
    family = fields if fields is not None else [quadratic_test_field(rng, grid) for _ in range(test_family)]
    for w in family:
        tol = tol_factor * step * w.scale()
        is_max, is_min = _local_extrema(total - w(z))
        for mask, kind in ((is_max, "subsolution"), (is_min, "supersolution")):
            nodes = np.argwhere(mask) + 1
            if nodes.size == 0:
                continue
            pts = z[tuple(nodes.T)]
            g = w.grad(pts) / m
            div_t = g[:, :m].sum(axis=1)
            p = np.broadcast_to(g[:, None, m:], (len(pts), m, n))
            table = objective_table(instance, pts[:, :m], pts[:, m:], p)
            ham, _, _ = saddle_reduce(table, which)
            value = div_t + ham
            # amount by which the inequality fails before tolerance
            wrong = np.maximum(-value, 0.0) if kind == "subsolution" else np.maximum(value, 0.0)
            report.tested += len(pts)
            report.max_residual = max(report.max_residual, float(wrong.max()))
            for node, e in zip(nodes, wrong - tol):
                if e > 0:
                    report.add(node, kind, e)
    return report


# --------------------------------------------------------------------------
# payoffs


@dataclass
class PayoffResult:
    value: float
    running: float
    terminal: float
    clamp_count: int
    states: np.ndarray  # box shape + (n,)
    start: tuple


def _control_source(spec, dim: int, box_shape: tuple, start: tuple) -> Callable:
    """Normalise a control description to ``f(index, t, x) -> vector``."""
    if callable(spec):
        return lambda j, t, x: np.asarray(spec(t, x), dtype=float).reshape(dim)
    arr = np.asarray(spec, dtype=float)
    if arr.size == dim and arr.ndim <= 1:
        const = arr.reshape(dim)
        return lambda j, t, x: const
    if arr.shape[:-1] == box_shape or (dim == 0 and arr.shape == box_shape):
        return lambda j, t, x: arr[tuple(a - s for a, s in zip(j, start))].reshape(dim)
    raise ValueError(f"control array has shape {arr.shape}, expected {box_shape + (dim,)}")


def payoff_details(
    instance: GameInstance,
    u_traj,
    v_traj,
    start_t,
    start_x,
    grid: MultitimeGrid,
) -> PayoffResult:
    """Payoff of the given controls from ``(start_t, start_x)``.

    Controls are callables ``(t, x) -> vector``, constant vectors, or arrays
    sampled on the time box from ``start_t`` to the terminal corner (shape
    ``box + (dim,)``). The state is propagated to every node of the box from
    its predecessor ``j - 1_S`` (``S`` the axes where ``j`` is past the
    start) by an explicit Euler step of the m-flow; the running cost is
    integrated over the box by trapezoidal quadrature and ``g(x(T))`` is
    added.
    """
    start_t = np.asarray(start_t, dtype=float).reshape(grid.m)
    pos = start_t / grid.dt
    start = tuple(int(round(p)) for p in pos)
    if not np.allclose(pos, start, atol=1e-9) or any(s < 0 or s >= N for s, N in zip(start, grid.time_nodes)):
        raise ValueError(f"start time {start_t.tolist()} is not a node of the time grid")
    x0 = np.asarray(start_x, dtype=float).reshape(grid.n)
    if not grid.contains_state(x0):
        raise ValueError(f"start state {x0.tolist()} lies outside the state box")
    end = grid.terminal_index
    box_shape = tuple(e - s + 1 for s, e in zip(start, end))
    u_of = _control_source(u_traj, instance.p, box_shape, start)
    v_of = _control_source(v_traj, instance.q, box_shape, start)
    lo, hi = np.array(grid.state_lo), np.array(grid.state_hi)
    dt = grid.dt

    states = np.empty(box_shape + (grid.n,))
    running = np.zeros(grid.time_nodes)
    clamps = 0
    for j in itertools.product(*[range(s, e + 1) for s, e in zip(start, end)]):
        rel = tuple(a - s for a, s in zip(j, start))
        if not any(rel):
            x = x0
        else:
            moved = [a for a in range(grid.m) if rel[a] > 0]
            pred = list(j)
            for a in moved:
                pred[a] -= 1
            pred = tuple(pred)
            px = states[tuple(a - s for a, s in zip(pred, start))]
            pt = grid.time_of(pred)
            pu, pv = u_of(pred, pt, px), v_of(pred, pt, px)
            x = px.copy()
            for a in moved:
                x = x + np.array([float(c) for c in instance.velocity(a, pt, px, pu, pv)]) * dt[a]
            xc = np.clip(x, lo, hi)
            if np.any(xc != x):
                clamps += 1
            x = xc
        states[rel] = x
        t = grid.time_of(j)
        running[j] = float(instance.running(t, x, u_of(j, t, x), v_of(j, t, x)))
    integral = box_integral(running, grid, start, end)
    terminal = float(instance.terminal(states[tuple(b - 1 for b in box_shape)]))
    return PayoffResult(integral + terminal, integral, terminal, clamps, states, start)


def payoff_of_controls(instance, u_traj, v_traj, start_t, start_x, grid: MultitimeGrid) -> float:
    """Payoff ``int L ds + g(x(T))`` of the given controls (see :func:`payoff_details`)."""
    return payoff_details(instance, u_traj, v_traj, start_t, start_x, grid).value


# --------------------------------------------------------------------------
# comparisons


def compare_fields(a: ValueField, b: ValueField) -> tuple[float, float, tuple]:
    """``(sup |a - b|, l2 norm, node of the sup)``.

    The l2 norm is ``sqrt(sum (a - b)^2 * prod(dt) * prod(dx))``; the node is
    the first one (C order) attaining the sup.
    """
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    diff = a.values - b.values
    flat = int(np.argmax(np.abs(diff)))
    node = tuple(int(k) for k in np.unravel_index(flat, diff.shape))
    weight = float(np.prod(a.grid.dt) * np.prod(a.grid.dx))
    return float(np.abs(diff).max()), float(np.sqrt(np.sum(diff**2) * weight)), node


def ordering_check(lower: ValueField, upper: ValueField, tol: float = 1e-9) -> ViolationReport:
    """Flag nodes where ``lower > upper + tol``."""
    if lower.grid != upper.grid:
        raise ValueError("fields live on different grids")
    excess = lower.values - upper.values
    report = ViolationReport(check="ordering", tested=excess.size, tolerance=tol)
    report.max_residual = max(0.0, float(excess.max()))
    for node in np.argwhere(excess > tol):
        report.add(node, "ordering", excess[tuple(node)])
    return report


def remark2_constraint_residual(points) -> float:
    """Largest ``|sum_alpha u_alpha dF/dt^alpha|`` for ``F = t1 / t2`` and
    ``u_alpha = -t^alpha`` over the given ``(k, 2)`` time points."""
    t = np.asarray(points, dtype=float).reshape(-1, 2)
    grad = np.stack([1.0 / t[:, 1], -t[:, 0] / t[:, 1] ** 2], axis=-1)
    u = -t
    return float(np.abs((u * grad).sum(axis=-1)).max())
