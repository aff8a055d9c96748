"""Saddle feedback extraction and staircase integration of the m-flow."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .game import GameInstance
from .grid import MultitimeGrid, ValueField, interp_state
from .hamiltonian import objective_table, saddle_reduce
from .verify import payoff_details

__all__ = [
    "FeedbackPolicy",
    "Sheet",
    "feedback_controls",
    "integrate_flow",
    "realized_vs_value",
    "write_sheet_csv",
]


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Saddle sample indices per grid node (arrays of ``grid.shape``)."""

    grid: MultitimeGrid
    u_points: np.ndarray
    v_points: np.ndarray
    index_u: np.ndarray
    index_v: np.ndarray
    which: str = "upper"

    def at(self, node) -> tuple[np.ndarray, np.ndarray]:
        node = tuple(int(k) for k in node)
        return self.u_points[self.index_u[node]], self.v_points[self.index_v[node]]

    def nearest_node(self, time_index, x) -> tuple:
        grid = self.grid
        pos = (np.asarray(x, dtype=float) - np.array(grid.state_lo)) / grid.dx
        cell = np.clip(np.rint(pos).astype(int), 0, np.array(grid.state_nodes) - 1)
        return tuple(int(k) for k in time_index) + tuple(int(k) for k in cell)

    def lookup(self, time_index, x) -> tuple[np.ndarray, np.ndarray]:
        """Controls stored at the state node nearest to ``x``."""
        return self.at(self.nearest_node(time_index, x))

    def time_index(self, t) -> tuple:
        return tuple(int(k) for k in np.rint(np.asarray(t, dtype=float) / self.grid.dt))

    def u_of(self, t, x) -> np.ndarray:
        return self.lookup(self.time_index(t), x)[0]

    def v_of(self, t, x) -> np.ndarray:
        return self.lookup(self.time_index(t), x)[1]


def feedback_controls(field: ValueField, instance: GameInstance, grid: MultitimeGrid | None = None) -> FeedbackPolicy:
    """Saddle controls of the Hamiltonian at the field's own costate.

    ``p_i^alpha = (1/m) dM/dx^i`` by central differences in the interior and
    one-sided differences on the state boundary. Upper fields use the
    ``min_v max_u`` saddle, lower fields ``max_u min_v``; ties go to the
    first sample.
    """
    grid = grid or field.grid
    if grid != field.grid:
        raise ValueError("field does not live on the given grid")
    m, n = grid.m, grid.n
    which = "lower" if field.kind == "lower" else "upper"
    grads = [
        np.gradient(field.values, grid.dx[i], axis=m + i, edge_order=1) if grid.state_nodes[i] > 1 else None
        for i in range(n)
    ]
    xs = grid.state_points()
    S = len(xs)
    iu = np.empty(grid.shape, dtype=np.int64)
    iv = np.empty(grid.shape, dtype=np.int64)
    for j in itertools.product(*[range(N) for N in grid.time_nodes]):
        g = np.stack([grads[i][j].reshape(S) for i in range(n)], axis=-1) / m
        p = np.broadcast_to(g[:, None, :], (S, m, n))
        t = np.broadcast_to(grid.time_of(j), (S, m))
        _, a, b = saddle_reduce(objective_table(instance, t, xs, p), which)
        iu[j] = a.reshape(grid.state_nodes)
        iv[j] = b.reshape(grid.state_nodes)
    return FeedbackPolicy(grid, instance.u_set.points, instance.v_set.points, iu, iv, which)


@dataclass
class Sheet:
    """A staircase path through the time box with the states along it.

    Row ``k`` holds time multi-index ``time_index[k]``, state ``states[k]``,
    the controls applied from that node and the running cost accumulated
    before reaching it.
    """

    grid: MultitimeGrid
    time_index: list = field(default_factory=list)
    states: list = field(default_factory=list)
    u: list = field(default_factory=list)
    v: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    compatibility_residual: float = 0.0
    clamp_count: int = 0

    def __len__(self) -> int:
        return len(self.time_index)

    @property
    def start(self) -> tuple:
        return self.time_index[0]

    @property
    def end(self) -> tuple:
        return self.time_index[-1]

    def state_array(self) -> np.ndarray:
        return np.array(self.states)


def _controls_fn(instance: GameInstance, source) -> Callable:
    """``f(node_index, x) -> (u, v)`` from a policy or a ``(t, x) -> (u, v)`` callable."""
    if isinstance(source, FeedbackPolicy):
        return lambda j, t, x: source.lookup(j, x)
    if callable(source):

        def call(j, t, x):
            u, v = source(t, x)
            return np.asarray(u, dtype=float).reshape(instance.p), np.asarray(v, dtype=float).reshape(instance.q)

        return call
    raise TypeError("controls must be a FeedbackPolicy or a callable (t, x) -> (u, v)")


def _euler(instance, t, x, u, v, axes, dt) -> np.ndarray:
    out = np.array(x, dtype=float)
    for a in axes:
        out = out + np.array([float(c) for c in instance.velocity(a, t, x, u, v)]) * dt[a]
    return out


def _swap_residual(instance, grid, j, x, u, v, axes) -> float:
    """Largest gap between integrating one box along axis a then b and b then a."""
    dt = grid.dt
    worst = 0.0
    for a, b in itertools.combinations(axes, 2):
        ends = []
        for first, second in ((a, b), (b, a)):
            mid = _euler(instance, grid.time_of(j), x, u, v, [first], dt)
            tj = list(j)
            tj[first] += 1
            ends.append(_euler(instance, grid.time_of(tj), mid, u, v, [second], dt))
        worst = max(worst, float(np.abs(ends[0] - ends[1]).max()))
    return worst


def integrate_flow(
    instance: GameInstance,
    controls,
    start_index,
    start_x,
    grid: MultitimeGrid,
    threshold: float = np.inf,
) -> Sheet:
    """Integrate the m-flow along the diagonal staircase from a start node.

    Every move steps all time axes that have not reached their end by one
    node, ``x <- x + sum_alpha X_alpha(t, x, u, v) dt^alpha``, with the
    controls taken at the current node. For ``m >= 2`` each move also
    re-integrates the box one axis at a time in both orders for every pair
    of stepped axes (controls held fixed) and records the largest state
    discrepancy as the compatibility residual.

    Raises:
        ValueError: start outside the grid, or compatibility residual above
            ``threshold`` (non-integrable dynamics).
    """
    start = tuple(int(k) for k in start_index)
    if len(start) != grid.m or any(not 0 <= s < N for s, N in zip(start, grid.time_nodes)):
        raise ValueError(f"start index {start} lies outside the time grid")
    x = np.asarray(start_x, dtype=float).reshape(grid.n)
    if not grid.contains_state(x):
        raise ValueError(f"start state {x.tolist()} lies outside the state box")
    pick = _controls_fn(instance, controls)
    last = np.array(grid.time_nodes) - 1
    lo, hi = np.array(grid.state_lo), np.array(grid.state_hi)
    dt = grid.dt
    sheet = Sheet(grid)
    j = start
    acc = 0.0
    while True:
        t = grid.time_of(j)
        u, v = pick(j, t, x)
        sheet.time_index.append(j)
        sheet.states.append(x.copy())
        sheet.u.append(np.asarray(u, dtype=float))
        sheet.v.append(np.asarray(v, dtype=float))
        sheet.cost.append(acc)
        axes = [a for a in range(grid.m) if j[a] < last[a]]
        if not axes:
            break
        if len(axes) >= 2:
            sheet.compatibility_residual = max(
                sheet.compatibility_residual, _swap_residual(instance, grid, j, x, u, v, axes)
            )
        vol = float(np.prod(dt[axes])) if len(axes) == grid.m else 0.0
        acc += float(instance.running(t, x, u, v)) * vol
        nxt = _euler(instance, t, x, u, v, axes, dt)
        clipped = np.clip(nxt, lo, hi)
        if np.any(clipped != nxt):
            sheet.clamp_count += 1
        x = clipped
        j = tuple(k + 1 if a in axes else k for a, k in enumerate(j))
    if sheet.compatibility_residual > threshold:
        raise ValueError(
            f"compatibility residual {sheet.compatibility_residual:.3g} exceeds {threshold:.3g}: "
            "the m-flow is not integrable along this sheet"
        )
    return sheet


def realized_vs_value(
    instance: GameInstance,
    field: ValueField,
    policy: FeedbackPolicy,
    start_index,
    start_x,
) -> tuple[float, float, float]:
    """``(realized payoff, value at start, |difference|)`` under the policy.

    The realized payoff applies the policy's feedback over the whole time box
    from the start node (see :func:`mtgame.verify.payoff_details`).
    """
    grid = field.grid
    start = tuple(int(k) for k in start_index)
    t0 = grid.time_of(start)
    realized = payoff_details(instance, policy.u_of, policy.v_of, t0, start_x, grid).value
    value = float(interp_state(field.values[start], grid, np.asarray(start_x, dtype=float))[0])
    return realized, value, abs(realized - value)


def write_sheet_csv(sheet: Sheet, instance: GameInstance, path) -> None:
    """CSV with ``step, t1..tm, x1..xn, u1..up, v1..vq, cost``."""
    grid = sheet.grid
    header = (
        ["step"]
        + [f"t{a + 1}" for a in range(grid.m)]
        + [f"x{i + 1}" for i in range(grid.n)]
        + [f"u{k + 1}" for k in range(instance.p)]
        + [f"v{k + 1}" for k in range(instance.q)]
        + ["cost"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, j in enumerate(sheet.time_index):
            row = [str(k)]
            row += [format(t, ".17g") for t in grid.time_of(j)]
            row += [format(c, ".17g") for c in sheet.states[k]]
            row += [format(c, ".17g") for c in sheet.u[k]]
            row += [format(c, ".17g") for c in sheet.v[k]]
            row.append(format(sheet.cost[k], ".17g"))
            writer.writerow(row)
