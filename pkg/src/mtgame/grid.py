"""Tensor-product grids over the multitime box times a state box.

Field arrays are laid out with the time axes first, then the state axes:
``values.shape == (N_1, ..., N_m, Nx_1, ..., Nx_n)``.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

__all__ = [
    "ExtrapolationError",
    "GeneratingField",
    "GridError",
    "GridTooCoarseError",
    "MultitimeGrid",
    "ValueField",
    "antidiagonal_levels",
    "box_integral",
    "divergence_residual",
    "interp_state",
    "read_field_csv",
    "spatial_gradient",
    "write_field_csv",
    "write_json",
]


class GridError(ValueError):
    pass


class GridTooCoarseError(GridError):
    pass


class ExtrapolationError(GridError):
    pass


def _tup(values, cast=float) -> tuple:
    return tuple(cast(v) for v in np.atleast_1d(values))


@dataclass(frozen=True)
class MultitimeGrid:
    time_nodes: tuple
    horizon: tuple
    state_lo: tuple
    state_hi: tuple
    state_nodes: tuple

    def __post_init__(self):
        object.__setattr__(self, "time_nodes", _tup(self.time_nodes, int))
        object.__setattr__(self, "horizon", _tup(self.horizon))
        object.__setattr__(self, "state_lo", _tup(self.state_lo))
        object.__setattr__(self, "state_hi", _tup(self.state_hi))
        object.__setattr__(self, "state_nodes", _tup(self.state_nodes, int))
        if len(self.time_nodes) != len(self.horizon):
            raise GridError("time_nodes and horizon differ in length")
        if not (len(self.state_lo) == len(self.state_hi) == len(self.state_nodes)):
            raise GridError("state box specification differs in length")
        if any(N < 2 for N in self.time_nodes + self.state_nodes):
            raise GridTooCoarseError("every axis needs at least 2 nodes")
        if any(T <= 0 for T in self.horizon):
            raise GridError("horizon entries must be positive")
        if any(hi <= lo for lo, hi in zip(self.state_lo, self.state_hi)):
            raise GridError("state box needs lo < hi on every axis")

    @classmethod
    def for_instance(cls, instance, time_nodes, state_lo, state_hi, state_nodes) -> "MultitimeGrid":
        m, n = instance.m, instance.n
        tn = _tup(time_nodes, int)
        return cls(
            time_nodes=tn * m if len(tn) == 1 else tn,
            horizon=instance.horizon,
            state_lo=_tup(state_lo) * n if len(_tup(state_lo)) == 1 else state_lo,
            state_hi=_tup(state_hi) * n if len(_tup(state_hi)) == 1 else state_hi,
            state_nodes=_tup(state_nodes, int) * n if len(_tup(state_nodes, int)) == 1 else state_nodes,
        )

    @property
    def m(self) -> int:
        return len(self.time_nodes)

    @property
    def n(self) -> int:
        return len(self.state_nodes)

    @property
    def shape(self) -> tuple:
        return self.time_nodes + self.state_nodes

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def dt(self) -> np.ndarray:
        return np.array([T / (N - 1) for T, N in zip(self.horizon, self.time_nodes)])

    @property
    def dx(self) -> np.ndarray:
        return np.array(
            [(hi - lo) / (N - 1) for lo, hi, N in zip(self.state_lo, self.state_hi, self.state_nodes)]
        )

    def time_axis(self, alpha: int) -> np.ndarray:
        return np.arange(self.time_nodes[alpha]) * self.dt[alpha]

    def state_axis(self, i: int) -> np.ndarray:
        return self.state_lo[i] + np.arange(self.state_nodes[i]) * self.dx[i]

    def time_of(self, index) -> np.ndarray:
        return np.asarray(index, dtype=float) * self.dt

    def state_points(self) -> np.ndarray:
        """All state nodes, shape ``(prod(state_nodes), n)``, C order."""
        mesh = np.meshgrid(*[self.state_axis(i) for i in range(self.n)], indexing="ij")
        return np.stack([a.ravel() for a in mesh], axis=-1)

    @property
    def terminal_index(self) -> tuple:
        return tuple(N - 1 for N in self.time_nodes)

    def refined(self, levels: int = 1) -> "MultitimeGrid":
        """Halve every spacing ``levels`` times (``N -> 2N - 1``)."""
        tn, sn = self.time_nodes, self.state_nodes
        for _ in range(levels):
            tn = tuple(2 * N - 1 for N in tn)
            sn = tuple(2 * N - 1 for N in sn)
        return MultitimeGrid(tn, self.horizon, self.state_lo, self.state_hi, sn)

    def describe(self) -> dict:
        return {
            "time_nodes": list(self.time_nodes),
            "horizon": list(self.horizon),
            "state_lo": list(self.state_lo),
            "state_hi": list(self.state_hi),
            "state_nodes": list(self.state_nodes),
        }

    def contains_state(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= np.array(self.state_lo) - tol) and np.all(x <= np.array(self.state_hi) + tol))


@dataclass
class ValueField:
    """Scalar samples on a grid. ``kind`` is ``upper``, ``lower`` or ``oracle``."""

    grid: MultitimeGrid
    values: np.ndarray
    kind: str = "upper"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")


@dataclass
class GeneratingField:
    """m components per node, ``components.shape == (m,) + grid.shape``."""

    grid: MultitimeGrid
    components: np.ndarray
    kind: str = "upper"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.components.shape != (self.grid.m,) + self.grid.shape:
            raise GridError("generating field components do not match the grid")

    def total(self) -> np.ndarray:
        return self.components.sum(axis=0)


# --------------------------------------------------------------------------
# finite differences and quadrature


def _diff_along(values: np.ndarray, axis: int, index: tuple, step: float, scheme: str, sign: int) -> float:
    size = values.shape[axis]
    if size < 2:
        raise GridTooCoarseError(f"axis {axis} has fewer than 2 nodes")
    j = index[axis]

    def at(k):
        idx = list(index)
        idx[axis] = k
        return values[tuple(idx)]

    if scheme == "central":
        if j == 0 or j == size - 1:
            raise GridError(f"central difference needs an interior node on axis {axis}, got index {j}")
        return (at(j + 1) - at(j - 1)) / (2.0 * step)
    forward = sign >= 0
    if forward and j == size - 1:
        forward = False
    elif not forward and j == 0:
        forward = True
    if forward:
        return (at(j + 1) - at(j)) / step
    return (at(j) - at(j - 1)) / step


def spatial_gradient(field, node: Sequence[int], scheme: str = "central", sign: int = 1) -> np.ndarray:
    """Finite-difference state gradient of a field at a grid node.

    ``field`` is a :class:`ValueField` (returns an n-vector) or a
    :class:`GeneratingField` (returns an ``(m, n)`` matrix, row alpha holding
    the gradient of component alpha). ``scheme`` is ``"central"`` (interior
    nodes only) or ``"upwind"``, a one-sided difference whose direction is
    given by ``sign`` and flips at the boundary.
    """
    grid = field.grid
    node = tuple(int(k) for k in node)
    if len(node) != grid.m + grid.n:
        raise GridError(f"node index needs {grid.m + grid.n} entries")
    if scheme not in ("central", "upwind"):
        raise ValueError(f"unknown scheme {scheme!r}")
    dx = grid.dx

    def grad(values):
        return np.array(
            [_diff_along(values, grid.m + i, node, dx[i], scheme, sign) for i in range(grid.n)]
        )

    if isinstance(field, GeneratingField):
        return np.stack([grad(c) for c in field.components])
    return grad(field.values)


def _trapezoid_weights(count: int, step: float) -> np.ndarray:
    w = np.full(count, step)
    w[0] = w[-1] = 0.5 * step
    return w


def box_integral(integrand: np.ndarray, grid: MultitimeGrid, corner_lo, corner_hi) -> float:
    """Trapezoidal quadrature over the time box between two node multi-indices.

    ``integrand`` is sampled on the time grid (shape ``grid.time_nodes``).
    A box with a degenerate edge has zero volume and integrates to 0.
    """
    lo = tuple(int(k) for k in corner_lo)
    hi = tuple(int(k) for k in corner_hi)
    if len(lo) != grid.m or len(hi) != grid.m:
        raise IndexError("corner indices must have one entry per time axis")
    for a, (l, h) in enumerate(zip(lo, hi)):
        if not (0 <= l < grid.time_nodes[a] and 0 <= h < grid.time_nodes[a]):
            raise IndexError(f"corner outside the grid on time axis {a}")
        if l > h:
            raise IndexError(f"corner_lo exceeds corner_hi on time axis {a}")
    if any(l == h for l, h in zip(lo, hi)):
        return 0.0
    block = np.asarray(integrand, dtype=float)[tuple(slice(l, h + 1) for l, h in zip(lo, hi))]
    dt = grid.dt
    for a in range(grid.m - 1, -1, -1):
        w = _trapezoid_weights(block.shape[a], dt[a])
        block = np.tensordot(block, w, axes=([a], [0]))
    return float(block)


def antidiagonal_levels(grid: MultitimeGrid) -> list[list[tuple]]:
    """Time multi-indices grouped by index sum, largest sum first.

    Processing levels in this order visits every forward neighbor of a node
    (``+1`` on any non-empty subset of axes) before the node itself.
    """
    buckets: dict[int, list[tuple]] = {}
    for idx in itertools.product(*[range(N) for N in grid.time_nodes]):
        buckets.setdefault(sum(idx), []).append(idx)
    return [buckets[s] for s in sorted(buckets, reverse=True)]


# --------------------------------------------------------------------------
# interpolation in the state variables


def interp_state(values: np.ndarray, grid: MultitimeGrid, x) -> tuple[np.ndarray, np.ndarray]:
    """Multilinear interpolation of state-grid samples.

    ``values`` has the state shape as its trailing axes (any leading axes are
    carried along); ``x`` has shape ``(..., n)``. Queries outside the box are
    clamped to it. Returns ``(result, clamped)``, where ``clamped`` marks the
    queries that were moved.
    """
    x = np.asarray(x, dtype=float)
    lo = np.array(grid.state_lo)
    hi = np.array(grid.state_hi)
    nodes = np.array(grid.state_nodes)
    xc = np.clip(x, lo, hi)
    clamped = np.any(xc != x, axis=-1)
    pos = (xc - lo) / grid.dx
    cell = np.clip(np.floor(pos).astype(np.int64), 0, nodes - 2)
    theta = np.clip(pos - cell, 0.0, 1.0)
    result = 0.0
    for corner in itertools.product((0, 1), repeat=grid.n):
        weight = 1.0
        index = []
        for i, bit in enumerate(corner):
            weight = weight * (theta[..., i] if bit else 1.0 - theta[..., i])
            index.append(cell[..., i] + bit)
        # leading axes of ``values`` stay in front of the query axes
        result = result + weight * values[(Ellipsis,) + tuple(index)]
    return np.asarray(result), clamped


def _interp_gradient(values: np.ndarray, grid: MultitimeGrid, x: np.ndarray) -> np.ndarray:
    """Gradient of the state interpolant by central differences of width dx."""
    grad = np.empty(grid.n)
    lo = np.array(grid.state_lo)
    hi = np.array(grid.state_hi)
    for i in range(grid.n):
        step = grid.dx[i]
        xp = x.copy()
        xm = x.copy()
        xp[i] = min(x[i] + 0.5 * step, hi[i])
        xm[i] = max(x[i] - 0.5 * step, lo[i])
        fp, _ = interp_state(values, grid, xp)
        fm, _ = interp_state(values, grid, xm)
        grad[i] = (float(fp) - float(fm)) / (xp[i] - xm[i])
    return grad


def _time_derivative(values: np.ndarray, grid: MultitimeGrid, tidx: tuple, alpha: int, x) -> float:
    N = grid.time_nodes[alpha]
    j = tidx[alpha]
    lo_j, hi_j = (j - 1, j + 1) if 0 < j < N - 1 else ((j, j + 1) if j == 0 else (j - 1, j))
    a = list(tidx)
    b = list(tidx)
    a[alpha] = lo_j
    b[alpha] = hi_j
    fa, _ = interp_state(values[tuple(a)], grid, x)
    fb, _ = interp_state(values[tuple(b)], grid, x)
    return (float(fb) - float(fa)) / ((hi_j - lo_j) * grid.dt[alpha])


def divergence_residual(
    field: GeneratingField,
    path_start: Sequence[int],
    path_end: Sequence[int],
    state_path,
    time_path: Sequence[Sequence[int]] | None = None,
    report_constant: bool = False,
) -> float:
    """Check the generating-field identity along a monotone staircase path.

    Computes ``|S(end) - S(start) - I|`` where ``S = sum_alpha field^alpha``
    and ``I`` integrates the total derivative of ``S`` along the path: each
    step contributes ``sum_alpha dS/dt^alpha * h^alpha + grad_x S . dx``,
    with derivatives taken by finite differences of the grid field at both
    step ends and averaged (trapezoid). The hyperbolic constant is taken as 0;
    with ``report_constant=True`` the signed best-fit constant
    ``S(end) - S(start) - I`` is returned instead.

    ``time_path`` lists the time multi-index of every path sample; when it
    is omitted the diagonal staircase from ``path_start`` to ``path_end`` is
    assumed. ``state_path`` has shape ``(len(time_path), n)``.
    """
    grid = field.grid
    start = tuple(int(k) for k in path_start)
    end = tuple(int(k) for k in path_end)
    if any(s > e for s, e in zip(start, end)):
        raise GridError("path_start must not exceed path_end")
    if time_path is None:
        time_path = _staircase(start, end)
    time_path = [tuple(int(k) for k in j) for j in time_path]
    states = np.asarray(state_path, dtype=float).reshape(len(time_path), grid.n)
    if time_path[0] != start or time_path[-1] != end:
        raise GridError("time path does not run from path_start to path_end")
    for x in states:
        if not grid.contains_state(x):
            raise ExtrapolationError(f"trajectory point {x.tolist()} leaves the state grid")
    total = field.total()
    dt = grid.dt

    def sample(j, x):
        return float(interp_state(total[j], grid, x)[0])

    def derivatives(j, x):
        dS_dt = np.array([_time_derivative(total, grid, j, a, x) for a in range(grid.m)])
        return dS_dt, _interp_gradient(total[j], grid, x)

    integral = 0.0
    prev = derivatives(time_path[0], states[0])
    for k in range(len(time_path) - 1):
        j0, j1 = time_path[k], time_path[k + 1]
        h = (np.array(j1) - np.array(j0)) * dt
        dx = states[k + 1] - states[k]
        cur = derivatives(j1, states[k + 1])
        integral += 0.5 * ((prev[0] + cur[0]) @ h + (prev[1] + cur[1]) @ dx)
        prev = cur
    signed = sample(end, states[-1]) - sample(start, states[0]) - integral
    return signed if report_constant else abs(signed)


def _staircase(start: tuple, end: tuple) -> list[tuple]:
    path = [start]
    cur = list(start)
    while tuple(cur) != end:
        cur = [c + 1 if c < e else c for c, e in zip(cur, end)]
        path.append(tuple(cur))
    return path


# --------------------------------------------------------------------------
# serialization


def write_field_csv(field, path) -> None:
    """Write a field as CSV: ``t1..tm, x1..xn`` then ``value`` (scalar field)
    or ``value_alpha1..value_alpham`` (generating field), 17 significant
    digits."""
    grid = field.grid
    cols = [f"t{a + 1}" for a in range(grid.m)] + [f"x{i + 1}" for i in range(grid.n)]
    if isinstance(field, GeneratingField):
        cols += [f"value_alpha{a + 1}" for a in range(grid.m)]
        data = field.components.reshape(grid.m, -1).T
    else:
        cols.append("value")
        data = field.values.reshape(-1, 1)
    axes = [grid.time_axis(a) for a in range(grid.m)] + [grid.state_axis(i) for i in range(grid.n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for flat, idx in enumerate(itertools.product(*[range(len(ax)) for ax in axes])):
            coords = [format(axes[k][j], ".17g") for k, j in enumerate(idx)]
            writer.writerow(coords + [format(v, ".17g") for v in data[flat]])


def read_field_csv(path, grid: MultitimeGrid, kind: str = "upper"):
    """Read a field written by :func:`write_field_csv` back onto ``grid``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    value_cols = [k for k, name in enumerate(header) if name.startswith("value")]
    if len(body) != grid.size:
        raise GridError(f"{path}: {len(body)} rows, grid has {grid.size} nodes")
    data = np.array([[float(r[k]) for k in value_cols] for r in body])
    if len(value_cols) == 1 and header[value_cols[0]] == "value":
        return ValueField(grid, data[:, 0].reshape(grid.shape), kind=kind)
    comps = data.T.reshape((grid.m,) + grid.shape)
    return GeneratingField(grid, comps, kind=kind)


def write_json(payload: Any, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")
