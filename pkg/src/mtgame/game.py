"""Game instances, sampled control sets and the built-in catalog.

Role convention used everywhere in the package: ``u`` maximizes the payoff,
``v`` minimizes it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .expr import Expression, evaluate, parse, to_source, variables

__all__ = [
    "CATALOG",
    "CatalogError",
    "ControlSet",
    "GameInstance",
    "InvalidSpecError",
    "catalog_instance",
    "sample_control_set",
    "zero_game",
]


class InvalidSpecError(ValueError):
    pass


class CatalogError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class ControlSet:
    """A finite set of control samples, shape ``(k, dim)``.

    ``dim`` may be 0 for an absent player; the set then holds a single empty
    point so min/max over it is a no-op.
    """

    points: np.ndarray
    box: tuple | None = None  # ((lo, ...), (hi, ...), k) when built from a box

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidSpecError("control set must contain at least one point")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_box(cls, lo: Sequence[float], hi: Sequence[float], k: int) -> "ControlSet":
        lo = tuple(float(a) for a in np.atleast_1d(lo))
        hi = tuple(float(b) for b in np.atleast_1d(hi))
        if len(lo) != len(hi):
            raise InvalidSpecError("box bounds have different lengths")
        if k < 1:
            raise InvalidSpecError(f"samples per axis must be >= 1, got {k}")
        axes = []
        for a, b in zip(lo, hi):
            if a > b:
                raise InvalidSpecError(f"box bound lo={a} exceeds hi={b}")
            if k == 1:
                values = [0.5 * (a + b)]
            else:
                values = [a + (b - a) * j / (k - 1) for j in range(k)]
                values[-1] = b
            # a degenerate axis collapses to one sample
            axes.append(list(dict.fromkeys(values)))
        pts = np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(lo))
        return cls(pts, box=(lo, hi, int(k)))

    @classmethod
    def from_points(cls, points) -> "ControlSet":
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.size == 0:
            raise InvalidSpecError("explicit control list is empty")
        return cls(pts)

    @classmethod
    def empty(cls) -> "ControlSet":
        return cls(np.zeros((1, 0)))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def refined(self, levels: int = 1) -> "ControlSet":
        """Halve the sample spacing ``levels`` times (box sets only)."""
        if self.box is None or levels == 0:
            return self
        lo, hi, k = self.box
        for _ in range(levels):
            k = 2 * k - 1 if k > 1 else 1
        return ControlSet.from_box(lo, hi, k)

    def spacing(self) -> float:
        """Largest per-axis sample spacing (0 for singletons)."""
        if self.box is None:
            if len(self) < 2:
                return 0.0
            gaps = [np.diff(np.unique(self.points[:, j])) for j in range(self.dim)]
            return float(max((g.max() for g in gaps if g.size), default=0.0))
        lo, hi, k = self.box
        if k < 2:
            return 0.0
        return max((b - a) / (k - 1) for a, b in zip(lo, hi))

    def describe(self) -> dict:
        if self.box is not None:
            lo, hi, k = self.box
            return {"kind": "box", "lo": list(lo), "hi": list(hi), "k": k}
        return {"kind": "points", "points": self.points.tolist()}


def sample_control_set(spec: Mapping[str, Any]) -> ControlSet:
    """Build a :class:`ControlSet` from a description.

    ``{"lo": [...], "hi": [...], "k": int}`` gives a box sampled with ``k``
    points per axis (both endpoints included for ``k >= 2``, the midpoint for
    ``k == 1``); ``{"points": [...]}`` gives an explicit list kept in order.
    """
    if "points" in spec:
        return ControlSet.from_points(spec["points"])
    try:
        return ControlSet.from_box(spec["lo"], spec["hi"], int(spec["k"]))
    except KeyError as exc:
        raise InvalidSpecError(f"control set spec is missing {exc.args[0]!r}") from None


def _as_expr(src) -> Expression:
    return parse(src) if isinstance(src, str) else src


@dataclass(frozen=True, eq=False)
class GameInstance:
    """A two-team multitime differential game.

    ``dynamics[alpha][i]`` is the expression for the i-th state velocity along
    time axis ``alpha``. Expressions may reference ``t1..tm``, ``x1..xn``,
    ``u1..up`` and ``v1..vq``; the terminal cost only ``x1..xn``.
    """

    name: str
    m: int
    n: int
    p: int
    q: int
    horizon: tuple
    dynamics: tuple
    running_cost: Expression
    terminal_cost: Expression
    u_set: ControlSet
    v_set: ControlSet
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        horizon = tuple(float(T) for T in np.atleast_1d(self.horizon))
        object.__setattr__(self, "horizon", horizon)
        dynamics = tuple(tuple(_as_expr(e) for e in row) for row in self.dynamics)
        object.__setattr__(self, "dynamics", dynamics)
        object.__setattr__(self, "running_cost", _as_expr(self.running_cost))
        object.__setattr__(self, "terminal_cost", _as_expr(self.terminal_cost))
        self.validate()

    def validate(self) -> None:
        if self.m < 1 or self.n < 1 or self.p < 0 or self.q < 0:
            raise InvalidSpecError(f"bad dimensions m={self.m} n={self.n} p={self.p} q={self.q}")
        if len(self.horizon) != self.m or any(T <= 0 for T in self.horizon):
            raise InvalidSpecError(f"horizon must be {self.m} positive reals, got {self.horizon}")
        if len(self.dynamics) != self.m or any(len(row) != self.n for row in self.dynamics):
            raise InvalidSpecError(f"dynamics must be an {self.m}x{self.n} array of expressions")
        if self.u_set.dim != self.p or self.v_set.dim != self.q:
            raise InvalidSpecError(
                f"control sets have dims ({self.u_set.dim}, {self.v_set.dim}), expected ({self.p}, {self.q})"
            )
        legal = self.legal_variables()
        state_only = {f"x{i + 1}" for i in range(self.n)}
        checks = [("L", self.running_cost, legal), ("g", self.terminal_cost, state_only)]
        for a, row in enumerate(self.dynamics):
            for i, e in enumerate(row):
                checks.append((f"X{a + 1}_{i + 1}", e, legal))
        for label, e, allowed in checks:
            bad = sorted(variables(e) - allowed)
            if bad:
                raise InvalidSpecError(f"{label} references illegal variable(s) {', '.join(bad)}")

    def legal_variables(self) -> set[str]:
        names = {f"t{a + 1}" for a in range(self.m)}
        names |= {f"x{i + 1}" for i in range(self.n)}
        names |= {f"u{a + 1}" for a in range(self.p)}
        names |= {f"v{b + 1}" for b in range(self.q)}
        return names

    def bindings(self, t, x, u, v) -> dict:
        """Variable bindings from per-family arrays whose last axis indexes
        the components (``t[..., alpha]``, ``x[..., i]`` and so on)."""
        out = {}
        for prefix, arr, count in (("t", t, self.m), ("x", x, self.n), ("u", u, self.p), ("v", v, self.q)):
            if count == 0:
                continue
            arr = np.asarray(arr, dtype=float)
            for j in range(count):
                out[f"{prefix}{j + 1}"] = arr[..., j]
        return out

    def running(self, t, x, u, v):
        return evaluate(self.running_cost, self.bindings(t, x, u, v))

    def velocity(self, alpha: int, t, x, u, v) -> list:
        """Velocities ``X_alpha^i`` for i = 1..n at the given bindings."""
        b = self.bindings(t, x, u, v)
        return [evaluate(e, b) for e in self.dynamics[alpha]]

    def terminal(self, x):
        x = np.asarray(x, dtype=float)
        return evaluate(self.terminal_cost, {f"x{i + 1}": x[..., i] for i in range(self.n)})

    def time_dependent(self) -> bool:
        names = variables(self.running_cost)
        for row in self.dynamics:
            for e in row:
                names |= variables(e)
        return any(name.startswith("t") for name in names)

    def with_refined_controls(self, levels: int) -> "GameInstance":
        if levels == 0:
            return self
        return replace(self, u_set=self.u_set.refined(levels), v_set=self.v_set.refined(levels))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "m": self.m,
            "n": self.n,
            "p": self.p,
            "q": self.q,
            "horizon": list(self.horizon),
            "dynamics": [[to_source(e) for e in row] for row in self.dynamics],
            "running_cost": to_source(self.running_cost),
            "terminal_cost": to_source(self.terminal_cost),
            "u_set": self.u_set.describe(),
            "v_set": self.v_set.describe(),
        }


def _remark1(m: int, k: int) -> GameInstance:
    # min over the first player, max over the second in the original
    # statement; relabeled so that v (minimizer) is the shifting control
    return GameInstance(
        name="remark1",
        m=m,
        n=1,
        p=1,
        q=1,
        horizon=(1.0,) * m,
        dynamics=[["u1 + v1"] for _ in range(m)],
        running_cost="(x1 + v1)^2 - u1^2",
        terminal_cost="0",
        u_set=ControlSet.from_box([-1.0], [1.0], k),
        v_set=ControlSet.from_box([-2.0], [2.0], k),
        metadata={"closed_form_value": 0.0, "saddle": "u1 = 0, v1 = -x1"},
    )


def _remark2(m: int, k: int) -> GameInstance:
    cost = " + ".join(f"(t{a + 1} + u{a + 1})^2" for a in range(m))
    return GameInstance(
        name="remark2",
        m=m,
        n=1,
        p=m,
        q=0,
        horizon=(1.0,) * m,
        dynamics=[["0"] for _ in range(m)],
        running_cost=cost,
        terminal_cost="0",
        u_set=ControlSet.from_box([-1.0] * m, [1.0] * m, k),
        v_set=ControlSet.empty(),
        metadata={"optimal_payoff": 0.0, "optimal_control": "u_alpha = -t_alpha"},
    )


def _bilinear_gap(m: int, k: int) -> GameInstance:
    return GameInstance(
        name="bilinear_gap",
        m=m,
        n=1,
        p=1,
        q=1,
        horizon=(1.0,) * m,
        dynamics=[["0"] for _ in range(m)],
        running_cost="u1 * v1",
        terminal_cost="0",
        u_set=ControlSet.from_points([-1.0, 0.0, 1.0]),
        v_set=ControlSet.from_points([-1.0, 1.0]),
        metadata={"upper_hamiltonian": 1.0, "lower_hamiltonian": 0.0},
    )


def _separable_isaacs(m: int, k: int) -> GameInstance:
    return GameInstance(
        name="separable_isaacs",
        m=m,
        n=1,
        p=1,
        q=1,
        horizon=(1.0,) * m,
        dynamics=[["u1 - v1"] for _ in range(m)],
        running_cost="v1^2 - u1^2 + x1^2",
        terminal_cost="x1^2",
        u_set=ControlSet.from_box([-1.0], [1.0], k),
        v_set=ControlSet.from_box([-1.0], [1.0], k),
        metadata={"isaacs_gap": 0.0},
    )


CATALOG = {
    "remark1": _remark1,
    "remark2": _remark2,
    "bilinear_gap": _bilinear_gap,
    "separable_isaacs": _separable_isaacs,
}


def catalog_instance(name: str, m: int = 1, k: int = 21) -> GameInstance:
    """Built-in benchmark game ``name`` with ``m`` time axes.

    ``k`` is the number of samples per axis for box control sets.
    """
    try:
        build = CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown catalog instance {name!r}; known: {', '.join(CATALOG)}") from None
    if m < 1:
        raise InvalidSpecError(f"m must be >= 1, got {m}")
    return build(m, k)


def zero_game(m: int = 1, n: int = 1) -> GameInstance:
    """L = 0, X = 0, g = 0 with one control per team on [-1, 1] (3 samples)."""
    return GameInstance(
        name="zero",
        m=m,
        n=n,
        p=1,
        q=1,
        horizon=(1.0,) * m,
        dynamics=[["0"] * n for _ in range(m)],
        running_cost="0",
        terminal_cost="0",
        u_set=ControlSet.from_box([-1.0], [1.0], 3),
        v_set=ControlSet.from_box([-1.0], [1.0], 3),
        metadata={"closed_form_value": 0.0},
    )
