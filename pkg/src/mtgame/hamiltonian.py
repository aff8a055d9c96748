"""Upper/lower Hamiltonians by exact min-max over sampled control sets.

For a costate ``p`` (an ``(m, n)`` matrix) the objective is

    p[alpha, i] * X_alpha^i(t, x, u, v) + L(t, x, u, v)

and ``H+ = min_v max_u``, ``H- = max_u min_v`` of it over the control
samples. Ties resolve to the first sample index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import NumericDomainError, evaluate
from .game import GameInstance

__all__ = [
    "HypothesisViolatedError",
    "SaddleResult",
    "StrategyMap",
    "covering_strategy",
    "isaacs_gap",
    "lambda_form",
    "lower_hamiltonian",
    "objective_table",
    "saddle_reduce",
    "upper_hamiltonian",
]


class HypothesisViolatedError(ValueError):
    """The margin hypothesis of the covering construction fails."""

    def __init__(self, message: str, v_index: int, v_point):
        self.v_index = v_index
        self.v_point = v_point
        super().__init__(message)


@dataclass(frozen=True)
class SaddleResult:
    value: float
    arg_u: np.ndarray
    arg_v: np.ndarray
    which: str
    index_u: int
    index_v: int


@dataclass(frozen=True)
class StrategyMap:
    """Response map from each v-sample to a u-sample."""

    domain: np.ndarray  # (|V|, q)
    image: np.ndarray  # (|V|, p), image[j] = psi(domain[j])
    image_index: np.ndarray
    values: np.ndarray  # Lambda(psi(v_j), v_j)
    margin: float

    def __call__(self, v_index: int) -> np.ndarray:
        return self.image[v_index]


def _controls(instance: GameInstance, lead: tuple):
    """u and v sample arrays shaped to broadcast as ``lead + (|U|, |V|, dim)``."""
    ones = (1,) * len(lead)
    u = instance.u_set.points.reshape(ones + (len(instance.u_set), 1, instance.p))
    v = instance.v_set.points.reshape(ones + (1, len(instance.v_set), instance.q))
    return u, v


def objective_table(instance: GameInstance, t, x, p, extra=0.0) -> np.ndarray:
    """``p . X + L (+ extra)`` over all control pairs.

    ``t``, ``x`` have shapes ``lead + (m,)`` and ``lead + (n,)``; ``p`` has
    shape ``lead + (m, n)``. Returns shape ``lead + (|U|, |V|)``.
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    lead = x.shape[:-1]
    u, v = _controls(instance, lead)
    tb = t[..., None, None, :]
    xb = x[..., None, None, :]
    shape = lead + (len(instance.u_set), len(instance.v_set))
    bindings = instance.bindings(tb, xb, u, v)
    try:
        out = np.broadcast_to(instance.running(tb, xb, u, v), shape).copy()
        for a in range(instance.m):
            for i, e in enumerate(instance.dynamics[a]):
                out += p[..., a, i][..., None, None] * evaluate(e, bindings)
        out += np.asarray(extra, dtype=float)[..., None, None]
    except NumericDomainError:
        raise _locate_bad_sample(instance, t, x, p) from None
    if not np.all(np.isfinite(out)):
        raise _locate_bad_sample(instance, t, x, p)
    return out


def _locate_bad_sample(instance, t, x, p) -> NumericDomainError:
    flat_x = np.asarray(x, dtype=float).reshape(-1, instance.n)
    flat_t = np.broadcast_to(np.asarray(t, dtype=float), flat_x.shape[:-1] + (instance.m,)).reshape(-1, instance.m)
    for k in range(flat_x.shape[0]):
        for a, uu in enumerate(instance.u_set.points):
            for b, vv in enumerate(instance.v_set.points):
                with np.errstate(all="ignore"):
                    try:
                        val = instance.running(flat_t[k], flat_x[k], uu, vv)
                        vel = [instance.velocity(al, flat_t[k], flat_x[k], uu, vv) for al in range(instance.m)]
                    except NumericDomainError:
                        val, vel = np.nan, []
                if not np.isfinite(val) or not np.all(np.isfinite(vel)):
                    return NumericDomainError(
                        f"non-finite objective at t={flat_t[k].tolist()}, x={flat_x[k].tolist()}, "
                        f"u[{a}]={uu.tolist()}, v[{b}]={vv.tolist()}"
                    )
    return NumericDomainError("non-finite objective")


def saddle_reduce(table: np.ndarray, which: str):
    """Reduce a ``(..., |U|, |V|)`` table to ``(value, index_u, index_v)``.

    ``upper``: min over v of max over u; ``lower``: max over u of min over v.
    First index wins ties (numpy's argmin/argmax already do that).
    """
    if which == "upper":
        iu_per_v = np.argmax(table, axis=-2)  # (..., |V|)
        inner = np.take_along_axis(table, iu_per_v[..., None, :], axis=-2)[..., 0, :]
        iv = np.argmin(inner, axis=-1)
        iu = np.take_along_axis(iu_per_v, iv[..., None], axis=-1)[..., 0]
    elif which == "lower":
        iv_per_u = np.argmin(table, axis=-1)  # (..., |U|)
        inner = np.take_along_axis(table, iv_per_u[..., None], axis=-1)[..., 0]
        iu = np.argmax(inner, axis=-1)
        iv = np.take_along_axis(iv_per_u, iu[..., None], axis=-1)[..., 0]
    else:
        raise ValueError(f"which must be 'upper' or 'lower', got {which!r}")
    value = np.take_along_axis(
        np.take_along_axis(table, iu[..., None, None], axis=-2)[..., 0, :], iv[..., None], axis=-1
    )[..., 0]
    return value, iu, iv


def _hamiltonian(instance, t, x, p, which) -> SaddleResult:
    t = np.asarray(t, dtype=float).reshape(instance.m)
    x = np.asarray(x, dtype=float).reshape(instance.n)
    p = np.asarray(p, dtype=float).reshape(instance.m, instance.n)
    table = objective_table(instance, t, x, p)
    value, iu, iv = saddle_reduce(table, which)
    iu, iv = int(iu), int(iv)
    return SaddleResult(
        value=float(value),
        arg_u=instance.u_set.points[iu],
        arg_v=instance.v_set.points[iv],
        which=which,
        index_u=iu,
        index_v=iv,
    )


def upper_hamiltonian(instance: GameInstance, t, x, p) -> SaddleResult:
    """``min_v max_u {p . X + L}`` at a single point."""
    return _hamiltonian(instance, t, x, p, "upper")


def lower_hamiltonian(instance: GameInstance, t, x, p) -> SaddleResult:
    """``max_u min_v {p . X + L}`` at a single point."""
    return _hamiltonian(instance, t, x, p, "lower")


def isaacs_gap(instance: GameInstance, t, x, p) -> float:
    return upper_hamiltonian(instance, t, x, p).value - lower_hamiltonian(instance, t, x, p).value


def lambda_form(instance: GameInstance, t, x, u, v, w_grad_x, w_div_t: float) -> float:
    """``L + sum w_grad_x[alpha, i] * X_alpha^i + w_div_t`` at one control pair."""
    t = np.asarray(t, dtype=float).reshape(instance.m)
    x = np.asarray(x, dtype=float).reshape(instance.n)
    u = np.asarray(u, dtype=float).reshape(instance.p)
    v = np.asarray(v, dtype=float).reshape(instance.q)
    grad = np.asarray(w_grad_x, dtype=float).reshape(instance.m, instance.n)
    total = instance.running(t, x, u, v)
    for a in range(instance.m):
        vel = instance.velocity(a, t, x, u, v)
        for i in range(instance.n):
            total += grad[a, i] * vel[i]
    return float(total + w_div_t)


def covering_strategy(instance: GameInstance, t, x, w_grad_x, w_div_t: float, theta: float) -> StrategyMap:
    """Response map psi with ``Lambda(psi(v), v) >= 3/4 theta`` for every v-sample.

    Requires ``min_v max_u Lambda >= theta``. On a finite sample set the
    covering collapses to ``psi(v) = argmax_u Lambda(., v)``.

    Raises:
        HypothesisViolatedError: when some v-sample admits no response
            reaching ``theta``; the offending sample is reported.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    t = np.asarray(t, dtype=float).reshape(instance.m)
    x = np.asarray(x, dtype=float).reshape(instance.n)
    grad = np.asarray(w_grad_x, dtype=float).reshape(instance.m, instance.n)
    table = objective_table(instance, t, x, grad, extra=float(w_div_t))
    best_u = np.argmax(table, axis=0)
    best = table[best_u, np.arange(table.shape[1])]
    worst = int(np.argmin(best))
    if best[worst] < theta:
        v_point = instance.v_set.points[worst]
        raise HypothesisViolatedError(
            f"min_v max_u Lambda = {best[worst]:.6g} < theta = {theta:.6g} at v[{worst}]={v_point.tolist()}",
            worst,
            v_point,
        )
    return StrategyMap(
        domain=instance.v_set.points,
        image=instance.u_set.points[best_u],
        image_index=best_u,
        values=best,
        margin=0.75 * theta,
    )
