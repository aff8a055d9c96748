import json

import numpy as np
import pytest

from mtgame.game import ControlSet, GameInstance, catalog_instance, zero_game
from mtgame.grid import GeneratingField, MultitimeGrid, ValueField
from mtgame.solver import solve, solve_upper
from mtgame.verify import (
    QuadraticField,
    UnsupportedError,
    ViolationReport,
    compare_fields,
    discrete_game_oracle,
    dpp_residual,
    ordering_check,
    payoff_details,
    payoff_of_controls,
    remark2_constraint_residual,
    viscosity_check,
)


def game(L="0", X="0", g="0", m=1):
    return GameInstance(
        name="t", m=m, n=1, p=1, q=1, horizon=(1.0,) * m, dynamics=[[X]] * m,
        running_cost=L, terminal_cost=g,
        u_set=ControlSet.from_box([-1], [1], 3), v_set=ControlSet.from_box([-1], [1], 3),
    )


def test_report_invariants():
    rep = ViolationReport("dpp")
    assert rep.ok and rep.max_magnitude == 0.0
    rep.add((1, 2), "dpp", -0.5)
    assert rep.max_magnitude == 0.5 and not rep.ok
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["violations"][0] == {"node": [1, 2], "kind": "dpp", "magnitude": 0.5}
    with pytest.raises(ValueError):
        rep.add((0,), "sideways", 1.0)


def test_oracle_trivial_cases():
    z = zero_game()
    grid = MultitimeGrid.for_instance(z, 5, -1.0, 1.0, 9)
    assert np.all(discrete_game_oracle(z, grid).values == 0)
    inst = game(g="x1")
    V = discrete_game_oracle(inst, grid)
    assert np.array_equal(V.values, np.broadcast_to(grid.state_axis(0), grid.shape))


def test_oracle_bilinear_three_steps():
    inst = catalog_instance("bilinear_gap")
    grid = MultitimeGrid.for_instance(inst, 4, -1.0, 1.0, 5)
    up = discrete_game_oracle(inst, grid, "upper")
    lo = discrete_game_oracle(inst, grid, "lower")
    # by hand: each of the 3 steps adds dt * min_v max_u uv = 1/3
    assert np.allclose(up.values[:, 0], [1.0, 2 / 3, 1 / 3, 0.0], atol=1e-15)
    assert np.all(lo.values == 0.0)


def test_oracle_rejects_multitime():
    inst = zero_game(2)
    with pytest.raises(UnsupportedError):
        discrete_game_oracle(inst, MultitimeGrid.for_instance(inst, 3, -1.0, 1.0, 3))


def test_dpp_fixpoint_and_constant_field():
    inst = catalog_instance("remark1", 2, k=5)
    grid = MultitimeGrid.for_instance(inst, 5, -1.0, 1.0, 9)
    M, _ = solve_upper(inst, grid)
    assert dpp_residual(M, inst, 1).max_residual <= 1e-12
    one = game(L="1", m=2)
    const = ValueField(grid, np.full(grid.shape, 3.0))
    rep = dpp_residual(const, one, 1, tol=np.inf)
    vol = float(np.prod(grid.dt))
    assert rep.max_residual == pytest.approx(vol, abs=1e-15)


def test_dpp_flags_corrupted_node():
    inst = catalog_instance("remark1", 1, k=5)
    grid = MultitimeGrid.for_instance(inst, 8, -1.0, 1.0, 11)
    M, _ = solve_upper(inst, grid)
    M.values[3, 5] += 1.0
    rep = dpp_residual(M, inst, 1)
    assert (3, 5) in [v[0] for v in rep.violations]


def test_viscosity_zero_field_zero_test():
    z = zero_game()
    grid = MultitimeGrid.for_instance(z, 6, -1.0, 1.0, 7)
    f = GeneratingField(grid, np.zeros((1,) + grid.shape))
    w0 = QuadraticField(0.0, np.zeros(2), np.zeros((2, 2)), np.zeros(2))
    rep = viscosity_check(f, z, fields=[w0])
    interior = (grid.shape[0] - 2) * (grid.shape[1] - 2)
    assert rep.tested == 2 * interior and rep.ok and rep.max_residual == 0.0


def test_viscosity_bump():
    z = zero_game()
    grid = MultitimeGrid.for_instance(z, 11, -1.0, 1.0, 11)
    f = GeneratingField(grid, np.zeros((1,) + grid.shape))
    eps = 0.3
    z0 = np.array([0.5, 0.0])
    w = QuadraticField(0.0, np.zeros(2), eps * np.eye(2), z0)  # f - w peaks at z0
    rep = viscosity_check(f, z, fields=[w])
    assert rep.ok and rep.tested == 1


def test_viscosity_random_family_is_seeded():
    z = zero_game()
    grid = MultitimeGrid.for_instance(z, 9, -1.0, 1.0, 9)
    f = GeneratingField(grid, np.zeros((1,) + grid.shape))
    a = viscosity_check(f, z, 20, rng_seed=5)
    b = viscosity_check(f, z, 20, rng_seed=5)
    assert a.to_dict() == b.to_dict() and a.ok


def test_viscosity_fault_injection(remark1_m1):
    inst, grid, res = remark1_m1
    gen = res["upper"][1]
    bad = GeneratingField(grid, gen.components.copy(), kind="upper")
    bad.components[0][20, 20] += 1.0
    assert viscosity_check(gen, inst, 100, 0).ok
    assert not viscosity_check(bad, inst, 100, 0).ok


def test_payoff_unit_volume():
    inst = game(L="1", m=2)
    grid = MultitimeGrid.for_instance(inst, 11, -1.0, 1.0, 3)
    assert abs(payoff_of_controls(inst, [0.0], [0.0], [0, 0], [0.0], grid) - 1.0) <= 1e-12


def test_payoff_remark2_optimum():
    inst = catalog_instance("remark2", 2)
    grid = MultitimeGrid.for_instance(inst, 21, -1.0, 1.0, 3)
    assert abs(payoff_of_controls(inst, lambda t, x: -t, np.zeros(0), [0, 0], [0.0], grid)) <= 1e-9


def test_payoff_remark1_saddle_feedback():
    inst = catalog_instance("remark1", 1)
    grid = MultitimeGrid.for_instance(inst, 50, -1.0, 1.0, 41)
    val = payoff_of_controls(inst, lambda t, x: [0.0], lambda t, x: -x, [0.0], [0.5], grid)
    assert val <= 5e-2


def test_payoff_array_controls_and_flow():
    inst = game(L="x1", X="u1")
    grid = MultitimeGrid.for_instance(inst, 11, -2.0, 2.0, 5)
    u = np.ones((11, 1))
    res = payoff_details(inst, u, [0.0], [0.0], [0.0], grid)
    # x(t) = t, trapezoid is exact for a linear integrand
    assert res.value == pytest.approx(0.5, abs=1e-12)
    assert res.states[-1, 0] == pytest.approx(1.0)
    assert res.clamp_count == 0


def test_payoff_clamp_reported():
    inst = game(X="u1")
    grid = MultitimeGrid.for_instance(inst, 11, -0.5, 0.5, 5)
    assert payoff_details(inst, [1.0], [0.0], [0.0], [0.0], grid).clamp_count > 0


def test_compare_fields():
    grid = MultitimeGrid((2,), (1.0,), (0.0,), (1.0,), (5,))
    a = ValueField(grid, np.ones(grid.shape))
    b = ValueField(grid, np.zeros(grid.shape))
    assert compare_fields(a, a) == (0.0, 0.0, (0, 0))
    sup, l2, node = compare_fields(a, b)
    assert sup == 1.0 and node == (0, 0)
    assert l2 == pytest.approx(np.sqrt(10 * 1.0 * 0.25))
    other = ValueField(MultitimeGrid((3,), (1.0,), (0.0,), (1.0,), (5,)), np.zeros((3, 5)))
    with pytest.raises(ValueError):
        compare_fields(a, other)


def test_ordering_check():
    grid = MultitimeGrid((2,), (1.0,), (0.0,), (1.0,), (3,))
    up = ValueField(grid, np.zeros(grid.shape))
    lo = ValueField(grid, np.zeros(grid.shape), kind="lower")
    assert ordering_check(lo, up).ok
    lo.values[1, 2] = 1e-6
    rep = ordering_check(lo, up)
    assert [v[0] for v in rep.violations] == [(1, 2)]


def test_remark2_constraint():
    pts = np.random.default_rng(0).uniform(0.05, 1.0, (100, 2))
    assert remark2_constraint_residual(pts) <= 1e-12
