import numpy as np
import pytest

from ccop.exprcore import parse
from ccop.model import (
    MStationaryPair,
    ProblemFormatError,
    active_data,
    bundled_problem,
    feasible,
    lagrangian_hessian,
    lagrangian_value,
    loads_problem,
    tangent_space,
)
from ccop.stationarity import multipliers

from helpers import pair_at


def test_load_instability():
    p = bundled_problem("instability")
    assert (p.n, p.s, p.n_eq, p.n_ineq) == (2, 1, 0, 0)


def test_load_so_ss():
    p = bundled_problem("so_ss")
    assert p.n_ineq == 2 and p.n == 3 and p.s == 2


@pytest.mark.parametrize(
    "text, message",
    [
        ('n = 2\ns = 2\nobjective = "x1"\nbox = [[0, 1], [0, 1]]', "s must be < n"),
        ('n = 2\ns = 1\nobjective = "x3"\nbox = [[0, 1], [0, 1]]', "out of range"),
        ('n = 2\ns = 1\nobjective = "x1"\nbox = [[0, 1]]', "box must have 2"),
        ('n = 2\ns = 1\nobjective = "x1"\nbox = [[0, 1], [0, 1]]\ncolor = 1', "unknown keys"),
        ('n = 2\ns = 1\nobjective = "x1 +"\nbox = [[0, 1], [0, 1]]', "offset"),
        ('n = 2\ns = 1\nobjective = "x1"\nbox = [[1, 0], [0, 1]]', "empty box"),
        ("n = 2\ns = 1\nobjective = ", "Invalid"),
    ],
)
def test_malformed_problems(text, message):
    with pytest.raises(ProblemFormatError, match=message):
        loads_problem(text)


def test_problem_echo_round_trip():
    p = bundled_problem("stability_compact")
    q = loads_problem(p.to_toml())
    assert q.to_toml() == p.to_toml()
    assert q.compact_feasible


def test_active_data_so_ss():
    a = active_data(bundled_problem("so_ss"), [1.0, 1.0, 0.0])
    assert a.I0 == (2,) and a.I1 == (0, 1) and a.Q0 == (0, 1)
    assert (a.k, a.m, a.ell) == (2, 2, 3)


def test_active_data_instability_origin():
    a = active_data(bundled_problem("instability"), [0.0, 0.0])
    assert a.I0 == (0, 1) and a.Q0 == () and a.k == 0


def test_active_data_full_support():
    a = active_data(bundled_problem("so_ss"), [0.5, -2.0, 1e-3])
    assert a.I0 == ()


def test_active_data_idempotent():
    p = bundled_problem("stability_compact")
    a = active_data(p, [2.0, 0.0])
    b = active_data(p, a.x)
    assert (a.I0, a.I1, a.Q0) == (b.I0, b.I1, b.Q0) == ((1,), (0,), (0,))


def test_feasibility_examples():
    assert not feasible(bundled_problem("instability"), [0.5, 0.5])
    assert feasible(bundled_problem("so_ss"), [1.0, 1.0, 0.0])
    assert not feasible(bundled_problem("stability_compact"), [3.0, 0.0])


def test_lagrangian_hessian_so_ss():
    p, pair, _ = pair_at("so_ss", [1.0, 1.0, 0.0])
    np.testing.assert_array_equal(lagrangian_hessian(p, pair), [[2, 3, 0], [3, 2, 0], [0, 0, 2]])


def test_lagrangian_hessian_unconstrained_is_objective_hessian():
    p = loads_problem('n = 2\ns = 1\nobjective = "x1^2 + 4*x1*x2 + 3*x2^2"\nbox = [[-1, 1], [-1, 1]]')
    pair = multipliers(p, [0.0, 0.0])
    np.testing.assert_array_equal(lagrangian_hessian(p, pair), [[2, 4], [4, 6]])


def test_lagrangian_hessian_perturbed_instability():
    p = loads_problem('n = 2\ns = 1\nobjective = "x1^2 + x2^2 - 0.2*x1 - 0.2*x2"\nbox = [[-1, 1], [-1, 1]]')
    pair = multipliers(p, [0.1, 0.0])
    np.testing.assert_array_equal(lagrangian_hessian(p, pair), 2.0 * np.eye(2))


def test_lagrangian_hessian_rejects_mismatch():
    p = bundled_problem("so_ss")
    bad = MStationaryPair(np.zeros(3), np.zeros(0), np.zeros(1), np.zeros(3), 0.0, 0.0, active_data(p, np.zeros(3)))
    with pytest.raises(ValueError):
        lagrangian_hessian(p, bad)


def test_lagrangian_hessian_matches_finite_differences():
    p = bundled_problem("sphere_sparse")
    pair = multipliers(p, [1 / np.sqrt(5), 2 / np.sqrt(5), 0.0])
    H = lagrangian_hessian(p, pair)
    x0, h = pair.x, 1e-4
    fd = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            ei, ej = np.eye(3)[i] * h, np.eye(3)[j] * h
            fd[i, j] = (
                lagrangian_value(p, pair, x0 + ei + ej)
                - lagrangian_value(p, pair, x0 + ei - ej)
                - lagrangian_value(p, pair, x0 - ei + ej)
                + lagrangian_value(p, pair, x0 - ei - ej)
            ) / (4 * h * h)
    np.testing.assert_allclose(fd, H, rtol=1e-6, atol=1e-6)


def test_tangent_space_requires_subset_of_active():
    p, pair, _ = pair_at("stability_compact", [1.0, 0.0])
    with pytest.raises(ValueError):
        tangent_space(p, pair.active, (0,))


def test_tangent_space_so_ss_family():
    p, pair, _ = pair_at("so_ss", [1.0, 1.0, 0.0])
    assert tangent_space(p, pair.active, ()).space.dim == 2
    assert tangent_space(p, pair.active, (0,)).space.dim == 1
    assert tangent_space(p, pair.active, (0, 1)).space.dim == 0


def test_parse_is_validated_against_n():
    with pytest.raises(ProblemFormatError):
        loads_problem('n = 1\ns = 0\nobjective = "x1"\ninequalities = ["x2"]\nbox = [[0, 1]]')
    assert parse("x1") is not None
