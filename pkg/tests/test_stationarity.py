import numpy as np
import pytest

from ccop.model import bundled_problem, loads_problem
from ccop.stationarity import (
    NoCertificate,
    SolveConfig,
    check_cc_licq,
    check_m_stationarity,
    genericity_probe,
    multiplier_matrix,
    multipliers,
    perturb_experiment,
    perturbed_problem,
    solve_all,
)
from helpers import FIXTURES, grid_local_minima, solved

DUP = 'n = 2\ns = 1\nobjective = "x1^2 + x2^2"\ninequalities = ["x1 - 1", "x1 - 1"]\nbox = [[-3, 3], [-3, 3]]'


def point_set(pairs):
    return sorted(tuple(np.round(q.x, 9) + 0.0) for q in pairs)


# ------------------------------------------------------------------ CC-LICQ


def test_cc_licq_instability_origin():
    r = check_cc_licq(bundled_problem("instability"), [0.0, 0.0])
    assert r.holds
    np.testing.assert_array_equal(r.gradient_matrix, np.eye(2))


def test_cc_licq_so_ss():
    r = check_cc_licq(bundled_problem("so_ss"), [1.0, 1.0, 0.0])
    assert r.holds
    np.testing.assert_array_equal(r.gradient_matrix, np.eye(3))


def test_cc_licq_duplicate_inequality_fails():
    assert not check_cc_licq(loads_problem(DUP), [1.0, 0.0]).holds


def test_cc_licq_more_rows_than_n():
    p = loads_problem(
        'n = 2\ns = 1\nobjective = "x1"\nequalities = ["x1 + x2 - 1"]\ninequalities = ["x2"]\nbox = [[-3, 3], [-3, 3]]'
    )
    r = check_cc_licq(p, [1.0, 0.0])
    assert r.gradient_matrix.shape == (3, 2)
    assert not r.holds


# -------------------------------------------------------------- multipliers


def test_multipliers_stability_origin():
    pair = multipliers(bundled_problem("stability"), [0.0, 0.0])
    np.testing.assert_allclose(pair.gamma, [-2.0, -2.0], atol=1e-12)
    assert pair.stationarity_residual == 0.0


def test_multipliers_so_ss_vanish():
    pair = multipliers(bundled_problem("so_ss"), [1.0, 1.0, 0.0])
    assert np.all(np.abs(pair.mu) <= 1e-12) and np.all(np.abs(pair.gamma) <= 1e-12)


def test_multipliers_unconstrained_vertex():
    p = loads_problem('n = 3\ns = 2\nobjective = "(x1-1)^2 + (x2-2)^2 + x3^2"\nbox = [[-3, 3], [-3, 3], [-3, 3]]')
    pair = multipliers(p, [1.0, 2.0, 0.0])
    assert pair.stationarity_residual == 0.0
    assert not pair.gamma.any() and pair.lam.size == 0 and pair.mu.size == 0


def test_no_certificate_when_not_stationary():
    r = multipliers(bundled_problem("stability"), [0.5, 0.0])
    assert isinstance(r, NoCertificate) and not r
    assert r.residual == pytest.approx(1.0)


@pytest.mark.parametrize("name", FIXTURES)
def test_multipliers_unique_two_paths(name):
    # normal equations vs. the orthogonal-factorization least squares inside multipliers()
    p, pairs, _ = solved(name)
    for q in pairs:
        A = multiplier_matrix(p, q.active)
        if not A.shape[1]:
            continue
        df = p.f.bundle(list(q.x)).gradient
        z = np.linalg.solve(A.T @ A, A.T @ df)
        z_ref = np.concatenate([q.lam, q.mu[list(q.active.Q0)], q.gamma[list(q.active.I0)]])
        np.testing.assert_allclose(z, z_ref, atol=1e-8)


# ---------------------------------------------------------- M-stationarity


def test_instability_origin_is_m_stationary():
    v = check_m_stationarity(bundled_problem("instability"), [0.0, 0.0])
    assert v and not v.pair.gamma.any()


def test_negative_multiplier_rejected():
    v = check_m_stationarity(bundled_problem("stability_compact"), [2.0, 0.0])
    assert not v
    assert v.pair.mu[0] == pytest.approx(-0.5, abs=1e-12)
    assert "negative" in v.reason


def test_infeasible_rejected():
    v = check_m_stationarity(bundled_problem("instability"), [0.5, 0.5])
    assert not v and v.reason == "infeasible"


# ------------------------------------------------------------------ solver


def test_solve_stability_compact():
    _, pairs, _ = solved("stability_compact")
    assert point_set(pairs) == [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0)]


def test_solve_instability():
    _, pairs, _ = solved("instability")
    assert point_set(pairs) == [(0.0, 0.0)]


def test_solve_perturbed_instability():
    p = perturbed_problem(bundled_problem("instability"), [-2.0, -2.0], 0.1)
    pairs = solve_all(p)
    xs = np.array(sorted(tuple(q.x) for q in pairs))
    np.testing.assert_allclose(xs, [[0.0, 0.0], [0.0, 0.1], [0.1, 0.0]], atol=1e-12)


def test_solve_output_order():
    _, pairs, _ = solved("sphere_sparse")
    keys = [(q.active.k, q.active.I1, tuple(q.x)) for q in pairs]
    assert keys == sorted(keys)
    assert len(pairs) == 12


@pytest.mark.parametrize("name", FIXTURES)
def test_every_solution_verifies(name):
    p, pairs, _ = solved(name)
    for q in pairs:
        assert check_m_stationarity(p, q.x)
        assert q.stationarity_residual <= 1e-8


@pytest.mark.parametrize("name", ["so_ss", "sphere_sparse"])
def test_solver_deterministic_across_threads(name):
    p = bundled_problem(name)
    a = solve_all(p, SolveConfig(n_jobs=1))
    b = solve_all(p, SolveConfig(n_jobs=4))
    c = solve_all(p, SolveConfig(n_jobs=1))
    for u, v, w in zip(a, b, c):
        assert np.array_equal(u.x, v.x) and np.array_equal(u.x, w.x)
        assert np.array_equal(u.gamma, v.gamma) and np.array_equal(u.mu, v.mu)
    assert len(a) == len(b) == len(c)
    assert a.stats == b.stats


@pytest.mark.parametrize("name", ["instability", "so_ss", "stability", "stability_compact"])
def test_grid_local_minima_are_found(name):
    p, pairs, _ = solved(name)
    minima, step = grid_local_minima(p, 121 if p.n == 2 else 41)
    assert minima
    for x in minima:
        d = min(np.linalg.norm(q.x - x) for q in pairs)
        assert d <= 2 * step * np.sqrt(p.n), (x, d)


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(seeds_per_system=0)


# ------------------------------------------------------------ perturbation


def test_perturb_instability_bifurcates():
    rows = perturb_experiment(bundled_problem("instability"), [-2.0, -2.0], [0.1])
    (row,) = rows
    xs = sorted(tuple(pt["pair"].x) for pt in row["points"])
    np.testing.assert_allclose(xs, [[0.0, 0.0], [0.0, 0.1], [0.1, 0.0]], atol=1e-8)
    assert row["bifurcation"] and row["counts_near_reference"] == [3]


def test_perturb_zero_epsilon_is_original():
    p = bundled_problem("stability")
    (row,) = perturb_experiment(p, [1.0, -1.0], [0.0])
    assert [tuple(pt["pair"].x) for pt in row["points"]] == [tuple(q.x) for q in solved("stability")[1]]
    assert not row["bifurcation"]
    assert all(pt["changed"] == [] for pt in row["points"])


@pytest.mark.parametrize("c", [(1.0, 0.0), (-0.3, 2.0), (5.0, -5.0)])
def test_perturb_stability_persists(c):
    base = solved("stability")[1]
    (row,) = perturb_experiment(bundled_problem("stability"), list(c), [1e-4])
    assert len(row["points"]) == 3
    for pt in row["points"]:
        assert min(np.linalg.norm(pt["pair"].x - q.x) for q in base) <= 1e-3
    assert not row["bifurcation"]


def test_perturbed_stability_closed_form():
    # support {i}: x_i = 1 - eps*c_i/2; the origin persists
    eps, c = 1e-4, np.array([0.7, -1.3])
    pairs = solve_all(perturbed_problem(bundled_problem("stability"), c, eps))
    xs = sorted(tuple(q.x) for q in pairs)
    np.testing.assert_allclose(xs, [(0.0, 0.0), (0.0, 1 - eps * c[1] / 2), (1 - eps * c[0] / 2, 0.0)], atol=1e-12)


def test_perturbed_problem_length_check():
    with pytest.raises(ValueError):
        perturbed_problem(bundled_problem("stability"), [1.0], 0.1)


# ----------------------------------------------------------------- probe


def test_probe_zero_magnitude_keeps_degeneracy():
    r = genericity_probe(bundled_problem("instability"), 1, 0.0)
    assert r["nondegenerate_fraction"] == 0.0 and r["degenerate_trials"] == 1


def test_probe_small_tilts_instability():
    r = genericity_probe(bundled_problem("instability"), 20, 1e-2, rng_seed=3)
    assert r["nondegenerate_fraction"] == 1.0


def test_probe_requires_trials():
    with pytest.raises(ValueError):
        genericity_probe(bundled_problem("instability"), 0, 1e-2)
