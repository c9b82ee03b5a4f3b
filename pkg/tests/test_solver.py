import numpy as np
import pytest

from moncrief import (ConvergenceError, SolverOptions, assemble_tt, check_bounds,
                      continuation_solve, linearize, newton_solve, residual, solve)
from moncrief.solver import (LinearSolver, _full_residual, default_initial_guess, mms_study,
                             solution_bounds)

from conftest import BASE_COEFFS


def test_zero_field_gives_one(grid):
    zz = assemble_tt(grid, np.zeros(6))
    sol = newton_solve(grid, zz)
    assert np.max(np.abs(sol.u - 1.0)) < 1e-10
    assert sol.iterations == 0


def test_residual_of_two_is_minus_conformal_factor(coarse_grid):
    g = coarse_grid
    zz = assemble_tt(g, np.zeros(6))
    F = residual(g, zz, np.full(g.n_interior, 2.0))
    assert np.allclose(F, -g.e2f[g.interior], rtol=1e-12)


def test_default_initial_guess(grid, unit_zz):
    assert np.allclose(default_initial_guess(grid, unit_zz), 1 + 1 / (2 * np.sqrt(2)))


def test_ellipticity_quantities(grid, unit_zz, solved):
    sol, _ = solved
    ws = linearize(grid, unit_zz.scaled(3.0), sol.u)
    assert np.allclose(ws.F_r + ws.F_t, 2.0, atol=1e-12)
    e = ws.ellipticity()
    assert e["min_F_r"] > 0 and e["min_F_t"] > 0 and e["min_det"] > 0
    assert e["max_F_r"] <= 2 and e["max_F_t"] <= 2 and e["max_abs_F_s"] <= 1


def test_jacobian_directional_derivative(coarse_grid, rng):
    g = coarse_grid
    zz = assemble_tt(g, BASE_COEFFS).scaled(2.0)
    v = g.extend(1.5 + 0.1 * rng.normal(size=g.n_interior))
    ws = linearize(g, zz, v)
    r0 = _full_residual(g, zz, v, None)
    for _ in range(3):
        d = g.extend(rng.normal(size=g.n_interior))
        Jd = ws.jacobian @ d
        rem = []
        for eps in (1e-3, 1e-4, 1e-5):
            fd = (_full_residual(g, zz, v + eps * d, None) - r0) / eps
            rem.append(np.linalg.norm(fd - Jd) / np.linalg.norm(Jd))
        # first-order Taylor remainder decays linearly in eps
        assert rem[1] < 0.2 * rem[0] and rem[2] < 0.2 * rem[1]


def test_mms_convergence():
    out = mms_study(hs=(0.04, 0.02, 0.01))
    assert min(out["orders"]["solve_error"]) >= 1.8
    assert out["levels"][-1]["solve_error"] < 1e-5


def test_solution_bounds(grid, unit_zz, solved):
    sol, _ = solved
    rep = solution_bounds(sol, unit_zz, slack=1e-3 * (1 + unit_zz.sup_norm))
    assert rep["ok"]
    assert rep["min_u"] >= 1.0 - 1e-3


def test_pairwise_bounds(coarse_grid, rng):
    g = coarse_grid
    lin = LinearSolver()
    z1 = assemble_tt(g, rng.normal(size=6))
    z1 = z1.scaled(1.5 / z1.sup_norm)
    z2 = assemble_tt(g, rng.normal(size=6))
    z2 = z2.scaled(0.7 / z2.sup_norm)
    s1, s2, s3 = (solve(g, z, linear_solver=lin) for z in (z1, z2, z1.scaled(0.7 / 1.5)))
    d = assemble_tt(g, z1.coefficients - z2.coefficients).sup_norm
    dd = assemble_tt(g, z1.coefficients / 1.5 - z2.coefficients / 0.7).sup_norm
    rep = check_bounds(s1, z1, s2, z2, s3, d, dd)
    assert rep["ok"], rep
    assert set(rep) >= {"i", "ii_lower", "ii_upper", "iii", "iv"}


def test_continuation_from_zero(coarse_grid):
    zz = assemble_tt(coarse_grid, BASE_COEFFS)
    sols = continuation_solve(coarse_grid, zz, [0.0])
    assert np.max(np.abs(sols[0].u - 1)) < 1e-10


def test_continuation_rejects_unsorted(coarse_grid):
    zz = assemble_tt(coarse_grid, BASE_COEFFS)
    with pytest.raises(ValueError):
        continuation_solve(coarse_grid, zz, [1.0, 0.5])


def test_warm_start_not_worse_than_cold(coarse_grid):
    zz = assemble_tt(coarse_grid, BASE_COEFFS)
    zz = zz.scaled(1.0 / zz.sup_norm)
    amps = [0.5, 1.0, 1.5, 2.0, 2.5]
    warm = continuation_solve(coarse_grid, zz, amps)
    cold = [newton_solve(coarse_grid, zz.scaled(a)) for a in amps]
    assert sum(s.iterations for s in warm) <= sum(s.iterations for s in cold)
    for w, c in zip(warm, cold):
        assert np.max(np.abs(w.u - c.u)) < 1e-9


def test_warm_start_with_shared_linear_solver(grid, unit_zz, solved):
    sol, _ = solved
    lin = LinearSolver()
    again = newton_solve(grid, unit_zz, u0=sol.u, linear_solver=lin)
    assert again.iterations == 0
    assert np.max(np.abs(again.u - sol.u)) < 1e-12


def test_quarter_turn_equivariance(grid):
    # rotating by i maps phi_m(z) to i^m phi_m(z); the pulled-back field has
    # coefficients (-c0, c1, -c2)
    c = BASE_COEFFS
    c_rot = c * np.array([-1, -1, 1, 1, -1, -1])
    lin = LinearSolver()
    u = newton_solve(grid, assemble_tt(grid, c), linear_solver=lin).u_nodes
    u_rot = newton_solve(grid, assemble_tt(grid, c_rot), linear_solver=lin).u_nodes
    I = grid.interior
    ij = grid.ij[I]
    j = grid.index(-ij[:, 1], ij[:, 0])
    ok = j >= 0
    ok[ok] &= grid.is_interior[j[ok]]
    assert ok.mean() > 0.99
    assert np.max(np.abs(u_rot[I[ok]] - u[j[ok]])) < 1e-6


def test_iteration_cap(grid, unit_zz):
    with pytest.raises(ConvergenceError) as info:
        newton_solve(grid, unit_zz.scaled(2.0), opts=SolverOptions(max_iter=1))
    assert info.value.best is not None


def test_invalid_inputs(coarse_grid):
    zz = assemble_tt(coarse_grid, BASE_COEFFS)
    with pytest.raises(ValueError):
        newton_solve(coarse_grid, zz, opts=SolverOptions(tol=0.0))
    with pytest.raises(ValueError):
        newton_solve(coarse_grid, zz, u0=np.full(coarse_grid.n_interior, np.nan))
    with pytest.raises(ValueError):
        residual(coarse_grid, zz, np.ones(5))
