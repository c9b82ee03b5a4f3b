"""Acceptance run at the baseline grid h = 0.01.

Each test prints one PASS/FAIL line.  Refinement factors compare h = 0.01
with h = 0.005.
"""
import time

import numpy as np
import pytest

from moncrief import (SurfaceGrid, assemble_tt, check_bounds, derive, linearize, newton_solve,
                      properness_scan, round_trip, solve, verify_tt)
from moncrief.geometry import (area_energy, b_identities, curvature_g, energy_densities,
                               metric_identities)
from moncrief.qdiff import gram_matrix, poincare_partial_sums
from moncrief.solver import LinearSolver, _full_residual, mms_study, solution_bounds

from conftest import BASE_COEFFS

H = 0.01
H_FINE = 0.005
A_RHO = 8 * np.pi
SQRT2 = np.sqrt(2.0)


@pytest.fixture
def emit(capsys, request):
    def _emit(ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {request.node.name}: {detail}")
        assert ok, detail
    return _emit


@pytest.fixture(scope="module")
def base(group):
    return SurfaceGrid(group, H)


@pytest.fixture(scope="module")
def lin():
    return LinearSolver()


def _unit(grid, c):
    zz = assemble_tt(grid, c)
    return zz.scaled(1.0 / zz.sup_norm)


@pytest.fixture(scope="module")
def baseline(base, lin):
    zz = _unit(base, BASE_COEFFS)
    sol = solve(base, zz, linear_solver=lin)
    return zz, sol, derive(base, zz, sol)


@pytest.fixture(scope="module")
def fine(group):
    g = SurfaceGrid(group, H_FINE)
    zz = assemble_tt(g, BASE_COEFFS)
    # same field as the baseline, expressed in the fine grid's sup norm
    zz = zz.scaled(1.0 / assemble_tt(SurfaceGrid(group, H), BASE_COEFFS).sup_norm)
    sol = solve(g, zz, linear_solver=LinearSolver())
    return g, zz, sol, derive(g, zz, sol, with_lambda=False)


def _imax(grid, v):
    return float(np.nanmax(np.abs(v)[grid.interior]))


def _r_error(grid, geo):
    return _imax(grid, curvature_g(grid, geo.g) + 1.0 / (1.0 + geo.B))


def test_c01_trivial_instance(base, emit):
    zz = assemble_tt(base, np.zeros(6))
    sol = newton_solve(base, zz)
    geo = derive(base, zz, sol)
    du = float(np.max(np.abs(sol.u - 1)))
    dg = max(_imax(base, geo.gamma.t11 / base.e2f - 1), _imax(base, geo.gamma.t12 / base.e2f),
             _imax(base, geo.gamma.t22 / base.e2f - 1))
    dE = abs(geo.energy - A_RHO) / A_RHO
    emit(du <= 1e-10 and dg <= 1e-8 and dE <= 5e-3,
         f"max|u-1|={du:.2e} max|gamma/rho-id|={dg:.2e} |E-8pi|/8pi={dE:.2e}")


def test_c02_mms_convergence(emit):
    t0 = time.perf_counter()
    out = mms_study(hs=(H, H / 2, H / 4))
    dt = time.perf_counter() - t0
    orders = out["orders"]["solve_error"]
    emit(min(orders) >= 1.8 and dt <= 60.0,
         f"orders={[round(o, 3) for o in orders]} runtime={dt:.1f}s")


def test_c03_jacobian(base, baseline, emit):
    zz, sol, _ = baseline
    rng = np.random.default_rng(3)
    v = base.extend(sol.u + 0.05 * rng.normal(size=base.n_interior))
    J = linearize(base, zz, v).jacobian
    r0 = _full_residual(base, zz, v, None)
    worst = 0.0
    for _ in range(10):
        d = base.extend(rng.normal(size=base.n_interior))
        Jd = J @ d
        for eps in (1e-3, 1e-4, 1e-5, 1e-6):
            fd = (_full_residual(base, zz, v + eps * d, None) - r0) / eps
            slope = float(fd @ Jd / (Jd @ Jd))
            worst = max(worst, abs(slope - 1.0))
    emit(worst <= 0.05, f"max|slope-1|={worst:.2e} over 10 directions, eps 1e-3..1e-6")


def test_c04_solution_bounds(base, lin, emit):
    rng = np.random.default_rng(4)
    worst = {}
    failures = 0
    for _ in range(20):
        c1, c2 = rng.normal(size=6), rng.normal(size=6)
        a1, a2 = rng.uniform(0.1, 4.0, size=2)
        z1 = _unit(base, c1).scaled(a1)
        z2 = _unit(base, c2).scaled(a2)
        s1 = solve(base, z1, linear_solver=lin)
        s2 = solve(base, z2, u0=s1.u, linear_solver=lin)
        s3 = solve(base, z1.scaled(z2.sup_norm / z1.sup_norm), u0=s1.u, linear_solver=lin)
        d = assemble_tt(base, z1.coefficients - z2.coefficients).sup_norm
        dd = assemble_tt(base, z1.coefficients / z1.sup_norm
                         - z2.coefficients / z2.sup_norm).sup_norm
        rep = check_bounds(s1, z1, s2, z2, s3, d, dd)
        strict = [solution_bounds(s, z, 1e-3) for s, z in ((s1, z1), (s2, z2))]
        failures += (not rep["ok"]) + sum(not b["ok"] for b in strict)
        for k in ("i", "ii_lower", "ii_upper", "iii", "iv"):
            worst[k] = max(worst.get(k, -np.inf), rep[k]["violation"])
    emit(failures == 0,
         f"failures={failures} worst lhs-rhs: " + " ".join(f"{k}={v:.2e}" for k, v in worst.items()))


def test_c05_uniqueness(base, baseline, lin, emit):
    zz, sol, _ = baseline
    rng = np.random.default_rng(5)
    spread = 0.0
    for field in (zz, _unit(base, rng.normal(size=6)).scaled(3.0)):
        ref = solve(base, field, linear_solver=lin).u
        for _ in range(5):
            u0 = rng.uniform(0.5, 3.0, size=base.n_interior)
            u = newton_solve(base, field, u0=u0, linear_solver=lin).u
            spread = max(spread, float(np.max(np.abs(u - ref))))
    emit(spread <= 1e-8, f"max deviation across 5 random starts, 2 instances={spread:.2e}")


def test_c06_metric_identities(base, baseline, emit):
    _, _, geo = baseline
    rep = metric_identities(base, geo.g, geo.mu_ratio, geo.xi, geo.B)
    ok = (rep["mu_rel_error"] <= 1e-10 and rep["rho_reconstruction_rel_error"] <= 1e-10
          and rep["min_eig_2g_minus_rho"] >= -1e-10)
    emit(ok, f"mu={rep['mu_rel_error']:.2e} rho={rep['rho_reconstruction_rel_error']:.2e} "
             f"min eig(2g-rho)={rep['min_eig_2g_minus_rho']:.2e}")


def test_c07_harmonic_map_identities(base, baseline, fine, emit):
    _, _, geo = baseline
    gf, _, _, geo_f = fine
    d, dbar = energy_densities(base, geo.g, geo.mu_ratio)
    e_d = _imax(base, d - 0.5)
    e_db = _imax(base, dbar - (geo.B - 1) / (2 * (geo.B + 1)))
    r0, r1 = _r_error(base, geo), _r_error(gf, geo_f)
    emit(e_d <= 1e-9 and e_db <= 1e-9 and r0 / r1 >= 3,
         f"|dw|^2 err={e_d:.2e} |dbar w|^2 err={e_db:.2e} "
         f"R error {r0:.2e}->{r1:.2e} factor={r0 / r1:.2f}")


def test_c08_b_identities(base, baseline, fine, lin, emit):
    zz, sol, geo = baseline
    gf, _, _, geo_f = fine
    b0 = b_identities(base, geo.g, geo.B)
    b1 = b_identities(gf, geo_f.g, geo_f.B)
    factor = b0["b_equation_residual"] / b1["b_equation_residual"]
    min_B = float(np.min(geo.B[base.interior]))
    grads = []
    u0 = None
    for amp in (1.0, 2.0, 4.0, 8.0):
        z = zz.scaled(amp)
        s = solve(base, z, u0=u0, linear_solver=lin)
        u0 = s.u
        g_amp = derive(base, z, s, with_lambda=False)
        grads.append(b_identities(base, g_amp.g, g_amp.B)["sup_grad_log_B"])
    ratio = max(grads) / min(grads)
    emit(factor >= 3 and min_B <= 1.02 and ratio <= 2,
         f"B-eq factor={factor:.2f} min B={min_B:.5f} "
         f"sup|grad log B|={[round(x, 3) for x in grads]} ratio={ratio:.2f}")


def test_c09_area_energy(base, baseline, emit):
    zz, sol, _ = baseline
    a = zz.sup_norm
    B = derive(base, zz, sol, with_lambda=False).B
    A_g, A_r, E, int_u = area_energy(base, sol.u, B)
    gap = abs(A_g - A_r - int_u) / A_r
    ok = (gap <= 5e-3 and 2 * A_r * 0.99 <= A_g <= (2 + a) * A_r * 1.01
          and E <= (1 + a) * A_r * 1.01)
    emit(ok, f"|A(g)-A(rho)-int u|/A(rho)={gap:.2e} A(g)/A(rho)={A_g / A_r:.4f} "
             f"E/A(rho)={E / A_r:.4f} norm={a:.3f}")


def test_c10_round_trip(base, group, emit):
    rng = np.random.default_rng(10)
    dirs = list(np.eye(6)) + [rng.normal(size=6) for _ in range(10)]
    worst, flagged = 0.0, 0
    for c in dirs:
        rep = round_trip(base, _unit(base, c))
        worst = max(worst, rep.relative_error)
        flagged += rep.tt_report.flagged
    r0 = round_trip(base, _unit(base, BASE_COEFFS)).relative_error
    gf = SurfaceGrid(group, H_FINE)
    r1 = round_trip(gf, _unit(gf, BASE_COEFFS), project=False).relative_error
    emit(worst <= 1e-2 and flagged == 0 and r0 / r1 >= 3,
         f"max rel error={worst:.2e} (16 directions) flagged={flagged} "
         f"refinement {r0:.2e}->{r1:.2e} factor={r0 / r1:.2f}")


def test_c11_properness(base, emit):
    rng = np.random.default_rng(11)
    lines, ok = [], True
    for _ in range(4):
        scan = properness_scan(base, rng.normal(size=6), [0.5, 1.0, 2.0, 4.0, 8.0])
        ok &= scan.ok
        lines.append(f"(inc={scan.increasing} c_low={scan.c_low:.2f} slope={scan.fit_slope:.2f})")
    emit(ok, "rays " + " ".join(lines))


def test_c12_group_and_series(group, base, emit):
    rel = group.relation_residual()
    z = np.array([0.1 + 0.05j, 0.3 - 0.2j, -0.25 + 0.1j])
    worst = 0.0
    for g in group.generators:
        pts = np.concatenate([z, g(z)])
        for m in (0, 2, 4):
            s8, s7 = poincare_partial_sums(group, m, 8, pts)
            res = np.abs(s8[3:] * g.derivative(z) ** 2 - s8[:3])
            worst = max(worst, float(res.max() / np.abs(s8 - s7).max()))
    w = np.linalg.eigvalsh(gram_matrix(base))
    cond = w.max() / w.min()
    emit(rel <= 1e-10 and worst <= 10 and w.min() > 0 and cond < 1e6,
         f"relation residual={rel:.2e} automorphy/tail={worst:.2f} gram cond={cond:.2e}")
