import numpy as np
import pytest

from moncrief import GridConstructionError, SurfaceGrid, build_mms_patch
from moncrief.grid import hessian_rho, laplacian_rho, lagrange_weights
from moncrief.qdiff import basis_phi


@pytest.mark.parametrize("p", [4, 6, 8])
def test_lagrange_weights_partition_of_unity_and_cubic(p):
    t = np.array([0.3, 1.7, 2.5])
    w = lagrange_weights(t + p // 2 - 1, p)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-13)
    nodes = np.arange(p) - (p // 2 - 1)
    # reproduces cubics exactly
    assert np.allclose(w @ nodes ** 3, t ** 3, atol=1e-11)


def test_patch_quadratic_laplacian_exact():
    g = build_mms_patch(0.5, 0.05)
    d = g.derivatives(g.x ** 2 + g.y ** 2)
    I = g.interior
    assert np.allclose(d["xx"][I] + d["yy"][I], 4.0, atol=1e-10)


def test_linear_function_hessian(coarse_grid):
    g = coarse_grid
    H = hessian_rho(g, g.x.copy())
    I = g.interior
    # u = x: the covariant Hessian is -Gamma^1_ab
    assert np.allclose(H.t11[I], -g.f1[I], atol=1e-10)
    assert np.allclose(H.t22[I], g.f1[I], atol=1e-10)
    assert np.allclose(H.t12[I], -g.f2[I], atol=1e-10)


def test_trace_of_hessian_is_laplacian(grid, rng):
    v = grid.extend(rng.normal(size=grid.n_interior))
    H = hessian_rho(grid, v)
    lap = laplacian_rho(grid, v)
    I = grid.interior
    assert np.allclose((H.t11 + H.t22)[I] / grid.e2f[I], lap[I], atol=1e-8 * np.abs(lap[I]).max())


@pytest.mark.parametrize("order,expected", [(2, 2.0), (4, 4.0)])
def test_difference_order_on_patch(order, expected):
    errs = []
    for h in (0.04, 0.02):
        g = build_mms_patch(0.5, h)
        v = np.sin(3 * g.x) * np.cos(2 * g.y)
        d = g.derivatives(v, order=order)
        exact = -9 * v
        ok = np.isfinite(d["xx"]) & (np.abs(g.z) < 0.3)
        errs.append(np.max(np.abs(d["xx"] - exact)[ok]))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(expected, abs=0.3)


def test_area_close_to_gauss_bonnet(group):
    errs = []
    for h in (0.04, 0.02):
        g = SurfaceGrid(group, h, interp_order=4 if h > 0.03 else 8)
        errs.append(abs(g.area - 8 * np.pi) / (8 * np.pi))
    assert errs[1] < 2e-3
    assert errs[1] < errs[0]


def test_node_count_scales_with_h(group, coarse_grid, grid):
    ratio = grid.n_interior / coarse_grid.n_interior
    assert ratio == pytest.approx(4.0, rel=0.1)


def test_every_ghost_has_deck_image(grid):
    w = grid.ghost_image
    z = grid.z[grid.ghost]
    img = (grid.ghost_a * z + grid.ghost_b) / (np.conj(grid.ghost_b) * z + np.conj(grid.ghost_a))
    assert np.allclose(img, w, atol=1e-12)
    assert np.all(grid.group.in_octagon(w, tol=1e-10))


def test_extend_is_linear(grid, rng):
    a, b = rng.normal(size=(2, grid.n_interior))
    lhs = grid.extend(2.0 * a - 3.0 * b)
    rhs = 2.0 * grid.extend(a) - 3.0 * grid.extend(b)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_extend_reproduces_invariant_function(grid):
    # |phi|^2 exp(-4f) is deck invariant for any automorphic quadratic differential
    phi = basis_phi(grid)[1]
    s = np.abs(phi) ** 2 / grid.e2f ** 2
    ext = grid.extend(s[grid.interior])
    scale = np.abs(s[grid.interior]).max()
    assert np.max(np.abs(ext - s)) < 1e-4 * scale


def test_interpolate_at_nodes(grid, rng):
    v = grid.extend(rng.normal(size=grid.n_interior))
    k = grid.interior[::500]
    assert np.allclose(grid.interpolate(v, grid.z[k]), v[k], atol=1e-12)


def test_integrate_constant_is_area(grid):
    assert grid.integrate(np.ones(grid.n_interior)) == pytest.approx(grid.area, rel=1e-12)


def test_bad_parameters(group):
    with pytest.raises(ValueError):
        SurfaceGrid(group, -0.1)
    with pytest.raises(ValueError):
        SurfaceGrid(group, 0.02, interp_order=5)
    with pytest.raises(GridConstructionError):
        SurfaceGrid(group, 0.04, interp_order=8)


def test_fd_operator_orders_available(coarse_grid):
    for order in (2, 4, 6):
        assert set(coarse_grid.fd_operators(order)) == {"x", "y", "xx", "yy", "xy"}
    with pytest.raises(ValueError):
        coarse_grid.fd_operators(3)
