import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moncrief import SurfaceGrid, assemble_tt, gram_matrix, verify_tt
from moncrief.grid import SymTensor
from moncrief.hyperbolic import side_points
from moncrief.qdiff import (SUPNORM_FACTOR, QuadDifferential, automorphic_basis,
                            poincare_partial_sums, poincare_series, rho_divergence,
                            rho_norm_tt)

coeffs = st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=6).map(np.array)
Z = np.array([0.1 + 0.05j, 0.3 - 0.2j, -0.25 + 0.1j, 0.05j])


@pytest.mark.parametrize("m", [0, 2, 4])
def test_series_at_length_zero_is_seed(group, m):
    assert np.allclose(poincare_series(group, m, 0, Z), Z ** m)


@pytest.mark.parametrize("m", [1, 3])
def test_odd_classes_vanish(group, m):
    vals = [np.abs(poincare_series(group, m, L, Z[:2])).max() for L in (2, 4, 6, 8)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-4 * vals[0]


def test_series_automorphy_within_tail(group):
    g = group.generators[1]
    for m in (0, 2, 4):
        s8, s7 = poincare_partial_sums(group, m, 8, np.concatenate([Z[:2], g(Z[:2])]))
        res = np.abs(s8[2:] * g.derivative(Z[:2]) ** 2 - s8[:2])
        assert res.max() < 10 * np.abs(s8 - s7)[:2].max()


def test_partial_sums_match_separate_truncations(group):
    full, prev = poincare_partial_sums(group, 2, 3, Z)
    assert np.allclose(full, poincare_series(group, 2, 3, Z), atol=1e-14)
    assert np.allclose(prev, poincare_series(group, 2, 2, Z), atol=1e-14)
    assert QuadDifferential(group, 2, 3).tail(Z) == pytest.approx(np.abs(full - prev))


def test_exact_forms_match_series(group):
    for m, f in zip((0, 2, 4), automorphic_basis(group)):
        s8, s7 = poincare_partial_sums(group, m, 8, Z[:2])
        assert np.abs(f(Z[:2]) - s8).max() < 10 * np.abs(s8 - s7).max()


def test_exact_forms_automorphic_across_seams(group):
    for f in automorphic_basis(group):
        for k in range(4):
            z = 0.9999 * side_points(k + 4, 40)
            scale = np.abs(f.taylor(z)).max()
            assert f.automorphy_residual(z, k).max() < 1e-11 * scale


def test_zero_coefficients(grid):
    zz = assemble_tt(grid, np.zeros(6))
    assert zz.sup_norm == 0.0
    assert np.all(zz.tensor.t11 == 0) and np.all(zz.tensor.t12 == 0)
    rep = verify_tt(grid, zz)
    assert rep.max_trace == 0 and rep.max_divergence == 0


@settings(max_examples=25, deadline=None)
@given(coeffs, coeffs)
def test_assembly_is_linear(coarse_grid, a, b):
    A, B, AB = (assemble_tt(coarse_grid, c) for c in (a, b, 2 * a - b))
    assert np.allclose(AB.tensor.t11, 2 * A.tensor.t11 - B.tensor.t11, atol=1e-10)
    assert np.allclose(AB.tensor.t12, 2 * A.tensor.t12 - B.tensor.t12, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(coeffs)
def test_trace_free_exactly(coarse_grid, c):
    T = assemble_tt(coarse_grid, c).tensor
    assert np.all(T.t11 + T.t22 == 0)


def test_sup_norm_scaling_and_convention(grid):
    c = np.array([1.0, 0.3, -0.5, 0.2, 0.7, -1.0])
    zz = assemble_tt(grid, c)
    assert assemble_tt(grid, 2 * c).sup_norm == pytest.approx(2 * zz.sup_norm, rel=1e-12)
    pointwise = rho_norm_tt(zz.tensor, grid.e2f)[grid.interior]
    assert zz.sup_norm == pytest.approx(SUPNORM_FACTOR * pointwise.max(), rel=1e-14)
    # pointwise norm is the full contraction rho^ac rho^bd z_ab z_cd
    T = zz.tensor
    full = (T.t11 ** 2 + 2 * T.t12 ** 2 + T.t22 ** 2) / grid.e2f ** 2
    assert np.allclose(pointwise ** 2, full[grid.interior])


def test_scaled_field(unit_zz):
    half = unit_zz.scaled(0.5)
    assert half.sup_norm == pytest.approx(0.5)
    assert np.allclose(half.tensor.t12, 0.5 * unit_zz.tensor.t12)


def test_rejects_bad_coefficients(grid):
    with pytest.raises(ValueError):
        assemble_tt(grid, [1.0, 2.0])
    with pytest.raises(ValueError):
        assemble_tt(grid, [np.nan] + [0.0] * 5)


def test_assembled_field_passes_verification(grid, unit_zz):
    rep = verify_tt(grid, unit_zz)
    assert not rep.flagged
    assert rep.max_divergence < 1e-3 * rep.ref_norm


def test_corrupted_field_flagged(grid, unit_zz):
    T = unit_zz.tensor
    bad = SymTensor(T.t11, T.t12 + grid.x * grid.e2f, T.t22)
    rep = verify_tt(grid, bad)
    assert rep.flagged
    assert rep.max_divergence > 0.1


def test_divergence_converges(group, grid):
    fine = SurfaceGrid(group, 0.01)
    c = np.array([0.4, -1.0, 0.8, 0.5, -0.3, 0.9])
    vals = []
    for g in (grid, fine):
        zz = assemble_tt(g, c)
        d1, d2 = rho_divergence(g, zz.tensor, order=2)
        vals.append(np.nanmax((np.sqrt(d1 ** 2 + d2 ** 2) / np.sqrt(g.e2f))[g.interior]))
    assert np.log2(vals[0] / vals[1]) >= 1.8


def test_gram_matrix_full_rank(grid):
    G = gram_matrix(grid)
    assert np.allclose(G, G.T)
    w = np.linalg.eigvalsh(G)
    assert w.min() > 0
    assert w.max() / w.min() < 1e6
