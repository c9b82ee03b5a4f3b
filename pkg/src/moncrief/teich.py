"""The forward map zz -> gamma, its inverse, round trips and the energy scan.

The inverse works from gamma alone.  Its linear solve and Hessian recovery
use sixth-order stencils by default, while the forward Newton solve uses
fourth-order ones, so a round trip compares two independent
discretizations instead of undoing one operator exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import IndefiniteMetricError, LinearSolveError
from .geometry import DerivedGeometry, derive, harmonicity_residual, rho_norm2
from .grid import SurfaceGrid, SymTensor, hessian_from_derivatives
from .qdiff import TTField, TTReport, assemble_tt, gram_matrix, rho_norm_tt, tt_basis, \
    tt_inner, verify_tt
from .solver import LinearSolver, MoncriefSolution, SolverOptions, continuation_solve, solve

log = logging.getLogger(__name__)


@dataclass
class InverseIntermediate:
    """Fields built by the inverse construction (node arrays)."""

    energy_density: np.ndarray
    jacobian_ratio: np.ndarray
    khat: SymTensor
    lam: np.ndarray
    g: SymTensor
    xi: SymTensor
    B: np.ndarray
    u: np.ndarray
    zz: SymTensor
    checks: dict = field(default_factory=dict)


@dataclass
class RoundTripReport:
    relative_error: float
    absolute_error: float
    sup_norm: float
    coefficients: np.ndarray | None
    recovered_coefficients: np.ndarray | None
    tt_report: TTReport
    checks: dict
    error_field: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {"relative_error": self.relative_error, "absolute_error": self.absolute_error,
                "sup_norm": self.sup_norm,
                "coefficients": None if self.coefficients is None else self.coefficients.tolist(),
                "recovered_coefficients": None if self.recovered_coefficients is None
                else self.recovered_coefficients.tolist(),
                "tt": self.tt_report.to_dict(), "checks": self.checks}


def psi(grid: SurfaceGrid, zz: TTField, opts: SolverOptions | None = None, u0=None,
        linear_solver=None):
    """Forward map: solve for u, build g, solve for lambda, return gamma.

    Returns
    -------
    gamma : SymTensor
    geo : DerivedGeometry
    sol : MoncriefSolution
    """
    sol = solve(grid, zz, opts=opts, u0=u0, linear_solver=linear_solver)
    geo = derive(grid, zz, sol)
    return geo.gamma, geo, sol


def _sym_product(A: SymTensor, Minv: SymTensor, C: SymTensor):
    """``A_ac M^cd C_db`` for symmetric 2x2 fields (result is not symmetrized)."""
    a = np.stack([[A.t11, A.t12], [A.t12, A.t22]])
    m = np.stack([[Minv.t11, Minv.t12], [Minv.t12, Minv.t22]])
    c = np.stack([[C.t11, C.t12], [C.t12, C.t22]])
    return np.einsum("ack,cdk,dbk->abk", a, m, c)


def _linear_operator(grid, order):
    ops = grid.fd_operators(order)
    return ops["xx"] + ops["yy"]


def _inverse_system(grid, order):
    # the operator does not depend on gamma, so its solver is cached per grid
    cache = grid.__dict__.setdefault("_inverse_cache", {})
    if order not in cache:
        A = grid.system_matrix(_linear_operator(grid, order) - sp.diags(grid.e2f))
        P = grid.system_matrix(_linear_operator(grid, 2) - sp.diags(grid.e2f)) \
            if order != 2 else None
        cache[order] = (A, P, LinearSolver())
    return cache[order]


def psi_inverse(grid: SurfaceGrid, gamma: SymTensor, order=6, check_harmonic=True):
    """Recover the TT tensor whose forward image is `gamma`.

    Parameters
    ----------
    gamma : SymTensor
        Node array of a hyperbolic metric (NaN where undefined).
    order : {2, 4, 6}
        Stencils for the linear solve ``Delta_rho u - u + B = 0`` and for the
        Hessian of u.

    Returns
    -------
    InverseIntermediate
        Its ``zz`` field is trace-free by construction.

    Raises
    ------
    IndefiniteMetricError
        If gamma is not positive definite at an interior node.
    """
    I = grid.interior
    det = gamma.det()
    if np.any(~(det[I] > 0)) or np.any(~(gamma.t11[I] > 0)):
        raise IndefiniteMetricError("gamma is not positive definite on the octagon")
    e2f = grid.e2f
    ginv_gamma = gamma.inverse()
    e = 0.5 * e2f * (ginv_gamma.t11 + ginv_gamma.t22)
    J = e2f / np.sqrt(det)
    khat = SymTensor(-0.5 * (e2f - e * gamma.t11), 0.5 * e * gamma.t12,
                     -0.5 * (e2f - e * gamma.t22))
    em2l = e + J
    lam = -0.5 * np.log(em2l)
    g = gamma.scale(em2l)
    ginv = g.inverse()
    mu_ratio = np.sqrt(g.det()) / e2f
    k2 = np.exp(2 * lam) * e  # |k|^2_g with k = khat + g/2
    kk = _sym_product(khat, ginv, khat)
    xi = SymTensor(mu_ratio * (k2 * khat.t11 - 2 * kk[0, 0]),
                   mu_ratio * (k2 * khat.t12 - 2 * 0.5 * (kk[0, 1] + kk[1, 0])),
                   mu_ratio * (k2 * khat.t22 - 2 * kk[1, 1]))
    B = np.sqrt(1.0 + 2.0 * rho_norm2(grid, xi))
    # linear solve on interior rows, ghost constraints elsewhere
    A, P, lin = _inverse_system(grid, order)
    rhs = np.zeros(grid.n_nodes)
    rhs[I] = -e2f[I] * B[I]
    if not np.all(np.isfinite(rhs)):
        raise LinearSolveError("B undefined at some interior node")
    u = lin.solve(A, rhs, rtol=1e-13, P=P)
    if not np.all(np.isfinite(u)):
        raise LinearSolveError("non-finite solution of the linear problem")
    d = grid.derivatives(u, order=order)
    H = hessian_from_derivatives(d, grid.f1, grid.f2)
    raw_trace = (xi.t11 + xi.t22) + (H.t11 + H.t22) - (d["xx"] + d["yy"])
    zz11 = 0.5 * (xi.t11 - xi.t22) + 0.5 * (H.t11 - H.t22)
    zz12 = xi.t12 + H.t12
    zz = SymTensor(zz11, zz12, -zz11)
    pos = e * e - 2 * _norm2(khat, ginv_gamma) - J * J
    checks = {
        "positivity_identity_residual": float(np.nanmax(np.abs(pos[I]) / (J[I] ** 2))),
        "max_k2_g": float(np.nanmax(k2[I])),
        "branch_ok": bool(np.nanmax(k2[I]) < 1.0),
        "raw_trace": float(np.nanmax(np.abs(raw_trace[I]) / e2f[I])),
        "xi_trace": float(np.nanmax(np.abs(xi.t11[I] + xi.t22[I]) / e2f[I])),
        "min_u": float(np.min(u[I])),
    }
    if check_harmonic:
        _, _, vn = harmonicity_residual(grid, gamma)
        checks["harmonicity"] = float(np.nanmax(vn[I]))
        if checks["harmonicity"] > 0.1:
            log.warning("identity map far from harmonic (|V| = %.3g)", checks["harmonicity"])
    return InverseIntermediate(e, J, khat, lam, g, xi, B, u, zz, checks)


def _norm2(T: SymTensor, inv: SymTensor):
    kk = _sym_product(T, inv, T)
    # |T|^2 = inv^{ab} (T inv T)_{ab}
    return inv.t11 * kk[0, 0] + inv.t12 * (kk[0, 1] + kk[1, 0]) + inv.t22 * kk[1, 1]


def project_coefficients(grid: SurfaceGrid, T: SymTensor):
    """Least-squares coefficients of `T` in the six-element TT basis."""
    G = gram_matrix(grid)
    basis = tt_basis(grid)
    b = np.array([tt_inner(grid, T, X.tensor) for X in basis])
    return np.linalg.solve(G, b)


def tt_error(grid, A: SymTensor, Bt: SymTensor):
    """Pointwise ``|A - B|_rho`` for trace-free tensors on interior nodes."""
    D = A - Bt
    return rho_norm_tt(D, grid.e2f)[grid.interior]


def round_trip(grid: SurfaceGrid, zz: TTField, opts=None, order=6, project=True):
    """``psi_inverse(psi(zz))`` compared with `zz`."""
    gamma, geo, sol = psi(grid, zz, opts)
    inv = psi_inverse(grid, gamma, order=order)
    err = tt_error(grid, inv.zz, zz.tensor)
    amax = float(np.max(err))
    # relative error and TT check both use the pointwise contraction norm
    ref = float(np.max(rho_norm_tt(zz.tensor, grid.e2f)[grid.interior]))
    rel = amax / ref if ref > 0 else amax
    rep = verify_tt(grid, inv.zz, ref_norm=max(ref, 1e-300))
    rec = project_coefficients(grid, inv.zz) if project else None
    return RoundTripReport(rel, amax, zz.sup_norm, zz.coefficients, rec, rep, inv.checks, err)


# ----------------------------------------------------------------------------
# properness
# ----------------------------------------------------------------------------

@dataclass
class ScanTable:
    scales: np.ndarray
    norms: np.ndarray
    energy: np.ndarray
    int_u: np.ndarray
    increasing: bool
    c_low: float
    c_high: float
    fit_slope: float
    fit_intercept: float
    ok: bool

    def rows(self):
        return [{"scale": float(s), "norm": float(n), "energy": float(E), "int_u": float(iu),
                 "ratio": float(E / n)} for s, n, E, iu in
                zip(self.scales, self.norms, self.energy, self.int_u)]


def properness_scan(grid: SurfaceGrid, direction, scales, opts=None):
    """Energy ``E = A(g) - A(rho)`` along the ray ``s * zz / ||zz||``.

    On the largest half of the scales an affine fit ``E ~ a ||zz|| + b``
    is made and ``c_low, c_high`` are the extreme values of ``E / ||zz||``.
    The scan passes when E is strictly increasing, ``a > 0`` and
    ``c_low > 0``.
    """
    scales = np.asarray(scales, dtype=float)
    if scales.size == 0 or np.any(np.diff(scales) <= 0) or scales[0] <= 0:
        raise ValueError("scales must be positive and strictly ascending")
    base = direction if isinstance(direction, TTField) else assemble_tt(grid, direction)
    if base.sup_norm <= 0:
        raise ValueError("direction must be nonzero")
    unit = base.scaled(1.0 / base.sup_norm)
    sols = continuation_solve(grid, unit, scales, opts=opts)
    E = np.empty(scales.size)
    iu = np.empty(scales.size)
    for k, s in enumerate(sols):
        geo: DerivedGeometry = derive(grid, unit.scaled(scales[k]), s, with_lambda=False)
        E[k] = geo.energy
        iu[k] = geo.int_u
    norms = scales.copy()
    top = slice(scales.size // 2, None)
    if scales[top].size >= 2:
        a, b = np.polyfit(norms[top], E[top], 1)
    else:
        a, b = float(E[-1] / norms[-1]), 0.0
    ratio = E[top] / norms[top]
    inc = bool(np.all(np.diff(E) > 0))
    return ScanTable(scales, norms, E, iu, inc, float(ratio.min()), float(ratio.max()),
                     float(a), float(b), bool(inc and a > 0 and ratio.min() > 0))
