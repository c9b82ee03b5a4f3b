"""Damped Newton solver for the Monge-Ampere type equation

    Delta_rho u - u + sqrt(1 + 2 |xi|^2) = 0,
    xi_ab = zz_ab - (u_;ab - 1/2 rho_ab Delta_rho u),

written in the disk chart as

    F = (u_11 + u_22) - e^{2f} u + sqrt(e^{4f} + X^2 + Y^2),
    X = 2 zz_11 - (u_;11 - u_;22),   Y = 2 zz_12 - 2 u_;12.

Only X^2 and Y^2 enter, so the sign convention of X and Y is immaterial.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, EllipticityError, LinearSolveError
from .grid import PatchGrid, SurfaceGrid, SymTensor, hessian_from_derivatives
from .qdiff import TTField

log = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 50
    damping_floor: float = 1e-4
    check_ellipticity: bool = True
    order: int = 4


@dataclass
class NewtonWorkspace:
    """Linearization data at one iterate (interior rows only)."""

    X: np.ndarray
    Y: np.ndarray
    radicand: np.ndarray
    F_r: np.ndarray
    F_s: np.ndarray
    F_t: np.ndarray
    F_p: np.ndarray
    F_q: np.ndarray
    F_u: np.ndarray
    jacobian: sp.csr_matrix
    residual: np.ndarray
    preconditioner: sp.csr_matrix | None = None

    def ellipticity(self):
        """Observed minima of the ellipticity quantities."""
        return {
            "min_F_r": float(np.min(self.F_r)),
            "min_F_t": float(np.min(self.F_t)),
            "max_F_r": float(np.max(self.F_r)),
            "max_F_t": float(np.max(self.F_t)),
            "max_abs_F_s": float(np.max(np.abs(self.F_s))),
            "min_det": float(np.min(self.F_r * self.F_t - self.F_s ** 2)),
        }


@dataclass
class MoncriefSolution:
    """Solution of the equation for one TT field.

    `u` holds interior values, `u_nodes` the full node array (ghosts
    included for surface grids, Dirichlet values for patches).
    """

    u: np.ndarray
    u_nodes: np.ndarray
    amplitude: float
    iterations: int
    final_residual: float
    history: list = field(default_factory=list)
    bounds_report: dict = field(default_factory=dict)
    converged: bool = True


# ----------------------------------------------------------------------------
# residual and linearization
# ----------------------------------------------------------------------------

def _tt_components(grid, zz):
    if zz is None:
        z0 = np.zeros(grid.n_nodes)
        return z0, z0
    T = zz.tensor if isinstance(zz, TTField) else zz
    return np.asarray(T.t11, float), np.asarray(T.t12, float)


def _pieces(grid, zz, v, order=4):
    d = grid.derivatives(v, order=order)
    H = hessian_from_derivatives(d, grid.f1, grid.f2)
    z11, z12 = _tt_components(grid, zz)
    X = 2.0 * z11 - (H.t11 - H.t22)
    Y = 2.0 * z12 - 2.0 * H.t12
    e2f = grid.e2f
    rad = e2f ** 2 + X ** 2 + Y ** 2
    F = (d["xx"] + d["yy"]) - e2f * v + np.sqrt(rad)
    return F, X, Y, rad, d


def residual_nodes(grid, zz, v, source=None, order=4):
    """Chart residual F at every node with a full stencil (NaN elsewhere)."""
    F, *_ = _pieces(grid, zz, v, order)
    if source is not None:
        F = F - source
    return F


def residual(grid, zz, u, source=None, order=4):
    """Chart residual F on interior nodes.

    `u` may be an interior field (extended through the ghosts) or a full
    node array.
    """
    v = _full(grid, u)
    return residual_nodes(grid, zz, v, source, order)[grid.interior]


def _full(grid, u):
    u = np.asarray(u, dtype=float)
    if isinstance(grid, SurfaceGrid):
        return grid.node_values(u)
    if u.shape != (grid.n_nodes,):
        raise ValueError("patch fields must be given on all nodes")
    return u


def linearize(grid, zz, u, source=None, check=True, order=4) -> NewtonWorkspace:
    """Residual and sparse Jacobian at `u`.

    The Jacobian acts on node arrays; on a :class:`SurfaceGrid` its ghost
    rows are the interpolation constraints, on a :class:`PatchGrid` the
    boundary rows are identities (Dirichlet data).

    Raises
    ------
    EllipticityError
        If ``F_r, F_t > 0`` and ``F_r F_t - F_s^2 > 0`` fail at an interior
        node.
    """
    v = _full(grid, u)
    F, X, Y, rad, d = _pieces(grid, zz, v, order)
    if source is not None:
        F = F - source
    S = np.sqrt(rad)
    f1, f2 = grid.f1, grid.f2
    F_r = 1.0 - X / S
    F_t = 1.0 + X / S
    F_s = -Y / S
    F_p = (2.0 * f1 * X + 2.0 * f2 * Y) / S
    F_q = (-2.0 * f2 * X + 2.0 * f1 * Y) / S
    F_u = -grid.e2f
    rows = grid.interior
    if check:
        det = F_r * F_t - F_s ** 2
        bad = (F_r[rows] <= 0) | (F_t[rows] <= 0) | (det[rows] <= 0) | ~np.isfinite(det[rows])
        if np.any(bad):
            k = rows[np.flatnonzero(bad)[0]]
            raise EllipticityError(f"ellipticity lost at node {k} (z = {grid.z[k]:.4f})",
                                   node=int(k), location=complex(grid.z[k]))
    coef = [np.nan_to_num(c) for c in (F_r, 2.0 * F_s, F_t, F_p, F_q)]

    def assemble(ops):
        dg = sp.diags
        L = (dg(coef[0]) @ ops["xx"] + dg(coef[1]) @ ops["xy"] + dg(coef[2]) @ ops["yy"]
             + dg(coef[3]) @ ops["x"] + dg(coef[4]) @ ops["y"] + dg(F_u))
        return _system(grid, L)

    J = assemble(_operators(grid, order))
    # the compact-stencil Jacobian is a cheap, spectrally close preconditioner
    P = assemble(_operators(grid, 2)) if order != 2 else None
    sl = rows
    return NewtonWorkspace(X[sl], Y[sl], rad[sl], F_r[sl], F_s[sl], F_t[sl], F_p[sl], F_q[sl],
                           F_u[sl], J, F[sl], P)


def _operators(grid, order):
    return grid.fd_operators(order)


def _system(grid, L):
    if isinstance(grid, SurfaceGrid):
        return grid.system_matrix(L)
    mask = sp.diags(grid.is_interior.astype(float))
    return (mask @ L + sp.diags((~grid.is_interior).astype(float))).tocsr()


def _full_residual(grid, zz, v, source, order=4):
    """Residual on all rows of the square node system."""
    F = residual_nodes(grid, zz, v, source, order)
    r = np.zeros(grid.n_nodes)
    r[grid.interior] = F[grid.interior]
    if isinstance(grid, SurfaceGrid):
        r[grid.ghost] = (grid.C @ v)[grid.ghost]
    return r


def _factor(A):
    try:
        return spla.splu(A.tocsc(), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise LinearSolveError(f"sparse factorization failed: {exc}") from exc


def sparse_solve(A, b):
    """Sparse LU solve with one step of iterative refinement."""
    lu = _factor(A)
    x = lu.solve(b)
    x = x + lu.solve(b - A @ x)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError("linear solve produced non-finite values")
    return x


class LinearSolver:
    """Newton-step solver that reuses one LU factorization as preconditioner.

    The first call factors the preconditioning matrix (the system matrix
    itself when none is given).  Later calls run restarted GMRES
    preconditioned by that factorization and refactor only when GMRES fails
    to reach the requested relative residual.  A final fallback factors the
    system matrix directly.
    """

    def __init__(self, restart=60, maxiter=5):
        self.lu = None
        self.restart = restart
        self.maxiter = maxiter
        self.factorizations = 0
        self.last_relres = np.nan

    def _refactor(self, A):
        self.lu = _factor(A)
        self.factorizations += 1

    def _gmres(self, A, b, bn, rtol):
        M = spla.LinearOperator(A.shape, self.lu.solve)
        x, _ = spla.gmres(A, b, x0=self.lu.solve(b), M=M, rtol=rtol, atol=0.0,
                          restart=self.restart, maxiter=self.maxiter)
        rel = np.linalg.norm(A @ x - b) / bn
        if np.all(np.isfinite(x)) and rel <= max(10 * rtol, 1e-11):
            self.last_relres = rel
            return x
        return None

    def solve(self, A, b, rtol=1e-12, P=None):
        bn = np.linalg.norm(b)
        if bn == 0:
            return np.zeros_like(b)
        for attempt in (0, 1):
            if self.lu is None:
                self._refactor(A if P is None else P)
            x = self._gmres(A, b, bn, rtol)
            if x is not None:
                return x
            self.lu = None
            if P is None:
                break
        self._refactor(A)
        x = self.lu.solve(b)
        x = x + self.lu.solve(b - A @ x)
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("linear solve produced non-finite values")
        self.last_relres = np.linalg.norm(A @ x - b) / bn
        return x


def _invariant_norm(grid, r_interior):
    return float(np.max(np.abs(r_interior / grid.e2f[grid.interior]))) if r_interior.size else 0.0


# ----------------------------------------------------------------------------
# Newton
# ----------------------------------------------------------------------------

def default_initial_guess(grid, zz):
    s = zz.sup_norm if isinstance(zz, TTField) else 0.0
    return np.full(grid.n_interior, 1.0 + s / (2.0 * SQRT2))


def newton_solve(grid, zz, u0=None, opts: SolverOptions | None = None, source=None,
                 boundary=None, linear_solver: LinearSolver | None = None) -> MoncriefSolution:
    """Damped Newton iteration with L-infinity backtracking.

    The stopping test uses the chart-invariant residual
    ``max |exp(-2f) F|`` over interior nodes.

    Parameters
    ----------
    grid : SurfaceGrid or PatchGrid
    zz : TTField or None
    u0 : ndarray, optional
        Interior initial guess (surface) or node array (patch).  Defaults to
        the constant ``1 + ||zz|| / (2 sqrt 2)``.
    source : ndarray, optional
        Node array subtracted from F (manufactured problems).
    boundary : ndarray, optional
        Dirichlet values on a patch (node array; interior entries ignored).
    linear_solver : LinearSolver, optional
        Shared solver whose factorization is reused across calls.

    Raises
    ------
    ConvergenceError
        After `max_iter` iterations or when the line search stalls.
    """
    opts = opts or SolverOptions()
    if opts.tol <= 0:
        raise ValueError("tol must be positive")
    patch = isinstance(grid, PatchGrid)
    if u0 is None:
        u0 = default_initial_guess(grid, zz) if not patch else np.ones(grid.n_nodes)
    u0 = np.asarray(u0, dtype=float)
    if not np.all(np.isfinite(u0)):
        raise ValueError("initial guess contains non-finite values")
    if patch:
        v = u0.copy() if u0.shape == (grid.n_nodes,) else _scatter_patch(grid, u0)
        if boundary is not None:
            v[grid.boundary] = np.asarray(boundary, float)[grid.boundary]
    else:
        v = grid.node_values(u0)
        if u0.shape == (grid.n_nodes,):
            v = grid.extend(u0[grid.interior])
    amp = zz.sup_norm if isinstance(zz, TTField) else 0.0

    def measure(vv):
        r = _full_residual(grid, zz, vv, source, opts.order)
        return r, _invariant_norm(grid, r[grid.interior])

    lin = linear_solver or LinearSolver()
    r, nrm = measure(v)
    history = [nrm]
    best = (nrm, v.copy())
    it = 0
    while nrm > opts.tol:
        if it >= opts.max_iter:
            raise ConvergenceError(f"no convergence in {opts.max_iter} iterations "
                                   f"(residual {nrm:.3e})", best=_interior(grid, best[1]),
                                   history=history, amplitude=amp)
        ws = linearize(grid, zz, v, source, check=opts.check_ellipticity, order=opts.order)
        step = lin.solve(ws.jacobian, -r, rtol=max(1e-12, min(1e-3, 1e-2 * nrm)),
                         P=ws.preconditioner)
        t = 1.0
        while True:
            vt = v + t * step
            rt, nt = measure(vt)
            if np.isfinite(nt) and nt < nrm:
                break
            t *= 0.5
            if t < opts.damping_floor:
                raise ConvergenceError(f"line search stalled at residual {nrm:.3e}",
                                       best=_interior(grid, best[1]), history=history,
                                       amplitude=amp)
        v, r, nrm = vt, rt, nt
        it += 1
        history.append(nrm)
        if nrm < best[0]:
            best = (nrm, v.copy())
        log.debug("newton it=%d step=%.3g residual=%.3e", it, t, nrm)
    return MoncriefSolution(_interior(grid, v), v, amp, it, nrm, history)


def _interior(grid, v):
    return np.asarray(v)[grid.interior]


def _scatter_patch(grid, u_int):
    v = np.zeros(grid.n_nodes)
    v[grid.interior] = u_int
    return v


def continuation_solve(grid, zz: TTField, amplitudes, opts=None, u0=None, max_bisect=8,
                       linear_solver=None):
    """Solve for ``a * zz`` along ascending amplitudes, warm-starting each solve.

    A failing step is bisected (up to `max_bisect` times) before giving up.
    Returns one solution per requested amplitude; amplitudes refer to the
    scaling factor applied to `zz`.
    """
    amps = [float(a) for a in amplitudes]
    if any(b <= a for a, b in zip(amps, amps[1:])):
        raise ValueError("amplitudes must be strictly ascending")
    out = []
    prev_a = 0.0
    prev_u = u0 if u0 is not None else np.ones(grid.n_interior)
    lin = linear_solver or LinearSolver()
    for a in amps:
        target = a
        cur_a, cur_u = prev_a, prev_u
        depth = 0
        while True:
            step_a = target
            try:
                sol = newton_solve(grid, zz.scaled(step_a), u0=cur_u, opts=opts,
                                   linear_solver=lin)
            except (ConvergenceError, EllipticityError) as exc:
                depth += 1
                if depth > max_bisect:
                    if isinstance(exc, ConvergenceError):
                        exc.amplitude = target
                        raise
                    raise ConvergenceError(str(exc), amplitude=target) from exc
                target = 0.5 * (cur_a + target)
                continue
            cur_a, cur_u = step_a, sol.u
            if step_a == a:
                break
            target = a
        sol.amplitude = a
        out.append(sol)
        prev_a, prev_u = a, sol.u
    return out


def solve(grid, zz: TTField, opts=None, u0=None, linear_solver=None):
    """Newton solve with automatic amplitude continuation on failure."""
    lin = linear_solver or LinearSolver()
    try:
        return newton_solve(grid, zz, u0=u0, opts=opts, linear_solver=lin)
    except (ConvergenceError, EllipticityError):
        sols = continuation_solve(grid, zz, [0.25, 0.5, 0.75, 1.0], opts=opts,
                                  linear_solver=lin)
        return sols[-1]


# ----------------------------------------------------------------------------
# bounds
# ----------------------------------------------------------------------------

def check_bounds(sol1, zz1, sol2, zz2, sol3=None, zz_diff_norm=None,
                 zz_dir_diff_norm=None, slack=None):
    """Check the four sup-norm bounds for a pair of solutions.

    Parameters
    ----------
    sol1, sol2 : MoncriefSolution
        Solutions for `zz1`, `zz2` (TTField).
    sol3 : MoncriefSolution, optional
        Solution for ``(a2 / a1) zz1``; enables bound (iii).
    zz_diff_norm : float
        ``||zz1 - zz2||`` (sup norm).
    zz_dir_diff_norm : float
        ``||zz1 / a1 - zz2 / a2||``.
    slack : float, optional
        Defaults to ``1e-3 (1 + max(a1, a2))``.

    Returns
    -------
    dict with one entry per bound: lhs, rhs, violation (lhs - rhs), ok.
    """
    a1, a2 = zz1.sup_norm, zz2.sup_norm
    if slack is None:
        slack = 1e-3 * (1.0 + max(a1, a2))
    u1, u2 = sol1.u, sol2.u
    rep = {}

    def entry(lhs, rhs):
        return {"lhs": float(lhs), "rhs": float(rhs), "violation": float(lhs - rhs),
                "ok": bool(lhs <= rhs + slack)}

    if zz_diff_norm is not None:
        rep["i"] = entry(np.max(np.abs(u1 - u2)), zz_diff_norm / SQRT2)
    lo = min(np.min(u1), np.min(u2))
    rep["ii_lower"] = entry(1.0 - lo, 0.0)
    rep["ii_upper"] = entry(max(np.max(u1) - 1.0 - a1 / SQRT2, np.max(u2) - 1.0 - a2 / SQRT2), 0.0)
    if sol3 is not None and a1 > 0 and a2 > 0:
        # zz3 = (a2 / a1) zz1, so amplitudes along zz1 are 1 and a2 / a1
        s = a2 / a1
        rep["iii"] = entry(np.max(np.abs(u1 / 1.0 - sol3.u / s)), abs(1.0 - 1.0 / s))
    if zz_dir_diff_norm is not None and a1 > 0 and a2 > 0:
        rep["iv"] = entry(np.max(np.abs(u1 / a1 - u2 / a2)),
                          abs(1.0 / a1 - 1.0 / a2) + zz_dir_diff_norm / SQRT2)
    rep["slack"] = float(slack)
    rep["ok"] = all(v["ok"] for k, v in rep.items() if isinstance(v, dict))
    return rep


def solution_bounds(sol, zz, slack):
    """Bound (ii) for a single solution."""
    a = zz.sup_norm if isinstance(zz, TTField) else 0.0
    lo = float(np.min(sol.u))
    hi = float(np.max(sol.u))
    return {"min_u": lo, "max_u": hi, "upper": 1.0 + a / SQRT2, "slack": slack,
            "ok": bool(lo >= 1.0 - slack and hi <= 1.0 + a / SQRT2 + slack)}


# ----------------------------------------------------------------------------
# manufactured solutions on a flat patch
# ----------------------------------------------------------------------------

def mms_exact(grid: PatchGrid, amp=0.1):
    """``u* = 1 + amp (1 - r^2 / R^2)^2`` and its chart derivatives."""
    R2 = grid.r_patch ** 2
    x, y = grid.x, grid.y
    s = 1.0 - (x * x + y * y) / R2
    u = 1.0 + amp * s * s
    ux = amp * 2 * s * (-2 * x / R2)
    uy = amp * 2 * s * (-2 * y / R2)
    uxx = amp * (8 * x * x / R2 ** 2 - 4 * s / R2)
    uyy = amp * (8 * y * y / R2 ** 2 - 4 * s / R2)
    uxy = amp * 8 * x * y / R2 ** 2
    return u, {"x": ux, "y": uy, "xx": uxx, "yy": uyy, "xy": uxy}


def mms_source(grid: PatchGrid, zz_tensor: SymTensor | None, amp=0.1):
    """Source making `mms_exact` an exact solution of ``F(u) = source``."""
    u, d = mms_exact(grid, amp)
    H = hessian_from_derivatives(d, grid.f1, grid.f2)
    z11 = zz_tensor.t11 if zz_tensor is not None else 0.0
    z12 = zz_tensor.t12 if zz_tensor is not None else 0.0
    X = 2 * z11 - (H.t11 - H.t22)
    Y = 2 * z12 - 2 * H.t12
    return (d["xx"] + d["yy"]) - grid.e2f * u + np.sqrt(grid.e2f ** 2 + X ** 2 + Y ** 2)


def mms_tensor(grid: PatchGrid, scale=0.5):
    """A smooth trace-free tensor for the patch problem (phi = scale (1 + z^2))."""
    phi = scale * (1.0 + grid.z ** 2)
    return SymTensor(2 * phi.real, -2 * phi.imag, -2 * phi.real)


def mms_study(r_patch=0.5, hs=(0.04, 0.02, 0.01), amp=0.1, tt_scale=0.5, opts=None):
    """Refinement study of the nonlinear solve on a Dirichlet patch.

    Returns
    -------
    dict with per-level errors (solve, Laplacian, Hessian) and observed orders.
    """
    from .grid import build_mms_patch, hessian_rho, laplacian_rho
    levels = []
    for h in hs:
        g = build_mms_patch(r_patch, h)
        T = mms_tensor(g, tt_scale)
        u_ex, d = mms_exact(g, amp)
        src = mms_source(g, T, amp)
        sol = newton_solve(g, T, u0=np.ones(g.n_nodes), opts=opts, source=src, boundary=u_ex)
        err = float(np.max(np.abs(sol.u_nodes - u_ex)))
        lap = laplacian_rho(g, u_ex)
        lap_ex = (d["xx"] + d["yy"]) / g.e2f
        H = hessian_rho(g, u_ex)
        H_ex = hessian_from_derivatives(d, g.f1, g.f2)
        I = g.interior
        lap_err = float(np.max(np.abs(lap - lap_ex)[I]))
        hes_err = float(max(np.max(np.abs(a - b)[I]) for a, b in
                            zip(H.stack(), H_ex.stack())))
        levels.append({"h": h, "nodes": g.n_nodes, "solve_error": err, "laplacian_error": lap_err,
                       "hessian_error": hes_err, "iterations": sol.iterations,
                       "residual": sol.final_residual})
    orders = {}
    for key in ("solve_error", "laplacian_error", "hessian_error"):
        if len(levels) < 2:
            orders[key] = "n/a"
            continue
        orders[key] = [float(np.log(levels[i][key] / levels[i + 1][key]) /
                             np.log(levels[i]["h"] / levels[i + 1]["h"]))
                       for i in range(len(levels) - 1)]
    return {"levels": levels, "orders": orders}
