"""Quantities derived from a solution u: xi, B, g, lambda, gamma and the
identities they satisfy.

All node arrays follow the grid numbering; entries that need a stencil
that is not available are NaN.  Reports restrict to interior nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .errors import ConvergenceError
from .grid import SurfaceGrid, SymTensor, hessian_from_derivatives
from .hyperbolic import DEFAULT_INJ_RHO
from .qdiff import TTField
from .solver import LinearSolver, MoncriefSolution

SQRT2 = np.sqrt(2.0)


@dataclass
class DerivedGeometry:
    """Everything computed from one solution (node arrays, NaN where undefined)."""

    xi: SymTensor
    B: np.ndarray
    g: SymTensor
    mu_ratio: np.ndarray
    lam: np.ndarray | None = None
    gamma: SymTensor | None = None
    area_g: float = np.nan
    area_rho: float = np.nan
    energy: float = np.nan
    int_u: float = np.nan
    hopf_norm2: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def rho_tensor(grid):
    z = np.zeros(grid.n_nodes)
    return SymTensor(grid.e2f.copy(), z, grid.e2f.copy())


def compute_xi(grid, zz, u, order=4):
    """``xi_ab = zz_ab - (u_;ab - 1/2 rho_ab Delta_rho u)`` at every node with a stencil.

    `order` should match the stencils of the solve that produced u.
    """
    v = grid.node_values(u) if isinstance(grid, SurfaceGrid) else np.asarray(u, float)
    d = grid.derivatives(v, order=order)
    H = hessian_from_derivatives(d, grid.f1, grid.f2)
    lap = d["xx"] + d["yy"]  # = e^{2f} Delta_rho u
    T = zz.tensor if isinstance(zz, TTField) else zz
    if T is None:
        T = SymTensor(np.zeros(grid.n_nodes), np.zeros(grid.n_nodes), np.zeros(grid.n_nodes))
    return SymTensor(T.t11 - H.t11 + 0.5 * lap, T.t12 - H.t12, T.t22 - H.t22 + 0.5 * lap)


def rho_norm2(grid, T: SymTensor):
    """``|T|^2_rho = rho^ac rho^bd T_ab T_cd``."""
    return (T.t11 ** 2 + 2 * T.t12 ** 2 + T.t22 ** 2) / grid.e2f ** 2


def compute_B(grid, xi: SymTensor):
    """``B = sqrt(1 + 2 |xi|^2)``, with the location of its minimum."""
    B = np.sqrt(1.0 + 2.0 * rho_norm2(grid, xi))
    I = grid.interior
    k = I[int(np.nanargmin(B[I]))]
    return B, {"min_B": float(B[k]), "argmin": complex(grid.z[k])}


def compute_g(grid, xi: SymTensor, B):
    """Metric from ``(1 + B) g^ab = -2 xi^ab + B rho^ab``.

    Returns
    -------
    g : SymTensor
        Lower-index metric (pointwise 2x2 inverse).
    mu_ratio : ndarray
        ``sqrt(det g) / sqrt(det rho)``.
    """
    if np.nanmin(B) < 1.0 - 1e-12:
        raise ValueError("B must be >= 1")
    e4f = grid.e2f ** 2
    ginv = SymTensor((B / grid.e2f - 2 * xi.t11 / e4f) / (1 + B),
                     (-2 * xi.t12 / e4f) / (1 + B),
                     (B / grid.e2f - 2 * xi.t22 / e4f) / (1 + B))
    g = ginv.inverse()
    mu = np.sqrt(g.det()) / grid.e2f
    return g, mu


def reconstruct_rho(grid, g: SymTensor, xi: SymTensor, B):
    """``B/(1+B) g_ab - 2/(1+B) xi_a^c g_cb``, which should equal rho_ab."""
    # xi_a^c = rho^{cd} xi_ad = e^{-2f} xi_ac
    m11 = xi.t11 / grid.e2f
    m12 = xi.t12 / grid.e2f
    m22 = xi.t22 / grid.e2f
    p11 = m11 * g.t11 + m12 * g.t12
    p12 = m11 * g.t12 + m12 * g.t22
    p22 = m12 * g.t12 + m22 * g.t22
    c = B / (1 + B)
    d = 2 / (1 + B)
    return SymTensor(c * g.t11 - d * p11, c * g.t12 - d * p12, c * g.t22 - d * p22)


def metric_identities(grid, g, mu_ratio, xi, B):
    """Residuals of the algebraic metric identities on interior nodes."""
    I = grid.interior
    rel_mu = np.abs(mu_ratio[I] - (1 + B[I])) / (1 + B[I])
    rec = reconstruct_rho(grid, g, xi, B)
    rel_rec = max(np.max(np.abs(rec.t11[I] - grid.e2f[I]) / grid.e2f[I]),
                  np.max(np.abs(rec.t12[I]) / grid.e2f[I]),
                  np.max(np.abs(rec.t22[I] - grid.e2f[I]) / grid.e2f[I]))
    # eigenvalues of rho^{-1}(2g - rho)
    T = SymTensor(2 * g.t11 - grid.e2f, 2 * g.t12, 2 * g.t22 - grid.e2f).scale(1 / grid.e2f)
    lo, _ = T.take(I).eigvalsh()
    glo, _ = g.take(I).eigvalsh()
    return {"mu_rel_error": float(np.max(rel_mu)), "rho_reconstruction_rel_error": float(rel_rec),
            "min_eig_2g_minus_rho": float(np.min(lo)), "min_eig_g": float(np.min(glo))}


def area_energy(grid, u, B):
    """``(A(g), A(rho), E, int u)`` with ``A(g) = int (1 + B) dmu_rho``."""
    I = grid.interior
    area_rho = grid.integrate(np.ones(grid.n_interior))
    area_g = grid.integrate(1.0 + np.asarray(B)[I])
    uu = np.asarray(u)
    int_u = grid.integrate(uu if uu.shape == (grid.n_interior,) else uu[I])
    return area_g, area_rho, area_g - area_rho, int_u


def energy_densities(grid, g: SymTensor, mu_ratio=None):
    """``|dw|^2`` and ``|dbar w|^2`` of the identity map (Sigma, g) -> (Sigma, rho).

    ``e = 1/2 g^ab rho_ab`` and ``J = mu_rho / mu_g`` give
    ``|dw|^2 = (e + J)/2`` and ``|dbar w|^2 = (e - J)/2``.
    """
    ginv = g.inverse()
    e = 0.5 * grid.e2f * (ginv.t11 + ginv.t22)
    J = grid.e2f / np.sqrt(g.det()) if mu_ratio is None else 1.0 / mu_ratio
    return 0.5 * (e + J), 0.5 * (e - J)


def hopf_norm2(grid, g: SymTensor):
    """``|phi|^2_g`` from the g-trace-free part of rho: ``|rho_0|^2_g / 8``."""
    ginv = g.inverse()
    e = 0.5 * grid.e2f * (ginv.t11 + ginv.t22)
    r0 = SymTensor(grid.e2f - e * g.t11, -e * g.t12, grid.e2f - e * g.t22)
    # g^ac g^bd r_ab r_cd
    a, b, c = ginv.t11, ginv.t12, ginv.t22
    m11 = a * r0.t11 + b * r0.t12
    m12 = a * r0.t12 + b * r0.t22
    m21 = b * r0.t11 + c * r0.t12
    m22 = b * r0.t12 + c * r0.t22
    return (m11 ** 2 + m12 * m21 + m21 * m12 + m22 ** 2) / 8.0


# ----------------------------------------------------------------------------
# curvature and Laplace-Beltrami
# ----------------------------------------------------------------------------

def brioschi_curvature(grid, T: SymTensor):
    """Gauss curvature of the metric ``T`` from the Brioschi formula."""
    E, F, G = T.t11, T.t12, T.t22
    dE, dF, dG = grid.derivatives(E), grid.derivatives(F), grid.derivatives(G)
    Eu, Ev, Fu, Fv, Gu, Gv = dE["x"], dE["y"], dF["x"], dF["y"], dG["x"], dG["y"]
    Evv, Fuv, Guu = dE["yy"], dF["xy"], dG["xx"]
    a11 = -0.5 * Evv + Fuv - 0.5 * Guu
    a12, a13 = 0.5 * Eu, Fu - 0.5 * Ev
    a21, a31 = Fv - 0.5 * Gu, 0.5 * Gv
    det1 = (a11 * (E * G - F * F) - a12 * (a21 * G - F * a31) + a13 * (a21 * F - E * a31))
    b12, b13 = 0.5 * Ev, 0.5 * Gu
    det2 = -b12 * (b12 * G - F * b13) + b13 * (b12 * F - E * b13)
    return (det1 - det2) / (E * G - F * F) ** 2


def curvature_g(grid, g: SymTensor):
    """Scalar curvature ``R = 2K`` of g."""
    return 2.0 * brioschi_curvature(grid, g)


def divergence_form_matrix(grid, A: SymTensor, rows=None):
    """Sparse ``d_a (A^ab d_b .)`` with half-point averages for A11, A22.

    Rows are populated for `rows` (default: interior nodes) when the 3x3
    neighborhood exists and A is defined on it.
    """
    h2 = grid.h ** 2
    rows = grid.interior if rows is None else rows
    nb = grid.neighbors(1)[rows]  # (n, 3, 3), index [di+1, dj+1]
    ok = (nb >= 0).all(axis=(1, 2))
    for arr in (A.t11, A.t12, A.t22):
        ok &= np.isfinite(arr[np.where(nb >= 0, nb, 0)]).all(axis=(1, 2))
    rows, nb = rows[ok], nb[ok]
    c = nb[:, 1, 1]
    E_, W_, N_, S_ = nb[:, 2, 1], nb[:, 0, 1], nb[:, 1, 2], nb[:, 1, 0]
    NE, SE, NW, SW = nb[:, 2, 2], nb[:, 2, 0], nb[:, 0, 2], nb[:, 0, 0]
    A11, A12, A22 = A.t11, A.t12, A.t22
    ae = 0.5 * (A11[c] + A11[E_]) / h2
    aw = 0.5 * (A11[c] + A11[W_]) / h2
    an = 0.5 * (A22[c] + A22[N_]) / h2
    as_ = 0.5 * (A22[c] + A22[S_]) / h2
    q = 0.25 / h2
    cols = [E_, W_, N_, S_, c, NE, SE, NW, SW]
    vals = [ae, aw, an, as_, -(ae + aw + an + as_),
            q * (A12[E_] + A12[N_]), -q * (A12[E_] + A12[S_]),
            -q * (A12[W_] + A12[N_]), q * (A12[W_] + A12[S_])]
    R = np.concatenate([rows] * len(cols))
    C = np.concatenate(cols)
    V = np.concatenate(vals)
    return sp.csr_matrix((V, (R, C)), shape=(grid.n_nodes, grid.n_nodes))


def laplace_beltrami(grid, g: SymTensor, v, rows=None):
    """``Delta_g v`` in divergence form at `rows` (NaN elsewhere)."""
    mu = np.sqrt(g.det())
    ginv = g.inverse()
    A = ginv.scale(mu)
    D = divergence_form_matrix(grid, A, rows)
    out = D @ np.nan_to_num(v)
    empty = np.diff(D.indptr) == 0
    touched = np.abs(D) @ np.isnan(v).astype(float)
    out[empty | (touched > 0)] = np.nan
    return out / mu


def grad_norm2(grid, g: SymTensor, v):
    """``|grad_g v|^2`` from centered differences."""
    d = grid.derivatives(v)
    ginv = g.inverse()
    return ginv.t11 * d["x"] ** 2 + 2 * ginv.t12 * d["x"] * d["y"] + ginv.t22 * d["y"] ** 2


def solve_lambda(grid: SurfaceGrid, g: SymTensor, B, tol=1e-10, max_iter=50, lam0=None):
    """Solve ``Delta_g lambda = 1/2 (exp(2 lambda) - 1/(1+B))`` by Newton.

    Returns
    -------
    lam : ndarray
        Node values (ghosts through the interpolation constraints).
    info : dict
        Iterations and residual history (residual of the equation
        divided by mu_g, sup over interior nodes).
    """
    mu = np.sqrt(g.det())
    A = g.inverse().scale(mu)
    D = divergence_form_matrix(grid, A)
    I = grid.interior
    if np.diff(D.indptr)[I].min() == 0:
        raise ValueError("metric undefined next to some interior node")
    src = 1.0 / (1.0 + B)
    if lam0 is None:
        lam = grid.extend(-0.5 * np.log(1.0 + B[I]))
    else:
        lam = grid.node_values(lam0)
    mask = sp.diags(grid.is_interior.astype(float))
    muI = np.where(grid.is_interior, mu, 0.0)

    def res(l):
        r = np.zeros(grid.n_nodes)
        r[I] = (D @ l)[I] - 0.5 * mu[I] * (np.exp(2 * l[I]) - src[I])
        r[grid.ghost] = (grid.C @ l)[grid.ghost]
        return r, float(np.max(np.abs(r[I] / mu[I])))

    r, nrm = res(lam)
    hist = [nrm]
    lin = LinearSolver()
    it = 0
    while nrm > tol:
        if it >= max_iter:
            raise ConvergenceError(f"lambda solve stalled at {nrm:.3e}", best=lam[I], history=hist)
        J = (mask @ D - sp.diags(muI * np.exp(2 * np.nan_to_num(lam))) + grid.C).tocsr()
        step = lin.solve(J, -r, rtol=max(1e-13, min(1e-3, 1e-2 * nrm)))
        t = 1.0
        while True:
            lt = lam + t * step
            rt, nt = res(lt)
            if nt < nrm:
                break
            t *= 0.5
            if t < 1e-4:
                raise ConvergenceError("lambda line search stalled", best=lam[I], history=hist)
        lam, r, nrm = lt, rt, nt
        hist.append(nrm)
        it += 1
    return lam, {"iterations": it, "history": hist, "residual": nrm}


def harmonicity_residual(grid, g: SymTensor):
    """``V^c = g^ab (Gamma(g)^c_ab - Gamma(rho)^c_ab)``.

    Both connections use the same centered differences of the chart
    components, so homothetic metrics give V = 0 to round-off.

    Returns
    -------
    (V1, V2, norm) : node arrays; `norm` is ``|V|_rho``.
    """
    def christoffel(T):
        d11, d12, d22 = grid.derivatives(T.t11), grid.derivatives(T.t12), grid.derivatives(T.t22)
        inv = T.inverse()
        # lower Christoffels Gamma_{c,ab} = 1/2 (d_a T_bc + d_b T_ac - d_c T_ab)
        dT = {(1, 1): d11, (1, 2): d12, (2, 1): d12, (2, 2): d22}
        ax = {1: "x", 2: "y"}
        low = {}
        for c_ in (1, 2):
            for a in (1, 2):
                for b in (1, 2):
                    low[(c_, a, b)] = 0.5 * (dT[(b, c_)][ax[a]] + dT[(a, c_)][ax[b]]
                                             - dT[(a, b)][ax[c_]])
        up = {}
        iv = {(1, 1): inv.t11, (1, 2): inv.t12, (2, 1): inv.t12, (2, 2): inv.t22}
        for c_ in (1, 2):
            for a in (1, 2):
                for b in (1, 2):
                    up[(c_, a, b)] = iv[(c_, 1)] * low[(1, a, b)] + iv[(c_, 2)] * low[(2, a, b)]
        return up

    Gg = christoffel(g)
    Gr = christoffel(rho_tensor(grid))
    ginv = g.inverse()
    iv = {(1, 1): ginv.t11, (1, 2): ginv.t12, (2, 1): ginv.t12, (2, 2): ginv.t22}
    V = []
    for c_ in (1, 2):
        s = 0.0
        for a in (1, 2):
            for b in (1, 2):
                s = s + iv[(a, b)] * (Gg[(c_, a, b)] - Gr[(c_, a, b)])
        V.append(s)
    norm = np.sqrt(grid.e2f * (V[0] ** 2 + V[1] ** 2))
    return V[0], V[1], norm


def b_identities(grid, g: SymTensor, B, threshold=1.05):
    """B-equation residual, sup |grad_g log B| and the Hopf-norm identity.

    The B-equation ``Delta_g B = 2B/(B^2-1) |grad_g B|^2 - (B-1)`` is only
    evaluated where ``B > threshold``.
    """
    I = grid.interior
    lapB = laplace_beltrami(grid, g, B)
    gB2 = grad_norm2(grid, g, B)
    sub = I[B[I] > threshold]
    out = {"threshold": threshold, "subgrid_size": int(sub.size)}
    if sub.size:
        rhs = 2 * B[sub] / (B[sub] ** 2 - 1) * gB2[sub] - (B[sub] - 1)
        r = np.abs(lapB[sub] - rhs)
        out["b_equation_residual"] = float(np.nanmax(r))
        out["b_equation_relative"] = float(np.nanmax(r / (1 + np.abs(rhs))))
    else:
        out["b_equation_residual"] = 0.0
        out["b_equation_relative"] = 0.0
        out["note"] = "subgrid empty (B <= threshold everywhere)"
    glogB = np.sqrt(np.maximum(grad_norm2(grid, g, np.log(B)), 0.0))
    out["sup_grad_log_B"] = float(np.nanmax(glogB[I]))
    hn = hopf_norm2(grid, g)
    out["hopf_identity_residual"] = float(np.max(np.abs(hn[I] - 0.25 * (B[I] - 1) / (B[I] + 1))))
    return out


def diameter_diagnostic(grid: SurfaceGrid, g: SymTensor, sup_norm, area_rho,
                        inj_rho=DEFAULT_INJ_RHO, n_sources=12, seed=0):
    """Graph-diameter estimate of (Sigma, g) against the upper bound.

    Edges join lattice neighbors (8-neighborhood); an edge to a ghost node
    is redirected to the interior node nearest to the ghost's image.  Edge
    length uses the average of g at both ends.  Eccentricities from a few
    sources give ``lower = max ecc`` and ``upper = 2 min ecc`` for the
    graph diameter.
    """
    I = grid.interior
    pos = -np.ones(grid.n_nodes, dtype=np.int64)
    pos[I] = np.arange(I.size)
    # nearest interior node of each ghost's image
    img = grid.ghost_image
    ii = np.rint(img.real / grid.h).astype(np.int64)
    jj = np.rint(img.imag / grid.h).astype(np.int64)
    tgt = grid.index(ii, jj)
    redirect = pos.copy()
    gi = grid.ghost
    valid = (tgt >= 0)
    redirect[gi[valid]] = np.where(pos[tgt[valid]] >= 0, pos[tgt[valid]], -1)
    nb = grid.neighbors(1)[I]
    R, C, W = [], [], []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            k = nb[:, di + 1, dj + 1]
            ok = k >= 0
            src = I[ok]
            dst = k[ok]
            gt = [0.5 * (t[src] + t[dst]) for t in (g.t11, g.t12, g.t22)]
            dx, dy = di * grid.h, dj * grid.h
            L = np.sqrt(gt[0] * dx * dx + 2 * gt[1] * dx * dy + gt[2] * dy * dy)
            tgt_pos = redirect[dst]
            good = (tgt_pos >= 0) & np.isfinite(L)
            R.append(pos[src][good])
            C.append(tgt_pos[good])
            W.append(L[good])
    Wm = sp.csr_matrix((np.concatenate(W), (np.concatenate(R), np.concatenate(C))),
                       shape=(I.size, I.size))
    rng = np.random.default_rng(seed)
    sources = rng.choice(I.size, size=min(n_sources, I.size), replace=False)
    dist = dijkstra(Wm, directed=False, indices=sources)
    ecc = dist.max(axis=1)
    bound = 4 * SQRT2 / (np.pi * inj_rho) * (2 + sup_norm) * area_rho
    return {"diameter_lower": float(ecc.max()), "diameter_upper": float(2 * ecc.min()),
            "bound": float(bound), "ok": bool(2 * ecc.min() <= bound)}


# ----------------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------------

def derive(grid: SurfaceGrid, zz, sol: MoncriefSolution, with_lambda=True, lam_tol=1e-10):
    """Compute the full :class:`DerivedGeometry` of a solution."""
    v = sol.u_nodes
    xi = compute_xi(grid, zz, v)
    B, binfo = compute_B(grid, xi)
    g, mu = compute_g(grid, xi, B)
    A_g, A_r, E, int_u = area_energy(grid, sol.u, B)
    geo = DerivedGeometry(xi, B, g, mu, area_g=A_g, area_rho=A_r, energy=E, int_u=int_u)
    geo.hopf_norm2 = hopf_norm2(grid, g)
    geo.diagnostics["min_B"] = binfo
    if with_lambda:
        lam, info = solve_lambda(grid, g, B, tol=lam_tol)
        geo.lam = lam
        w = np.exp(2 * lam)
        geo.gamma = SymTensor(w * g.t11, w * g.t12, w * g.t22)
        geo.diagnostics["lambda"] = {"iterations": info["iterations"], "residual": info["residual"]}
    return geo
