"""Finite-difference grids on the fundamental octagon and on a flat patch.

A :class:`SurfaceGrid` lives on the lattice ``(i h, j h)``.  Nodes inside the
closed octagon are the *interior* (unknown) nodes.  Lattice nodes within a
few cells outside the octagon are *ghost* nodes: each one is mapped back into
the octagon by a deck transformation and its value is the Lagrange
interpolant at the image point.  Interpolation stencils may themselves
touch ghost nodes, so ghost values are defined implicitly by one sparse
linear constraint per ghost; :meth:`SurfaceGrid.extend` solves those
constraints with a cached LU factorization.

All differential operators are sparse matrices acting on node arrays of the
full grid; a row is only stored where the full stencil exists.  Fields that
are only known on part of the grid may carry NaN elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .errors import GridConstructionError, OutOfCollarError
from .hyperbolic import VERTEX_RADIUS, FuchsianGroup, RhoMetric

# 4th-order centered first and second difference weights on offsets -2..2
_D1_4 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2_4 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D1_6 = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_D2_6 = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0


@dataclass(frozen=True)
class SymTensor:
    """Chart components of a symmetric 2-tensor, one entry per node."""

    t11: np.ndarray
    t12: np.ndarray
    t22: np.ndarray

    def __add__(self, other):
        return SymTensor(self.t11 + other.t11, self.t12 + other.t12, self.t22 + other.t22)

    def __sub__(self, other):
        return SymTensor(self.t11 - other.t11, self.t12 - other.t12, self.t22 - other.t22)

    def scale(self, s):
        return SymTensor(s * self.t11, s * self.t12, s * self.t22)

    def det(self):
        return self.t11 * self.t22 - self.t12 ** 2

    def trace(self):
        return self.t11 + self.t22

    def inverse(self):
        d = self.det()
        return SymTensor(self.t22 / d, -self.t12 / d, self.t11 / d)

    def eigvalsh(self):
        """Pointwise eigenvalues (lower, upper) in the chart."""
        m = 0.5 * (self.t11 + self.t22)
        r = np.hypot(0.5 * (self.t11 - self.t22), self.t12)
        return m - r, m + r

    def take(self, idx):
        return SymTensor(self.t11[idx], self.t12[idx], self.t22[idx])

    def stack(self):
        return np.stack([self.t11, self.t12, self.t22])

    def max_abs(self):
        return float(np.nanmax(np.abs(self.stack())))


def check_field(values, n):
    """Validate a scalar field with `n` finite entries."""
    v = np.asarray(values, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"field has shape {v.shape}, expected ({n},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("field contains non-finite values")
    return v


def lagrange_weights(t, p):
    """1D Lagrange weights for nodes ``0..p-1`` at positions `t` (vector)."""
    t = np.asarray(t, dtype=float)
    w = np.ones(t.shape + (p,))
    for k in range(p):
        for j in range(p):
            if j != k:
                w[..., k] *= (t - j) / (k - j)
    return w


class _LatticeGrid:
    """Shared lattice bookkeeping and finite-difference operators."""

    h: float
    ij: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lookup: dict

    def _init_lattice(self, ij, h):
        self.h = float(h)
        self.ij = np.asarray(ij, dtype=np.int64)
        self.x = self.ij[:, 0] * self.h
        self.y = self.ij[:, 1] * self.h
        self.z = self.x + 1j * self.y
        self.n_nodes = len(self.ij)
        off = self.ij.min(axis=0)
        shape = self.ij.max(axis=0) - off + 1
        table = -np.ones(shape, dtype=np.int64)
        table[self.ij[:, 0] - off[0], self.ij[:, 1] - off[1]] = np.arange(self.n_nodes)
        self._table = table
        self._off = off
        rho = RhoMetric()
        self.e2f = rho.e2f(self.x, self.y)
        self.f1, self.f2 = rho.grad_f(self.x, self.y)

    def index(self, i, j):
        """Node index of lattice site (i, j), or -1."""
        i, j = np.broadcast_arrays(np.asarray(i) - self._off[0], np.asarray(j) - self._off[1])
        ok = (i >= 0) & (j >= 0) & (i < self._table.shape[0]) & (j < self._table.shape[1])
        out = -np.ones(i.shape, dtype=np.int64)
        out[ok] = self._table[i[ok], j[ok]]
        return out

    def neighbors(self, radius):
        """Index table ``(n_nodes, 2r+1, 2r+1)`` of lattice neighbors (-1 if absent)."""
        r = radius
        di = np.arange(-r, r + 1)
        I = self.ij[:, 0][:, None, None] + di[None, :, None]
        J = self.ij[:, 1][:, None, None] + di[None, None, :]
        return self.index(I, J)

    def _stencil_matrix(self, rows, weights):
        """Sparse (n_nodes x n_nodes) operator with the given offset weights.

        `weights` maps (di, dj) -> coefficient.  Only rows in `rows` whose
        full stencil exists are populated.
        """
        r = max(max(abs(a), abs(b)) for a, b in weights)
        nb = self.neighbors(r)[rows]
        complete = np.ones(len(rows), dtype=bool)
        for (a, b) in weights:
            complete &= nb[:, a + r, b + r] >= 0
        rows = rows[complete]
        nb = nb[complete]
        R, C, V = [], [], []
        for (a, b), c in weights.items():
            if c == 0:
                continue
            R.append(rows)
            C.append(nb[:, a + r, b + r])
            V.append(np.full(len(rows), c))
        R = np.concatenate(R)
        C = np.concatenate(C)
        V = np.concatenate(V)
        return sp.csr_matrix((V, (R, C)), shape=(self.n_nodes, self.n_nodes))

    def _build_fd(self, rows2, rows4):
        h = self.h
        self.Dx = self._stencil_matrix(rows2, {(1, 0): 0.5 / h, (-1, 0): -0.5 / h})
        self.Dy = self._stencil_matrix(rows2, {(0, 1): 0.5 / h, (0, -1): -0.5 / h})
        self.Dxx = self._stencil_matrix(rows2, {(1, 0): 1 / h ** 2, (-1, 0): 1 / h ** 2,
                                                (0, 0): -2 / h ** 2})
        self.Dyy = self._stencil_matrix(rows2, {(0, 1): 1 / h ** 2, (0, -1): 1 / h ** 2,
                                                (0, 0): -2 / h ** 2})
        q = 0.25 / h ** 2
        self.Dxy = self._stencil_matrix(rows2, {(1, 1): q, (-1, -1): q, (1, -1): -q, (-1, 1): -q})
        # fourth-order stencils
        w1 = {(k - 2, 0): _D1_4[k] / h for k in range(5)}
        self.Dx4 = self._stencil_matrix(rows4, w1)
        self.Dy4 = self._stencil_matrix(rows4, {(0, a): c for (a, _), c in w1.items()})
        self.Dxx4 = self._stencil_matrix(rows4, {(k - 2, 0): _D2_4[k] / h ** 2 for k in range(5)})
        self.Dyy4 = self._stencil_matrix(rows4, {(0, k - 2): _D2_4[k] / h ** 2 for k in range(5)})
        self.Dxy4 = self._stencil_matrix(
            rows4, {(a - 2, b - 2): _D1_4[a] * _D1_4[b] / h ** 2
                    for a in range(5) for b in range(5) if _D1_4[a] * _D1_4[b] != 0})
        # rows with only a 3x3 neighborhood fall back to the compact stencils
        only2 = np.zeros(self.n_nodes)
        only2[np.setdiff1d(rows2, rows4)] = 1.0
        if only2.any():
            P = sp.diags(only2)
            for k in ("x", "y", "xx", "yy", "xy"):
                name = "D" + k
                setattr(self, name + "4", (getattr(self, name + "4") + P @ getattr(self, name)).tocsr())

    def _build_fd6(self):
        # sixth-order stencils, built on first use
        h = self.h
        rows = np.arange(self.n_nodes)
        w1 = {(k - 3, 0): _D1_6[k] / h for k in range(7)}
        self.Dx6 = self._stencil_matrix(rows, w1)
        self.Dy6 = self._stencil_matrix(rows, {(0, a): c for (a, _), c in w1.items()})
        self.Dxx6 = self._stencil_matrix(rows, {(k - 3, 0): _D2_6[k] / h ** 2 for k in range(7)})
        self.Dyy6 = self._stencil_matrix(rows, {(0, k - 3): _D2_6[k] / h ** 2 for k in range(7)})
        self.Dxy6 = self._stencil_matrix(
            rows, {(a - 3, b - 3): _D1_6[a] * _D1_6[b] / h ** 2
                   for a in range(7) for b in range(7) if _D1_6[a] * _D1_6[b] != 0})

    def fd_operators(self, order=2):
        """Dict of difference matrices ('x', 'y', 'xx', 'yy', 'xy') of the given order."""
        if order not in (2, 4, 6):
            raise ValueError("order must be 2, 4 or 6")
        if order == 6 and not hasattr(self, "Dx6"):
            self._build_fd6()
        sfx = "" if order == 2 else str(order)
        return {k: getattr(self, "D" + k + sfx) for k in ("x", "y", "xx", "yy", "xy")}

    def derivatives(self, v, order=2):
        """First and second chart derivatives of a node array.

        Returns
        -------
        dict with keys 'x', 'y', 'xx', 'yy', 'xy'.  Entries without a full
        stencil are NaN.
        """
        out = {}
        for key, D in self.fd_operators(order).items():
            d = D @ np.nan_to_num(v, nan=0.0)
            # rows without a stencil, or that touched undefined values, become NaN
            touched = np.abs(D) @ np.isnan(v).astype(float)
            d[(np.diff(D.indptr) == 0) | (touched > 0)] = np.nan
            out[key] = d
        return out


class SurfaceGrid(_LatticeGrid):
    """Lattice grid on the Bolza octagon with deck-transformation ghosts.

    Attributes
    ----------
    interior : ndarray of int
        Node indices inside the closed octagon (the unknowns).
    ghost : ndarray of int
        Node indices outside the octagon.
    depth : ndarray of int
        Chessboard distance (in cells) from each node to the interior set.
    ghost_image, ghost_a, ghost_b : ndarray
        Reduced point and deck map ``z -> (a z + b)/(conj(b) z + conj(a))``
        for each ghost node.
    ghost_stencil, ghost_weights : ndarray
        Interpolation stencil (node indices) and tensor Lagrange weights.
    C : sparse matrix, shape (n_nodes, n_nodes)
        Ghost constraint rows ``v_g - sum_k w_k v_k``; zero on interior rows.
    """

    def __init__(self, group: FuchsianGroup, h: float, interp_order: int = 8,
                 margin: int | None = None, word_budget: int = 8):
        if not (h > 0):
            raise ValueError("h must be positive")
        if interp_order % 2 or interp_order < 4:
            raise ValueError("interp_order must be an even integer >= 4")
        self.group = group
        self.interp_order = p = int(interp_order)
        self.margin = margin = int(margin if margin is not None else p // 2 + 4)
        self.word_budget = word_budget
        R = VERTEX_RADIUS + (margin + 2) * h * np.sqrt(2.0)
        n = int(np.ceil(R / h))
        ii, jj = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
        zz = (ii + 1j * jj) * h
        inside = np.abs(zz) < min(R, 0.999)
        core = np.zeros_like(inside)
        core[inside] = group.in_octagon(zz[inside])
        depth = ndimage.distance_transform_cdt(~core, metric="chessboard")
        keep = inside & (depth <= margin)
        order = np.lexsort((jj[keep], ii[keep]))
        ij = np.column_stack([ii[keep], jj[keep]])[order]
        self._init_lattice(ij, h)
        self.depth = depth[keep][order]
        self.interior = np.flatnonzero(self.depth == 0)
        self.ghost = np.flatnonzero(self.depth > 0)
        self.is_interior = self.depth == 0
        self.n_interior = len(self.interior)
        self._resolve_ghosts()
        self._build_fd(np.flatnonzero(self.depth <= margin - 1),
                       np.flatnonzero(self.depth <= margin - 2))
        self._build_quadrature()

    # -- ghosts -------------------------------------------------------------
    def _resolve_ghosts(self):
        p = self.interp_order
        zg = self.z[self.ghost]
        try:
            w, a, b, _ = self.group.reduce(zg, max_steps=self.word_budget)
        except OutOfCollarError as exc:
            raise GridConstructionError(f"ghost reduction failed: {exc}", point=exc.point)
        self.ghost_image, self.ghost_a, self.ghost_b = w, a, b
        stencil, weights = self._interp_stencil(w)
        if np.any(stencil < 0):
            bad = np.flatnonzero((stencil < 0).any(axis=1))[0]
            raise GridConstructionError(
                f"interpolation stencil for ghost {zg[bad]} leaves the grid", point=complex(zg[bad]))
        self.ghost_stencil, self.ghost_weights = stencil, weights
        # W: ghost value = weights . (node values); split into interior/ghost columns
        n = self.n_nodes
        rows = np.repeat(np.arange(len(self.ghost)), p * p)
        W = sp.csr_matrix((weights.ravel(), (rows, stencil.ravel())), shape=(len(self.ghost), n))
        pos = -np.ones(n, dtype=np.int64)
        pos[self.interior] = np.arange(self.n_interior)
        gpos = -np.ones(n, dtype=np.int64)
        gpos[self.ghost] = np.arange(len(self.ghost))
        W_c = W[:, self.interior]
        W_g = W[:, self.ghost]
        self.W = W
        self._W_c = W_c.tocsr()
        self._ghost_lu = spla.splu((sp.identity(len(self.ghost), format="csc") - W_g).tocsc())
        # constraint rows (ghost value minus its interpolant), in node numbering
        Wc = W.tocoo()
        self.C = (sp.csr_matrix((np.ones(len(self.ghost)), (self.ghost, self.ghost)),
                                shape=(n, n))
                  - sp.csr_matrix((Wc.data, (self.ghost[Wc.row], Wc.col)), shape=(n, n))).tocsr()
        self._pos = pos
        self._gpos = gpos

    def _interp_stencil(self, w):
        p = self.interp_order
        h = self.h
        fx = w.real / h
        fy = w.imag / h
        i0 = np.floor(fx).astype(np.int64) - (p // 2 - 1)
        j0 = np.floor(fy).astype(np.int64) - (p // 2 - 1)
        wx = lagrange_weights(fx - i0, p)
        wy = lagrange_weights(fy - j0, p)
        I = i0[:, None, None] + np.arange(p)[None, :, None]
        J = j0[:, None, None] + np.arange(p)[None, None, :]
        idx = self.index(I, J).reshape(len(w), p * p)
        wts = (wx[:, :, None] * wy[:, None, :]).reshape(len(w), p * p)
        return idx, wts

    def ghost_derivative(self):
        """``gamma'(z)`` for every ghost node."""
        return 1.0 / (np.conj(self.ghost_b) * self.z[self.ghost] + np.conj(self.ghost_a)) ** 2

    # -- fields -------------------------------------------------------------
    def extend(self, u):
        """Extend interior values to all nodes (solves the ghost constraints)."""
        u = np.asarray(u, dtype=float)
        out = np.empty(self.n_nodes)
        out[self.interior] = u
        out[self.ghost] = self._ghost_lu.solve(self._W_c @ u)
        return out

    def extend_adjoint(self, q):
        """Transpose of :meth:`extend`: node weights -> interior weights."""
        q = np.asarray(q, dtype=float)
        y = self._ghost_lu.solve(q[self.ghost], trans="T")
        return q[self.interior] + self._W_c.T @ y

    def system_matrix(self, L):
        """Square system: rows of `L` at interior nodes, ghost constraints elsewhere."""
        mask = sp.diags(self.is_interior.astype(float))
        return (mask @ L + self.C).tocsr()

    def restrict(self, v):
        return np.asarray(v)[self.interior]

    def node_values(self, u):
        """Accept interior or full-length arrays; return full-length values."""
        u = np.asarray(u, dtype=float)
        if u.shape == (self.n_interior,):
            return self.extend(u)
        if u.shape == (self.n_nodes,):
            return u
        raise ValueError(f"field of shape {u.shape} matches neither interior nor node count")

    def interpolate(self, u, z, max_steps=None):
        """Evaluate a field at arbitrary disk points by reduction + interpolation."""
        v = self.node_values(u)
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        w, _, _, _ = self.group.reduce(z, max_steps=max_steps or self.word_budget)
        idx, wts = self._interp_stencil(w)
        if np.any(idx < 0):
            raise OutOfCollarError("interpolation stencil leaves the grid")
        return np.sum(v[idx] * wts, axis=1)

    # -- quadrature ---------------------------------------------------------
    def _build_quadrature(self, sub=4):
        h = self.h
        cand = np.flatnonzero(self.depth <= 1)
        o = (np.arange(sub) + 0.5) / sub - 0.5
        ox, oy = np.meshgrid(o, o, indexing="ij")
        zs = self.z[cand][:, None] + h * (ox.ravel() + 1j * oy.ravel())[None, :]
        inside = self.group.in_octagon(zs)
        wts = RhoMetric.e2f(zs.real, zs.imag) * inside
        q = np.zeros(self.n_nodes)
        q[cand] = wts.sum(axis=1) * h * h / sub ** 2
        self.quad_nodes = q
        self.quad = self.extend_adjoint(q)

    def integrate(self, u):
        """``int u dmu_rho`` for an interior field (or full node array)."""
        u = np.asarray(u, dtype=float)
        if u.shape == (self.n_interior,):
            return float(self.quad @ u)
        return float(self.quad_nodes @ u)

    @property
    def area(self):
        return float(self.quad_nodes.sum())

    def grid_hash(self):
        import hashlib
        m = hashlib.sha256()
        m.update(np.float64(self.h).tobytes())
        m.update(np.int64(self.interp_order).tobytes())
        m.update(self.ij.tobytes())
        return m.hexdigest()[:16]


def build_grid(group: FuchsianGroup, h: float, **kwargs) -> SurfaceGrid:
    """Build the octagon grid with resolved ghost links."""
    return SurfaceGrid(group, h, **kwargs)


class PatchGrid(_LatticeGrid):
    """Euclidean disk ``|z| <= r_patch`` with Dirichlet boundary nodes.

    Boundary nodes are lattice nodes in the disk with a missing 3x3
    neighbor; every other node is interior.
    """

    def __init__(self, r_patch: float, h: float):
        if not (0 < r_patch <= 0.5):
            raise ValueError("r_patch must lie in (0, 0.5]")
        if not (h > 0):
            raise ValueError("h must be positive")
        self.r_patch = float(r_patch)
        n = int(np.floor(r_patch / h + 1e-9))
        ii, jj = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
        inside = (ii * h) ** 2 + (jj * h) ** 2 <= r_patch ** 2 * (1 + 1e-12)
        ij = np.column_stack([ii[inside], jj[inside]])
        self._init_lattice(ij, h)
        nb = self.neighbors(1)
        self.is_interior = (nb >= 0).reshape(self.n_nodes, 9).all(axis=1)
        self.interior = np.flatnonzero(self.is_interior)
        self.boundary = np.flatnonzero(~self.is_interior)
        self.n_interior = len(self.interior)
        self._build_fd(self.interior, np.flatnonzero(
            (self.neighbors(2) >= 0).reshape(self.n_nodes, 25).all(axis=1)))

    def operator(self, D):
        """Interior rows, interior columns; boundary columns go to the right side."""
        return D[self.interior][:, self.interior].tocsr()


def build_mms_patch(r_patch: float, h: float) -> PatchGrid:
    return PatchGrid(r_patch, h)


def laplacian_rho(grid, u):
    """``exp(-2f) (u_11 + u_22)`` at nodes with a full stencil."""
    v = grid.node_values(u) if isinstance(grid, SurfaceGrid) else np.asarray(u, float)
    d = grid.derivatives(v)
    return (d["xx"] + d["yy"]) / grid.e2f


def hessian_from_derivatives(d, f1, f2):
    """Covariant Hessian of rho from chart derivatives."""
    h11 = d["xx"] - (f1 * d["x"] - f2 * d["y"])
    h22 = d["yy"] - (f2 * d["y"] - f1 * d["x"])
    h12 = d["xy"] - (f1 * d["y"] + f2 * d["x"])
    return SymTensor(h11, h12, h22)


def hessian_rho(grid, u, order=2):
    """Covariant Hessian ``u_{;ab}`` of rho using centered differences."""
    v = grid.node_values(u) if isinstance(grid, SurfaceGrid) else np.asarray(u, float)
    return hessian_from_derivatives(grid.derivatives(v, order=order), grid.f1, grid.f2)


def integrate_rho(grid: SurfaceGrid, u):
    return grid.integrate(u)


def interpolate(grid: SurfaceGrid, u, z):
    return grid.interpolate(u, z)
