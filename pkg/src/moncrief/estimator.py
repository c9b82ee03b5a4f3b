"""scikit-learn style wrappers.

Rows of ``X`` are TT coefficient vectors in R^6 (real and imaginary parts
of the three basis weights).  Both estimators build their grid in `fit`
and ignore the data passed there.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .grid import SurfaceGrid, SymTensor
from .hyperbolic import build_bolza_group
from .qdiff import assemble_tt
from .solver import LinearSolver, SolverOptions, solve
from .teich import project_coefficients, psi, psi_inverse


def _check_coefficients(X):
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 6:
        raise ValueError(f"expected 6 coefficients per row, got {X.shape[1]}")
    return X


class _GridMixin:
    def _build(self):
        self.group_ = build_bolza_group()
        self.grid_ = SurfaceGrid(self.group_, self.h, interp_order=self.interp_order)
        self.n_interior_ = self.grid_.n_interior
        self.linear_solver_ = LinearSolver()

    def _opts(self):
        return SolverOptions(tol=self.tol, max_iter=self.max_iter)


class MoncriefSolver(_GridMixin, BaseEstimator):
    """Solve the equation for each coefficient row.

    Parameters
    ----------
    h : float
        Grid spacing.
    L : int or None
        Series truncation; None uses the exact automorphic basis.
    tol : float
        Newton tolerance on the invariant residual.
    """

    def __init__(self, h=0.02, L=None, tol=1e-10, max_iter=50, interp_order=8):
        self.h = h
        self.L = L
        self.tol = tol
        self.max_iter = max_iter
        self.interp_order = interp_order

    def fit(self, X=None, y=None):
        self._build()
        return self

    def predict(self, X):
        """Interior values of u, shape ``(n_samples, n_interior)``."""
        check_is_fitted(self, "grid_")
        X = _check_coefficients(X)
        out = np.empty((X.shape[0], self.n_interior_))
        for i, c in enumerate(X):
            zz = assemble_tt(self.grid_, c, self.L)
            out[i] = solve(self.grid_, zz, opts=self._opts(),
                           linear_solver=self.linear_solver_).u
        return out


class TeichmullerMap(_GridMixin, TransformerMixin, BaseEstimator):
    """The map from TT coefficients to hyperbolic metrics and back.

    `transform` returns the three metric components at interior nodes,
    concatenated as ``[g11, g12, g22]``; `inverse_transform` recovers the
    coefficients by the inverse construction followed by a least-squares
    projection onto the TT basis.
    """

    def __init__(self, h=0.02, L=None, tol=1e-10, max_iter=50, interp_order=8,
                 inverse_order=6):
        self.h = h
        self.L = L
        self.tol = tol
        self.max_iter = max_iter
        self.interp_order = interp_order
        self.inverse_order = inverse_order

    def fit(self, X=None, y=None):
        self._build()
        self.n_features_in_ = 6
        return self

    def transform(self, X):
        check_is_fitted(self, "grid_")
        X = _check_coefficients(X)
        I = self.grid_.interior
        out = np.empty((X.shape[0], 3 * I.size))
        for i, c in enumerate(X):
            zz = assemble_tt(self.grid_, c, self.L)
            gamma, _, _ = psi(self.grid_, zz, self._opts(), linear_solver=self.linear_solver_)
            out[i] = np.concatenate([gamma.t11[I], gamma.t12[I], gamma.t22[I]])
        return out

    def inverse_transform(self, G):
        check_is_fitted(self, "grid_")
        g = self.grid_
        G = check_array(G, dtype=np.float64)
        n = g.n_interior
        if G.shape[1] != 3 * n:
            raise ValueError(f"expected {3 * n} columns, got {G.shape[1]}")
        out = np.empty((G.shape[0], 6))
        for i, row in enumerate(G):
            # gamma enters the inverse pointwise, so ghost values are not needed
            comps = []
            for k in range(3):
                v = np.full(g.n_nodes, np.nan)
                v[g.interior] = row[k * n:(k + 1) * n]
                comps.append(v)
            inv = psi_inverse(g, SymTensor(*comps), order=self.inverse_order,
                              check_harmonic=False)
            out[i] = project_coefficients(g, inv.zz)
        return out
