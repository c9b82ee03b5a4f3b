"""Holomorphic quadratic differentials on the Bolza surface and TT-tensors.

Two constructions of weight-4 automorphic forms live here.

* :func:`poincare_series` is the truncated Poincare series
  ``Theta_m(z) = sum_{|w| <= L} (gamma_w z)^m gamma_w'(z)^2``.  It converges
  slowly (the tail decays roughly like exp(-R) in the word radius), and
  at finite L it is only approximately automorphic.

* :class:`AutomorphicForm` is the limit form in the rotation class of the
  seed, represented by a Taylor series about 0 whose coefficients are fitted
  so that ``phi(z) = phi(gamma z) gamma'(z)^2`` holds at collocation points
  on the circle ``|z| = r_c`` (just outside the octagon).  Those points are
  pulled back into the octagon, which keeps the linear system well
  conditioned.  Automorphy then holds to round-off, which is what the
  finite-difference seams need.

Rotation by ``pi/4`` normalizes the group, so the series with seed ``z^m``
only contains powers ``z^(m + 8j)``.  The hyperelliptic involution
``z -> -z`` fixes every quadratic differential, so odd classes vanish: the
series with seeds ``z`` and ``z^3`` tend to zero as L grows.  The basis used
for TT-tensors therefore takes the seeds ``z^0, z^2, z^4``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import SurfaceGrid, SymTensor
from .hyperbolic import VERTEX_RADIUS, FuchsianGroup, as_disk_array

BASIS_SEEDS = (0, 2, 4)

# Ratio Theta_{m,8} / phi_m at z = 0.1 + 0.05i, where phi_m has leading
# Taylor coefficient 1.  Partial sums at L = 7 and L = 8 differ by < 4e-5.
SERIES_SCALE = {0: 1.1956704, 2: 1.8088784, 4: 1.9546754}

_COLLOCATION_RADIUS = 0.88

# ``TTField.sup_norm`` is sqrt(2) times the largest pointwise contraction
# norm ``|T|_rho``; all bounds stated in terms of ||zz|| use this value.
SUPNORM_FACTOR = np.sqrt(2.0)


# ----------------------------------------------------------------------------
# truncated Poincare series
# ----------------------------------------------------------------------------

def poincare_series(group: FuchsianGroup, m: int, L: int, z):
    """Truncated weight-4 Poincare series with seed ``z^m``.

    Terms are summed in element order (word length, then lexicographic).

    Parameters
    ----------
    group : FuchsianGroup
    m : int
        Seed exponent, ``m >= 0``.
    L : int
        Maximal word length.
    z : complex or array_like
        Points in the disk.

    Returns
    -------
    complex ndarray with the shape of `z`.
    """
    return poincare_partial_sums(group, m, L, z)[0]


def poincare_partial_sums(group: FuchsianGroup, m: int, L: int, z):
    """Partial sums at word lengths L and L - 1 from one pass over the group.

    Returns
    -------
    (theta_L, theta_Lm1) : complex ndarrays with the shape of `z`;
    ``theta_Lm1`` is zero when ``L == 0``.
    """
    if m < 0 or int(m) != m:
        raise ValueError("seed exponent must be a non-negative integer")
    if L < 0:
        raise ValueError("L must be >= 0")
    z = as_disk_array(z)
    els = group.elements(L)
    n_prev = int(np.searchsorted(els.length, L - 1, side="right")) if L > 0 else 0
    full = np.empty(z.size, dtype=complex)
    prev = np.empty(z.size, dtype=complex)
    for k, zk in enumerate(z.ravel()):
        den = np.conj(els.b) * zk + np.conj(els.a)
        w = (els.a * zk + els.b) / den
        terms = w ** m / den ** 4
        prev[k] = np.sum(terms[:n_prev])
        full[k] = prev[k] + np.sum(terms[n_prev:])
    return full.reshape(z.shape), prev.reshape(z.shape)


@dataclass
class QuadDifferential:
    """A truncated Poincare series ``Theta_m`` with its tail estimate."""

    group: FuchsianGroup
    basis_index: int
    truncation: int = 8

    def __call__(self, z):
        return poincare_series(self.group, self.basis_index, self.truncation, z)

    def tail(self, z):
        """Difference between the L and L-1 partial sums."""
        full, prev = poincare_partial_sums(self.group, self.basis_index, self.truncation, z)
        return np.abs(full - prev)

    def automorphy_residual(self, z, gen=0):
        """``|Theta(g z) g'(z)^2 - Theta(z)|`` for generator `gen`."""
        g = self.group.generators[gen]
        z = as_disk_array(z)
        return np.abs(self(g(z)) * g.derivative(z) ** 2 - self(z))


# ----------------------------------------------------------------------------
# exact automorphic forms by collocation
# ----------------------------------------------------------------------------

def _fit_class(group, r, n_terms, radius, n_points):
    exps = r + 8 * np.arange(n_terms)
    theta = 2 * np.pi * (np.arange(n_points) + 0.5) / n_points
    zc = radius * np.exp(1j * theta)
    w, a, b, _ = group.reduce(zc, max_steps=12)
    d = 1.0 / (np.conj(b) * zc + np.conj(a)) ** 2
    # columns are scaled powers (z / radius)^n; unknowns b_n = a_n radius^n
    M = np.exp(1j * np.outer(theta, exps)) - (w[:, None] / radius) ** exps * (d ** 2)[:, None]
    sol = np.linalg.lstsq(M[:, 1:], -M[:, 0], rcond=None)[0]
    coef = np.concatenate([[1.0], sol]) / radius ** exps
    return exps, coef


@dataclass
class AutomorphicForm:
    """Weight-4 automorphic form of rotation class `seed` (mod 8).

    ``phi(z) = kappa * sum_j coef_j z^(seed + 8 j)`` with ``coef_0 = 1`` and
    ``kappa`` chosen so that `phi` matches the Poincare series with the same
    seed.
    """

    group: FuchsianGroup
    seed: int
    n_terms: int = 48
    radius: float = _COLLOCATION_RADIUS
    exponents: np.ndarray = field(init=False, repr=False)
    coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed not in SERIES_SCALE:
            raise ValueError(f"no automorphic form with seed {self.seed}; use one of {BASIS_SEEDS}")
        self.exponents, c = _fit_class(self.group, self.seed, self.n_terms, self.radius,
                                       8 * self.n_terms)
        self.coef = SERIES_SCALE[self.seed] * c

    def taylor(self, z):
        """Evaluate the Taylor series directly (valid for ``|z| <= radius``)."""
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        # Horner in z^8
        z8 = z ** 8
        for c in self.coef[::-1]:
            out = out * z8 + c
        return out * z ** self.seed

    def __call__(self, z):
        """Evaluate anywhere in the disk by reduction into the octagon."""
        z = as_disk_array(z)
        w, a, b, _ = self.group.reduce(z, max_steps=64)
        d = 1.0 / (np.conj(b) * z + np.conj(a)) ** 2
        return self.taylor(w) * d ** 2

    def automorphy_residual(self, z, gen=0):
        """Taylor-series seam mismatch; meaningful where ``|z|, |g z| < radius``."""
        g = self.group.generators[gen]
        z = as_disk_array(z)
        return np.abs(self.taylor(g(z)) * g.derivative(z) ** 2 - self.taylor(z))


_BASIS_CACHE: dict = {}


def automorphic_basis(group: FuchsianGroup):
    """The three basis forms with seeds ``z^0, z^2, z^4`` (cached per group)."""
    key = id(group)
    if key not in _BASIS_CACHE:
        _BASIS_CACHE[key] = (group, tuple(AutomorphicForm(group, m) for m in BASIS_SEEDS))
    return _BASIS_CACHE[key][1]


# ----------------------------------------------------------------------------
# TT tensors
# ----------------------------------------------------------------------------

def tt_from_phi(phi):
    """Chart components of ``phi dz^2 + conj(phi) dzbar^2``."""
    return SymTensor(2.0 * phi.real, -2.0 * phi.imag, -2.0 * phi.real)


def rho_norm_tt(T: SymTensor, e2f):
    """Pointwise ``|T|_rho`` of a trace-free tensor."""
    return np.sqrt(2.0 * (T.t11 ** 2 + T.t12 ** 2)) / e2f


@dataclass
class TTField:
    """TT-tensor sampled on a grid, with its generating coefficients.

    Attributes
    ----------
    coefficients : ndarray, shape (6,)
        ``(Re c0, Im c0, Re c1, Im c1, Re c2, Im c2)``; the quadratic
        differential is ``phi = sum_k c_k phi_k``.
    phi : complex ndarray
        ``phi`` at every grid node (ghosts included).
    tensor : SymTensor
        Chart components at every node.
    sup_norm : float
        ``SUPNORM_FACTOR`` times the maximum of ``|z|_rho`` over interior
        nodes.
    """

    coefficients: np.ndarray
    phi: np.ndarray
    tensor: SymTensor
    sup_norm: float

    def scaled(self, s):
        return TTField(s * self.coefficients, s * self.phi, self.tensor.scale(s), abs(s) * self.sup_norm)


def basis_phi(grid: SurfaceGrid):
    """Basis forms evaluated at every node, shape (3, n_nodes); cached on the grid."""
    if getattr(grid, "_basis_phi", None) is None:
        forms = automorphic_basis(grid.group)
        z = grid.z
        # interior and ghost nodes: reduce then evaluate the Taylor series
        grid._basis_phi = np.stack([f(z) for f in forms])
    return grid._basis_phi


def assemble_tt(grid: SurfaceGrid, c, L: int | None = None) -> TTField:
    """Assemble the TT field with coefficients ``c`` (six reals).

    `L` is accepted for interface compatibility; the assembled field uses
    the exact automorphic basis, whose scale matches the L = 8 series.
    """
    c = np.asarray(c, dtype=float)
    if c.shape != (6,) or not np.all(np.isfinite(c)):
        raise ValueError("TT coefficients must be 6 finite reals")
    cc = c[0::2] + 1j * c[1::2]
    phi = cc @ basis_phi(grid)
    T = tt_from_phi(phi)
    sup = (SUPNORM_FACTOR * float(np.max(rho_norm_tt(T, grid.e2f)[grid.interior]))
           if np.any(cc) else 0.0)
    return TTField(c.copy(), phi, T, sup)


@dataclass
class TTReport:
    max_trace: float
    max_divergence: float
    ref_norm: float
    flagged: bool

    def to_dict(self):
        return {"max_trace": self.max_trace, "max_divergence": self.max_divergence,
                "ref_norm": self.ref_norm, "flagged": self.flagged}


def rho_divergence(grid, T: SymTensor, order=4):
    """Covector ``rho^{bc} T_{ab;c}`` at nodes with a full stencil.

    Uses centered differences (of the given order) of the chart components
    and the analytic Christoffel symbols of rho.
    """
    d11 = grid.derivatives(T.t11, order=order)
    d12 = grid.derivatives(T.t12, order=order)
    d22 = grid.derivatives(T.t22, order=order)
    # With Gamma^c_ab = delta^c_a f_b + delta^c_b f_a - delta_ab f_c the
    # contraction over b = c leaves only -f_a tr(T) besides the flat part.
    tr = T.t11 + T.t22
    div1 = d11["x"] + d12["y"] - grid.f1 * tr
    div2 = d12["x"] + d22["y"] - grid.f2 * tr
    return div1 / grid.e2f, div2 / grid.e2f


def verify_tt(grid: SurfaceGrid, T, ref_norm=None, threshold=1e-3, order=4) -> TTReport:
    """Trace and divergence residuals of a TT candidate on interior nodes.

    The divergence residual is the rho-norm of ``rho^{bc} T_{ab;c}``,
    computed with fourth-order differences by default.  The report is
    flagged when the trace is nonzero or the divergence exceeds
    ``threshold * ref_norm``, where `ref_norm` defaults to the largest
    pointwise ``|T|_rho`` (without ``SUPNORM_FACTOR``).
    """
    if isinstance(T, TTField):
        T = T.tensor
    if ref_norm is None:
        ref_norm = float(np.max(rho_norm_tt(T, grid.e2f)[grid.interior]))
    trace = np.abs(T.t11 + T.t22)[grid.interior] / grid.e2f[grid.interior]
    d1, d2 = rho_divergence(grid, T, order=order)
    dn = np.sqrt(d1 ** 2 + d2 ** 2) / np.sqrt(grid.e2f)
    div = float(np.nanmax(dn[grid.interior])) if np.any(np.isfinite(dn[grid.interior])) else 0.0
    max_trace = float(np.max(trace)) if trace.size else 0.0
    flagged = bool(div > threshold * max(ref_norm, 1e-300) or max_trace > 0)
    return TTReport(max_trace, div, float(ref_norm), flagged)


def tt_inner(grid: SurfaceGrid, A: SymTensor, B: SymTensor):
    """L2 inner product ``int rho^{ac} rho^{bd} A_ab B_cd dmu_rho``."""
    dens = (A.t11 * B.t11 + 2 * A.t12 * B.t12 + A.t22 * B.t22) / grid.e2f ** 2
    return grid.integrate(dens[grid.interior])


def tt_basis(grid: SurfaceGrid):
    """The six real basis TT fields."""
    return [assemble_tt(grid, np.eye(6)[k]) for k in range(6)]


def gram_matrix(grid: SurfaceGrid):
    B = tt_basis(grid)
    G = np.empty((6, 6))
    for i in range(6):
        for j in range(i, 6):
            G[i, j] = G[j, i] = tt_inner(grid, B[i].tensor, B[j].tensor)
    return G
