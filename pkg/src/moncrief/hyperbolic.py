"""Poincare disk geometry and the Bolza surface group.

Points of the disk are handled as complex numbers (scalars or arrays).
The reference metric is

    rho = 8 / (1 - |z|^2)^2 |dz|^2,

which has Gauss curvature -1/2 (scalar curvature -1).  Mobius maps are
isometries for any constant multiple of the hyperbolic metric, so the
group itself is the usual curvature -1 Bolza group.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, GroupConstructionError, OutOfCollarError

SQRT2 = np.sqrt(2.0)

# Regular octagon with interior angles pi/4, one vertex on the positive axis.
VERTEX_RADIUS = 2.0 ** -0.25
MIDPOINT_RADIUS = np.sqrt(SQRT2 - 1.0)
_TRANS_A = 1.0 + SQRT2
_TRANS_B = np.sqrt(2.0 + 2.0 * SQRT2)

# Injectivity radius of (Sigma, rho): half the Bolza systole, scaled by
# sqrt(2) for curvature -1/2.
DEFAULT_INJ_RHO = float(SQRT2 * np.arccosh(1.0 + SQRT2))

DEDUP_TOL = 1e-8


# ----------------------------------------------------------------------------
# points
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class DiskPoint:
    """A point of the open unit disk."""

    re: float
    im: float

    def __post_init__(self):
        if not (np.isfinite(self.re) and np.isfinite(self.im)):
            raise DomainError("non-finite disk point")
        if self.re ** 2 + self.im ** 2 >= 1.0:
            raise DomainError(f"point {self.re}+{self.im}i is not in the open disk")

    @property
    def z(self) -> complex:
        return complex(self.re, self.im)

    @classmethod
    def from_complex(cls, z):
        z = complex(z)
        return cls(z.real, z.imag)


def as_disk_array(z):
    """Return `z` as a complex ndarray, checking that it lies in the disk.

    Raises
    ------
    DomainError
        If any entry is non-finite or has modulus >= 1.
    """
    if isinstance(z, DiskPoint):
        z = z.z
    arr = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite disk coordinates")
    if np.any(np.abs(arr) >= 1.0):
        raise DomainError("points must satisfy |z| < 1")
    return arr


def hyperbolic_distance(z1, z2):
    """Distance for the curvature -1/2 metric rho.

    This is sqrt(2) times the usual curvature -1 distance
    ``2 artanh |(z1 - z2) / (1 - conj(z2) z1)|``.
    """
    z1 = as_disk_array(z1)
    z2 = as_disk_array(z2)
    t = np.abs((z1 - z2) / (1.0 - np.conj(z2) * z1))
    return 2.0 * SQRT2 * np.arctanh(np.minimum(t, 1.0 - 1e-16))


# ----------------------------------------------------------------------------
# the reference metric
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RhoMetric:
    """Conformal factor of rho in the disk chart.

    Parameters
    ----------
    inj_rho : float
        Injectivity radius of the surface, supplied externally.
    """

    inj_rho: float = DEFAULT_INJ_RHO

    @staticmethod
    def e2f(x, y):
        """Conformal factor ``8 / (1 - r^2)^2``."""
        return 8.0 / (1.0 - x * x - y * y) ** 2

    @staticmethod
    def f(x, y):
        return 0.5 * np.log(8.0) - np.log(1.0 - x * x - y * y)

    @staticmethod
    def grad_f(x, y):
        """Analytic partials ``(f_1, f_2)`` of f."""
        s = 1.0 - x * x - y * y
        return 2.0 * x / s, 2.0 * y / s

    @staticmethod
    def laplacian_f(x, y):
        s = 1.0 - x * x - y * y
        return 4.0 / s ** 2

    def gauss_curvature(self, x, y):
        """``-exp(-2f) (f_11 + f_22)``; identically -1/2."""
        return -self.laplacian_f(x, y) / self.e2f(x, y)


# ----------------------------------------------------------------------------
# Mobius maps
# ----------------------------------------------------------------------------

def _canonical(a, b):
    # M and -M act identically; fix the sign so that Re(a) > 0
    # (or Im(a) > 0 when Re(a) vanishes).
    flip = (a.real < 0) | ((a.real == 0) & (a.imag < 0))
    s = np.where(flip, -1.0, 1.0)
    return a * s, b * s


@dataclass(frozen=True)
class MobiusMap:
    """Disk automorphism ``z -> (a z + b) / (conj(b) z + conj(a))``.

    The pair is kept with ``|a|^2 - |b|^2 = 1``.
    """

    a: complex
    b: complex

    def __post_init__(self):
        det = abs(self.a) ** 2 - abs(self.b) ** 2
        if not np.isfinite(det) or abs(det - 1.0) > 1e-12 * max(1.0, abs(self.a) ** 2):
            raise ValueError(f"|a|^2 - |b|^2 = {det!r}, expected 1")

    @classmethod
    def identity(cls):
        return cls(1.0 + 0j, 0j)

    @classmethod
    def rotation(cls, theta):
        e = np.exp(0.5j * theta)
        return cls(complex(e), 0j)

    @classmethod
    def translation(cls, length, direction=0.0):
        """Hyperbolic translation through 0 along angle `direction`.

        `length` is the curvature -1 translation length.
        """
        a = np.cosh(length / 2.0)
        b = np.sinh(length / 2.0) * np.exp(1j * direction)
        return cls(complex(a), complex(b))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex)
        return (self.a * z + self.b) / (np.conj(self.b) * z + np.conj(self.a))

    def derivative(self, z):
        z = np.asarray(z, dtype=complex)
        return 1.0 / (np.conj(self.b) * z + np.conj(self.a)) ** 2

    def __matmul__(self, other):
        """Composition ``self o other``."""
        a = self.a * other.a + self.b * np.conj(other.b)
        b = self.a * other.b + self.b * np.conj(other.a)
        return MobiusMap(complex(a), complex(b))

    def inverse(self):
        return MobiusMap(complex(np.conj(self.a)), complex(-self.b))

    def matrix(self):
        return np.array([[self.a, self.b], [np.conj(self.b), np.conj(self.a)]])

    def canonical(self):
        a, b = _canonical(np.asarray(self.a), np.asarray(self.b))
        return MobiusMap(complex(a), complex(b))

    def distance_to(self, other):
        """Matrix distance after sign normalization."""
        p = self.canonical()
        q = other.canonical()
        return float(np.hypot(abs(p.a - q.a), abs(p.b - q.b)))

    def to_list(self):
        return [float(self.a.real), float(self.a.imag), float(self.b.real), float(self.b.imag)]


def mobius_apply(m: MobiusMap, z):
    """Apply `m` to disk points, rejecting points outside the open disk."""
    return m(as_disk_array(z))


def mobius_derivative(m: MobiusMap, z):
    """Complex derivative ``1 / (conj(b) z + conj(a))^2``."""
    return m.derivative(as_disk_array(z))


# ----------------------------------------------------------------------------
# the group
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ElementSet:
    """Group elements stored as parallel arrays, identity first."""

    a: np.ndarray
    b: np.ndarray
    length: np.ndarray

    def __len__(self):
        return len(self.a)

    def maps(self):
        return [MobiusMap(complex(a), complex(b)) for a, b in zip(self.a, self.b)]

    def apply(self, z):
        """Images of one point under every element, with derivatives."""
        den = np.conj(self.b) * z + np.conj(self.a)
        return (self.a * z + self.b) / den, 1.0 / den ** 2


@dataclass(frozen=True)
class FuchsianGroup:
    """Side-pairing generators of the regular octagon.

    ``generators[k]`` maps side ``k + 4`` onto side ``k`` and
    ``generators[k + 4]`` is its inverse.  Side ``k`` joins the vertices
    ``r_v exp(i k pi/4)`` and ``r_v exp(i (k+1) pi/4)``.
    """

    generators: tuple
    relation_word: tuple
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def ga(self):
        return np.array([g.a for g in self.generators])

    @property
    def gb(self):
        return np.array([g.b for g in self.generators])

    def relation_residual(self):
        m = MobiusMap.identity()
        for k in self.relation_word:
            m = m @ self.generators[k]
        return min(np.abs(m.matrix() - np.eye(2)).max(), np.abs(m.matrix() + np.eye(2)).max())

    def elements(self, max_word_len):
        """All distinct elements of word length <= `max_word_len`.

        Ordered by word length, then lexicographically by the first
        reduced word reaching the element.
        """
        max_word_len = int(max_word_len)
        if max_word_len < 0:
            raise ValueError("max_word_len must be >= 0")
        key = ("elements", max_word_len)
        if key not in self._cache:
            longer = [k[1] for k in self._cache if k[0] == "elements" and k[1] > max_word_len]
            if longer:
                # elements are sorted by word length, so a prefix is the answer
                big = self._cache[("elements", min(longer))]
                n = int(np.searchsorted(big.length, max_word_len, side="right"))
                self._cache[key] = ElementSet(big.a[:n], big.b[:n], big.length[:n])
            else:
                self._cache[key] = _enumerate(self, max_word_len)
        return self._cache[key]

    def in_octagon(self, z, tol=1e-12):
        """Closed-octagon membership: no generator moves z closer to 0."""
        z = np.asarray(z, dtype=complex)
        r = np.abs(z)
        ok = np.ones(z.shape, dtype=bool)
        for g in self.generators:
            ok &= np.abs(g(z)) >= r - tol
        return ok

    def reduce(self, z, max_steps=3):
        """Vectorized reduction of points into the closed octagon.

        Returns
        -------
        w : ndarray
            Reduced points.
        a, b : ndarray
            Coefficients of the maps with ``gamma(z) = w``.
        steps : ndarray of int
            Number of generator applications used.

        Raises
        ------
        OutOfCollarError
            If some point needs more than `max_steps` generator steps.
        """
        z = as_disk_array(z)
        shape = z.shape
        w = z.ravel().copy()
        a = np.ones_like(w)
        b = np.zeros_like(w)
        steps = np.zeros(w.shape, dtype=int)
        ga, gb = self.ga, self.gb
        active = np.arange(w.size)
        while active.size:
            x = w[active]
            imgs = (ga[:, None] * x + gb[:, None]) / (np.conj(gb)[:, None] * x + np.conj(ga)[:, None])
            k = np.argmin(np.abs(imgs), axis=0)
            best = imgs[k, np.arange(x.size)]
            move = np.abs(best) < np.abs(x) - 1e-14
            if not move.any():
                break
            idx = active[move]
            kk = k[move]
            if np.any(steps[idx] >= max_steps):
                bad = idx[steps[idx] >= max_steps][0]
                raise OutOfCollarError(
                    f"point {z.ravel()[bad]} not reducible within {max_steps} steps",
                    point=complex(z.ravel()[bad]))
            # compose: new map = g_k o old map
            na = ga[kk] * a[idx] + gb[kk] * np.conj(b[idx])
            nb = ga[kk] * b[idx] + gb[kk] * np.conj(a[idx])
            a[idx], b[idx] = na, nb
            w[idx] = best[move]
            steps[idx] += 1
            active = idx
        return w.reshape(shape), a.reshape(shape), b.reshape(shape), steps.reshape(shape)


def _enumerate(group, L):
    ga, gb = group.ga, group.gb
    levels_a = [np.array([1.0 + 0j])]
    levels_b = [np.array([0j])]
    last = [np.array([-1])]
    for k in range(1, L + 1):
        pa, pb, pl = levels_a[-1], levels_b[-1], last[-1]
        if pa.size == 0:
            break
        # extend by every generator that does not cancel the last letter
        ca = (pa[:, None] * ga[None, :] + pb[:, None] * np.conj(gb)[None, :]).ravel()
        cb = (pa[:, None] * gb[None, :] + pb[:, None] * np.conj(ga)[None, :]).ravel()
        cl = np.tile(np.arange(8), pa.size)
        parent_last = np.repeat(pl, 8)
        keep = (parent_last < 0) | (cl != (parent_last + 4) % 8)
        ca, cb, cl = ca[keep], cb[keep], cl[keep]
        ca, cb = _canonical(ca, cb)
        pts = np.column_stack([ca.real, ca.imag, cb.real, cb.imag])
        # word length parity is an invariant, so only same-parity levels can collide
        older = [j for j in range(k - 2, -1, -2)]
        mask = np.ones(len(pts), dtype=bool)
        if older:
            oa = np.concatenate([levels_a[j] for j in older])
            ob = np.concatenate([levels_b[j] for j in older])
            tree = cKDTree(np.column_stack([oa.real, oa.imag, ob.real, ob.imag]))
            d, _ = tree.query(pts, k=1, distance_upper_bound=DEDUP_TOL)
            mask &= ~np.isfinite(d)
        tree = cKDTree(pts)
        pairs = tree.query_pairs(DEDUP_TOL, output_type="ndarray")
        if len(pairs):
            mask[np.maximum(pairs[:, 0], pairs[:, 1])] = False
        levels_a.append(ca[mask])
        levels_b.append(cb[mask])
        last.append(cl[mask])
    a = np.concatenate(levels_a)
    b = np.concatenate(levels_b)
    length = np.concatenate([np.full(len(x), j) for j, x in enumerate(levels_a)])
    return ElementSet(a, b, length)


@lru_cache(maxsize=None)
def build_bolza_group():
    """Construct the Bolza group and run its self-checks.

    Raises
    ------
    GroupConstructionError
        If the relation residual exceeds 1e-10.
    """
    gens = []
    for k in range(8):
        theta = np.pi / 8 + k * np.pi / 4
        gens.append(MobiusMap(complex(_TRANS_A), complex(_TRANS_B * np.exp(1j * theta))))
    # g0 g3 g2^-1 g1 g0^-1 g3^-1 g2 g1^-1
    word = (0, 3, 6, 1, 4, 7, 2, 5)
    group = FuchsianGroup(tuple(gens), word)
    res = group.relation_residual()
    if res > 1e-10:
        raise GroupConstructionError(f"relation residual {res:.3e}")
    return group


def enumerate_group(group: FuchsianGroup, max_word_len: int):
    """Distinct elements up to the given word length, identity first."""
    return group.elements(max_word_len).maps()


def reduce_to_domain(group: FuchsianGroup, z, max_steps=3):
    """Reduce one point into the closed octagon.

    Returns
    -------
    w : complex
        The reduced point.
    gamma : MobiusMap
        Deck transformation with ``gamma(z) = w``.
    """
    w, a, b, _ = group.reduce(np.asarray([complex(DiskPoint.from_complex(z).z)
                                          if not isinstance(z, DiskPoint) else z.z]),
                              max_steps=max_steps)
    gamma = MobiusMap(complex(a[0]), complex(b[0])).canonical()
    return complex(w[0]), gamma


# ----------------------------------------------------------------------------
# octagon helpers
# ----------------------------------------------------------------------------

def octagon_vertices():
    return VERTEX_RADIUS * np.exp(1j * np.pi / 4 * np.arange(8))


def side_points(k, n):
    """`n` points along side ``k`` (a circular arc), vertex to vertex."""
    rm = MIDPOINT_RADIUS
    d = (1.0 + rm * rm) / (2.0 * rm)
    R = d - rm
    theta = np.pi / 8 + k * np.pi / 4
    center = d * np.exp(1j * theta)
    v0 = VERTEX_RADIUS * np.exp(1j * k * np.pi / 4)
    v1 = VERTEX_RADIUS * np.exp(1j * (k + 1) * np.pi / 4)
    t0 = np.angle(v0 - center)
    t1 = np.angle(v1 - center)
    if t1 > t0:
        t1 -= 2 * np.pi
    t = np.linspace(t0, t1, n)
    return center + R * np.exp(1j * t)


def octagon_angles():
    """Interior angles at the eight vertices, from the side circles."""
    rm = MIDPOINT_RADIUS
    d = (1.0 + rm * rm) / (2.0 * rm)
    out = []
    for k in range(8):
        v = VERTEX_RADIUS * np.exp(1j * k * np.pi / 4)
        c_in = d * np.exp(1j * (np.pi / 8 + (k - 1) * np.pi / 4))
        c_out = d * np.exp(1j * (np.pi / 8 + k * np.pi / 4))
        # tangent directions of both arcs at v, pointing away from v
        t1 = 1j * (v - c_in)
        t2 = 1j * (v - c_out)
        t1 *= np.sign(np.real(np.conj(t1) * (-v)))
        t2 *= np.sign(np.real(np.conj(t2) * (-v)))
        ang = abs(np.angle(t2 / t1))
        out.append(ang)
    return np.array(out)
