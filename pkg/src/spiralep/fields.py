"""Field representations on the annulus and on the (r, z) rectangle.

Annulus fields are truncated Fourier series in the angle with per-mode radial
node values,

    f(r, theta) = sum_{j=0}^{2M} c_j(r) beta_j(theta),

over the orthonormal basis

    beta_0        = 1/sqrt(2 pi),
    beta_{2k-1}   = sin(k theta)/sqrt(pi),
    beta_{2k}     = cos(k theta)/sqrt(pi),     k = 1..M.

Angular derivatives are exact mode recombinations.  Radial derivatives use a
fourth-order centred stencil on the uniform grid with one-sided (third-order)
rows at the ends, so polynomial fields of degree <= 3 differentiate exactly.
Discrete Sobolev norms combine the exact Parseval sum in theta with trapezoid
quadrature in r.

Rectangle fields (axisymmetric runs) hold plain node values on a uniform
(r, z) grid; z-derivatives optionally use even/odd reflection at the walls
z = +-1 so that symmetric extensions have machine-zero odd derivatives there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "AliasingRisk",
    "AnnulusField",
    "RectField",
    "SobolevNorm",
    "ThetaFunction",
    "analyze",
    "derivative",
    "h_norm",
    "theta_grid",
    "write_field_csv",
]

ALIASING_ENERGY_SHARE = 0.01


class AliasingRisk(UserWarning):
    """Top retained Fourier mode carries a non-negligible energy share."""


def theta_grid(n):
    return 2.0 * np.pi * np.arange(n) / n


def default_n_theta(m):
    # enough points to integrate triple products coeff * beta_j * beta_k exactly
    return 4 * (m + 1)


def wavenumbers(m):
    """Wavenumber of each basis index j = 0..2M."""
    j = np.arange(2 * m + 1)
    return (j + 1) // 2


@lru_cache(maxsize=None)
def _basis(m, n_theta):
    """Values of beta_j, beta_j', beta_j'' on the uniform theta grid."""
    th = theta_grid(n_theta)
    b = np.empty((n_theta, 2 * m + 1))
    b1 = np.zeros_like(b)
    b2 = np.zeros_like(b)
    b[:, 0] = 1.0 / np.sqrt(2.0 * np.pi)
    for k in range(1, m + 1):
        s = np.sin(k * th) / np.sqrt(np.pi)
        c = np.cos(k * th) / np.sqrt(np.pi)
        b[:, 2 * k - 1] = s
        b1[:, 2 * k - 1] = k * c
        b2[:, 2 * k - 1] = -k * k * s
        b[:, 2 * k] = c
        b1[:, 2 * k] = -k * s
        b2[:, 2 * k] = -k * k * c
    for a in (b, b1, b2):
        a.setflags(write=False)
    return b, b1, b2


def basis_values(m, n_theta, deriv=0):
    return _basis(m, n_theta)[deriv]


@lru_cache(maxsize=None)
def _diff_matrix(n, h):
    """Fourth-order first-derivative matrix on n uniform nodes, spacing h."""
    if n < 5:
        raise ValueError("radial grid needs at least 5 nodes")
    d = np.zeros((n, n))
    w = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    for i in range(2, n - 2):
        d[i, i - 2 : i + 3] = w
    d[0, :4] = np.array([-11.0, 18.0, -9.0, 2.0]) / (6.0 * h)
    d[1, :4] = np.array([-2.0, -3.0, 6.0, -1.0]) / (6.0 * h)
    d[-2, -4:] = np.array([1.0, -6.0, 3.0, 2.0]) / (6.0 * h)
    d[-1, -4:] = np.array([-2.0, 9.0, -18.0, 11.0]) / (6.0 * h)
    d.setflags(write=False)
    return d


def diff_matrix(grid):
    grid = np.asarray(grid, dtype=float)
    h = float(grid[1] - grid[0])
    if not np.allclose(np.diff(grid), h, rtol=1e-9, atol=1e-9 * abs(h)):
        raise ValueError("radial grid must be uniform")
    return _diff_matrix(len(grid), h)


def _dtheta_coeffs(coeffs, m):
    """Exact angular derivative in coefficient space."""
    out = np.zeros_like(coeffs)
    for k in range(1, m + 1):
        out[2 * k - 1] = -k * coeffs[2 * k]
        out[2 * k] = k * coeffs[2 * k - 1]
    return out


@dataclass(frozen=True)
class SobolevNorm:
    order: int
    value: float

    def __float__(self):
        return self.value


class ThetaFunction:
    """Band-limited 2*pi-periodic function of the angle alone."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.n_modes = (len(self.coeffs) - 1) // 2

    @classmethod
    def zeros(cls, m):
        return cls(np.zeros(2 * m + 1))

    @classmethod
    def constant(cls, value, m):
        c = np.zeros(2 * m + 1)
        c[0] = value * np.sqrt(2.0 * np.pi)
        return cls(c)

    @classmethod
    def from_samples(cls, samples, m):
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        if n < 2 * (2 * m + 1):
            raise ValueError("need at least 2*(2M+1) theta samples")
        b = basis_values(m, n)
        return cls((2.0 * np.pi / n) * (samples @ b))

    @classmethod
    def from_callable(cls, fn, m, n_theta=None):
        n = n_theta or default_n_theta(m)
        return cls.from_samples(np.asarray(fn(theta_grid(n)), dtype=float), m)

    def values(self, n_theta=None):
        n = n_theta or default_n_theta(self.n_modes)
        return basis_values(self.n_modes, n) @ self.coeffs

    def at(self, theta):
        theta = np.asarray(theta, dtype=float)
        m = self.n_modes
        out = np.full_like(theta, self.coeffs[0] / np.sqrt(2.0 * np.pi))
        for k in range(1, m + 1):
            out = out + (
                self.coeffs[2 * k - 1] * np.sin(k * theta)
                + self.coeffs[2 * k] * np.cos(k * theta)
            ) / np.sqrt(np.pi)
        return out

    def deriv(self, order=1):
        c = self.coeffs.copy()
        for _ in range(order):
            c = _dtheta_coeffs(c, self.n_modes)
        return ThetaFunction(c)

    @property
    def mean(self):
        return self.coeffs[0] / np.sqrt(2.0 * np.pi)

    def antiderivative(self):
        """Exact antiderivative vanishing at theta = 0.

        Splits off the linear-in-theta part carried by the mean: returns
        (slope, periodic ThetaFunction) with F(theta) = slope*theta + p(theta).
        """
        m = self.n_modes
        c = np.zeros_like(self.coeffs)
        for k in range(1, m + 1):
            c[2 * k - 1] = self.coeffs[2 * k] / k
            c[2 * k] = -self.coeffs[2 * k - 1] / k
        p = ThetaFunction(c)
        # fix p(0) = 0
        c[0] = -p.at(0.0) * np.sqrt(2.0 * np.pi)
        return self.mean, ThetaFunction(c)

    def as_field(self, r, radial=None):
        """Tensor product with a radial profile (default: constant one)."""
        prof = np.ones(len(r)) if radial is None else np.asarray(radial, float)
        return AnnulusField(np.outer(self.coeffs, prof), r)

    def ck_proxy(self, k):
        """max over the grid of |f^(j)|, j = 0..k (discrete C^k size)."""
        tot = 0.0
        f = self
        for _ in range(k + 1):
            tot += float(np.max(np.abs(f.values())))
            f = f.deriv()
        return tot

    def __add__(self, other):
        if isinstance(other, ThetaFunction):
            return ThetaFunction(self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, ThetaFunction):
            return ThetaFunction(self.coeffs - other.coeffs)
        return NotImplemented

    def __mul__(self, a):
        return ThetaFunction(self.coeffs * float(a))

    __rmul__ = __mul__


class AnnulusField:
    """Scalar field on the annulus: Fourier modes in theta x radial nodes."""

    def __init__(self, coeffs, r, n_theta=None):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.r = np.asarray(r, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != len(self.r):
            raise ValueError("coeffs must have shape (2M+1, n_r)")
        if self.coeffs.shape[0] % 2 != 1:
            raise ValueError("mode axis must have odd length 2M+1")
        self.n_modes = (self.coeffs.shape[0] - 1) // 2
        self.n_theta = int(n_theta) if n_theta else default_n_theta(self.n_modes)
        self.aliasing_risk = False

    # -- constructors ------------------------------------------------------

    @classmethod
    def zeros(cls, m, r, n_theta=None):
        return cls(np.zeros((2 * m + 1, len(r))), r, n_theta)

    @classmethod
    def from_values(cls, values, r, m, warn_aliasing=False):
        """Project theta-uniform samples (n_r, n_theta) onto the basis."""
        values = np.asarray(values, dtype=float)
        n_r, n_th = values.shape
        if n_r != len(r):
            raise ValueError("row count must match the radial grid")
        if n_th < 2 * (2 * m + 1):
            raise ValueError("need at least 2*(2M+1) theta samples")
        b = basis_values(m, n_th)
        coeffs = (2.0 * np.pi / n_th) * (values @ b).T
        f = cls(coeffs, r, n_theta=n_th)
        e_tot = float(np.sum(coeffs**2))
        e_top = float(np.sum(coeffs[-2:] ** 2)) if m >= 1 else 0.0
        if e_tot > 0.0 and e_top > ALIASING_ENERGY_SHARE * e_tot:
            f.aliasing_risk = True
            if warn_aliasing:
                warnings.warn(
                    f"top mode k={m} holds {e_top / e_tot:.1%} of field energy",
                    AliasingRisk,
                    stacklevel=2,
                )
        return f

    @classmethod
    def from_function(cls, fn, r, m, n_theta=None):
        n_th = n_theta or default_n_theta(m)
        th = theta_grid(n_th)
        rr, tt = np.meshgrid(r, th, indexing="ij")
        return cls.from_values(fn(rr, tt), r, m)

    def copy(self):
        g = AnnulusField(self.coeffs.copy(), self.r, self.n_theta)
        g.aliasing_risk = self.aliasing_risk
        return g

    # -- evaluation --------------------------------------------------------

    def values(self, n_theta=None):
        """Synthesize pointwise values, shape (n_r, n_theta)."""
        n = n_theta or self.n_theta
        return (basis_values(self.n_modes, n) @ self.coeffs).T

    def at(self, r_pts, theta_pts):
        """Evaluate at arbitrary points via per-mode cubic splines."""
        from scipy.interpolate import CubicSpline

        spl = CubicSpline(self.r, self.coeffs, axis=1)
        c = spl(np.asarray(r_pts, dtype=float))  # (2M+1, ...)
        m = self.n_modes
        th = np.asarray(theta_pts, dtype=float)
        out = c[0] / np.sqrt(2.0 * np.pi)
        for k in range(1, m + 1):
            out = out + (
                c[2 * k - 1] * np.sin(k * th) + c[2 * k] * np.cos(k * th)
            ) / np.sqrt(np.pi)
        return out

    def entrance(self):
        """Trace on the inner circle as a ThetaFunction."""
        return ThetaFunction(self.coeffs[:, 0].copy())

    def exit(self):
        return ThetaFunction(self.coeffs[:, -1].copy())

    # -- calculus ----------------------------------------------------------

    def d_theta(self, order=1):
        c = self.coeffs
        for _ in range(order):
            c = _dtheta_coeffs(c, self.n_modes)
        return AnnulusField(c, self.r, self.n_theta)

    def d_r(self, order=1):
        d = diff_matrix(self.r)
        c = self.coeffs
        for _ in range(order):
            c = c @ d.T
        return AnnulusField(c, self.r, self.n_theta)

    def d_rtheta(self):
        return self.d_r().d_theta()

    # -- algebra -----------------------------------------------------------

    def _check_compatible(self, other):
        if self.coeffs.shape != other.coeffs.shape or not np.array_equal(
            self.r, other.r
        ):
            raise ValueError("field layouts do not match")

    def __add__(self, other):
        if isinstance(other, AnnulusField):
            self._check_compatible(other)
            return AnnulusField(self.coeffs + other.coeffs, self.r, self.n_theta)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, AnnulusField):
            self._check_compatible(other)
            return AnnulusField(self.coeffs - other.coeffs, self.r, self.n_theta)
        return NotImplemented

    def __neg__(self):
        return AnnulusField(-self.coeffs, self.r, self.n_theta)

    def __mul__(self, other):
        if isinstance(other, AnnulusField):
            self._check_compatible(other)
            return AnnulusField.from_values(
                self.values() * other.values(), self.r, self.n_modes
            )
        if np.isscalar(other):
            return AnnulusField(self.coeffs * float(other), self.r, self.n_theta)
        return NotImplemented

    __rmul__ = __mul__

    def scale_radial(self, prof):
        """Multiply by a function of r alone (exact in coefficient space)."""
        prof = np.asarray(prof, dtype=float)
        return AnnulusField(self.coeffs * prof[None, :], self.r, self.n_theta)

    def shift(self, const):
        c = self.coeffs.copy()
        c[0] += const * np.sqrt(2.0 * np.pi)
        return AnnulusField(c, self.r, self.n_theta)

    def apply(self, fn):
        """Pointwise map followed by re-projection (band-limit truncation)."""
        return AnnulusField.from_values(fn(self.values()), self.r, self.n_modes)

    # -- norms -------------------------------------------------------------

    def l2(self):
        """L2 norm: exact Parseval in theta, trapezoid in r."""
        per_r = np.sum(self.coeffs**2, axis=0)
        return float(np.sqrt(np.trapezoid(per_r, self.r)))

    def max_abs(self):
        return float(np.max(np.abs(self.values())))


def analyze(samples, r, m):
    """Project theta-uniform pointwise samples onto an AnnulusField."""
    return AnnulusField.from_values(samples, r, m, warn_aliasing=True)


def radial_field(profile, m, r):
    """Lift a radial profile into an (theta-independent) AnnulusField."""
    f = AnnulusField.zeros(m, r)
    f.coeffs[0, :] = np.asarray(profile, dtype=float) * np.sqrt(2.0 * np.pi)
    return f


def derivative(field, which):
    """Named derivatives: 'r', 'theta', 'r2', 'theta2', 'rtheta'."""
    ops = {
        "r": lambda f: f.d_r(),
        "theta": lambda f: f.d_theta(),
        "r2": lambda f: f.d_r(2),
        "theta2": lambda f: f.d_theta(2),
        "rtheta": lambda f: f.d_rtheta(),
    }
    try:
        return ops[which](field)
    except KeyError:
        raise ValueError(f"unknown derivative {which!r}") from None


class RectField:
    """Scalar field on the rectangle [r0, r1] x [-1, 1], plain node values."""

    def __init__(self, values, r, z):
        self.values = np.asarray(values, dtype=float)
        self.r = np.asarray(r, dtype=float)
        self.z = np.asarray(z, dtype=float)
        if self.values.shape != (len(self.r), len(self.z)):
            raise ValueError("values must have shape (n_r, n_z)")
        if len(self.r) < 8 or len(self.z) < 8:
            raise ValueError("rect grid must be at least 8 x 8")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("rect field values must be finite")

    @classmethod
    def zeros(cls, r, z):
        return cls(np.zeros((len(r), len(z))), r, z)

    def copy(self):
        return RectField(self.values.copy(), self.r, self.z)

    def d_r(self, order=1):
        d = diff_matrix(self.r)
        v = self.values
        for _ in range(order):
            v = d @ v
        return RectField(v, self.r, self.z)

    def d_z(self, order=1, parity=None):
        """z-derivative; parity 'even'/'odd' reflects across the walls.

        With a declared parity the centred stencil acts on the reflected
        extension, so even fields get machine-zero odd derivatives at z=+-1.
        """
        v = self.values
        h = float(self.z[1] - self.z[0])
        for _ in range(order):
            if parity is None:
                v = (diff_matrix(self.z) @ v.T).T
            else:
                ext = np.pad(
                    v,
                    ((0, 0), (2, 2)),
                    mode="reflect",
                    reflect_type="odd" if parity == "odd" else "even",
                )
                v = (
                    ext[:, :-4] - 8 * ext[:, 1:-3] + 8 * ext[:, 3:-1] - ext[:, 4:]
                ) / (12.0 * h)
            parity = _flip_parity(parity)
        return RectField(v, self.r, self.z)

    def __add__(self, other):
        if isinstance(other, RectField):
            return RectField(self.values + other.values, self.r, self.z)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, RectField):
            return RectField(self.values - other.values, self.r, self.z)
        return NotImplemented

    def __mul__(self, other):
        if isinstance(other, RectField):
            return RectField(self.values * other.values, self.r, self.z)
        if np.isscalar(other):
            return RectField(self.values * float(other), self.r, self.z)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return RectField(-self.values, self.r, self.z)

    def l2(self):
        inner = np.trapezoid(self.values**2, self.z, axis=1)
        return float(np.sqrt(np.trapezoid(inner, self.r)))

    def max_abs(self):
        return float(np.max(np.abs(self.values)))


def _flip_parity(parity):
    if parity == "even":
        return "odd"
    if parity == "odd":
        return "even"
    return None


def h_norm(field, k):
    """Discrete H^k norm combining all mixed derivatives up to order k."""
    if not 0 <= k <= 4:
        raise ValueError("order must be in 0..4")
    total = 0.0
    if isinstance(field, AnnulusField):
        for a in range(k + 1):
            fr = field.d_r(a) if a else field
            for b in range(k + 1 - a):
                g = fr.d_theta(b) if b else fr
                total += g.l2() ** 2
    elif isinstance(field, RectField):
        for a in range(k + 1):
            fr = field.d_r(a) if a else field
            for b in range(k + 1 - a):
                g = fr.d_z(b) if b else fr
                total += g.l2() ** 2
    else:
        raise TypeError("h_norm expects an AnnulusField or RectField")
    return SobolevNorm(order=k, value=float(np.sqrt(total)))


def write_field_csv(field, path, name, run_id):
    """Dump a field as CSV rows (r, theta|z, value), 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(f"# field={name} run_id={run_id}\n")
        if isinstance(field, AnnulusField):
            fh.write("r,theta,value\n")
            th = theta_grid(field.n_theta)
            vals = field.values()
            for i, ri in enumerate(field.r):
                for j, tj in enumerate(th):
                    fh.write(f"{ri:.17g},{tj:.17g},{vals[i, j]:.17g}\n")
        else:
            fh.write("r,z,value\n")
            for i, ri in enumerate(field.r):
                for j, zj in enumerate(field.z):
                    fh.write(f"{ri:.17g},{zj:.17g},{field.values[i, j]:.17g}\n")
