"""Coefficients and sources of the linearized spiral-flow systems.

Barred (radial) coefficients multiply the linear model operators

    L1(psi, Psi) = psi_rr - A22 psi_tt + 2 A12 psi_rt
                   + a1 psi_r + a2 psi_t + b1 Psi_r + b2 Psi_t + b3 Psi,
    L2(psi, Psi) = lap(Psi) + a3 psi_r + a4 psi_t - b4 Psi,

with lap the polar Laplacian.  Each of a1, a2 and the rotational variant
a2_tilde has two printed algebraic forms; both are evaluated and cross-checked
at runtime, since transcription of the long expressions is the dominant bug
risk.  The background derivatives entering the first forms are substituted
from the background ODE (no finite differencing), so the two forms agree to
rounding.

Nonlinear sources are *equation-defined*: F1 is the difference between the
linear model's lower-order terms and the exact lower-order terms of the
quasilinear first equation, evaluated at the frozen iterate.  This reproduces
the printed source expressions exactly where they are unambiguous and fixes
their bracketing where the originals are ambiguous; the zero-iterate,
boundary-scaling and cross-formulation tests pin the behaviour.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CavitationError, EllipticityLost
from .fields import AnnulusField, ThetaFunction, h_norm, radial_field

__all__ = [
    "CoeffBundle",
    "SourceBundle",
    "apply_L1",
    "apply_L2",
    "boundary_lifts",
    "density_from_bernoulli",
    "frozen_coeffs",
    "linear_coeffs",
    "sources",
]

DENOM_GUARD = 1e-12


def density_from_bernoulli(K, S, U1, U2, Phi, gamma):
    """Density and squared sound speed from the Bernoulli relation.

    rho = ((gamma-1)/(gamma e^S) (K + Phi - |u|^2/2))^(1/(gamma-1)),
    c^2 = (gamma-1)(K + Phi - |u|^2/2).

    Raises CavitationError when the bracket is nonpositive anywhere.
    """
    bracket = K + Phi - 0.5 * (np.asarray(U1) ** 2 + np.asarray(U2) ** 2)
    if np.min(bracket) <= 0.0:
        raise CavitationError(
            f"Bernoulli bracket nonpositive (min {np.min(bracket):.6g})"
        )
    rho = ((gamma - 1.0) / (gamma * np.exp(S)) * bracket) ** (1.0 / (gamma - 1.0))
    c2 = (gamma - 1.0) * bracket
    return rho, c2


@dataclass
class CoeffBundle:
    """All coefficient profiles of the linearized systems.

    Radial arrays live on the background grid.  When frozen at an iterate the
    bundle additionally carries the pointwise coefficient fields (named A12 /
    A22 for both the irrotational and rotational variants) plus the measured
    ellipticity constant and deviation from the barred coefficients.
    """

    flow: object
    a1: np.ndarray
    a1_alt: np.ndarray
    a2: np.ndarray
    a2_alt: np.ndarray
    a2t: np.ndarray
    a2t_alt: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    b4: np.ndarray
    A12_bar: np.ndarray
    A22_bar: np.ndarray
    Up1: np.ndarray
    Up2: np.ndarray
    theta_r1: float
    kind: str = "irrotational"
    A12: AnnulusField | None = None
    A22: AnnulusField | None = None
    mu0: float | None = None
    dev_h3: float | None = None

    def cross_check(self):
        """Max absolute discrepancy of the dual printed coefficient forms."""
        return {
            "a1": float(np.max(np.abs(self.a1 - self.a1_alt))),
            "a2": float(np.max(np.abs(self.a2 - self.a2_alt))),
            "a2_tilde": float(np.max(np.abs(self.a2t - self.a2t_alt))),
        }

    def printed_relation_residual(self):
        """Residual of the printed shorthand a2_tilde = a2 - U1 U2 (recorded,
        not enforced; the displayed closed forms give a2_tilde = a2 + A12/r)."""
        f = self.flow
        printed = self.a2 - f.U1_bar * f.U2_bar
        closed = self.a2 + self.A12_bar / f.grid
        return {
            "printed": float(np.max(np.abs(self.a2t - printed))),
            "closed": float(np.max(np.abs(self.a2t - closed))),
        }

    def a2_theta(self, m=None):
        """The coefficient of psi_theta in L1 as an AnnulusField.

        Irrotational: the radial a2.  Rotational: a2_tilde - A12/r with the
        frozen A12 field.
        """
        if self.kind == "irrotational":
            base = self.A12 if self.A12 is not None else None
            mm = m if m is not None else (base.n_modes if base else 8)
            rgrid = self.flow.grid
            out = AnnulusField.zeros(mm, rgrid)
            out.coeffs[0, :] = self.a2 * math.sqrt(2.0 * math.pi)
            return out
        shifted = self.A12.scale_radial(-1.0 / self.flow.grid)
        out = shifted.copy()
        out.coeffs[0, :] += self.a2t * math.sqrt(2.0 * math.pi)
        return out


def linear_coeffs(flow):
    """Barred coefficients from the background profiles, dual forms included."""
    p = flow.params
    g = p.gamma
    r = flow.grid
    rho, E, U1, U2, c2 = flow.rho_bar, flow.E_bar, flow.U1_bar, flow.U2_bar, flow.c2_bar
    M1, M2 = flow.M1sq, flow.M2sq
    den = c2 - U1**2

    # background derivatives substituted from the ODE, not differenced
    drho = rho * (U1**2 + U2**2 + r * E) / (r * den)
    Up1 = -U1 * (1.0 / r + drho / rho)
    Up2 = -U2 / r

    a1 = (-(g + 1) * U1 * Up1 + c2 / r - U2 * Up2 - (g - 1) * U1**2 / r + E) / den
    a1_alt = (
        (g + 1) * (1 + M2) / (r * (1 - M1)) * U1**2
        + (g + 1) * E / ((1 - M1) * c2) * U1**2
        + (c2 + U2**2) / r
        - (g - 1) * U1**2 / r
        + E
    ) / den

    a2 = (-(g - 1) * U2 * Up1 / r - U1 * Up2 / r - (g - 2) * U1 * U2 / r**2) / den
    a2_alt = (
        (
            (2 * (1 - M1) + (g - 1) * (M1 + M2)) / (1 - M1)
            + (g - 1) * r * E / ((1 - M1) * c2)
        )
        * U1
        * U2
        / r**2
    ) / den

    a2t = (-(g - 1) * U2 * Up1 / r - U1 * Up2 / r - (g - 1) * U1 * U2 / r**2) / den
    a2t_alt = (
        (
            (1 - M1 + (g - 1) * (M1 + M2)) / (1 - M1)
            + (g - 1) * r * E / ((1 - M1) * c2)
        )
        * U1
        * U2
        / r**2
    ) / den

    b1 = U1 / den
    b2 = U2 / (r * den)
    b3 = (g - 1) * (Up1 + U1 / r) / den
    a3 = rho * U1 / c2
    a4 = rho * U2 / (r * c2)
    b4 = rho / c2

    return CoeffBundle(
        flow=flow,
        a1=a1,
        a1_alt=a1_alt,
        a2=a2,
        a2_alt=a2_alt,
        a2t=a2t,
        a2t_alt=a2t_alt,
        a3=a3,
        a4=a4,
        b1=b1,
        b2=b2,
        b3=b3,
        b4=b4,
        A12_bar=-U1 * U2 / (r * den),
        A22_bar=(U2**2 - c2) / (r**2 * den),
        Up1=Up1,
        Up2=Up2,
        theta_r1=float(np.min(b4 - 1.0 / (2.0 * r**2))),
    )


def frozen_coeffs(flow, base, V1, V2, Psi, N1=None):
    """Pointwise nonlinear coefficients frozen at an iterate.

    V1, V2, Psi are the perturbation fields of the iterate; N1 (Bernoulli
    perturbation) switches to the rotational variant.  Raises CavitationError
    or EllipticityLost when the iterate left the admissible set.
    """
    p = flow.params
    g = p.gamma
    r = flow.grid
    kind = "irrotational" if N1 is None else "rotational"

    u1 = flow.U1_bar[:, None] + V1.values()
    u2 = flow.U2_bar[:, None] + V2.values()
    phi = flow.Phi_bar[:, None] + Psi.values()
    K = flow.K0 + (N1.values() if N1 is not None else 0.0)
    bracket = K + phi - 0.5 * (u1**2 + u2**2)
    if np.min(bracket) <= 0.0:
        raise CavitationError(
            f"frozen iterate cavitates (min bracket {np.min(bracket):.6g})"
        )
    c2 = (g - 1.0) * bracket
    den = c2 - u1**2
    if np.min(den) <= DENOM_GUARD * np.max(c2):
        raise EllipticityLost("c^2 - U1^2 degenerated at the frozen iterate")
    A22v = (u2**2 - c2) / (r[:, None] ** 2 * den)
    if np.min(A22v) <= 0.0:
        raise EllipticityLost(
            f"A22 lost positivity (min {np.min(A22v):.6g})"
        )
    A12v = -u1 * u2 / (r[:, None] * den)

    m = V1.n_modes
    A22 = AnnulusField.from_values(A22v, r, m)
    A12 = AnnulusField.from_values(A12v, r, m)
    mu0 = float(min(np.min(A22v), 1.0 / np.max(A22v)))

    out = linear_coeffs(flow)
    dev = math.hypot(
        h_norm(A12 - radial_field(out.A12_bar, m, r), 3).value,
        h_norm(A22 - radial_field(out.A22_bar, m, r), 3).value,
    )
    out.kind = kind
    out.A12 = A12
    out.A22 = A22
    out.mu0 = mu0
    out.dev_h3 = dev
    return out


@dataclass
class SourceBundle:
    """Source fields of one linearized solve (irrotational or rotational)."""

    d0: float = 0.0
    F1: AnnulusField | None = None
    F2: AnnulusField | None = None
    F3: AnnulusField | None = None
    F4: AnnulusField | None = None
    F5: ThetaFunction | None = None
    G1: AnnulusField | None = None
    G2: AnnulusField | None = None
    G3: AnnulusField | None = None
    G4: AnnulusField | None = None
    G5: AnnulusField | None = None
    G6: AnnulusField | None = None
    G7: AnnulusField | None = None
    G8: ThetaFunction | None = None
    d0t: float = 0.0
    lift_psi: AnnulusField | None = None
    lift_Psi: AnnulusField | None = None


def _exact_lower_order(flow, u1, u2, phi_r, phi_t, c2):
    """Lower-order terms of the exact quasilinear first equation, divided by
    (c^2 - U1^2):  [(c^2-U1^2) U1' - U1 U2 U2' + c^2 U1/r + U1 (E + Phi_r)
    + U2 Phi_t / r] / (c^2 - U1^2), with background derivatives substituted."""
    base = linear_coeffs(flow)
    r = flow.grid[:, None]
    den = c2 - u1**2
    return (
        den * base.Up1[:, None]
        - u1 * u2 * base.Up2[:, None]
        + c2 * u1 / r
        + u1 * (flow.E_bar[:, None] + phi_r)
        + u2 * phi_t / r
    ) / den


def sources(flow, bundle, iterate, boundary, m=None):
    """Assemble all source fields for the frozen iterate.

    iterate: (V1, V2, Psi) AnnulusFields for the irrotational problem or
    (W1, W2, W3, N1, N2) for the rotational one.  Returns a SourceBundle with
    the homogenized right sides (F3/F4/F5) already composed in the
    irrotational case; the rotational chain (G4..G8) is completed by
    :mod:`spiralep.rotational` once the curl lift is known.
    """
    p = flow.params
    g = p.gamma
    r = flow.grid
    rc = r[:, None]
    if m is None:
        m = iterate[0].n_modes

    if bundle.kind == "irrotational":
        V1, V2, Psi = iterate
        d0 = boundary.d0(flow)
        v1 = V1.values()
        v2 = V2.values()
        psi_v = Psi.values()
        u1 = flow.U1_bar[:, None] + v1
        u2 = flow.U2_bar[:, None] + v2
        phi = flow.Phi_bar[:, None] + psi_v
        rho, c2 = density_from_bernoulli(flow.K0, p.S0, u1, u2, phi, g)
        psi_r = Psi.d_r().values()
        psi_t = Psi.d_theta().values()

        R = _exact_lower_order(flow, u1, u2, psi_r, psi_t, c2)
        A12v = bundle.A12.values() if bundle.A12 is not None else (
            bundle.A12_bar[:, None] * np.ones_like(v1)
        )
        F1v = (
            bundle.a1[:, None] * v1
            + bundle.a2[:, None] * (rc * v2 + d0)
            + bundle.b1[:, None] * psi_r
            + bundle.b2[:, None] * psi_t
            + bundle.b3[:, None] * psi_v
            + A12v * v2
            - R
        )
        bmb0 = boundary.b_minus_b0(flow, m, r).values()
        F2v = (
            bundle.a3[:, None] * v1
            + bundle.a4[:, None] * (rc * v2 + d0)
            - bundle.b4[:, None] * psi_v
            + (rho - flow.rho_bar[:, None])
            - bmb0
        )
        src = SourceBundle(
            d0=d0,
            F1=AnnulusField.from_values(F1v, r, m),
            F2=AnnulusField.from_values(F2v, r, m),
        )
        lift_psi, lift_Psi = boundary_lifts(flow, boundary, m, d0)
        src.lift_psi, src.lift_Psi = lift_psi, lift_Psi
        src.F3 = src.F1 - apply_L1(bundle, lift_psi, lift_Psi)
        src.F4 = src.F2 - apply_L2(bundle, lift_psi, lift_Psi)
        src.F5 = boundary.U1_en - ThetaFunction.constant(p.U1_0, m)
        return src

    W1, W2, W3, N1, N2 = iterate
    w1 = W1.values()
    w2 = W2.values()
    w3 = W3.values()
    n1 = N1.values()
    n2 = N2.values()
    u1 = flow.U1_bar[:, None] + w1
    u2 = flow.U2_bar[:, None] + w2
    phi = flow.Phi_bar[:, None] + w3
    rho, c2 = density_from_bernoulli(flow.K0 + n1, p.S0 + n2, u1, u2, phi, g)
    w3_r = W3.d_r().values()
    w3_t = W3.d_theta().values()

    R = _exact_lower_order(flow, u1, u2, w3_r, w3_t, c2)
    G1v = (
        bundle.a1[:, None] * w1
        + rc * bundle.a2t[:, None] * w2
        + bundle.b1[:, None] * w3_r
        + bundle.b2[:, None] * w3_t
        + bundle.b3[:, None] * w3
        - R
    )
    # vorticity source: e^S H^{gamma-1} = c^2/gamma along the Bernoulli relation
    eSH = np.exp(p.S0 + n2) * rho ** (g - 1.0)
    G2v = (eSH / (g - 1.0) * N2.d_r().values() - N1.d_r().values()) / u2
    bmb0 = boundary.b_minus_b0(flow, m, r).values()
    G3v = (
        bundle.a3[:, None] * w1
        + rc * bundle.a4[:, None] * w2
        - bundle.b4[:, None] * w3
        + (rho - flow.rho_bar[:, None])
        - bmb0
    )
    return SourceBundle(
        G1=AnnulusField.from_values(G1v, r, m),
        G2=AnnulusField.from_values(G2v, r, m),
        G3=AnnulusField.from_values(G3v, r, m),
        d0=boundary.d0(flow),
    )


def boundary_lifts(flow, boundary, m, d0=None):
    """Lift fields removing the inhomogeneous boundary data.

    lift_psi(theta)  = int_0^theta (r0 (U2_en - U2_0) + d0),   (periodic)
    lift_Psi(r,th)   = (r - r1)(E_en - E0) + (Phi_ex - Phi_bar(r1)).
    """
    p = flow.params
    r = flow.grid
    if d0 is None:
        d0 = boundary.d0(flow)
    integrand = (boundary.U2_en - ThetaFunction.constant(p.U2_0, m)) * p.r0
    integrand = integrand + ThetaFunction.constant(d0, m)
    slope, periodic = integrand.antiderivative()
    if abs(slope) > 1e-12 * max(1.0, abs(d0)):
        raise ValueError("psi lift failed to close up (d0 inconsistent)")
    lift_psi = periodic.as_field(r)

    dE = boundary.E_en - ThetaFunction.constant(p.E0, m)
    dPhi = boundary.Phi_ex - ThetaFunction.constant(flow.Phi_bar[-1], m)
    coeffs = np.outer(dE.coeffs, r - r[-1]) + np.outer(dPhi.coeffs, np.ones_like(r))
    lift_Psi = AnnulusField(coeffs, r)
    return lift_psi, lift_Psi


def apply_L1(bundle, psi, Psi):
    """Apply the first linear model operator with the bundle's coefficients."""
    flow = bundle.flow
    m = psi.n_modes
    A22 = bundle.A22 if bundle.A22 is not None else radial_field(
        bundle.A22_bar, m, flow.grid
    )
    A12 = bundle.A12 if bundle.A12 is not None else radial_field(
        bundle.A12_bar, m, flow.grid
    )
    out = psi.d_r(2) - A22 * psi.d_theta(2) + 2.0 * (A12 * psi.d_rtheta())
    out = out + psi.d_r().scale_radial(bundle.a1)
    out = out + bundle.a2_theta(m) * psi.d_theta()
    out = out + Psi.d_r().scale_radial(bundle.b1)
    out = out + Psi.d_theta().scale_radial(bundle.b2)
    out = out + Psi.scale_radial(bundle.b3)
    return out


def apply_L2(bundle, psi, Psi):
    """Apply the Poisson-side linear operator."""
    flow = bundle.flow
    r = flow.grid
    out = Psi.d_r(2) + Psi.d_r().scale_radial(1.0 / r)
    out = out + Psi.d_theta(2).scale_radial(1.0 / r**2)
    out = out + psi.d_r().scale_radial(bundle.a3)
    out = out + psi.d_theta().scale_radial(bundle.a4)
    out = out - Psi.scale_radial(bundle.b4)
    return out
