"""Two-layer iteration for cylindrical flows with nonzero vorticity.

Outer layer: freeze the Bernoulli/entropy perturbations N = (N1, N2), solve
the velocity-potential subproblem, then transport entrance data of K and S
along the streamlines of the resulting mass flux to update N.

Inner layer (the deformation-curl-Poisson solve): at frozen N and a velocity
iterate W~, the curl part of the first-order system is removed by a Poisson
lift phi1 (annular Laplacian, Dirichlet both ends, mode-decoupled tridiagonal
solves), the remaining curl-free part is written through a scalar potential
and homogenized, and the same Fourier-Galerkin machinery as the irrotational
problem solves the resulting split boundary value problem.  The only
structural differences are the extra -B12/r psi_theta term and the a2_tilde
coefficient, both carried by the rotational coefficient bundle.

The transported N1, N2 are exact compositions of the entrance data with the
stream-function level map, so the derivative loss of the vorticity equation
never differentiates iteration noise: grid derivatives are taken of smooth
composed fields only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_banded

from . import multiplier
from .coeffs import (
    apply_L1,
    apply_L2,
    boundary_lifts,
    density_from_bernoulli,
    frozen_coeffs,
    linear_coeffs,
    sources,
)
from .errors import InvalidParams, MonotonicityLost, NoContraction
from .fields import AnnulusField, ThetaFunction, h_norm, radial_field, theta_grid
from .linbvp import assemble, solve_modes

__all__ = [
    "RotationalConfig",
    "RotationalState",
    "StreamFunction",
    "conservation_audit",
    "inner_solve",
    "outer_solve",
    "poisson_lift",
    "transport_update",
]


@dataclass
class RotationalConfig:
    delta_v: float = 50.0
    delta_e: float = 10.0
    max_outer: int = 30
    max_inner: int = 50
    tol_outer: float = 1e-9
    relaxation: float = 1.0

    @property
    def tol_inner(self):
        return 0.1 * self.tol_outer


@dataclass
class RotationalState:
    W1: AnnulusField
    W2: AnnulusField
    W3: AnnulusField
    N1: AnnulusField
    N2: AnnulusField
    stream: "StreamFunction"
    deltas: tuple
    sigma_p: float
    report: dict = field(default_factory=dict)

    def fields(self):
        return self.W1, self.W2, self.W3, self.N1, self.N2


def poisson_lift(G2):
    """Solve lap(phi1) = G2 on the annulus, phi1 = 0 at both radii.

    The constant-coefficient polar Laplacian decouples per Fourier mode into
    tridiagonal systems (second-order differences).
    """
    r = G2.r
    n = len(r)
    h = float(r[1] - r[0])
    m = G2.n_modes
    out = np.zeros_like(G2.coeffs)
    ks = (np.arange(2 * m + 1) + 1) // 2
    for j in range(2 * m + 1):
        k = ks[j]
        ab = np.zeros((3, n))
        rhs = np.zeros(n)
        # boundary rows: Dirichlet
        ab[1, 0] = 1.0
        ab[1, -1] = 1.0
        ri = r[1:-1]
        ab[1, 1:-1] = -2.0 / h**2 - k**2 / ri**2
        ab[0, 2:] = 1.0 / h**2 + 1.0 / (2.0 * h * ri)
        ab[2, :-2] = 1.0 / h**2 - 1.0 / (2.0 * h * ri)
        rhs[1:-1] = G2.coeffs[j, 1:-1]
        out[j] = solve_banded((1, 1), ab, rhs)
    return AnnulusField(out, r, G2.n_theta)


class StreamFunction:
    """Mass-flux stream function with its non-periodic winding made explicit.

    L(r, th) = slope*th + p(th) + R(r, th) with p, R periodic band-limited,
    R(r0, .) = 0, and winding 2*pi*slope = entrance mass flux per revolution.
    """

    def __init__(self, flow, H_U1, H_U2):
        r = flow.grid
        g = H_U1.entrance() * flow.params.r0  # r0 (H U1)(r0, th)
        gv = g.values()
        if np.min(gv) <= 0.0:
            raise MonotonicityLost(
                f"entrance mass flux not positive (min {np.min(gv):.3g})"
            )
        self.entrance_flux = g
        self.slope, self.periodic = g.antiderivative()
        if self.slope <= 0.0:
            raise MonotonicityLost("entrance stream profile has nonpositive mean")
        # radial part: -int_r0^r (H U2)(s, th) ds, per-mode spline antiderivative
        from scipy.interpolate import CubicSpline

        spl = CubicSpline(r, H_U2.coeffs, axis=1)
        anti = spl.antiderivative()
        self.radial_part = AnnulusField(-(anti(r) - anti(r[0])[:, None]), r)
        self.r = r
        self._radial_spline = anti

    @property
    def winding(self):
        return 2.0 * np.pi * self.slope

    def entrance_value(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.slope * theta + self.periodic.at(theta)

    def value(self, r_pts, theta_pts):
        theta = np.asarray(theta_pts, dtype=float)
        r_pts = np.asarray(r_pts, dtype=float)
        base = self.slope * theta + self.periodic.at(theta)
        a0 = self._radial_spline(self.r[0])
        rad = -(self._radial_spline(r_pts) - a0.reshape((-1,) + (1,) * r_pts.ndim))
        # synthesize the radial part at (r, theta)
        m = (self.radial_part.coeffs.shape[0] - 1) // 2
        out = base + rad[0] / np.sqrt(2.0 * np.pi)
        for k in range(1, m + 1):
            out = out + (
                rad[2 * k - 1] * np.sin(k * theta) + rad[2 * k] * np.cos(k * theta)
            ) / np.sqrt(np.pi)
        return out

    def invert_entrance(self, t):
        """Solve L(r0, theta) = t for theta (vectorized, monotone profile)."""
        t = np.asarray(t, dtype=float)
        w = self.winding
        cycles = np.floor((t - self.entrance_value(0.0)) / w)
        t_red = t - cycles * w
        lo = np.zeros_like(t_red)
        hi = np.full_like(t_red, 2.0 * np.pi)
        # the reduced target lies in [L(0), L(2pi)) by construction
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            below = self.entrance_value(mid) < t_red
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        th = 0.5 * (lo + hi)
        # one Newton polish with the analytic slope
        g = self.entrance_flux.at(th)
        th = th - (self.entrance_value(th) - t_red) / g
        return th + 2.0 * np.pi * cycles


def _mass_flux_fields(flow, W1, W2, W3, N1, N2, m):
    """(H U1, H U2) as AnnulusFields at the given state."""
    p = flow.params
    u1 = flow.U1_bar[:, None] + W1.values()
    u2 = flow.U2_bar[:, None] + W2.values()
    phi = flow.Phi_bar[:, None] + W3.values()
    rho, _ = density_from_bernoulli(
        flow.K0 + N1.values(), p.S0 + N2.values(), u1, u2, phi, p.gamma
    )
    r = flow.grid
    return (
        AnnulusField.from_values(rho * u1, r, m),
        AnnulusField.from_values(rho * u2, r, m),
    )


def transport_update(flow, W, N_frozen, boundary, m=None):
    """Transport (K_en, S_en) through the stream function of the current flux.

    Returns (N1, N2, stream).  N1, N2 are exact compositions
    K_en(Linv(L(r,th))) - K0 etc., projected onto the field basis.
    """
    W1, W2, W3 = W
    N1f, N2f = N_frozen
    if m is None:
        m = W1.n_modes
    HU1, HU2 = _mass_flux_fields(flow, W1, W2, W3, N1f, N2f, m)
    sf = StreamFunction(flow, HU1, HU2)

    r = flow.grid
    n_q = HU1.n_theta
    th = theta_grid(n_q)
    tt = np.broadcast_to(th, (len(r), n_q))
    rr = np.broadcast_to(r[:, None], (len(r), n_q))
    Lvals = sf.value(rr.ravel(), tt.ravel())
    th_star = sf.invert_entrance(Lvals).reshape(len(r), n_q)

    K0, S0 = flow.K0, flow.params.S0
    N1 = AnnulusField.from_values(boundary.K_en.at(th_star) - K0, r, m)
    N2 = AnnulusField.from_values(boundary.S_en.at(th_star) - S0, r, m)
    return N1, N2, sf


def _apply_first_order(fb, w1, w2, w3):
    """First equation of the deformation-curl system at the frozen bundle."""
    r = fb.flow.grid
    out = w1.d_r()
    out = out - (fb.A22 * w2.d_theta()).scale_radial(r)
    out = out + (fb.A12 * w2.d_r()).scale_radial(r)
    out = out + fb.A12 * w1.d_theta()
    out = out + w1.scale_radial(fb.a1)
    out = out + w2.scale_radial(r * fb.a2t)
    out = out + w3.d_r().scale_radial(fb.b1)
    out = out + w3.d_theta().scale_radial(fb.b2)
    out = out + w3.scale_radial(fb.b3)
    return out


def inner_solve(flow, N_frozen, boundary, cfg=None, m=8, W_init=None,
                certificate=None, base=None):
    """Fixed point of the inner map at frozen N: velocity update W.

    Returns (W1, W2, W3), iteration history, and the last frozen bundle.
    """
    cfg = cfg or RotationalConfig()
    base = base or linear_coeffs(flow)
    r = flow.grid
    N1f, N2f = N_frozen
    zero = AnnulusField.zeros(m, r)
    if W_init is None:
        W1, W2, W3 = zero, zero, zero
    else:
        W1, W2, W3 = W_init

    p = flow.params
    history = []
    bad = 0
    fb = None
    for it in range(cfg.max_inner):
        fb = frozen_coeffs(flow, base, W1, W2, W3, N1=N1f)
        src = sources(flow, fb, (W1, W2, W3, N1f, N2f), boundary, m)

        phi1 = poisson_lift(src.G2)
        w1c = phi1.d_theta().scale_radial(1.0 / r)
        w2c = -phi1.d_r()
        src.G4 = src.G1 - _apply_first_order(fb, w1c, w2c, zero)
        src.G5 = src.G3 - (
            w1c.scale_radial(fb.a3) + w2c.scale_radial(r * fb.a4)
        )

        dphi1_en = phi1.d_r().entrance()
        d0t = -p.r0 * ((boundary.U2_en.mean - p.U2_0) + dphi1_en.mean)
        src.d0t = d0t

        # theta-lift whose derivative is r0 (U2_en + phi1_r(r0,.) - U2_0) + d0t
        gth = (
            (boundary.U2_en - ThetaFunction.constant(p.U2_0, m)) * p.r0
            + dphi1_en * p.r0
            + ThetaFunction.constant(d0t, m)
        )
        slope, lam = gth.antiderivative()
        if abs(slope) > 1e-11 * max(1.0, abs(d0t)):
            raise InvalidParams("rotational psi lift failed to close up")
        lift_psi = lam.as_field(r)
        _, lift_Psi = boundary_lifts(flow, boundary, m)
        src.lift_psi, src.lift_Psi = lift_psi, lift_Psi

        const = d0t * (
            radial_field(fb.a2t, m, r) - fb.A12.scale_radial(1.0 / r)
        )
        src.G6 = src.G4 + const - apply_L1(fb, lift_psi, lift_Psi)
        src.G7 = (
            src.G5
            + radial_field(fb.a4 * d0t, m, r)
            - apply_L2(fb, lift_psi, lift_Psi)
        )
        src.G8 = (
            boundary.U1_en
            - ThetaFunction.constant(p.U1_0, m)
            - phi1.d_theta().entrance() * (1.0 / p.r0)
        )

        sol = solve_modes(assemble(fb, src, m))
        hatW1 = sol.psi_hat.d_r()
        hatW2 = (
            sol.psi_hat.d_theta() + gth.as_field(r) - radial_field(
                np.full_like(r, d0t), m, r
            )
        ).scale_radial(1.0 / r)
        W1n = hatW1 + w1c
        W2n = hatW2 + w2c
        W3n = sol.Psi_hat + lift_Psi
        if cfg.relaxation != 1.0:
            om = cfg.relaxation
            W1n = om * W1n + (1 - om) * W1
            W2n = om * W2n + (1 - om) * W2
            W3n = om * W3n + (1 - om) * W3

        inc = float(
            np.sqrt(
                h_norm(W1n - W1, 1).value ** 2
                + h_norm(W2n - W2, 1).value ** 2
                + h_norm(W3n - W3, 1).value ** 2
            )
        )
        if history and inc >= history[-1]:
            bad += 1
            if bad >= 5:
                raise NoContraction(
                    f"inner increments stalled at {inc:.3e}"
                )
        else:
            bad = 0
        history.append(inc)
        W1, W2, W3 = W1n, W2n, W3n
        if inc < cfg.tol_inner:
            break
    else:
        raise NoContraction(
            f"inner loop: no convergence in {cfg.max_inner} iterations"
        )
    size_v = float(
        np.sqrt(h_norm(W1, 3).value ** 2 + h_norm(W2, 3).value ** 2)
        + h_norm(W3, 4).value
    )
    if size_v > cfg.delta_v:
        raise NoContraction(
            f"velocity iterate size {size_v:.3e} left the set delta_v"
        )
    return (W1, W2, W3), history, fb


def outer_solve(flow, boundary, cfg=None, m=8, certificate=None,
                N_init=None):
    """Alternate the inner velocity solve and the transport update of N."""
    cfg = cfg or RotationalConfig()
    base = linear_coeffs(flow)
    cert = certificate or multiplier.certify(flow, base)
    if not cert.certified:
        raise InvalidParams("multiplier certificate not certified; shrink r1")
    if boundary.K_en is None or boundary.S_en is None:
        raise InvalidParams("rotational runs need K_en and S_en")
    r = flow.grid
    zero = AnnulusField.zeros(m, r)
    N1, N2 = N_init if N_init is not None else (zero, zero)
    W = None
    outer_hist = []
    inner_hists = []
    sf = None
    for it in range(cfg.max_outer):
        W, hist, fb = inner_solve(
            flow, (N1, N2), boundary, cfg, m=m, W_init=W, base=base
        )
        inner_hists.append(hist)
        N1n, N2n, sf = transport_update(flow, W, (N1, N2), boundary, m=m)
        inc = float(
            np.hypot(h_norm(N1n - N1, 1).value, h_norm(N2n - N2, 1).value)
        )
        outer_hist.append(inc)
        N1, N2 = N1n, N2n
        size_e = float(np.hypot(h_norm(N1, 4).value, h_norm(N2, 4).value))
        if size_e > cfg.delta_e:
            raise NoContraction(f"N iterate size {size_e:.3e} left delta_e")
        if inc < cfg.tol_outer:
            break
    else:
        raise NoContraction(
            f"outer loop: no convergence in {cfg.max_outer} iterations"
        )

    sigma_p = boundary.omega1(flow) + boundary.omega2(flow)
    state = RotationalState(
        W1=W[0],
        W2=W[1],
        W3=W[2],
        N1=N1,
        N2=N2,
        stream=sf,
        deltas=(cfg.delta_v, cfg.delta_e),
        sigma_p=sigma_p,
    )
    contraction = [
        outer_hist[i + 1] / outer_hist[i]
        for i in range(len(outer_hist) - 1)
        if outer_hist[i] > 0.0
    ]
    state.report = {
        "outer_iterations": len(outer_hist),
        "outer_history": outer_hist,
        "inner_histories": inner_hists,
        "outer_contraction": contraction,
        "sigma_p": sigma_p,
        "omega2": boundary.omega2(flow),
        "W_h1": float(
            np.sqrt(sum(h_norm(f, 1).value ** 2 for f in (W[0], W[1], W[2])))
        ),
        "N_h1": float(np.hypot(h_norm(N1, 1).value, h_norm(N2, 1).value)),
    }
    state.report.update(residuals(flow, state, boundary))
    return state


def residuals(flow, state, boundary):
    """Residuals of the full rotational system at the converged state."""
    p = flow.params
    g = p.gamma
    m = state.W1.n_modes
    r = flow.grid
    U1 = state.W1 + radial_field(flow.U1_bar, m, r)
    U2 = state.W2 + radial_field(flow.U2_bar, m, r)
    Phi = state.W3 + radial_field(flow.Phi_bar, m, r)
    K = state.N1.shift(flow.K0)
    S = state.N2.shift(p.S0)
    u1, u2, phi = U1.values(), U2.values(), Phi.values()
    rho_v, c2v = density_from_bernoulli(
        flow.K0 + state.N1.values(), p.S0 + state.N2.values(), u1, u2, phi, g
    )
    rho = AnnulusField.from_values(rho_v, r, m)

    flux_r = rho * U1 - radial_field(flow.rho_bar * flow.U1_bar, m, r)
    continuity = flux_r.scale_radial(r).d_r() + (rho * U2).d_theta()

    # vorticity relation: U2/r (dth U1 - dr(r U2)) = e^S H^{g-1} S_r/(g-1) - K_r
    lhs = (U1.d_theta() - U2.scale_radial(r).d_r()) * U2.scale_radial(1.0 / r)
    eSH = AnnulusField.from_values(np.exp(S.values()) * rho_v ** (g - 1.0), r, m)
    rhs = eSH * S.d_r() * (1.0 / (g - 1.0)) - K.d_r()
    vorticity = lhs - rhs

    drho = rho - radial_field(flow.rho_bar, m, r)
    poisson = (
        state.W3.d_r(2)
        + state.W3.d_r().scale_radial(1.0 / r)
        + state.W3.d_theta(2).scale_radial(1.0 / r**2)
        - drho
        + boundary.b_minus_b0(flow, m, r)
    )

    transport_K = U1 * K.d_r() + (U2 * K.d_theta()).scale_radial(1.0 / r)
    transport_S = U1 * S.d_r() + (U2 * S.d_theta()).scale_radial(1.0 / r)
    return {
        "continuity_max": continuity.max_abs(),
        "vorticity_max": vorticity.max_abs(),
        "poisson_max": poisson.max_abs(),
        "transport_K_max": transport_K.max_abs(),
        "transport_S_max": transport_S.max_abs(),
        "supersonic_margin": float(np.min(u1**2 + u2**2 - c2v)),
        "U1_min": float(np.min(u1)),
    }


def conservation_audit(flow, state, n_seeds=8, rtol=1e-11):
    """Drift of K and S along re-integrated streamlines of the final field.

    Integrates d theta/dr = U2/(r U1) from entrance seeds and samples the
    transported fields along each trajectory; returns the worst drift.
    """
    m = state.W1.n_modes
    r = flow.grid
    U1 = state.W1 + radial_field(flow.U1_bar, m, r)
    U2 = state.W2 + radial_field(flow.U2_bar, m, r)

    def rhs(s, th):
        return U2.at(s, th) / (s * U1.at(s, th))

    drift = 0.0
    r_samp = np.linspace(r[0], r[-1], 17)
    for th0 in theta_grid(n_seeds):
        ivp = solve_ivp(
            rhs,
            (r[0], r[-1]),
            [th0],
            rtol=rtol,
            atol=1e-13,
            dense_output=True,
            method="RK45",
        )
        th_path = ivp.sol(r_samp)[0]
        for f in (state.N1, state.N2):
            vals = f.at(r_samp, th_path)
            drift = max(drift, float(np.max(vals) - np.min(vals)))
    return drift
