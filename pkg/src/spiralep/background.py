"""Background supersonic spiral flow: radial ODE integration and admissibility.

With constant ion background b0 the cylindrically symmetric flow reduces to

    rho' = rho (U1^2 + U2^2 + r E) / (r (c^2 - U1^2)),
    (rE)' = r (rho - b0),

where U1 = J1/(r rho), U2 = J2/r and c^2 = gamma e^{S0} rho^{gamma-1} are
substituted algebraically (J1 = r0 rho0 U1_0, J2 = r0 U2_0).  The potential is
carried as a third state component (Phi' = E) so the Bernoulli sum

    (U1^2 + U2^2)/2 + gamma e^{S0} rho^{gamma-1}/(gamma-1) - Phi = K0

holds to the integrator order, not just to quadrature order.

Integration is classical fixed-step RK4 with an optional Richardson re-run at
half the step for an error estimate.  Admissibility (radially subsonic,
angularly supersonic, increasing density, positive field flux) is checked at
every accepted step; the first violation defines the failure radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AdmissibilityViolated, InvalidParams

__all__ = [
    "BackgroundFlow",
    "BackgroundParams",
    "admissible_outer_radius",
    "bernoulli_defect",
    "convergence_order",
    "integrate_background",
    "mach_profiles",
]

SONIC_GUARD = 1e-12


@dataclass(frozen=True)
class BackgroundParams:
    """Entrance data and constants of the background problem."""

    gamma: float
    r0: float
    b0: float
    rho0: float
    U1_0: float
    U2_0: float
    S0: float
    E0: float

    @property
    def J1(self):
        return self.r0 * self.rho0 * self.U1_0

    @property
    def J2(self):
        return self.r0 * self.U2_0

    @property
    def c0sq(self):
        return self.gamma * math.exp(self.S0) * self.rho0 ** (self.gamma - 1.0)

    @property
    def K0(self):
        return 0.5 * (self.U1_0**2 + self.U2_0**2) + self.c0sq / (self.gamma - 1.0)

    def validate(self):
        p = self
        checks = [
            (p.gamma >= 3.0, "gamma >= 3"),
            (p.r0 > 0.0, "r0 > 0"),
            (p.b0 > 0.0, "b0 > 0"),
            (p.rho0 > p.b0, "rho0 > b0"),
            (p.U1_0 > 0.0, "U1_0 > 0"),
            (p.U2_0 != 0.0, "U2_0 != 0"),
            # S0 = 0 admitted: nothing degenerates there and the reference
            # configuration uses it
            (p.S0 >= 0.0, "S0 >= 0"),
            (p.E0 > 0.0, "E0 > 0"),
            (p.U1_0**2 < p.c0sq, "U1_0^2 < c0^2"),
            (p.c0sq < p.U2_0**2, "c0^2 < U2_0^2"),
            (p.U2_0**2 < 2.0 * p.r0**2 * p.rho0, "U2_0^2 < 2 r0^2 rho0"),
        ]
        for ok, what in checks:
            if not ok:
                raise InvalidParams(f"background entrance data violates {what}")


@dataclass(frozen=True)
class BackgroundFlow:
    """Radial profiles of the background flow on a uniform grid."""

    params: BackgroundParams
    grid: np.ndarray
    rho_bar: np.ndarray
    E_bar: np.ndarray
    U1_bar: np.ndarray
    U2_bar: np.ndarray
    P_bar: np.ndarray
    Phi_bar: np.ndarray
    c2_bar: np.ndarray
    M1sq: np.ndarray
    M2sq: np.ndarray
    J1: float
    J2: float
    K0: float
    error_estimate: float

    @property
    def r0(self):
        return float(self.grid[0])

    @property
    def r1(self):
        return float(self.grid[-1])

    @property
    def h(self):
        return float(self.grid[1] - self.grid[0])

    def exp_S0(self):
        return math.exp(self.params.S0)


def _rhs(r, rho, rE, params):
    """Right sides of the reduced system plus the sonic-in-r margin."""
    U1 = params.J1 / (r * rho)
    U2 = params.J2 / r
    c2 = params.gamma * math.exp(params.S0) * rho ** (params.gamma - 1.0)
    margin = c2 - U1 * U1
    drho = rho * (U1 * U1 + U2 * U2 + rE) / (r * margin)
    drE = r * (rho - params.b0)
    dPhi = rE / r
    return drho, drE, dPhi, margin, c2


def _check_state(r, rho, rE, params, rho_prev):
    """Admissibility at one accepted node; returns a violation string or None."""
    U1 = params.J1 / (r * rho)
    U2 = params.J2 / r
    c2 = params.gamma * math.exp(params.S0) * rho ** (params.gamma - 1.0)
    if c2 - U1 * U1 < SONIC_GUARD * c2:
        return "sonic in r: c^2 - U1^2 below guard"
    if U1 * U1 >= c2:
        return "M1^2 >= 1"
    if U2 * U2 <= c2:
        return "M2^2 <= 1 (angular supersonicity lost)"
    if rE <= params.r0 * params.E0:
        return "r E <= r0 E0"
    if rho < rho_prev:
        return "density decreased"
    return None


def _march(params, r1, n_nodes):
    """Fixed-step RK4 over n_nodes nodes; raises on admissibility loss."""
    r0 = params.r0
    n_steps = n_nodes - 1
    h = (r1 - r0) / n_steps
    rho = [params.rho0]
    rE = [r0 * params.E0]
    Phi = [0.0]
    y = (params.rho0, r0 * params.E0, 0.0)
    for i in range(n_steps):
        r = r0 + i * h
        try:
            k1 = _rhs(r, y[0], y[1], params)
            k2 = _rhs(r + 0.5 * h, y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1], params)
            k3 = _rhs(r + 0.5 * h, y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1], params)
            k4 = _rhs(r + h, y[0] + h * k3[0], y[1] + h * k3[1], params)
        except (OverflowError, ValueError):
            raise AdmissibilityViolated(r, "state left the domain of the ODE")
        for k in (k1, k2, k3, k4):
            if k[3] < SONIC_GUARD * k[4]:
                raise AdmissibilityViolated(r, "sonic in r inside an RK stage")
        y = (
            y[0] + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
            y[2] + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        )
        r_next = r0 + (i + 1) * h
        bad = _check_state(r_next, y[0], y[1], params, rho[-1])
        if bad is not None:
            raise AdmissibilityViolated(r_next, bad)
        rho.append(y[0])
        rE.append(y[1])
        Phi.append(y[2])
    grid = r0 + h * np.arange(n_nodes)
    grid[-1] = r1
    return grid, np.array(rho), np.array(rE), np.array(Phi)


def integrate_background(params, r1, n_nodes, richardson=True):
    """Integrate the background system on [r0, r1] with n_nodes grid nodes.

    Raises InvalidParams if the entrance data violates its preconditions and
    AdmissibilityViolated (with the failure radius) if any invariant breaks
    before r1.
    """
    params.validate()
    if not r1 > params.r0:
        raise InvalidParams("need r1 > r0")
    if n_nodes < 16:
        raise InvalidParams("need n_nodes >= 16")

    grid, rho, rE, Phi = _march(params, r1, n_nodes)
    err = float("nan")
    if richardson:
        _, rho2, rE2, _ = _march(params, r1, 2 * n_nodes - 1)
        err = max(
            float(np.max(np.abs(rho2[::2] - rho))),
            float(np.max(np.abs(rE2[::2] - rE))),
        ) / (2.0**4 - 1.0)

    # profile fill: substituted, not integrated
    E = rE / grid
    U1 = params.J1 / (grid * rho)
    U2 = params.J2 / grid
    eS = math.exp(params.S0)
    c2 = params.gamma * eS * rho ** (params.gamma - 1.0)
    flow = BackgroundFlow(
        params=params,
        grid=grid,
        rho_bar=rho,
        E_bar=E,
        U1_bar=U1,
        U2_bar=U2,
        P_bar=eS * rho**params.gamma,
        Phi_bar=Phi,
        c2_bar=c2,
        M1sq=U1**2 / c2,
        M2sq=U2**2 / c2,
        J1=params.J1,
        J2=params.J2,
        K0=params.K0,
        error_estimate=err,
    )
    return flow


def bernoulli_defect(flow):
    """max over nodes of |K_bar(r) - K0|."""
    g = flow.params.gamma
    K = (
        0.5 * (flow.U1_bar**2 + flow.U2_bar**2)
        + flow.c2_bar / (g - 1.0)
        - flow.Phi_bar
    )
    return float(np.max(np.abs(K - flow.K0)))


def check_invariants(flow, tol=1e-9):
    """Return a list of (name, detail) for every violated flow invariant."""
    bad = []
    p = flow.params
    if not np.all(flow.M1sq < 1.0):
        bad.append(("M1sq < 1", f"max={np.max(flow.M1sq):.6g}"))
    if not np.all(flow.M1sq + flow.M2sq > 1.0):
        bad.append(("|M|^2 > 1", f"min={np.min(flow.M1sq + flow.M2sq):.6g}"))
    dln = np.diff(np.log(flow.rho_bar))
    if not np.all(dln >= -1e-14):
        bad.append(("ln rho nondecreasing", f"min step={np.min(dln):.3g}"))
    rE = flow.grid * flow.E_bar
    if not np.all(rE[1:] > p.r0 * p.E0):
        bad.append(("r E > r0 E0", f"min={np.min(rE[1:]):.6g}"))
    jm1 = np.max(np.abs(flow.grid * flow.rho_bar * flow.U1_bar - flow.J1))
    jm2 = np.max(np.abs(flow.grid * flow.U2_bar - flow.J2))
    if jm1 > 1e-13 * abs(flow.J1) or jm2 > 1e-13 * abs(flow.J2):
        bad.append(("mass/angular momentum substitution", f"{jm1:.3g},{jm2:.3g}"))
    d = bernoulli_defect(flow)
    if d > tol:
        bad.append(("Bernoulli defect", f"{d:.3g}"))
    return bad


def admissible_outer_radius(params, r_max, tol, n_nodes=257):
    """Largest r1 <= r_max (to tol, by bisection) with admissible integration."""
    params.validate()
    if r_max <= params.r0:
        return params.r0

    def ok(r1):
        try:
            integrate_background(params, r1, n_nodes, richardson=False)
            return True
        except AdmissibilityViolated:
            return False

    if ok(r_max):
        return r_max
    lo, hi = params.r0, r_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= params.r0 or ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def mach_profiles(flow, verify=True):
    """Per-node Mach squares; optionally check their ODE identities residually.

    The finite-difference derivative of M1^2 (and M2^2) must match the closed
    right side to second order in the grid spacing.
    """
    p = flow.params
    g = p.gamma
    r = flow.grid
    rEc2 = r * flow.E_bar / flow.c2_bar
    m1, m2 = flow.M1sq, flow.M2sq
    rhs1 = -m1 / (r * (1.0 - m1)) * ((g - 1) * m1 + (g + 1) * m2 + (g + 1) * rEc2 + 2.0)
    rhs2 = -m2 / (r * (1.0 - m1)) * ((g - 3) * m1 + (g - 1) * m2 + (g - 1) * rEc2 + 2.0)
    if verify:
        h = flow.h
        scale = max(1.0, float(np.max(np.abs(rhs1))), float(np.max(np.abs(rhs2))))
        tol = 1e3 * h * h * scale
        res1 = float(np.max(np.abs(np.gradient(m1, r, edge_order=2) - rhs1)))
        res2 = float(np.max(np.abs(np.gradient(m2, r, edge_order=2) - rhs2)))
        if res1 > tol or res2 > tol:
            raise AdmissibilityViolated(
                flow.r0, f"Mach ODE identity residual too large: {res1:.3g}, {res2:.3g}"
            )
    return m1.copy(), m2.copy()


def convergence_order(params, r1, n_nodes):
    """Observed RK4 order from solutions at h, h/2, h/4 on shared nodes."""
    f1 = integrate_background(params, r1, n_nodes, richardson=False)
    f2 = integrate_background(params, r1, 2 * n_nodes - 1, richardson=False)
    f4 = integrate_background(params, r1, 4 * n_nodes - 3, richardson=False)
    d12 = max(
        np.max(np.abs(f2.rho_bar[::2] - f1.rho_bar)),
        np.max(np.abs(f2.E_bar[::2] - f1.E_bar)),
    )
    d24 = max(
        np.max(np.abs(f4.rho_bar[::2] - f2.rho_bar)),
        np.max(np.abs(f4.E_bar[::2] - f2.E_bar)),
    )
    return math.log2(d12 / d24)
