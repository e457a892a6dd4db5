"""Axisymmetric spiral flows: transport + coupled elliptic solve + outer map.

One outer sweep at a frozen iterate T^ = (T1..T6):

  1. Transport.  (r U2, K, S) are conserved along the trajectories
     d lambda/ds = T3^/(T1^ + U1_bar); entrance data composed with the foot
     map gives (T2, T4, T5) (T4 is the entropy, T5 the Bernoulli
     perturbation, per the perturbation variable definitions).

  2. Elliptic solve.  The deformation-curl-Poisson subsystem for (T1, T3, T6)
     is homogenized in three steps: a flat-Laplacian lift psi1 absorbs the
     curl source Y3, a potential psi absorbs the curl-free remainder, and an
     affine lift phi absorbs the potential boundary data.  The resulting
     coupled system for (psi, Psi) has the weak form

        a(psi,eta1) + b(Psi,eta1)  = F1(eta1),
        c(Psi,eta2) - b(psi_r slot transposed) = F2(eta2),

     whose d3 cross terms cancel identically at (eta1,eta2) = (psi,Psi): the
     assembled block matrix is [[A, B], [-B^T, C]] with A, C symmetric
     positive definite.  The reduced Schur system (A + B C^-1 B^T) is solved
     by conjugate gradients; the symmetric part's smallest generalized
     eigenvalue is the reported coercivity constant.

Wall handling uses even/odd reflection: fields with vanishing odd z-derivative
at z = +-1 are differentiated through even extension and T3-like fields
through odd extension, so the wall compatibility conditions hold at rounding
level by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import LinearOperator, cg, eigsh, splu

from .errors import (
    CavitationError,
    CoercivityLost,
    NoContraction,
    TrajectoryExit,
)
from .fields import RectField

__all__ = [
    "AxiConfig",
    "AxiFlowState",
    "Trajectory",
    "conservation_audit",
    "elliptic_core",
    "elliptic_solve",
    "outer_iterate",
    "residuals",
    "transport",
    "wall_compatibility",
]

WALL_OVERSHOOT = 1e-8
CG_RTOL = 1e-12


@dataclass
class AxiConfig:
    delta: float = 10.0  # iteration-set radius in the discrete C^1 proxy
    max_iters: int = 40
    tol: float = 1e-9
    relaxation: float = 1.0


@dataclass
class AxiFlowState:
    T1: RectField
    T2: RectField
    T3: RectField
    T4: RectField
    T5: RectField
    T6: RectField
    delta: float
    sigma_v: float
    report: dict = field(default_factory=dict)

    def fields(self):
        return (self.T1, self.T2, self.T3, self.T4, self.T5, self.T6)


@dataclass
class Trajectory:
    seed: tuple
    s: np.ndarray
    path: np.ndarray
    foot: float


def _c1_norm(f):
    """Discrete C^1 proxy: max of values and of one-sided differences."""
    v = f.values
    hr = float(f.r[1] - f.r[0])
    hz = float(f.z[1] - f.z[0])
    return max(
        float(np.max(np.abs(v))),
        float(np.max(np.abs(np.diff(v, axis=0)))) / hr,
        float(np.max(np.abs(np.diff(v, axis=1)))) / hz,
    )


def _axi_density(flow, K, S, U1, U2, U3, Phi):
    g = flow.params.gamma
    bracket = K + Phi - 0.5 * (U1**2 + U2**2 + U3**2)
    if np.min(bracket) <= 0.0:
        raise CavitationError(
            f"axisymmetric state cavitates (min bracket {np.min(bracket):.6g})"
        )
    rho = ((g - 1.0) / (g * np.exp(S)) * bracket) ** (1.0 / (g - 1.0))
    return rho, (g - 1.0) * bracket


def transport(flow, T1_hat, T3_hat, boundary, z):
    """Integrate the trajectory feet and compose the entrance data.

    Returns (T2, T4, T5) RectFields.  Raises TrajectoryExit if a trajectory
    leaves |z| < 1 beyond rounding (the frozen iterate then violates the wall
    condition T3 = 0).
    """
    r = flow.grid
    ratio = T3_hat.values / (T1_hat.values + flow.U1_bar[:, None])
    spline = RectBivariateSpline(r, z, ratio, kx=3, ky=3)

    feet = np.empty((len(r), len(z)))
    feet[0] = z
    exceeded = [0.0]

    def rhs(s, lam):
        lam_c = np.clip(lam, -1.0, 1.0)
        exceeded[0] = max(exceeded[0], float(np.max(np.abs(lam))) - 1.0)
        return spline(s, lam_c, grid=False)

    for i in range(1, len(r)):
        ivp = solve_ivp(
            rhs,
            (r[i], r[0]),
            z.copy(),
            method="RK45",
            rtol=1e-11,
            atol=1e-13,
        )
        if not ivp.success:
            raise TrajectoryExit(f"trajectory integration failed at r={r[i]:.6g}")
        feet[i] = ivp.y[:, -1]
    if exceeded[0] > WALL_OVERSHOOT:
        raise TrajectoryExit(
            f"trajectory left the slab by {exceeded[0]:.3e} (frozen T3 "
            "violates the wall condition)"
        )
    feet = np.clip(feet, -1.0, 1.0)

    p = flow.params
    T2 = RectField((p.r0 * boundary.U2_en(feet) - flow.J2) / r[:, None], r, z)
    T4 = RectField(boundary.S_en(feet) - p.S0, r, z)
    T5 = RectField(boundary.K_en(feet) - flow.K0, r, z)
    return T2, T4, T5


def _poisson_flat(flow, z, rhs_vals):
    """(d_rr + d_zz) psi1 = Y3, psi1_r(r0,.) = 0, psi1 = 0 on the other sides."""
    r = flow.grid
    nr, nz = len(r), len(z)
    hr = float(r[1] - r[0])
    hz = float(z[1] - z[0])
    n = nr * nz
    idx = lambda i, j: i * nz + j

    rows, cols, vals, rhs = [], [], [], np.zeros(n)
    for i in range(nr):
        for j in range(nz):
            I = idx(i, j)
            if i == nr - 1 or j == 0 or j == nz - 1:
                rows.append(I); cols.append(I); vals.append(1.0)
                continue
            rhs[I] = rhs_vals[i, j]
            rows.append(I); cols.append(I); vals.append(-2.0 / hr**2 - 2.0 / hz**2)
            if i == 0:
                # Neumann ghost: psi(-1,j) = psi(1,j)
                rows.append(I); cols.append(idx(1, j)); vals.append(2.0 / hr**2)
            else:
                rows.append(I); cols.append(idx(i - 1, j)); vals.append(1.0 / hr**2)
                rows.append(I); cols.append(idx(i + 1, j)); vals.append(1.0 / hr**2)
            rows.append(I); cols.append(idx(i, j - 1)); vals.append(1.0 / hz**2)
            rows.append(I); cols.append(idx(i, j + 1)); vals.append(1.0 / hz**2)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    sol = splu(A).solve(rhs)
    return RectField(sol.reshape(nr, nz), r, z)


def _assemble_blocks(flow, z, d1, d2, d3, d4):
    """Half-cell quadrature assembly of the weak-form blocks on the full grid.

    Returns (A, B, C, quad) where quad carries the cell weights reused by the
    right-side functionals; the d3 block satisfies the transposed-coupling
    identity exactly by construction.
    """
    r = flow.grid
    nr, nz = len(r), len(z)
    hr = float(r[1] - r[0])
    hz = float(z[1] - z[0])
    n = nr * nz
    idx = np.arange(n).reshape(nr, nz)

    wz = np.ones(nz); wz[0] = wz[-1] = 0.5
    wr = np.ones(nr); wr[0] = wr[-1] = 0.5

    rd1 = r * d1
    rd2 = r * d2
    rd3 = r * d3
    rd4 = r * d4

    rows, cols, vals = [], [], []
    browz, bcolz, bvalz = [], [], []
    crows, ccols, cvals = [], [], []

    def add(buf, i, j, v):
        buf[0].append(i); buf[1].append(j); buf[2].append(v)

    Abuf = (rows, cols, vals)
    Bbuf = (browz, bcolz, bvalz)
    Cbuf = (crows, ccols, cvals)

    # r-direction half cells: d/dr terms of A, C and the d3 coupling
    for i in range(nr - 1):
        a_mid1 = 0.5 * (rd1[i] + rd1[i + 1])
        a_mid3 = 0.5 * (rd3[i] + rd3[i + 1])
        r_mid = 0.5 * (r[i] + r[i + 1])
        for j in range(nz):
            w = hz * wz[j] / hr
            I0, I1 = idx[i, j], idx[i + 1, j]
            for (Ia, sa) in ((I0, -1.0), (I1, 1.0)):
                for (Ib, sb) in ((I0, -1.0), (I1, 1.0)):
                    add(Abuf, Ia, Ib, a_mid1 * w * sa * sb)
                    add(Cbuf, Ia, Ib, r_mid * w * sa * sb)
            # b(Psi, eta1) = int r d3 Psi deta1/dr  (Psi averaged on the cell)
            for (Ia, sa) in ((I0, -1.0), (I1, 1.0)):
                for Ib in (I0, I1):
                    add(Bbuf, Ia, Ib, a_mid3 * hz * wz[j] * sa * 0.5)

    # z-direction half cells
    for j in range(nz - 1):
        for i in range(nr):
            a_mid2 = rd2[i]
            w = hr * wr[i] / hz
            I0, I1 = idx[i, j], idx[i, j + 1]
            for (Ia, sa) in ((I0, -1.0), (I1, 1.0)):
                for (Ib, sb) in ((I0, -1.0), (I1, 1.0)):
                    add(Abuf, Ia, Ib, a_mid2 * w * sa * sb)
                    add(Cbuf, Ia, Ib, r[i] * w * sa * sb)

    # lumped mass rd4 Psi eta2
    for i in range(nr):
        for j in range(nz):
            add(Cbuf, idx[i, j], idx[i, j], rd4[i] * hr * hz * wr[i] * wz[j])

    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    B = sp.csr_matrix((bvalz, (browz, bcolz)), shape=(n, n))
    C = sp.csr_matrix((cvals, (crows, ccols)), shape=(n, n))
    return A, B, C, {"wr": wr, "wz": wz, "hr": hr, "hz": hz, "idx": idx}


def _rhs_functionals(flow, z, Y5t, Y6t, Y7t, g_neumann, d1, quad):
    """Load vectors of the weak form (interior + boundary terms)."""
    r = flow.grid
    nr, nz = len(r), len(z)
    hr, hz = quad["hr"], quad["hz"]
    wr, wz = quad["wr"], quad["wz"]
    f1 = np.zeros(nr * nz)
    f2 = np.zeros(nr * nz)
    idx = quad["idx"]

    # int Y5 deta1/dr  (r half cells)
    for i in range(nr - 1):
        y_mid = 0.5 * (Y5t[i] + Y5t[i + 1])
        for j in range(nz):
            w = hz * wz[j]
            f1[idx[i, j]] -= y_mid[j] * w
            f1[idx[i + 1, j]] += y_mid[j] * w
    # int Y6 deta1/dz  (z half cells)
    for j in range(nz - 1):
        y_mid = 0.5 * (Y6t[:, j] + Y6t[:, j + 1])
        for i in range(nr):
            w = hr * wr[i]
            f1[idx[i, j]] -= y_mid[i] * w
            f1[idx[i, j + 1]] += y_mid[i] * w
    # boundary terms at r = r1 and the walls
    for j in range(nz):
        w = hz * wz[j]
        f1[idx[nr - 1, j]] += (r[-1] * d1[-1] * g_neumann[j] - Y5t[-1, j]) * w
    for i in range(nr):
        w = hr * wr[i]
        f1[idx[i, nz - 1]] -= Y6t[i, nz - 1] * w
        f1[idx[i, 0]] += Y6t[i, 0] * w
    # -int Y7 eta2 (lumped)
    f2 -= (Y7t * (wr[:, None] * wz[None, :]) * hr * hz).ravel()
    return f1, f2


def elliptic_core(flow, z, Y5t, Y6t, Y7t, g_neumann, coercivity=False):
    """Solve the homogenized coupled potential problem for (psi, Psi).

    Essential data: psi = 0 at the entrance, Psi = 0 at both radii; natural:
    psi_r(r1,.) = g_neumann, wall fluxes zero.  Returns (psi, Psi, diag).
    """
    r = flow.grid
    nr, nz = len(r), len(z)
    d1 = flow.rho_bar * (1.0 - flow.M1sq)
    d2 = flow.rho_bar
    d3 = flow.rho_bar * flow.U1_bar / flow.c2_bar
    d4 = flow.rho_bar / flow.c2_bar
    if np.min(d1) <= 0.0:
        raise CoercivityLost("d1 = rho (1 - M1^2) lost positivity")

    A, B, C, quad = _assemble_blocks(flow, z, d1, d2, d3, d4)
    f1, f2 = _rhs_functionals(flow, z, Y5t, Y6t, Y7t, g_neumann, d1, quad)

    idx = quad["idx"]
    free_psi = np.setdiff1d(np.arange(nr * nz), idx[0, :])
    free_Psi = np.setdiff1d(np.arange(nr * nz), np.r_[idx[0, :], idx[-1, :]])

    Ar = A[np.ix_(free_psi, free_psi)].tocsc()
    Br = B[np.ix_(free_psi, free_Psi)].tocsc()
    Cr = C[np.ix_(free_Psi, free_Psi)].tocsc()
    f1r = f1[free_psi]
    f2r = f2[free_Psi]

    lu_C = splu(Cr)
    diag = {}
    if coercivity:
        diag["coercivity"] = _coercivity_constant(flow, z, Ar, Cr, free_psi, free_Psi)
        if diag["coercivity"] <= 0.0:
            raise CoercivityLost(
                f"symmetric part eigenvalue {diag['coercivity']:.3e} <= 0"
            )

    def schur(x):
        return Ar @ x + Br @ lu_C.solve(Br.T @ x)

    S = LinearOperator((len(free_psi),) * 2, matvec=schur)
    rhs = f1r - Br @ lu_C.solve(f2r)
    dprec = Ar.diagonal()
    M = LinearOperator(
        (len(free_psi),) * 2, matvec=lambda x: x / dprec
    )
    x, info = cg(S, rhs, rtol=CG_RTOL, atol=0.0, M=M, maxiter=20000)
    if info != 0:
        raise CoercivityLost(f"CG failed to converge (info={info})")
    y = lu_C.solve(f2r + Br.T @ x)

    psi = np.zeros(nr * nz); psi[free_psi] = x
    Psi = np.zeros(nr * nz); Psi[free_Psi] = y
    diag["cg_residual"] = float(np.linalg.norm(schur(x) - rhs))
    diag["skew_identity"] = _skew_probe(Ar, Br, Cr, x, y)
    return (
        RectField(psi.reshape(nr, nz), r, z),
        RectField(Psi.reshape(nr, nz), r, z),
        diag,
    )


def _skew_probe(Ar, Br, Cr, x, y):
    """|quadratic form of the full matrix - its d3-free part| at the solution:
    zero to rounding because the coupling blocks are exact transposes."""
    v = np.concatenate([x, y])
    full = x @ (Ar @ x) + x @ (Br @ y) - y @ (Br.T @ x) + y @ (Cr @ y)
    sym = x @ (Ar @ x) + y @ (Cr @ y)
    scale = max(1.0, abs(sym))
    return float(abs(full - sym) / scale)


def _coercivity_constant(flow, z, Ar, Cr, free_psi, free_Psi):
    """Smallest generalized eigenvalue of blkdiag(A, C) against the plain
    r-weighted H1 Gram matrix (mesh-independent coercivity estimate)."""
    ones = np.ones_like(flow.grid)
    GA, _, GC, _ = _assemble_blocks(flow, z, ones, ones, 0.0 * ones, ones)
    GAr = GA[np.ix_(free_psi, free_psi)].tocsc()
    GCr = GC[np.ix_(free_Psi, free_Psi)].tocsc()
    Msym = sp.block_diag([Ar, Cr]).tocsc()
    G = sp.block_diag([GAr, GCr]).tocsc()
    val = eigsh(Msym, k=1, M=G, sigma=0, which="LM", return_eigenvectors=False)
    return float(val[0])


def elliptic_solve(flow, z, T_hat, transported, boundary, coercivity=False):
    """Build the Y sources from the frozen iterate, homogenize, solve, recover.

    T_hat = (T1^, T3^, T6^), transported = (T2, T4, T5).  Returns
    (T1, T3, T6, diag).
    """
    r = flow.grid
    rc = r[:, None]
    p = flow.params
    g = p.gamma
    T1h, T3h, T6h = T_hat
    T2, T4, T5 = transported

    U1h = T1h.values + flow.U1_bar[:, None]
    U2 = T2.values + flow.U2_bar[:, None]
    Phih = T6h.values + flow.Phi_bar[:, None]
    K = T5.values + flow.K0
    S = T4.values + p.S0
    rho_h, _ = _axi_density(flow, K, S, U1h, U2, T3h.values, Phih)

    d1 = flow.rho_bar * (1.0 - flow.M1sq)
    d3 = flow.rho_bar * flow.U1_bar / flow.c2_bar
    d4 = flow.rho_bar / flow.c2_bar

    bmb = (boundary.b.values if isinstance(boundary.b, RectField)
           else float(boundary.b)) - p.b0

    # conservation-form sources (zero at zero perturbation by construction)
    Y1 = (
        rc * d1[:, None] * T1h.values
        + rc * d3[:, None] * T6h.values
        + rc * (flow.rho_bar * flow.U1_bar)[:, None]
        - rc * rho_h * U1h
    )
    Y2 = rc * (flow.rho_bar[:, None] - rho_h) * T3h.values
    eSH = np.exp(S) * rho_h ** (g - 1.0)
    Y3 = (
        U2 * T2.d_z(parity="even").values
        + eSH / (g - 1.0) * T4.d_z(parity="even").values
        - T5.d_z(parity="even").values
    ) / U1h
    Y4 = (
        (rho_h - flow.rho_bar[:, None])
        - bmb
        + d3[:, None] * T1h.values
        - d4[:, None] * T6h.values
    )

    psi1 = _poisson_flat(flow, z, Y3)
    dz_psi1 = psi1.d_z(parity="odd").values
    dr_psi1 = psi1.d_r().values

    Y5 = Y1 + rc * d1[:, None] * dz_psi1
    Y6 = Y2 - rc * flow.rho_bar[:, None] * dr_psi1
    Y7 = rc * Y4 + rc * d3[:, None] * dz_psi1

    # potential boundary lift phi and the z-lift derivative U3_en
    z_row = z[None, :]
    r1, r0 = r[-1], r[0]
    phi_en = boundary.Phi_en(z)[None, :]
    phi_ex = (boundary.Phi_ex(z) - flow.Phi_bar[-1])[None, :]
    lam = (r1 - rc) / (r1 - r0)
    phi = lam * phi_en + (1.0 - lam) * phi_ex
    dr_phi = (phi_ex - phi_en) / (r1 - r0) * np.ones_like(rc)
    dzz_phi = lam * boundary.Phi_en.d2(z)[None, :] + (1 - lam) * boundary.Phi_ex.d2(
        z
    )[None, :]
    u3_en = boundary.U3_en(z)[None, :]

    Y5t = Y5 - rc * d3[:, None] * phi
    Y6t = Y6 - rc * flow.rho_bar[:, None] * u3_en
    # d_r(r d_r phi) = d_r phi  since d_r phi is r-independent
    Y7t = Y7 + rc * d4[:, None] * phi - dr_phi - rc * dzz_phi
    g_neumann = boundary.U1_ex(z) - flow.U1_bar[-1]

    psi, Psi, diag = elliptic_core(
        flow, z, Y5t, Y6t, Y7t, g_neumann, coercivity=coercivity
    )

    T1 = RectField(psi.d_r().values - dz_psi1, r, z)
    T3 = RectField(
        psi.d_z(parity="even").values + u3_en * np.ones_like(rc) + dr_psi1, r, z
    )
    T6 = RectField(Psi.values + phi, r, z)
    return T1, T3, T6, diag


def outer_iterate(flow, boundary, z, cfg=None, coercivity_every=False):
    """Alternate transport and elliptic solves until the C^1 increment drops."""
    cfg = cfg or AxiConfig()
    boundary.check_compatibility()
    r = flow.grid
    zero = RectField.zeros(r, z)
    T1, T2, T3, T4, T5, T6 = (zero.copy() for _ in range(6))
    history = []
    diag = {}
    bad = 0
    for it in range(cfg.max_iters):
        T2n, T4n, T5n = transport(flow, T1, T3, boundary, z)
        T1n, T3n, T6n, diag = elliptic_solve(
            flow,
            z,
            (T1, T3, T6),
            (T2n, T4n, T5n),
            boundary,
            coercivity=coercivity_every or it == 0,
        )
        if cfg.relaxation != 1.0:
            w = cfg.relaxation
            mix = lambda new, old: RectField(
                w * new.values + (1 - w) * old.values, r, z
            )
            T1n, T2n, T3n = mix(T1n, T1), mix(T2n, T2), mix(T3n, T3)
            T4n, T5n, T6n = mix(T4n, T4), mix(T5n, T5), mix(T6n, T6)
        inc = max(
            _c1_norm(a - b)
            for a, b in zip(
                (T1n, T2n, T3n, T4n, T5n, T6n), (T1, T2, T3, T4, T5, T6)
            )
        )
        size = sum(
            _c1_norm(f) for f in (T1n, T2n, T3n, T4n, T5n, T6n)
        )
        if size > cfg.delta:
            raise NoContraction(
                f"iterate size {size:.3e} left the set (delta={cfg.delta:.3e})"
            )
        if history and inc >= history[-1] and inc > cfg.tol:
            bad += 1
            if bad >= 5:
                raise NoContraction(f"outer increments stalled at {inc:.3e}")
        else:
            bad = 0
        history.append(inc)
        T1, T2, T3, T4, T5, T6 = T1n, T2n, T3n, T4n, T5n, T6n
        if inc < cfg.tol:
            break
    else:
        raise NoContraction(
            f"axisymmetric outer loop: no convergence in {cfg.max_iters} sweeps"
        )

    sigma_v = boundary.sigma_v(flow)
    state = AxiFlowState(
        T1=T1, T2=T2, T3=T3, T4=T4, T5=T5, T6=T6,
        delta=cfg.delta, sigma_v=sigma_v,
    )
    contraction = [
        history[i + 1] / history[i]
        for i in range(len(history) - 1)
        if history[i] > 0.0
    ]
    state.report = {
        "iterations": len(history),
        "history": history,
        "contraction_factors": contraction,
        "sigma_v": sigma_v,
        "size_c1": sum(_c1_norm(f) for f in state.fields()),
        **{f"elliptic_{k}": v for k, v in diag.items()},
    }
    state.report.update(residuals(flow, state, boundary))
    state.report.update(wall_compatibility(flow, state))
    return state


def wall_compatibility(flow, state):
    """Machine-level wall conditions evaluated with parity-aware stencils."""
    sel = (slice(None), [0, -1])

    def walls(f):
        return float(np.max(np.abs(f[sel])))

    return {
        "wall_dz_U1": walls(state.T1.d_z(parity="even").values),
        "wall_dz_U2": walls(state.T2.d_z(parity="even").values),
        "wall_U3": walls(state.T3.values),
        "wall_dzz_U3": walls(state.T3.d_z(2, parity="odd").values),
        "wall_dz_K": walls(state.T5.d_z(parity="even").values),
        "wall_dz_S": walls(state.T4.d_z(parity="even").values),
        "wall_dz_Phi": walls(state.T6.d_z(parity="even").values),
    }


def residuals(flow, state, boundary):
    """Residuals of the full axisymmetric system at the converged state."""
    p = flow.params
    g = p.gamma
    r = flow.grid
    rc = r[:, None]
    z = state.T1.z
    U1 = state.T1.values + flow.U1_bar[:, None]
    U2 = state.T2.values + flow.U2_bar[:, None]
    U3 = state.T3.values
    K = state.T5.values + flow.K0
    S = state.T4.values + p.S0
    Phi = state.T6.values + flow.Phi_bar[:, None]
    rho, c2 = _axi_density(flow, K, S, U1, U2, U3, Phi)

    def dr(v):
        return RectField(v, r, z).d_r().values

    def dz(v, parity="even"):
        return RectField(v, r, z).d_z(parity=parity).values

    flux_pert = rc * (rho * U1 - (flow.rho_bar * flow.U1_bar)[:, None])
    continuity = dr(flux_pert) + dz(rc * rho * U3, parity="odd")

    eSH = np.exp(S) * rho ** (g - 1.0)
    vorticity = (
        U1 * (dr(U3) - dz(U1))
        - U2 * dz(U2)
        - eSH / (g - 1.0) * dz(S)
        + dz(K)
    )

    conv = lambda f, parity="even": U1 * dr(f) + U3 * dz(f, parity)
    t_ru2 = conv(rc * U2)
    t_S = conv(S)
    t_K = conv(K)

    bmb = (boundary.b.values if isinstance(boundary.b, RectField)
           else float(boundary.b)) - p.b0
    T6 = state.T6.values
    poisson = (
        dr(dr(T6))
        + dr(T6) / rc
        + RectField(T6, r, z).d_z(2, parity="even").values
        - (rho - flow.rho_bar[:, None])
        + bmb
    )
    return {
        "axi_continuity_max": float(np.max(np.abs(continuity))),
        "axi_vorticity_max": float(np.max(np.abs(vorticity))),
        "axi_transport_rU2_max": float(np.max(np.abs(t_ru2))),
        "axi_transport_S_max": float(np.max(np.abs(t_S))),
        "axi_transport_K_max": float(np.max(np.abs(t_K))),
        "axi_poisson_max": float(np.max(np.abs(poisson))),
        "axi_supersonic_margin": float(np.min(U1**2 + U2**2 + U3**2 - c2)),
        "axi_U1_min": float(np.min(U1)),
    }


def conservation_audit(flow, state, n_seeds=7, rtol=1e-11):
    """Drift of (r U2, K, S) along re-integrated trajectories of the final
    field; returns (max drift, list of Trajectory records)."""
    r = flow.grid
    z = state.T1.z
    ratio = state.T3.values / (state.T1.values + flow.U1_bar[:, None])
    vel = RectBivariateSpline(r, z, ratio, kx=3, ky=3)
    fields = {
        "rU2": RectBivariateSpline(
            r, z, r[:, None] * (state.T2.values + flow.U2_bar[:, None]), kx=3, ky=3
        ),
        "K": RectBivariateSpline(r, z, state.T5.values, kx=3, ky=3),
        "S": RectBivariateSpline(r, z, state.T4.values, kx=3, ky=3),
    }
    drift = 0.0
    trajectories = []
    seeds = np.linspace(-0.9, 0.9, n_seeds)
    s_samp = np.linspace(r[0], r[-1], 33)
    for z0 in seeds:
        ivp = solve_ivp(
            lambda s, lam: vel(s, np.clip(lam, -1, 1), grid=False),
            (r[0], r[-1]),
            [z0],
            rtol=rtol,
            atol=1e-13,
            dense_output=True,
        )
        path = ivp.sol(s_samp)[0]
        trajectories.append(
            Trajectory(seed=(float(r[0]), float(z0)), s=s_samp, path=path,
                       foot=float(z0))
        )
        for spl in fields.values():
            vals = spl(s_samp, np.clip(path, -1, 1), grid=False)
            drift = max(drift, float(np.max(vals) - np.min(vals)))
    return drift, trajectories
