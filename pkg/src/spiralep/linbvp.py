"""Fourier-Galerkin solver for the linearized hyperbolic-elliptic problem.

Projecting the pair

    L1(psi, Psi) = F_a,   L2(psi, Psi) = F_b,

onto the trigonometric basis turns the 2-D linear problem into a mode-coupled
second-order radial system for the coefficient vectors U_k (psi modes) and
V_k (Psi modes), k = 0..2m, with coupling matrices

    S1[k,j] = int (2 A12 beta_j' + a1 beta_j) beta_k,
    S2[k,j] = int (-A22 beta_j'' + a2 beta_j') beta_k,
    S3[k,j] = int b1 beta_j beta_k,      S4[k,j] = int b2 beta_j' beta_k,
    S5[k,j] = int beta_j'' beta_k,       S6[k,j] = int a3 beta_j beta_k,
    S7[k,j] = int a4 beta_j' beta_k,

computed by theta-quadrature of coefficient-times-basis products at each
radial node.  (S2 carries the minus sign of the -A22 psi_tt term so the mode
system is the literal projection of L1; theta-independent coefficients make
every matrix pair-banded and S5 = -k^2 I.)

Written as a first-order system Y' = S(r) Y + F with Y = (U, U', V, V'), the
split boundary data (U, U', V' at the entrance, V at the exit) is imposed on
the implicit-midpoint discretization, giving one global block-banded linear
solve per call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coeffs import apply_L1, apply_L2
from .errors import SingularSystem
from .fields import AnnulusField, basis_values, default_n_theta, h_norm

__all__ = ["LinearSolution", "ModeSystem", "assemble", "solve_modes"]

PIVOT_RTOL = 1e-10


@dataclass
class ModeSystem:
    m: int
    grid: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    S4: np.ndarray
    S5: np.ndarray
    S6: np.ndarray
    S7: np.ndarray
    b3: np.ndarray
    b4: np.ndarray
    rhs3: np.ndarray  # (n_r, K) projections of the first right side
    rhs4: np.ndarray
    bc_dpsi: np.ndarray  # (K,) entrance data for U'
    bundle: object
    sources: object
    aliasing_risk: bool = False

    @property
    def K(self):
        return 2 * self.m + 1

    def state_matrix(self, i):
        """S(r_i) of the first-order form, shape (4K, 4K)."""
        K = self.K
        r = self.grid[i]
        Z = np.zeros((K, K))
        eye = np.eye(K)
        row1 = np.hstack([Z, eye, Z, Z])
        row2 = np.hstack(
            [-self.S2[i], -self.S1[i], -(self.S4[i] + self.b3[i] * eye), -self.S3[i]]
        )
        row3 = np.hstack([Z, Z, Z, eye])
        row4 = np.hstack(
            [
                -self.S7[i],
                -self.S6[i],
                self.b4[i] * eye - self.S5 / r**2,
                -(1.0 / r) * eye,
            ]
        )
        return np.vstack([row1, row2, row3, row4])

    def forcing(self, i):
        K = self.K
        f = np.zeros(4 * K)
        f[K : 2 * K] = self.rhs3[i]
        f[3 * K :] = self.rhs4[i]
        return f


def _project_coeffs(field_or_profile, grid, m, n_q):
    """Pointwise values (n_r, n_q) of a radial profile or AnnulusField."""
    if isinstance(field_or_profile, AnnulusField):
        return field_or_profile.values(n_q)
    return np.asarray(field_or_profile)[:, None] * np.ones((1, n_q))


def assemble(bundle, src, m):
    """Build the mode system for the bundle's problem kind.

    Irrotational bundles consume (F3, F4, F5); rotational ones (G6, G7, G8).
    """
    flow = bundle.flow
    grid = flow.grid
    K = 2 * m + 1
    n_q = default_n_theta(m)

    if bundle.kind == "irrotational":
        f_a, f_b, f_c = src.F3, src.F4, src.F5
    else:
        f_a, f_b, f_c = src.G6, src.G7, src.G8

    A22 = bundle.A22 if bundle.A22 is not None else bundle.A22_bar
    A12 = bundle.A12 if bundle.A12 is not None else bundle.A12_bar
    a2th = bundle.a2_theta(m)
    n_q = max(
        n_q,
        A22.n_theta if isinstance(A22, AnnulusField) else 0,
        a2th.n_theta,
    )

    B = basis_values(m, n_q)
    B1 = basis_values(m, n_q, 1)
    B2 = basis_values(m, n_q, 2)
    w = 2.0 * np.pi / n_q

    a22v = _project_coeffs(A22, grid, m, n_q)
    a12v = _project_coeffs(A12, grid, m, n_q)
    a2v = a2th.values(n_q)

    def quad(fvals, Bj, Bk):
        return w * np.einsum("rq,qj,qk->rkj", fvals, Bj, Bk, optimize=True)

    ones = np.ones((len(grid), n_q))
    S1 = 2.0 * quad(a12v, B1, B) + quad(bundle.a1[:, None] * ones, B, B)
    S2 = -quad(a22v, B2, B) + quad(a2v, B1, B)
    S3 = quad(bundle.b1[:, None] * ones, B, B)
    S4 = quad(bundle.b2[:, None] * ones, B1, B)
    S5 = w * np.einsum("qj,qk->kj", B2, B)
    S6 = quad(bundle.a3[:, None] * ones, B, B)
    S7 = quad(bundle.a4[:, None] * ones, B1, B)

    def proj(f):
        c = np.zeros((len(grid), K))
        take = min(K, f.coeffs.shape[0])
        c[:, :take] = f.coeffs[:take].T
        return c

    rhs3 = proj(f_a)
    rhs4 = proj(f_b)
    bc = np.zeros(K)
    take = min(K, len(f_c.coeffs))
    bc[:take] = f_c.coeffs[:take]

    risky = any(
        getattr(f, "aliasing_risk", False)
        for f in (A22, A12, f_a, f_b)
        if isinstance(f, AnnulusField)
    )
    return ModeSystem(
        m=m,
        grid=grid,
        S1=S1,
        S2=S2,
        S3=S3,
        S4=S4,
        S5=S5,
        S6=S6,
        S7=S7,
        b3=bundle.b3,
        b4=bundle.b4,
        rhs3=rhs3,
        rhs4=rhs4,
        bc_dpsi=bc,
        bundle=bundle,
        sources=src,
        aliasing_risk=risky,
    )


def solve_modes(sys):
    """Solve the discretized split boundary value problem.

    Implicit midpoint on the radial grid; entrance rows impose U = 0,
    U' = entrance data, V' = 0 and the exit row V = 0.  Raises SingularSystem
    when the LU pivots collapse (loss of discrete uniqueness).
    """
    grid = sys.grid
    n = len(grid)
    K = sys.K
    nb = 4 * K
    h = float(grid[1] - grid[0])
    N = nb * n

    Smats = [sys.state_matrix(i) for i in range(n)]
    Fvecs = [sys.forcing(i) for i in range(n)]

    rows, cols, vals = [], [], []
    rhs = np.zeros(N)
    eye = np.eye(nb)

    def put(r0, c0, block):
        rr, cc = np.nonzero(block)
        rows.append(r0 + rr)
        cols.append(c0 + cc)
        vals.append(block[rr, cc])

    # entrance rows: U(r0)=0, U'(r0)=bc, V'(r0)=0
    for b, (off, data) in enumerate(
        [(0, None), (K, sys.bc_dpsi), (3 * K, None)]
    ):
        blk = np.zeros((K, nb))
        blk[np.arange(K), off + np.arange(K)] = 1.0
        put(b * K, 0, blk)
        if data is not None:
            rhs[b * K : (b + 1) * K] = data

    # midpoint rows for each interval
    for i in range(n - 1):
        Smid = 0.5 * (Smats[i] + Smats[i + 1])
        Fmid = 0.5 * (Fvecs[i] + Fvecs[i + 1])
        r0 = 3 * K + i * nb
        put(r0, i * nb, -eye - 0.5 * h * Smid)
        put(r0, (i + 1) * nb, eye - 0.5 * h * Smid)
        rhs[r0 : r0 + nb] = h * Fmid

    # exit rows: V(r1) = 0
    blk = np.zeros((K, nb))
    blk[np.arange(K), 2 * K + np.arange(K)] = 1.0
    put(3 * K + (n - 1) * nb, (n - 1) * nb, blk)

    A = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise SingularSystem(f"sparse LU failed: {exc}") from None
    du = np.abs(lu.U.diagonal())
    if du.min() < PIVOT_RTOL * du.max():
        raise SingularSystem(
            f"pivot ratio {du.min() / du.max():.3e} below {PIVOT_RTOL:.0e}"
        )
    y = lu.solve(rhs)

    Y = y.reshape(n, nb)
    U = Y[:, :K]
    V = Y[:, 2 * K : 3 * K]
    psi_hat = AnnulusField(U.T.copy(), grid)
    Psi_hat = AnnulusField(V.T.copy(), grid)

    bundle, src = sys.bundle, sys.sources
    if bundle.kind == "irrotational":
        f_a, f_b = src.F3, src.F4
    else:
        f_a, f_b = src.G6, src.G7
    res1 = apply_L1(bundle, psi_hat, Psi_hat) - f_a
    res2 = apply_L2(bundle, psi_hat, Psi_hat) - f_b
    residual_report = {
        "L1_max": res1.max_abs(),
        "L1_l2": res1.l2(),
        "L2_max": res2.max_abs(),
        "L2_l2": res2.l2(),
    }
    norm_report = {
        f"H{k}": float(
            np.hypot(h_norm(psi_hat, k).value, h_norm(Psi_hat, k).value)
        )
        for k in range(1, 5)
    }
    return LinearSolution(
        psi_hat=psi_hat,
        Psi_hat=Psi_hat,
        residual_report=residual_report,
        norm_report=norm_report,
    )


@dataclass
class LinearSolution:
    psi_hat: AnnulusField
    Psi_hat: AnnulusField
    residual_report: dict
    norm_report: dict
