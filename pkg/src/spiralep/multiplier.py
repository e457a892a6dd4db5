"""Multiplier certificate for the linearized hyperbolic-elliptic estimate.

The energy argument needs a positive radial weight Q with

    2(-Q'/2 - Q dA12/dth + a1 Q - h1(Q,r)) >= lambda0,          (C1)
    (2/A22)(-(Q A22)_r/2 - h2(Q,r))        >= lambda0,          (C2)

where

    h1(Q,r) = a2^2/2 + Q^2 (2 b1^2 + 2 r^2 b2^2 + 2 b3^2/theta) + 2 a3^2/theta,
    h2(Q,r) = Q^2/2 + 2 a4^2/theta,
    theta   = min_r (b4 - 1/(2 r^2))  > 0.

Both hold whenever Q > 0 solves the constant-coefficient Riccati equation

    -Q' = frak_a2 Q^2 - 2 frak_a1_hat Q + frak_a0 + lambda0

built from the displayed maxima/minima of the coefficient profiles.  The
certificate integrates that equation backward from the outer radius over a
(lambda0, Q_end) grid and then re-checks (C1)/(C2) pointwise with the actual
(optionally frozen) coefficient fields; certified=false is a valid outcome.

When frozen coefficient fields are available, the drop from frak_a1 to
frak_a1_hat is measured exactly from those fields rather than through an
abstract Lipschitz constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coeffs import linear_coeffs
from .errors import BlowUp
from .fields import diff_matrix

__all__ = [
    "FrakConstants",
    "MultiplierCertificate",
    "certify",
    "frak_constants",
    "riccati_march",
    "riccati_solve",
]

Q_MAX_FACTOR = 1e9
LAMBDA_DECADES = 7  # {1, 1e-1, ..., 1e-6} * scale
Q_END_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class FrakConstants:
    a0: float
    a1: float
    a1_hat: float
    a2: float
    theta: float
    mu0: float


@dataclass
class MultiplierCertificate:
    Q: np.ndarray
    lambda0: float
    frak_a0: float
    frak_a1: float
    frak_a1_hat: float
    frak_a2: float
    theta_r1: float
    mu0: float
    certified: bool
    r1_certified: float
    Q_end: float
    margin15: float
    margin16: float
    grid: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _field_minima(bundle, lo=0, hi=None):
    """(min(a1 - dA12/dth), min(-A22_r / (2 A22))) over the node slice."""
    sl = slice(lo, hi)
    if bundle.A12 is not None:
        da12 = bundle.A12.d_theta().values()[sl]
        m1 = float(np.min(bundle.a1[sl, None] - da12))
        a22 = bundle.A22.values()[sl]
        da22 = bundle.A22.d_r().values()[sl]
        m2 = float(np.min(-da22 / (2.0 * a22)))
    else:
        m1 = float(np.min(bundle.a1[sl]))
        d = diff_matrix(bundle.flow.grid)
        da22 = (d @ bundle.A22_bar)[sl]
        m2 = float(np.min(-da22 / (2.0 * bundle.A22_bar[sl])))
    return m1, m2


def frak_constants(flow, bundle, dev=0.0, lo=0, hi=None):
    """Displayed maxima/minima over the node slice [lo, hi)."""
    sl = slice(lo, hi)
    r = flow.grid[sl]
    b4 = bundle.b4[sl]
    theta = float(np.min(b4 - 1.0 / (2.0 * r**2)))
    if theta <= 0.0:
        raise BlowUp(flow.grid[lo])  # cannot happen for admissible data
    if bundle.A22 is not None:
        a22v = bundle.A22.values()[sl]
        mu0 = float(min(np.min(a22v), 1.0 / np.max(a22v)))
    else:
        a22 = bundle.A22_bar[sl]
        mu0 = float(min(np.min(a22), 1.0 / np.max(a22)))
    a0 = float(
        np.max(bundle.a2[sl] ** 2 + 4 * bundle.a3[sl] ** 2 / theta
               + 4 * bundle.a4[sl] ** 2 / (mu0 * theta))
    )
    a2k = (
        float(np.max(4 * bundle.b1[sl] ** 2 + 4 * r**2 * bundle.b2[sl] ** 2
                     + 4 * bundle.b3[sl] ** 2 / theta))
        + 1.0 / mu0
    )
    m1, m2 = _field_minima(bundle, lo, hi)
    a1 = min(m1, m2)
    if bundle.A12 is not None:
        a1_hat = a1  # measured directly from the frozen fields
    else:
        a1_hat = a1 - dev
    return FrakConstants(a0=a0, a1=a1, a1_hat=a1_hat, a2=a2k, theta=theta, mu0=mu0)


def riccati_march(grid, a0, a1_hat, a2, lambda0, q_end):
    """Integrate -Q' = a2 Q^2 - 2 a1_hat Q + a0 + lambda0 backward from the
    last grid node.  Returns node values; raises BlowUp at the first node
    where Q leaves (0, Q_max]."""
    q = _march_batch(
        grid,
        np.array([a0]),
        np.array([a1_hat]),
        np.array([a2]),
        np.array([lambda0]),
        np.array([q_end]),
    )[0]
    if np.any(~np.isfinite(q)):
        bad = np.where(~np.isfinite(q))[0]
        raise BlowUp(float(grid[bad.max()]))
    return q


def _march_batch(grid, a0, a1h, a2, lam, q_end):
    """Vectorized backward RK4 over candidate tuples; dead candidates get NaN
    from the first failing node inward."""
    n = len(grid)
    h = float(grid[1] - grid[0])
    q = np.full((len(q_end), n), np.nan)
    q[:, -1] = q_end
    scale = np.maximum(np.abs(a1h) / a2, np.sqrt((a0 + lam) / a2))
    qmax = Q_MAX_FACTOR * np.maximum(1.0, scale)
    alive = (q_end > 0.0) & (q_end <= qmax)
    y = np.where(alive, q_end, np.nan)

    def rhs(v):
        return -(a2 * v * v - 2.0 * a1h * v + a0 + lam)

    for i in range(n - 1, 0, -1):
        k1 = rhs(y)
        k2 = rhs(y - 0.5 * h * k1)
        k3 = rhs(y - 0.5 * h * k2)
        k4 = rhs(y - h * k3)
        y = y - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        with np.errstate(invalid="ignore"):
            alive = alive & np.isfinite(y) & (y > 0.0) & (y <= qmax)
        y = np.where(alive, y, np.nan)
        q[:, i - 1] = y
    return q


def riccati_solve(flow, bundle, lambda0, q_end, dev=0.0):
    """Spec-level wrapper: constants from the bundle, march on the flow grid."""
    fk = frak_constants(flow, bundle, dev=dev)
    return riccati_march(flow.grid, fk.a0, fk.a1_hat, fk.a2, lambda0, q_end)


def _margins(flow, bundle, grid_sl, q, qprime, fk):
    """Pointwise left sides of (C1) and (C2) minus nothing; min over (r,th).

    q, qprime: (n_cand, n_nodes).  Returns (min15, min16) per candidate.
    """
    sl = grid_sl
    r = flow.grid[sl]
    th = fk.theta
    a1 = bundle.a1[sl]
    a2c = bundle.a2[sl]
    b1 = bundle.b1[sl]
    b2 = bundle.b2[sl]
    b3 = bundle.b3[sl]
    a3 = bundle.a3[sl]
    a4 = bundle.a4[sl]

    if bundle.A12 is not None:
        da12 = bundle.A12.d_theta().values()[sl][None, :, :]
        a22 = bundle.A22.values()[sl][None, :, :]
        da22 = bundle.A22.d_r().values()[sl][None, :, :]
    else:
        da12 = np.zeros((1, len(r), 1))
        a22 = bundle.A22_bar[sl][None, :, None]
        d = diff_matrix(flow.grid)
        da22 = (d @ bundle.A22_bar)[sl][None, :, None]

    qq = q[:, :, None]
    qp = qprime[:, :, None]
    h1 = (
        0.5 * a2c[None, :, None] ** 2
        + qq**2 * (2 * b1[None, :, None] ** 2 + 2 * (r**2 * b2**2)[None, :, None]
                   + 2 * b3[None, :, None] ** 2 / th)
        + 2 * a3[None, :, None] ** 2 / th
    )
    lhs15 = 2.0 * (-0.5 * qp - qq * da12 + a1[None, :, None] * qq - h1)
    h2 = 0.5 * qq**2 + 2 * a4[None, :, None] ** 2 / th
    lhs16 = (2.0 / a22) * (-0.5 * (qp * a22 + qq * da22) - h2)
    m15 = np.nanmin(lhs15, axis=(1, 2))
    m16 = np.nanmin(lhs16, axis=(1, 2))
    return m15, m16


def _candidate_grid(fk, lambda0_min):
    scale = max(1.0, fk.a0)
    lams = [scale * 10.0 ** (-d) for d in range(LAMBDA_DECADES)]
    lams = [l for l in lams if l >= lambda0_min] or [max(lambda0_min, 1e-12)]
    base = fk.a1_hat / fk.a2 if fk.a1_hat > 0 else math.sqrt((fk.a0 + lams[-1]) / fk.a2)
    qends = [base * f for f in Q_END_FACTORS if base * f > 0.0]
    pairs = [(l, qe) for l in lams for qe in qends]
    return (
        np.array([p[0] for p in pairs]),
        np.array([p[1] for p in pairs]),
    )


def _try_interval(flow, bundle, dev, lambda0_min, hi):
    """Best passing candidate on nodes [0, hi); None if all fail."""
    fk = frak_constants(flow, bundle, dev=dev, hi=hi)
    lam, qe = _candidate_grid(fk, lambda0_min)
    a0 = np.full_like(lam, fk.a0)
    a1h = np.full_like(lam, fk.a1_hat)
    a2 = np.full_like(lam, fk.a2)
    q = _march_batch(flow.grid[:hi], a0, a1h, a2, lam, qe)
    with np.errstate(invalid="ignore"):
        qprime = -(a2[:, None] * q * q - 2.0 * a1h[:, None] * q
                   + a0[:, None] + lam[:, None])
        m15, m16 = _margins(flow, bundle, slice(0, hi), q, qprime, fk)
        ok = (
            np.all(np.isfinite(q), axis=1)
            & (m15 >= lam * (1.0 - 1e-9))
            & (m16 >= lam * (1.0 - 1e-9))
        )
    if not np.any(ok):
        return None
    # prefer the largest certified margin, then the larger terminal value
    idx = np.where(ok)[0]
    best = idx[np.lexsort((qe[idx], lam[idx]))[-1]]
    return {
        "lambda0": float(lam[best]),
        "q_end": float(qe[best]),
        "Q": q[best],
        "margin15": float(m15[best]),
        "margin16": float(m16[best]),
        "fk": fk,
    }


def certify(flow, bundle, dev=0.0, lambda0_min=0.0):
    """Search (lambda0, Q_end) and certify the largest clean node prefix.

    The bundle may carry frozen coefficient fields; then the margin checks use
    them pointwise (including the dA12/dth and A22_r terms) and the a1_hat
    drop is measured from the fields instead of `dev`.
    """
    n = len(flow.grid)
    full = _try_interval(flow, bundle, dev, lambda0_min, n)
    if full is not None:
        hit, r_cert = full, float(flow.grid[-1])
    else:
        # first failing prefix defines the certified radius
        hit, r_cert = None, float(flow.grid[0])
        for hi in range(2, n + 1):
            res = _try_interval(flow, bundle, dev, lambda0_min, hi)
            if res is None:
                break
            hit, r_cert = res, float(flow.grid[hi - 1])
    if hit is None:
        fk = frak_constants(flow, bundle, dev=dev)
        return MultiplierCertificate(
            Q=np.array([]),
            lambda0=0.0,
            frak_a0=fk.a0,
            frak_a1=fk.a1,
            frak_a1_hat=fk.a1_hat,
            frak_a2=fk.a2,
            theta_r1=fk.theta,
            mu0=fk.mu0,
            certified=False,
            r1_certified=float(flow.grid[0]),
            Q_end=float("nan"),
            margin15=float("-inf"),
            margin16=float("-inf"),
            grid=flow.grid.copy(),
            diagnostics={"reason": "no (lambda0, Q_end) candidate passed"},
        )
    fk = hit["fk"]
    return MultiplierCertificate(
        Q=hit["Q"],
        lambda0=hit["lambda0"],
        frak_a0=fk.a0,
        frak_a1=fk.a1,
        frak_a1_hat=fk.a1_hat,
        frak_a2=fk.a2,
        theta_r1=fk.theta,
        mu0=fk.mu0,
        certified=full is not None,
        r1_certified=r_cert,
        Q_end=hit["q_end"],
        margin15=hit["margin15"],
        margin16=hit["margin16"],
        grid=flow.grid[: len(hit["Q"])].copy(),
        diagnostics={},
    )


def recheck_margins(flow, bundle, cert):
    """Re-evaluate (C1)/(C2) margins for a stored certificate on this grid.

    Used for the soundness audit on refined grids: the same (lambda0, Q_end)
    is re-integrated and the pointwise margins are returned.
    """
    fk = frak_constants(flow, bundle)
    q = riccati_march(flow.grid, fk.a0, fk.a1_hat, fk.a2, cert.lambda0, cert.Q_end)
    qp = -(fk.a2 * q * q - 2.0 * fk.a1_hat * q + fk.a0 + cert.lambda0)
    m15, m16 = _margins(flow, bundle, slice(0, len(flow.grid)), q[None], qp[None], fk)
    return float(m15[0]), float(m16[0])
