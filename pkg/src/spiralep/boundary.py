"""Boundary data containers for the cylindrical and axisymmetric problems.

Cylindrical runs perturb entrance traces (functions of theta) and the exit
potential; axisymmetric runs perturb entrance/exit traces in z.  Closed-form
perturbations are built in :mod:`spiralep.perturb`; here they are stored
band-limited (theta) or with analytic z-derivatives so compatibility checks
and lift derivatives are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams
from .fields import AnnulusField, ThetaFunction

__all__ = ["AxiBoundary", "Boundary2D", "ZProfile"]


@dataclass
class Boundary2D:
    """Entrance/exit data for the cylindrical problems.

    K_en and S_en are only used by the rotational solver; b may be a constant
    or an AnnulusField.
    """

    U1_en: ThetaFunction
    U2_en: ThetaFunction
    E_en: ThetaFunction
    Phi_ex: ThetaFunction
    K_en: ThetaFunction | None = None
    S_en: ThetaFunction | None = None
    b: float | AnnulusField = 0.0

    @classmethod
    def unperturbed(cls, flow, m):
        p = flow.params
        return cls(
            U1_en=ThetaFunction.constant(p.U1_0, m),
            U2_en=ThetaFunction.constant(p.U2_0, m),
            E_en=ThetaFunction.constant(p.E0, m),
            Phi_ex=ThetaFunction.constant(flow.Phi_bar[-1], m),
            K_en=ThetaFunction.constant(flow.K0, m),
            S_en=ThetaFunction.constant(p.S0, m),
            b=p.b0,
        )

    def d0(self, flow):
        """Mean-flux correction making the velocity potential periodic."""
        return -flow.params.r0 * (self.U2_en.mean - flow.params.U2_0)

    def b_minus_b0(self, flow, m, r):
        if isinstance(self.b, AnnulusField):
            return self.b.shift(-flow.params.b0)
        return AnnulusField.zeros(m, r).shift(float(self.b) - flow.params.b0)

    def omega1(self, flow):
        """Perturbation size of (b, U1_en, U2_en, E_en, Phi_ex)."""
        p = flow.params
        if isinstance(self.b, AnnulusField):
            w = 0.0
            for a in range(3):
                fr = self.b.d_r(a) if a else self.b
                for c in range(3 - a):
                    g = fr.d_theta(c) if c else fr
                    w += g.shift(-p.b0 if a == 0 and c == 0 else 0.0).max_abs()
        else:
            w = abs(float(self.b) - p.b0)
        w += (self.U1_en - ThetaFunction.constant(p.U1_0, self.U1_en.n_modes)).ck_proxy(3)
        for f, ref in (
            (self.U2_en, p.U2_0),
            (self.E_en, p.E0),
            (self.Phi_ex, flow.Phi_bar[-1]),
        ):
            w += (f - ThetaFunction.constant(ref, f.n_modes)).ck_proxy(4)
        return w

    def omega2(self, flow):
        """Perturbation size of (K_en, S_en)."""
        if self.K_en is None or self.S_en is None:
            return 0.0
        w = (self.K_en - ThetaFunction.constant(flow.K0, self.K_en.n_modes)).ck_proxy(4)
        w += (
            self.S_en - ThetaFunction.constant(flow.params.S0, self.S_en.n_modes)
        ).ck_proxy(4)
        return w


@dataclass
class ZProfile:
    """Trace in z with analytic first and second derivatives."""

    fn: callable
    d1: callable
    d2: callable

    @classmethod
    def constant(cls, value):
        return cls(
            fn=lambda z, v=value: np.full_like(np.asarray(z, float), v),
            d1=lambda z: np.zeros_like(np.asarray(z, float)),
            d2=lambda z: np.zeros_like(np.asarray(z, float)),
        )

    def __call__(self, z):
        return self.fn(np.asarray(z, float))


@dataclass
class AxiBoundary:
    """Entrance/exit/wall data for the axisymmetric problem."""

    U2_en: ZProfile
    U3_en: ZProfile
    K_en: ZProfile
    S_en: ZProfile
    Phi_en: ZProfile
    U1_ex: ZProfile
    Phi_ex: ZProfile
    b: float | object = 0.0  # constant or RectField

    @classmethod
    def unperturbed(cls, flow):
        p = flow.params
        return cls(
            U2_en=ZProfile.constant(p.U2_0),
            U3_en=ZProfile.constant(0.0),
            K_en=ZProfile.constant(flow.K0),
            S_en=ZProfile.constant(p.S0),
            Phi_en=ZProfile.constant(0.0),
            U1_ex=ZProfile.constant(flow.U1_bar[-1]),
            Phi_ex=ZProfile.constant(flow.Phi_bar[-1]),
            b=p.b0,
        )

    def check_compatibility(self, tol=1e-10):
        """Wall compatibility: listed one-sided derivatives must vanish."""
        walls = np.array([-1.0, 1.0])
        named = [
            ("U2_en'", self.U2_en.d1(walls)),
            ("U3_en", self.U3_en(walls)),
            ("U3_en''", self.U3_en.d2(walls)),
            ("K_en'", self.K_en.d1(walls)),
            ("S_en'", self.S_en.d1(walls)),
            ("Phi_en'", self.Phi_en.d1(walls)),
            ("U1_ex'", self.U1_ex.d1(walls)),
            ("Phi_ex'", self.Phi_ex.d1(walls)),
        ]
        bad = [n for n, v in named if np.max(np.abs(v)) > tol]
        if bad:
            raise InvalidParams(f"wall compatibility violated by: {', '.join(bad)}")

    def sigma_v(self, flow):
        p = flow.params
        z = np.linspace(-1.0, 1.0, 101)

        def size(prof, ref):
            return max(
                float(np.max(np.abs(prof(z) - ref))),
                float(np.max(np.abs(prof.d1(z)))),
                float(np.max(np.abs(prof.d2(z)))),
            )

        w = size(self.U2_en, p.U2_0) + size(self.K_en, flow.K0) + size(self.S_en, p.S0)
        w += size(self.U3_en, 0.0) + size(self.Phi_en, 0.0)
        w += size(self.U1_ex, flow.U1_bar[-1]) + size(self.Phi_ex, flow.Phi_bar[-1])
        if np.isscalar(self.b):
            w += abs(float(self.b) - p.b0)
        else:
            w += float(np.max(np.abs(self.b.values - p.b0)))
        return w
