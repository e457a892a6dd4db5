"""Named closed-form boundary perturbations.

Runs are configured with (form, amplitude, wavenumber, ...) tags instead of
serialized functions, so identical configs reproduce identical inputs.  Theta
forms return ThetaFunction objects; z forms return ZProfile objects carrying
analytic first and second derivatives for the wall-compatibility checks.
"""

from __future__ import annotations

import numpy as np

from .boundary import ZProfile
from .errors import InvalidParams
from .fields import AnnulusField, ThetaFunction

__all__ = ["theta_form", "z_form", "b_form"]


def theta_form(base, spec, m):
    """base + closed-form perturbation as a ThetaFunction.

    Forms: const (amp), eps_sin_k (eps, k), eps_cos_k (eps, k), or a dict of
    several applied additively via 'sum'.
    """
    if spec is None:
        return ThetaFunction.constant(base, m)
    name = spec.get("form", "const")
    if name == "sum":
        out = ThetaFunction.constant(base, m)
        for sub in spec["terms"]:
            out = out + theta_form(0.0, sub, m)
        return out
    if name == "const":
        return ThetaFunction.constant(base + spec.get("amp", 0.0), m)
    eps = float(spec["eps"])
    if eps < 0.0:
        raise InvalidParams("perturbation amplitude must be >= 0")
    k = int(spec["k"])
    if not 1 <= k <= m:
        raise InvalidParams(f"wavenumber {k} not resolvable at truncation {m}")
    c = np.zeros(2 * m + 1)
    c[0] = base * np.sqrt(2.0 * np.pi)
    if name == "eps_sin_k":
        c[2 * k - 1] = eps * np.sqrt(np.pi)
    elif name == "eps_cos_k":
        c[2 * k] = eps * np.sqrt(np.pi)
    else:
        raise InvalidParams(f"unknown theta form {name!r}")
    return ThetaFunction(c)


def z_form(base, spec):
    """base + closed-form perturbation as a ZProfile (analytic derivatives).

    Forms: const (amp); eps_cos_pi_k (eps, k): eps*cos(k pi z), wall-flat in
    the first derivative; eps_wall_poly (eps): eps*(1-z^2)^3, vanishing with
    its second derivative at the walls (swirl-compatible).
    """
    if spec is None:
        return ZProfile.constant(base)
    name = spec.get("form", "const")
    if name == "const":
        return ZProfile.constant(base + spec.get("amp", 0.0))
    eps = float(spec["eps"])
    if eps < 0.0:
        raise InvalidParams("perturbation amplitude must be >= 0")
    if name == "eps_cos_pi_k":
        k = int(spec["k"])
        w = k * np.pi
        return ZProfile(
            fn=lambda z: base + eps * np.cos(w * np.asarray(z, float)),
            d1=lambda z: -eps * w * np.sin(w * np.asarray(z, float)),
            d2=lambda z: -eps * w * w * np.cos(w * np.asarray(z, float)),
        )
    if name == "eps_wall_poly":
        def f(z):
            z = np.asarray(z, float)
            return base + eps * (1.0 - z**2) ** 3

        def f1(z):
            z = np.asarray(z, float)
            return -6.0 * eps * z * (1.0 - z**2) ** 2

        def f2(z):
            z = np.asarray(z, float)
            return eps * (-6.0 * (1.0 - z**2) ** 2 + 24.0 * z**2 * (1.0 - z**2))

        return ZProfile(fn=f, d1=f1, d2=f2)
    raise InvalidParams(f"unknown z form {name!r}")


def b_form(b0, spec, grid, m=None, z=None):
    """Ion-background perturbation on the annulus (AnnulusField) or the
    rectangle (RectField); None or const stays a plain float."""
    if spec is None or spec.get("form", "const") == "const":
        return float(b0 + (0.0 if spec is None else spec.get("amp", 0.0)))
    eps = float(spec["eps"])
    name = spec["form"]
    if z is None:
        k = int(spec["k"])
        r0, r1 = grid[0], grid[-1]
        bump = np.sin(np.pi * (grid - r0) / (r1 - r0))
        if name == "eps_sin_k_bump":
            fn = lambda R, T: b0 + eps * np.sin(k * T) * np.sin(
                np.pi * (R - r0) / (r1 - r0)
            )
            return AnnulusField.from_function(fn, grid, m)
        raise InvalidParams(f"unknown annulus b form {name!r}")
    from .fields import RectField

    r0, r1 = grid[0], grid[-1]
    if name == "eps_cos_pi_bump":
        k = int(spec.get("k", 1))
        rr, zz = np.meshgrid(grid, z, indexing="ij")
        vals = b0 + eps * np.sin(np.pi * (rr - r0) / (r1 - r0)) * np.cos(
            k * np.pi * zz
        )
        return RectField(vals, grid, z)
    raise InvalidParams(f"unknown rectangle b form {name!r}")
