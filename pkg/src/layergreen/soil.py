"""Layered soil profiles and material constants.

Material damping is hysteretic and rate-independent: it enters through
complex Lame constants obtained from the correspondence principle,
``mu* = mu (1 + 2 beta_s i)`` and ``(lambda* + 2 mu*) = (lambda + 2 mu)
(1 + 2 beta_p i)``.  Profiles are parameterized by wave speeds rather
than moduli, so ``lambda`` is always derived from ``Cp``, ``Cs`` and
``rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

# Cp/Cs must exceed sqrt(4/3) for a positive bulk modulus (nu > -1).
_MIN_SPEED_RATIO = math.sqrt(4.0 / 3.0)


@dataclass(frozen=True)
class Layer:
    """One homogeneous soil layer.

    Parameters
    ----------
    thickness : float
        Layer thickness in m.  Use ``math.inf`` for a halfspace.
    cs, cp : float
        Shear and dilatational wave velocities in m/s.
    beta_s, beta_p : float
        Hysteretic damping ratios for shear and volumetric deformation.
    rho : float
        Mass density in kg/m^3.
    """

    thickness: float
    cs: float
    cp: float
    beta_s: float
    beta_p: float
    rho: float

    def __post_init__(self):
        if not self.thickness > 0.0:
            raise ValueError(f"layer thickness must be positive, got {self.thickness}")
        if not self.cs > 0.0:
            raise ValueError(f"shear wave velocity must be positive, got {self.cs}")
        if not self.cp > self.cs * _MIN_SPEED_RATIO:
            raise ValueError(
                f"Cp={self.cp} must exceed Cs*sqrt(4/3)={self.cs * _MIN_SPEED_RATIO:.4f}"
            )
        if self.beta_s < 0.0 or self.beta_p < 0.0:
            raise ValueError("damping ratios must be non-negative")
        if not self.rho > 0.0:
            raise ValueError(f"density must be positive, got {self.rho}")

    @property
    def is_halfspace(self) -> bool:
        return math.isinf(self.thickness)

    @property
    def mu(self) -> float:
        """Real shear modulus rho*Cs^2 in Pa."""
        return self.rho * self.cs**2

    @property
    def lame_lambda(self) -> float:
        """Real first Lame constant rho*Cp^2 - 2*rho*Cs^2 in Pa."""
        return self.rho * self.cp**2 - 2.0 * self.mu


@dataclass(frozen=True)
class ComplexModuli:
    """Complex Lame constants of a damped layer."""

    mu_star: complex
    lambda_star: complex

    @property
    def p_modulus(self) -> complex:
        """Constrained modulus lambda* + 2 mu*."""
        return self.lambda_star + 2.0 * self.mu_star


BEDROCK = "bedrock"
HALFSPACE = "halfspace"


@dataclass(frozen=True)
class SoilProfile:
    """Horizontally layered soil, ordered from the free surface downward.

    The bottom condition is either rigid bedrock below the last finite
    layer or a homogeneous halfspace, stored as a final layer of
    unbounded thickness.
    """

    layers: tuple[Layer, ...]
    halfspace: Layer | None = field(default=None)

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("profile needs at least one finite layer")
        for lay in self.layers:
            if lay.is_halfspace:
                raise ValueError("finite layers must have finite thickness")
        if self.halfspace is not None and not self.halfspace.is_halfspace:
            raise ValueError("halfspace layer must have unbounded thickness")

    @property
    def bottom(self) -> str:
        return BEDROCK if self.halfspace is None else HALFSPACE

    @property
    def total_depth(self) -> float:
        """Depth of the bottom interface z = h in m."""
        return sum(lay.thickness for lay in self.layers)

    @property
    def cs_min(self) -> float:
        """Smallest shear wave velocity, used as reference speed for the
        dimensionless wavenumber."""
        speeds = [lay.cs for lay in self.layers]
        if self.halfspace is not None:
            speeds.append(self.halfspace.cs)
        return min(speeds)

    def interfaces(self) -> list[float]:
        """Depths of layer interfaces including surface and bottom."""
        z = [0.0]
        for lay in self.layers:
            z.append(z[-1] + lay.thickness)
        return z


def complex_lame(layer: Layer) -> ComplexModuli:
    """Complex Lame constants of a layer via the correspondence principle.

    Returns
    -------
    ComplexModuli
        ``mu_star = rho Cs^2 (1 + 2 beta_s i)`` and ``lambda_star``
        derived from ``(lambda + 2 mu)(1 + 2 beta_p i) - 2 mu_star``.
    """
    mu = layer.rho * layer.cs**2
    p_mod = layer.rho * layer.cp**2
    mu_star = mu * (1.0 + 2.0j * layer.beta_s)
    lambda_star = p_mod * (1.0 + 2.0j * layer.beta_p) - 2.0 * mu_star
    return ComplexModuli(mu_star=mu_star, lambda_star=lambda_star)


def poisson_ratio(cs: float, cp: float) -> float:
    """Poisson's ratio from the wave speed ratio.

    ``nu = ((Cp/Cs)^2 - 2) / (2 ((Cp/Cs)^2 - 1))``; values below zero are
    possible for speed ratios under sqrt(2) and are returned as-is.
    """
    if cs <= 0.0 or cp <= 0.0:
        raise ValueError("wave speeds must be positive")
    r2 = (cp / cs) ** 2
    if r2 <= 4.0 / 3.0:
        raise ValueError(f"Cp/Cs ratio {math.sqrt(r2):.4f} must exceed sqrt(4/3)")
    return (r2 - 2.0) / (2.0 * (r2 - 1.0))


def rayleigh_estimate(cs: float, nu: float, f: float) -> tuple[float, float]:
    """Approximate Rayleigh wave speed and wavelength.

    Uses ``Cr = Cs (0.87 + 1.12 nu) / (1 + nu)`` with the undamped
    real-valued shear speed, and ``lambda_r = Cr / f``.

    Parameters
    ----------
    cs : float
        Shear wave velocity in m/s.
    nu : float
        Poisson's ratio.
    f : float
        Frequency in Hz, must be positive.

    Returns
    -------
    (cr, lambda_r) : tuple of float
        Rayleigh speed in m/s and wavelength in m.
    """
    if f <= 0.0:
        raise ValueError(f"frequency must be positive, got {f}")
    cr = cs * (0.87 + 1.12 * nu) / (1.0 + nu)
    return cr, cr / f
