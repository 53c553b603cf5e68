"""
Laser field, atomic-unit conversions and the binding potential.

Vectors are stored as ``(z, x)`` pairs: z is the major polarization axis,
x the minor one. Times may be complex; every field quantity is the analytic
continuation of its real-time expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from errors import DomainError, SingularityError

AU_INTENSITY_W_CM2 = 3.50944758e16
OMEGA_TIMES_NM = 45.5633525316


@dataclass(frozen=True)
class LaserField:
    """Monochromatic elliptically polarized field in atomic units.

    Parameters
    ----------
    up : float
        Ponderomotive energy (hartree), held fixed when ``eps`` varies.
    omega : float
        Angular frequency (a.u.).
    eps : float
        Ellipticity, 0 (linear) to 1 (circular).
    phi : float
        Offset phase defining the start of the unit cell.
    """

    up: float
    omega: float
    eps: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not self.up > 0:
            raise DomainError(f"ponderomotive energy must be positive, got {self.up}")
        if not self.omega > 0:
            raise DomainError(f"angular frequency must be positive, got {self.omega}")
        if not 0.0 <= self.eps <= 1.0:
            raise DomainError(f"ellipticity must lie in [0, 1], got {self.eps}")
        if not 0.0 <= self.phi < 2 * math.pi:
            raise DomainError(f"offset phase must lie in [0, 2pi), got {self.phi}")

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    @property
    def a0(self) -> float:
        """Vector potential amplitude along the major axis"""
        return 2 * math.sqrt(self.up) / math.sqrt(1 + self.eps ** 2)

    @property
    def e_max(self) -> float:
        """Peak field strength along the major axis"""
        return self.omega * self.a0

    def with_eps(self, eps: float) -> "LaserField":
        return LaserField(up=self.up, omega=self.omega, eps=eps, phi=self.phi)

    def phase(self, t):
        return self.omega * t + self.phi

    def vector_potential(self, t) -> np.ndarray:
        theta = self.phase(t)
        return np.array([self.a0 * np.cos(theta), self.eps * self.a0 * np.sin(theta)])

    def electric_field(self, t) -> np.ndarray:
        theta = self.phase(t)
        e0 = self.e_max
        return np.array([e0 * np.sin(theta), -self.eps * e0 * np.cos(theta)])

    def vector_potential_integral(self, t) -> np.ndarray:
        """Antiderivative of A(t), zero constant"""
        theta = self.phase(t)
        scale = self.a0 / self.omega
        return np.array([scale * np.sin(theta), -self.eps * scale * np.cos(theta)])

    def a_squared_integral(self, t):
        """Antiderivative of A(t)·A(t)"""
        theta = self.phase(t)
        eps2 = self.eps ** 2
        return self.a0 ** 2 * (
            0.5 * (1 + eps2) * t + (1 - eps2) * np.sin(2 * theta) / (4 * self.omega)
        )


@dataclass(frozen=True)
class Truncation:
    """Radii of the smooth cos^7 taper of the Coulomb tail"""

    r0: float
    l: float

    def __post_init__(self):
        if not 0 < self.r0 < self.l:
            raise DomainError(f"truncation needs 0 < r0 < l, got r0={self.r0}, l={self.l}")


@dataclass(frozen=True)
class TargetAtom:
    """Single-active-electron target: ionization potential and asymptotic charge"""

    ip: float
    z_eff: float = 1.0
    truncation: Optional[Truncation] = None

    def __post_init__(self):
        if not self.ip > 0:
            raise DomainError(f"ionization potential must be positive, got {self.ip}")
        if self.z_eff < 0:
            raise DomainError(f"effective charge must be nonnegative, got {self.z_eff}")

    @property
    def has_potential(self) -> bool:
        return self.z_eff > 0

    @property
    def cutoff_radius(self) -> float:
        return self.truncation.l if self.truncation is not None else math.inf

    def _taper(self, r: float) -> Tuple[float, float, float]:
        """Taper f and its first two radial derivatives"""
        if self.truncation is None:
            return 1.0, 0.0, 0.0
        r0, l = self.truncation.r0, self.truncation.l
        if r < r0:
            return 1.0, 0.0, 0.0
        if r >= l:
            return 0.0, 0.0, 0.0
        k = math.pi / (2 * (l - r0))
        u = k * (r - r0)
        c, s = math.cos(u), math.sin(u)
        f = c ** 7
        df = -7 * k * c ** 6 * s
        d2f = 7 * k ** 2 * (6 * c ** 5 * s ** 2 - c ** 7)
        return f, df, d2f

    def _radius(self, r) -> float:
        radius = math.hypot(float(r[0]), float(r[1]))
        if radius == 0.0:
            raise SingularityError("binding potential is singular at r = 0")
        return radius

    def radial_derivatives(self, radius: float) -> Tuple[float, float, float]:
        """V(r), V'(r), V''(r) of the radial potential"""
        f, df, d2f = self._taper(radius)
        z = self.z_eff
        v = -z * f / radius
        dv = z * f / radius ** 2 - z * df / radius
        d2v = -2 * z * f / radius ** 3 + 2 * z * df / radius ** 2 - z * d2f / radius
        return v, dv, d2v

    def potential(self, r) -> float:
        return self.radial_derivatives(self._radius(r))[0]

    def gradient(self, r) -> np.ndarray:
        radius = self._radius(r)
        _, dv, _ = self.radial_derivatives(radius)
        return dv * np.asarray(r, dtype=float) / radius

    def hessian(self, r) -> np.ndarray:
        radius = self._radius(r)
        _, dv, d2v = self.radial_derivatives(radius)
        n = np.asarray(r, dtype=float) / radius
        outer = np.outer(n, n)
        return d2v * outer + (dv / radius) * (np.eye(2) - outer)


def field_from_experiment(intensity: float, wavelength: float, eps: float = 0.0, phi: float = 0.0) -> LaserField:
    """Build a field from laboratory intensity (W/cm^2) and wavelength (nm)"""
    if not intensity > 0:
        raise DomainError(f"intensity must be positive, got {intensity}")
    if not wavelength > 0:
        raise DomainError(f"wavelength must be positive, got {wavelength}")
    omega = OMEGA_TIMES_NM / wavelength
    e0_squared = intensity / AU_INTENSITY_W_CM2
    up = e0_squared / (4 * omega ** 2)
    return LaserField(up=up, omega=omega, eps=eps, phi=phi)


def vector_potential(field: LaserField, t) -> np.ndarray:
    return field.vector_potential(t)


def electric_field(field: LaserField, t) -> np.ndarray:
    return field.electric_field(t)


def potential_value(atom: TargetAtom, r) -> float:
    return atom.potential(r)


def potential_gradient(atom: TargetAtom, r) -> np.ndarray:
    return atom.gradient(r)


def truncation_bounds(field: LaserField, atom: TargetAtom, multiplier: float = 2.0) -> Tuple[float, float]:
    """Taper radii scaled on the approximate tunnel exit ip/E_max"""
    if not multiplier > 0:
        raise DomainError(f"truncation multiplier must be positive, got {multiplier}")
    r0 = multiplier * atom.ip / field.e_max
    l = r0 + field.e_max / (2 * field.omega ** 2)
    return r0, l


def truncated_atom(field: LaserField, atom: TargetAtom, multiplier: float) -> TargetAtom:
    r0, l = truncation_bounds(field, atom, multiplier)
    return TargetAtom(ip=atom.ip, z_eff=atom.z_eff, truncation=Truncation(r0=r0, l=l))
