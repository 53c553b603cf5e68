"""SFA direct-orbit action, prefactor and saddle-point transition amplitude."""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from errors import DiscardedSaddleError, DomainError
from field_potential import LaserField, TargetAtom
from sfa_times import Group, IonizationSolution, apply_stokes_policy, grouped_times

logger = logging.getLogger(__name__)

COALESCENCE_THRESHOLD = 1e-3
DIPOLE_MODELS = ("unit", "hydrogenic_1s")
# contour integral of exp(i u^2/2) u^-3 passing above the pole
_CUBIC_POLE_CONSTANT = math.pi / 2

GROUP_TO_ORBIT = {Group.T1: "a", Group.T2: "b"}


@dataclass(frozen=True)
class SfaOrbitContribution:
    t_prime: complex
    action: complex
    prefactor: complex
    amplitude: complex
    orbit_label: str


def direct_action(field: LaserField, atom: TargetAtom, p, t_prime) -> complex:
    """Closed-form SFA action; the constant from the upper time limit is dropped"""
    pz, px = float(p[0]), float(p[1])
    linear = 0.5 * (pz ** 2 + px ** 2) + atom.ip
    a_int = field.vector_potential_integral(t_prime)
    return complex(linear * t_prime + pz * a_int[0] + px * a_int[1] + 0.5 * field.a_squared_integral(t_prime))


def action_derivative(field: LaserField, atom: TargetAtom, p, t_prime) -> complex:
    a = field.vector_potential(t_prime)
    return complex(0.5 * ((p[0] + a[0]) ** 2 + (p[1] + a[1]) ** 2) + atom.ip)


def action_second_derivative(field: LaserField, atom: TargetAtom, p, t_prime, warn: bool = True) -> complex:
    """d^2S/dt'^2 = -(p + A(t')) . E(t')"""
    a = field.vector_potential(t_prime)
    e = field.electric_field(t_prime)
    value = complex(-((p[0] + a[0]) * e[0] + (p[1] + a[1]) * e[1]))
    if warn and abs(value) < COALESCENCE_THRESHOLD:
        logger.warning("saddles near coalescence at p=(%.4f, %.4f): |S''| = %.2e", p[0], p[1], abs(value))
    return value


def cycle_phase_increment(field: LaserField, atom: TargetAtom, p) -> float:
    return field.period * (0.5 * (float(p[0]) ** 2 + float(p[1]) ** 2) + atom.ip + field.up)


def cycle_sum_factor(field: LaserField, atom: TargetAtom, p, n_cycles: int) -> complex:
    """Sum over k < n_cycles of exp(i k Delta)"""
    if n_cycles < 1:
        raise DomainError(f"n_cycles must be at least 1, got {n_cycles}")
    delta = cycle_phase_increment(field, atom, p)
    return complex(np.exp(1j * delta * np.arange(n_cycles)).sum())


def _hydrogenic_norm(atom: TargetAtom) -> float:
    kappa = math.sqrt(2 * atom.ip)
    return 2 ** 3.5 * kappa ** 2.5 / math.pi


def dipole_matrix_element(atom: TargetAtom, field: LaserField, p, t_prime, model: str = "unit") -> complex:
    """E(t') . <p + A(t')| r |psi_0> for the chosen bound-state model"""
    if model == "unit":
        return 1.0 + 0j
    if model != "hydrogenic_1s":
        raise DomainError(f"unknown dipole model {model!r}, expected one of {DIPOLE_MODELS}")
    a = field.vector_potential(t_prime)
    e = field.electric_field(t_prime)
    vz, vx = p[0] + a[0], p[1] + a[1]
    denominator = (vz ** 2 + vx ** 2 + 2 * atom.ip) ** 3
    if abs(denominator) < 1e-300:
        raise DomainError("hydrogenic dipole is singular at the saddle; use orbit_amplitude")
    return complex(_hydrogenic_norm(atom) * (e[0] * vz + e[1] * vx) / denominator)


def _follow_branch(value: complex, reference: Optional[complex]) -> complex:
    if reference is None or reference == 0:
        return value
    if abs(cmath.phase(value / reference)) > math.pi / 2:
        return -value
    return value


def saddle_prefactor(
    field: LaserField,
    atom: TargetAtom,
    p,
    t_prime,
    model: str = "unit",
    reference: Optional[complex] = None,
) -> complex:
    """sqrt(2 pi i / S'') times the dipole factor at a saddle"""
    second = action_second_derivative(field, atom, p, t_prime)
    if model == "unit":
        return _follow_branch(cmath.sqrt(2j * math.pi / second), reference)
    if model == "hydrogenic_1s":
        # cubic pole of the 1s dipole sits on the saddle; fused with the Gaussian factor
        return -_hydrogenic_norm(atom) * _CUBIC_POLE_CONSTANT / (8 * second)
    raise DomainError(f"unknown dipole model {model!r}, expected one of {DIPOLE_MODELS}")


def orbit_amplitude(
    field: LaserField,
    atom: TargetAtom,
    p,
    sol: IonizationSolution,
    model: str = "unit",
    reference: Optional[complex] = None,
) -> SfaOrbitContribution:
    """Saddle-point contribution of one ionization time.

    ``reference`` is the prefactor of the previous point on a momentum sweep;
    when given the square-root sign is chosen to stay within pi/2 of it.
    """
    if sol.stokes_discarded:
        raise DiscardedSaddleError(f"saddle {sol.branch.value} at p={tuple(p)} lies beyond a Stokes transition")
    action = direct_action(field, atom, p, sol.t_prime)
    prefactor = saddle_prefactor(field, atom, p, sol.t_prime, model, reference)
    return SfaOrbitContribution(
        t_prime=sol.t_prime,
        action=action,
        prefactor=prefactor,
        amplitude=prefactor * cmath.exp(1j * action),
        orbit_label=GROUP_TO_ORBIT.get(sol.group, "a"),
    )


def sfa_orbit_amplitudes(
    field: LaserField,
    atom: TargetAtom,
    p,
    model: str = "unit",
    stokes_policy: str = "auto",
    references: Optional[Dict[str, complex]] = None,
    critical: Optional[float] = None,
) -> Dict[str, Optional[SfaOrbitContribution]]:
    """Single-cycle contributions of orbits a and b; None marks a discarded saddle"""
    t1, t2 = apply_stokes_policy(field, atom, p, grouped_times(field, atom, p), stokes_policy, critical)
    references = references or {}
    out: Dict[str, Optional[SfaOrbitContribution]] = {}
    for label, sol in (("a", t1), ("b", t2)):
        if sol.stokes_discarded:
            out[label] = None
        else:
            out[label] = orbit_amplitude(field, atom, p, sol, model, references.get(label))
    return out


def parse_orbit_set(orbit_set: Iterable[str], allowed: Sequence[str]) -> tuple:
    labels = tuple(dict.fromkeys(label.strip() for label in orbit_set if label.strip()))
    if not labels:
        raise DomainError("orbit set must not be empty")
    unknown = [label for label in labels if label not in allowed]
    if unknown:
        raise DomainError(f"unknown orbit labels {unknown}, expected a subset of {list(allowed)}")
    return labels


def sfa_transition_amplitude(
    field: LaserField,
    atom: TargetAtom,
    p,
    orbit_set: Iterable[str] = ("a", "b"),
    n_cycles: int = 1,
    model: str = "unit",
    stokes_policy: str = "auto",
) -> complex:
    """Coherent sum over the selected orbits and n_cycles field cycles"""
    labels = parse_orbit_set(orbit_set, ("a", "b"))
    factor = cycle_sum_factor(field, atom, p, n_cycles)
    contributions = sfa_orbit_amplitudes(field, atom, p, model, stokes_policy)
    total = 0j
    for label in labels:
        contribution = contributions[label]
        if contribution is not None:
            total += contribution.amplitude
    return total * factor
