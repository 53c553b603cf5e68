"""
Closed-form SFA ionization times for elliptically polarized fields.

The tunneling condition (p + A(t'))^2 + 2 ip = 0 becomes a quartic in
xi = cos(omega t' + phi). Its roots are obtained from the Ferrari resolvent,
mapped back to complex times, and every candidate is checked against the
tunneling condition. Candidates that fail are replaced by the polished
companion-matrix root nearest to them.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from errors import DegenerateParameterError, DomainError, ResolventDegeneracyError
from field_potential import LaserField, TargetAtom

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
CONDITIONING_EPS = 0.995
STOKES_STEP = 0.01
STOKES_RADIUS = 10.0
STOKES_KEEP_BOTH_EPS = 0.35
STOKES_ZERO_GAP = 1e-9
MAX_POLISH_STEP = 0.25
# a raw closed-form candidate within this relative residual is polished, not replaced
_CANDIDATE_ACCEPT = 1e-6


class Branch(str, Enum):
    T11 = "t11"
    T12 = "t12"
    T21 = "t21"
    T22 = "t22"
    CIRCULAR = "circular"


class Group(str, Enum):
    T1 = "t1"
    T2 = "t2"


class StokesVerdict(str, Enum):
    KEEP_BOTH = "keep both"
    DISCARD_T2 = "discard t2"
    DISCARD_T1 = "discard t1"


@dataclass(frozen=True)
class IonizationSolution:
    t_prime: complex
    branch: Branch
    group: Group
    cycle_n: int = 0
    valid_quadrant: bool = True
    stokes_discarded: bool = False
    residual: float = 0.0
    from_fallback: bool = False


@dataclass(frozen=True)
class QuarticResolvent:
    """Monic quartic in xi plus the resolvent quantities of its closed-form roots"""

    a3: complex
    a2: complex
    a1: complex
    a0: complex
    pbar_z: float = 0.0
    pbar_x: float = 0.0
    u_bar: float = 0.0
    eps: float = 0.0
    delta0: Optional[complex] = None
    delta1: Optional[complex] = None
    q: Optional[complex] = None
    zeta: Optional[complex] = None
    eta: Optional[complex] = None

    @property
    def coefficients(self) -> List[complex]:
        return [1.0, self.a3, self.a2, self.a1, self.a0]

    @property
    def depressed_p(self) -> complex:
        return self.a2 - 3 * self.a3 ** 2 / 8

    @property
    def depressed_q(self) -> complex:
        return (self.a3 ** 3 - 4 * self.a3 * self.a2 + 8 * self.a1) / 8


def residual_tolerance(atom: TargetAtom) -> float:
    return 1e-9 * max(1.0, 2 * atom.ip)


def saddle_residual(field: LaserField, atom: TargetAtom, p, t_prime) -> complex:
    """(p_z + A_z)^2 + (p_x + A_x)^2 + 2 ip, zero at a tunneling saddle"""
    a = field.vector_potential(t_prime)
    return complex((p[0] + a[0]) ** 2 + (p[1] + a[1]) ** 2 + 2 * atom.ip)


def _residual_slope(field: LaserField, p, t_prime) -> complex:
    a = field.vector_potential(t_prime)
    e = field.electric_field(t_prime)
    return complex(-2 * ((p[0] + a[0]) * e[0] + (p[1] + a[1]) * e[1]))


def polish_time(field: LaserField, atom: TargetAtom, p, t_prime: complex, max_steps: int = 12) -> complex:
    """Complex Newton refinement of a saddle time"""
    t = complex(t_prime)
    for _ in range(max_steps):
        f = saddle_residual(field, atom, p, t)
        if abs(f) < 1e-15 * max(1.0, 2 * atom.ip):
            break
        slope = _residual_slope(field, p, t)
        if slope == 0:
            break
        step = f / slope
        # a near-flat residual throws Newton off the saddle; stay where we are
        if not cmath.isfinite(step) or abs(step) > MAX_POLISH_STEP * field.period:
            logger.debug("polish step %.3g at t=%s exceeds the step limit", abs(step), t)
            break
        t -= step
        if abs(step) < 1e-15 * max(1.0, abs(t)):
            break
    return t


def _check_quartic_route(field: LaserField):
    if field.eps >= 1.0:
        raise DegenerateParameterError("eps = 1 has no quartic form; use circular_limit_times")
    if field.eps > CONDITIONING_EPS:
        logger.warning("ellipticity %.4f is close to 1: quartic coefficients are ill conditioned", field.eps)


def quartic_coefficients(field: LaserField, atom: TargetAtom, p) -> QuarticResolvent:
    _check_quartic_route(field)
    eps2 = field.eps ** 2
    scale = field.a0 * (1 - eps2)
    pbar_z = float(p[0]) / scale
    pbar_x = float(p[1]) / scale
    p2 = float(p[0]) ** 2 + float(p[1]) ** 2
    u_bar = (p2 + 2 * atom.ip) / (field.a0 ** 2 * (1 - eps2)) + eps2 / (1 - eps2)
    return QuarticResolvent(
        a3=4 * pbar_z,
        a2=2 * u_bar + 4 * pbar_z ** 2 + 4 * eps2 * pbar_x ** 2,
        a1=4 * pbar_z * u_bar,
        a0=u_bar ** 2 - 4 * eps2 * pbar_x ** 2,
        pbar_z=pbar_z,
        pbar_x=pbar_x,
        u_bar=u_bar,
        eps=field.eps,
    )


def resolvent_zeta_eta(coeffs: QuarticResolvent) -> Tuple[complex, complex]:
    """Resolvent pair (zeta, eta) of the closed-form roots.

    The principal cube root is used for Q. If it makes zeta vanish while the
    quartic still has a linear term after depressing, the other two cube-root
    branches are tried and the one with the largest |zeta| is kept.
    """
    return _solve_resolvent(coeffs)[3:]


def _solve_resolvent(coeffs: QuarticResolvent):
    a3, a2, a1, a0 = coeffs.a3, coeffs.a2, coeffs.a1, coeffs.a0
    delta0 = a2 ** 2 - 3 * a3 * a1 + 12 * a0
    delta1 = 2 * a2 ** 3 - 9 * a3 * a2 * a1 + 27 * a3 ** 2 * a0 + 27 * a1 ** 2 - 72 * a2 * a0
    if coeffs.eps == 0.0:
        # perfect square quartic; the resolvent sits at its linear-polarization limit
        return delta0, delta1, complex("nan"), 0j, 0j
    p_dep = coeffs.depressed_p
    q_dep = coeffs.depressed_q
    q_cubed = (delta1 + 1j * cmath.sqrt(4 * delta0 ** 3 - delta1 ** 2)) / 2
    if abs(q_cubed) < 1e-300:
        q_cubed = (delta1 - 1j * cmath.sqrt(4 * delta0 ** 3 - delta1 ** 2)) / 2
    scale = max(1.0, abs(a2), abs(a3) ** 2)
    if abs(q_cubed) < 1e-300:
        zeta = 0.5 * cmath.sqrt(-2 * p_dep / 3)
        q_root = 0j
    else:
        principal = q_cubed ** (1 / 3)
        rotations = [1, cmath.exp(2j * math.pi / 3), cmath.exp(-2j * math.pi / 3)]
        options = []
        for rot in rotations:
            q_k = principal * rot
            options.append((q_k, 0.5 * cmath.sqrt(-2 * p_dep / 3 + (q_k + delta0 / q_k) / 3)))
        q_root, zeta = options[0]
        if abs(zeta) < 1e-12 * math.sqrt(scale) and abs(q_dep) > 0:
            q_root, zeta = max(options, key=lambda item: abs(item[1]))
    if q_dep == 0:
        eta = 0j
    elif abs(zeta) == 0:
        raise ResolventDegeneracyError("resolvent zeta vanishes with a nonzero linear term")
    else:
        eta = q_dep / zeta
    return delta0, delta1, q_root, zeta, eta


def solve_resolvent(coeffs: QuarticResolvent) -> QuarticResolvent:
    delta0, delta1, q_root, zeta, eta = _solve_resolvent(coeffs)
    return replace(coeffs, delta0=delta0, delta1=delta1, q=q_root, zeta=zeta, eta=eta)


def closed_form_xi(res: QuarticResolvent) -> Dict[Branch, complex]:
    """cos(omega t' + phi) for the four candidate branches"""
    zeta, eta = res.zeta, res.eta
    two_p = 2 * res.depressed_p
    plus = 0.5j * cmath.sqrt(4 * zeta ** 2 + two_p + eta)
    minus = 0.5j * cmath.sqrt(4 * zeta ** 2 + two_p - eta)
    shift = -res.pbar_z
    return {
        Branch.T11: shift + zeta + plus,
        Branch.T12: shift - zeta + minus,
        Branch.T21: shift + zeta - plus,
        Branch.T22: shift - zeta - minus,
    }


def _phase_to_time(field: LaserField, theta: complex, cycle_n: int) -> complex:
    return (theta - field.phi) / field.omega + cycle_n * field.period


def _time_to_phase(field: LaserField, t: complex) -> complex:
    return field.omega * t + field.phi


def _wrap_phase(theta: complex) -> complex:
    return complex(theta.real % TWO_PI, theta.imag)


def companion_saddles(field: LaserField, atom: TargetAtom, p, cycle_n: int = 0) -> List[complex]:
    """Upper-half-plane saddle times of one cycle from companion-matrix roots"""
    coeffs = quartic_coefficients(field, atom, p)
    roots = np.roots(np.array(coeffs.coefficients, dtype=complex))
    tol = residual_tolerance(atom)
    found: List[complex] = []
    for xi in roots:
        base = cmath.acos(complex(xi))
        for theta in (base, TWO_PI - base):
            if theta.imag <= 0:
                theta = theta.conjugate()
            t = polish_time(field, atom, p, _phase_to_time(field, theta, 0))
            theta = _wrap_phase(_time_to_phase(field, t))
            t = _phase_to_time(field, theta, cycle_n)
            if theta.imag <= 0 or abs(saddle_residual(field, atom, p, t)) > tol:
                continue
            if all(_phase_distance(field, t, other) > 1e-7 for other in found):
                found.append(t)
    found.sort(key=lambda t: (t.real, t.imag))
    return found


def _phase_distance(field: LaserField, t_a: complex, t_b: complex) -> float:
    d = _time_to_phase(field, t_a) - _time_to_phase(field, t_b)
    re = (d.real + math.pi) % TWO_PI - math.pi
    return abs(complex(re, d.imag))


def candidate_times(field: LaserField, atom: TargetAtom, p, cycle_n: int = 0) -> Dict[Branch, IonizationSolution]:
    """The four closed-form candidates, validated against the tunneling condition"""
    coeffs = quartic_coefficients(field, atom, p)
    tol = residual_tolerance(atom)
    try:
        res = solve_resolvent(coeffs)
        xis = closed_form_xi(res)
    except ResolventDegeneracyError:
        logger.debug("resolvent degenerate at p=%s, using companion roots", p)
        xis = {}
    pool: Optional[List[complex]] = None
    out: Dict[Branch, IonizationSolution] = {}
    for branch in (Branch.T11, Branch.T12, Branch.T21, Branch.T22):
        group = Group.T1 if branch in (Branch.T11, Branch.T12) else Group.T2
        t_raw = None
        if branch in xis:
            arc = cmath.acos(xis[branch])
            theta = TWO_PI - arc if group is Group.T1 else arc
            t_raw = _phase_to_time(field, theta, cycle_n)
        accepted = (
            t_raw is not None
            and t_raw.imag > 0
            and abs(saddle_residual(field, atom, p, t_raw)) < _CANDIDATE_ACCEPT * max(1.0, 2 * atom.ip)
        )
        fallback = False
        if accepted:
            t = polish_time(field, atom, p, t_raw)
            accepted = t.imag > 0 and abs(saddle_residual(field, atom, p, t)) < tol
        if not accepted:
            if pool is None:
                pool = companion_saddles(field, atom, p, cycle_n)
            if not pool:
                raise ResolventDegeneracyError(f"no upper-half-plane saddle found for p={tuple(p)}")
            target = t_raw if t_raw is not None else _phase_to_time(field, math.pi * (1.5 if group is Group.T1 else 0.5), cycle_n)
            target = complex(target.real, abs(target.imag))
            t = min(pool, key=lambda cand: _phase_distance(field, cand, target))
            fallback = True
        out[branch] = IonizationSolution(
            t_prime=t,
            branch=branch,
            group=group,
            cycle_n=cycle_n,
            valid_quadrant=_quadrant_branch(p, group) is branch,
            residual=abs(saddle_residual(field, atom, p, t)),
            from_fallback=fallback,
        )
    return out


def _quadrant_branch(p, group: Group) -> Branch:
    same_sign = float(p[0]) * float(p[1]) >= 0
    if group is Group.T1:
        return Branch.T11 if same_sign else Branch.T12
    return Branch.T21 if same_sign else Branch.T22


def grouped_times(field: LaserField, atom: TargetAtom, p, cycle_n: int = 0) -> Tuple[IonizationSolution, IonizationSolution]:
    """Quadrant-selected pair (t1, t2); t1 drives orbit a and t2 orbit b"""
    if field.eps >= 1.0:
        (only,) = circular_limit_times(field, atom, p, cycle_n)
        return only, replace(only, group=Group.T2, stokes_discarded=True)
    candidates = candidate_times(field, atom, p, cycle_n)
    t1 = candidates[_quadrant_branch(p, Group.T1)]
    t2 = candidates[_quadrant_branch(p, Group.T2)]
    if _phase_distance(field, t1.t_prime, t2.t_prime) < 1e-7:
        pool = companion_saddles(field, atom, p, cycle_n)
        others = [t for t in pool if _phase_distance(field, t, t1.t_prime) > 1e-7]
        if others:
            keep_t1 = not t1.from_fallback or t2.from_fallback
            if keep_t1:
                t2 = replace(t2, t_prime=others[0], from_fallback=True,
                             residual=abs(saddle_residual(field, atom, p, others[0])))
            else:
                t1 = replace(t1, t_prime=others[0], from_fallback=True,
                             residual=abs(saddle_residual(field, atom, p, others[0])))
    return t1, t2


def linear_limit_times(field: LaserField, atom: TargetAtom, p, cycle_n: int = 0) -> Tuple[complex, complex]:
    """Closed-form linear-polarization pair, used as a reference at eps = 0"""
    root = cmath.sqrt(2 * atom.ip + float(p[1]) ** 2)
    denom = 2 * math.sqrt(field.up)
    xi_1 = (-float(p[0]) + 1j * root) / denom
    xi_2 = (-float(p[0]) - 1j * root) / denom
    t1 = _phase_to_time(field, TWO_PI - cmath.acos(xi_1), cycle_n)
    t2 = _phase_to_time(field, cmath.acos(xi_2), cycle_n)
    return t1, t2


def circular_limit_times(field: LaserField, atom: TargetAtom, p, cycle_n: int = 0) -> List[IonizationSolution]:
    """Single saddle per cycle for circular polarization.

    cos(theta - alpha) = -(p^2/2 + ip + up) / (|p| sqrt(2 up)), alpha being the
    emission angle in the (z, x) plane, so Re theta = alpha + pi.
    """
    if not math.isclose(field.eps, 1.0):
        raise DomainError(f"circular limit requires eps = 1, got {field.eps}")
    pz, px = float(p[0]), float(p[1])
    magnitude = math.hypot(pz, px)
    if magnitude == 0.0:
        raise DomainError("circular limit has no saddle at p = 0")
    alpha = math.atan2(px, pz)
    ratio = (0.5 * magnitude ** 2 + atom.ip + field.up) / (magnitude * math.sqrt(2 * field.up))
    theta = complex((alpha + math.pi) % TWO_PI, math.acosh(ratio))
    t = _phase_to_time(field, theta, cycle_n)
    return [
        IonizationSolution(
            t_prime=t,
            branch=Branch.CIRCULAR,
            group=Group.T1,
            cycle_n=cycle_n,
            residual=abs(saddle_residual(field, atom, p, t)),
        )
    ]


def _action(field: LaserField, atom: TargetAtom, p, t_prime: complex) -> complex:
    # deferred import keeps the amplitude module free to import this one
    from sfa_amplitude import direct_action

    return direct_action(field, atom, p, t_prime)


def _real_action_gap(field: LaserField, atom: TargetAtom, direction: Tuple[float, float], radius: float) -> float:
    p = (radius * direction[0], radius * direction[1])
    t1, t2 = grouped_times(field, atom, p)
    return (_action(field, atom, p, t1.t_prime) - _action(field, atom, p, t2.t_prime)).real


def _zero_gap_onset(field: LaserField, atom: TargetAtom, direction: Tuple[float, float], lo: float, hi: float,
                    xtol: float = 1e-10) -> float:
    # invariant: the gap is nonzero at lo and zero at hi
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if abs(_real_action_gap(field, atom, direction, mid)) <= STOKES_ZERO_GAP:
            hi = mid
        else:
            lo = mid
    return hi


def stokes_critical_momentum(
    field: LaserField,
    atom: TargetAtom,
    angle: float,
    step: float = STOKES_STEP,
    radius: float = STOKES_RADIUS,
) -> float:
    """Radius along the ray at angle (from +z toward +x) where Re S(t1) = Re S(t2).

    The gap either changes sign or, where the two saddles coalesce, drops to
    zero and stays there; the onset of that zero is located by bisection.
    Returns ``math.inf`` when neither happens within ``radius``.
    """
    if not 0.0 < field.eps < 1.0:
        raise DomainError(f"Stokes search needs 0 < eps < 1, got {field.eps}")
    direction = (math.cos(angle), math.sin(angle))
    radii = np.arange(step, radius + 0.5 * step, step)
    previous_r = float(radii[0])
    previous = _real_action_gap(field, atom, direction, previous_r)
    # a jump of more than this is a branch switch, not a crossing
    jump_limit = 0.5 * field.period * field.up
    for r in radii[1:]:
        r = float(r)
        value = _real_action_gap(field, atom, direction, r)
        if abs(previous) > STOKES_ZERO_GAP and abs(value) <= STOKES_ZERO_GAP:
            onset = _zero_gap_onset(field, atom, direction, previous_r, r)
            logger.debug("saddles coalesce at |p|=%.6f for eps=%.3f angle=%.3f", onset, field.eps, angle)
            return onset
        if previous * value < 0 and abs(value - previous) < jump_limit:
            root = brentq(lambda x: _real_action_gap(field, atom, direction, x), previous_r, r, xtol=1e-12, rtol=1e-14)
            logger.debug("Stokes crossing at |p|=%.6f for eps=%.3f angle=%.3f", root, field.eps, angle)
            return float(root)
        previous_r, previous = r, value
    return math.inf


def is_beyond_stokes(
    field: LaserField,
    atom: TargetAtom,
    p,
    critical: Optional[float] = None,
) -> StokesVerdict:
    """Which saddle, if any, must be dropped at momentum p"""
    magnitude = math.hypot(float(p[0]), float(p[1]))
    if field.eps == 0.0 or field.eps >= 1.0 or magnitude == 0.0:
        return StokesVerdict.KEEP_BOTH
    if critical is None:
        critical = stokes_critical_momentum(field, atom, math.atan2(float(p[1]), float(p[0])))
    if magnitude <= critical:
        return StokesVerdict.KEEP_BOTH
    t1, t2 = grouped_times(field, atom, p)
    s1 = _action(field, atom, p, t1.t_prime)
    s2 = _action(field, atom, p, t2.t_prime)
    return StokesVerdict.DISCARD_T2 if s2.imag > s1.imag else StokesVerdict.DISCARD_T1


def apply_stokes_policy(
    field: LaserField,
    atom: TargetAtom,
    p,
    pair: Sequence[IonizationSolution],
    policy: str = "auto",
    critical: Optional[float] = None,
) -> Tuple[IonizationSolution, IonizationSolution]:
    """Flag the subdominant saddle beyond a Stokes transition.

    ``policy`` is ``keep`` (never discard), ``discard`` (always check) or
    ``auto`` (check only above the keep-both ellipticity threshold).
    """
    t1, t2 = pair
    if policy not in ("keep", "discard", "auto"):
        raise DomainError(f"unknown Stokes policy {policy!r}")
    if policy == "keep" or (policy == "auto" and field.eps <= STOKES_KEEP_BOTH_EPS):
        return t1, t2
    verdict = is_beyond_stokes(field, atom, p, critical)
    if verdict is StokesVerdict.DISCARD_T2:
        t2 = replace(t2, stokes_discarded=True)
    elif verdict is StokesVerdict.DISCARD_T1:
        t1 = replace(t1, stokes_discarded=True)
    return t1, t2
