"""
Coulomb quantum-orbit engine.

An orbit starts at a complex ionization time t' with a constant momentum p0
along the sub-barrier leg, leaves the barrier at the tunnel exit at Re t',
and is then propagated in real time through the laser field and the binding
potential. The final momentum is mapped to the detector with field-free
Coulomb asymptotics. Newton shooting adjusts (Re t', Im t', p0) until the
tunneling condition holds and the detector momentum hits its target;
neighbouring targets are reached by continuation.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass, field as dataclass_field, replace
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad, solve_ivp

from errors import (
    BoundElectronError,
    ConvergenceError,
    DomainError,
    HardCollisionError,
    IntegrationError,
    MaslovContinuityError,
    NumericalError,
)
from field_potential import LaserField, TargetAtom
from sfa_amplitude import DIPOLE_MODELS, saddle_prefactor
from sfa_times import Group, grouped_times, saddle_residual

logger = logging.getLogger(__name__)

HORIZON_CYCLES = 20
RTOL = 1e-10
ATOL = 1e-12
CLOSE_ENCOUNTER = 0.1
COLLISION_RADIUS = 1e-4
MIN_STEP = 1e-6
NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-8
TARGET_TOL = 1e-6
FD_STEP = 1e-6
MAX_BISECTIONS = 6
SEED_RADIUS = 1.2
SWEEP_STEP = 0.05
SPOKE_SPACING = 0.25
MIN_SPOKES = 8
TIE_TOL = 10 * TARGET_TOL
SAME_ORBIT_TOL = 1e-4

_IDENTITY4 = np.eye(4)
_J = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


class Direction(str, Enum):
    CLOCKWISE = "clockwise"
    COUNTERCLOCKWISE = "counterclockwise"


CLASS_LABELS = {
    (Group.T1, Direction.COUNTERCLOCKWISE): "A",
    (Group.T1, Direction.CLOCKWISE): "B",
    (Group.T2, Direction.COUNTERCLOCKWISE): "C",
    (Group.T2, Direction.CLOCKWISE): "D",
}

# legacy orbit number -> orbit letter in quadrants 1..4 of the (p_z, p_x) plane
ORBIT_TABLE = {
    1: ("a", "b", "b", "a"),
    2: ("b", "a", "a", "b"),
    3: ("c", "d", "d", "c"),
    4: ("d", "c", "c", "d"),
}


@dataclass
class Trajectory:
    tau: np.ndarray
    r: np.ndarray
    p: np.ndarray
    stability: np.ndarray
    action: np.ndarray
    t_start: float
    t_end: float
    close_encounter: bool = False
    min_radius: float = math.inf

    @property
    def final_state(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.r[-1].copy(), self.p[-1].copy()

    @property
    def final_stability(self) -> np.ndarray:
        return self.stability[-1]

    def symplectic_defect(self) -> float:
        m = self.final_stability
        return float(np.max(np.abs(m.T @ _J @ m - _J)))

    def momentum_determinants(self) -> np.ndarray:
        """det dp(tau)/dp(t_start) along the stored samples"""
        return np.linalg.det(self.stability[:, 2:4, 2:4])


@dataclass(frozen=True)
class OrbitSolution:
    """A CQSFA saddle. Seeds only need ``t_prime`` and ``p0``."""

    t_prime: complex
    p0: Tuple[float, float]
    exit_position: Optional[Tuple[float, float]] = None
    pf: Optional[Tuple[float, float]] = None
    target: Optional[Tuple[float, float]] = None
    action: Optional[complex] = None
    stability_det: Optional[float] = None
    maslov_phase: Optional[float] = None
    prefactor: Optional[complex] = None
    class_label: Optional[str] = None
    orbit_label: Optional[str] = None
    legacy_label: Optional[int] = None
    seed_group: Group = Group.T1
    iterations: int = 0
    residual: float = math.nan
    label_tie: bool = False
    trajectory: Optional[Trajectory] = dataclass_field(default=None, compare=False, repr=False)

    @property
    def converged(self) -> bool:
        return self.pf is not None and self.action is not None

    def stability_root(self) -> complex:
        """Square root of the stability determinant on the tracked branch"""
        if self.stability_det is None or self.maslov_phase is None:
            raise MaslovContinuityError("stability determinant or its branch phase is missing")
        return math.sqrt(abs(self.stability_det)) * cmath.exp(0.5j * self.maslov_phase)

    def amplitude(self) -> complex:
        if self.prefactor is None or self.action is None:
            raise MaslovContinuityError("orbit has no assembled prefactor")
        return self.prefactor / self.stability_root() * cmath.exp(1j * self.action)


@dataclass(frozen=True)
class SolverSettings:
    horizon_cycles: float = HORIZON_CYCLES
    rtol: float = RTOL
    atol: float = ATOL
    newton_max_iter: int = NEWTON_MAX_ITER
    newton_tol: float = NEWTON_TOL
    fd_step: float = FD_STEP
    jacobian: str = "finite_difference"
    model: str = "unit"
    max_bisections: int = MAX_BISECTIONS
    max_path_step: float = 0.1

    def __post_init__(self):
        if self.jacobian not in ("finite_difference", "stability"):
            raise DomainError(f"unknown Jacobian mode {self.jacobian!r}")
        if self.model not in DIPOLE_MODELS:
            raise DomainError(f"unknown dipole model {self.model!r}")


DEFAULT_SETTINGS = SolverSettings()


def _free_phase(field: Optional[LaserField], p, t) -> complex:
    """Antiderivative of (p + A(t))^2 / 2"""
    pz, px = p[0], p[1]
    value = 0.5 * (pz * pz + px * px) * t
    if field is not None:
        a_int = field.vector_potential_integral(t)
        value = value + pz * a_int[0] + px * a_int[1] + 0.5 * field.a_squared_integral(t)
    return value


def tunnel_exit(field: LaserField, p0, t_prime: complex) -> np.ndarray:
    """Real part of the sub-barrier displacement from t' down to Re t'"""
    if not t_prime.imag > 0:
        raise DomainError(f"ionization time must lie in the upper half plane, got {t_prime}")
    t_r = t_prime.real
    shift = field.vector_potential_integral(t_r) - field.vector_potential_integral(t_prime)
    drift = np.asarray(p0, dtype=float) * (t_r - t_prime)
    return np.real(drift + shift).astype(float)


def tunnel_exit_quadrature(field: LaserField, p0, t_prime: complex) -> np.ndarray:
    """Numerical contour integral of p0 + A along the vertical leg"""
    t_r, t_i = t_prime.real, t_prime.imag

    def component(k: int) -> float:
        # tau = t_r + i s, s from t_i down to 0; d tau = i ds
        return quad(lambda s: (1j * (p0[k] + field.vector_potential(t_r + 1j * s)[k])).real, t_i, 0.0,
                    epsabs=1e-13, epsrel=1e-13)[0]

    return np.array([component(0), component(1)])


def sub_barrier_action(field: LaserField, atom: TargetAtom, p0, t_prime: complex) -> complex:
    """ip t' minus the kinetic integral from t' to Re t' at constant p0"""
    if not t_prime.imag > 0:
        raise DomainError(f"ionization time must lie in the upper half plane, got {t_prime}")
    p0 = (float(p0[0]), float(p0[1]))
    t_r = t_prime.real
    return complex(atom.ip * t_prime - (_free_phase(field, p0, t_r) - _free_phase(field, p0, t_prime)))


def sub_barrier_action_quadrature(field: LaserField, atom: TargetAtom, p0, t_prime: complex) -> complex:
    t_r, t_i = t_prime.real, t_prime.imag

    def integrand(s: float) -> complex:
        a = field.vector_potential(t_r + 1j * s)
        return 0.5 * ((p0[0] + a[0]) ** 2 + (p0[1] + a[1]) ** 2) * 1j

    re = quad(lambda s: integrand(s).real, t_i, 0.0, epsabs=1e-13, epsrel=1e-13)[0]
    im = quad(lambda s: integrand(s).imag, t_i, 0.0, epsabs=1e-13, epsrel=1e-13)[0]
    return atom.ip * t_prime - complex(re, im)


def _free_trajectory(field: Optional[LaserField], r_start, p_start, t_start: float, duration: float,
                     samples: int = 201) -> Trajectory:
    tau = np.linspace(t_start, t_start + duration, samples)
    p = np.asarray(p_start, dtype=float)
    if field is not None:
        a_int = field.vector_potential_integral(tau).T
        a_start = field.vector_potential_integral(t_start)
    else:
        a_int = np.zeros((samples, 2))
        a_start = np.zeros(2)
    r = np.asarray(r_start, dtype=float) + np.outer(tau - t_start, p) + a_int - a_start
    stability = np.repeat(_IDENTITY4[None, :, :], samples, axis=0)
    stability[:, 0, 2] = tau - t_start
    stability[:, 1, 3] = tau - t_start
    action = -(np.asarray(_free_phase(field, p, tau), dtype=float) - float(_free_phase(field, p, t_start)))
    return Trajectory(
        tau=tau,
        r=r,
        p=np.repeat(p[None, :], samples, axis=0),
        stability=stability,
        action=action,
        t_start=t_start,
        t_end=t_start + duration,
        min_radius=float(np.min(np.hypot(r[:, 0], r[:, 1]))),
    )


def _equations(field: Optional[LaserField], atom: TargetAtom) -> Callable:
    def rhs(tau: float, y: np.ndarray) -> np.ndarray:
        r = y[0:2]
        p = y[2:4]
        m = y[4:20].reshape(4, 4)
        radius = math.hypot(r[0], r[1])
        if field is not None:
            a = field.vector_potential(tau)
            vz, vx = p[0] + a[0], p[1] + a[1]
        else:
            vz, vx = p[0], p[1]
        if atom.has_potential and radius < atom.cutoff_radius:
            v, dv, d2v = atom.radial_derivatives(radius)
            n = r / radius
            grad = dv * n
            outer = np.outer(n, n)
            hess = d2v * outer + (dv / radius) * (np.eye(2) - outer)
        else:
            v, grad, hess = 0.0, np.zeros(2), np.zeros((2, 2))
        jac = np.zeros((4, 4))
        jac[0, 2] = jac[1, 3] = 1.0
        jac[2:4, 0:2] = -hess
        dp = -grad
        ds = -(dp[0] * r[0] + dp[1] * r[1] + 0.5 * (vz * vz + vx * vx) + v)
        out = np.empty(21)
        out[0] = vz
        out[1] = vx
        out[2:4] = dp
        out[4:20] = (jac @ m).ravel()
        out[20] = ds
        return out

    return rhs


def propagate(
    field: Optional[LaserField],
    atom: TargetAtom,
    r_start,
    p_start,
    t_start: float,
    duration: float,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> Trajectory:
    """Integrate r' = p + A, p' = -grad V with the 4x4 stability matrix and the action.

    ``field=None`` propagates field free.
    """
    r_start = np.asarray(r_start, dtype=float)
    if math.hypot(r_start[0], r_start[1]) == 0.0 and atom.has_potential:
        raise DomainError("propagation cannot start at the origin")
    if not atom.has_potential:
        return _free_trajectory(field, r_start, p_start, t_start, duration)

    y0 = np.concatenate([r_start, np.asarray(p_start, dtype=float), _IDENTITY4.ravel(), [0.0]])

    def collision(tau, y):
        return math.hypot(y[0], y[1]) - COLLISION_RADIUS

    collision.terminal = True
    collision.direction = -1

    sol = solve_ivp(
        _equations(field, atom),
        (t_start, t_start + duration),
        y0,
        method="DOP853",
        rtol=rtol,
        atol=atol,
        events=collision,
    )
    if sol.status == 1:
        raise HardCollisionError(f"trajectory hit the core at tau={sol.t_events[0][0]:.6f}")
    if sol.status < 0:
        raise IntegrationError(f"integration failed: {sol.message}")
    y = sol.y.T
    radii = np.hypot(y[:, 0], y[:, 1])
    steps = np.diff(sol.t)
    if steps.size and np.min(steps) < MIN_STEP and np.min(radii) > CLOSE_ENCOUNTER:
        logger.debug("very small integration step %.2e away from the core", np.min(steps))
    traj = Trajectory(
        tau=sol.t,
        r=y[:, 0:2],
        p=y[:, 2:4],
        stability=y[:, 4:20].reshape(-1, 4, 4),
        action=y[:, 20],
        t_start=t_start,
        t_end=float(sol.t[-1]),
        min_radius=float(np.min(radii)),
    )
    traj.close_encounter = traj.min_radius < CLOSE_ENCOUNTER
    if traj.close_encounter:
        logger.debug("close encounter: min |r| = %.3e", traj.min_radius)
    return traj


def _extend_to_cutoff(atom: TargetAtom, traj: Trajectory, max_time: float = 1e5) -> Tuple[np.ndarray, np.ndarray, float, float]:
    """Field-free continuation until the truncated potential vanishes.

    Returns (r, p, elapsed time, action increment without the final-momentum term).
    """
    r, p = traj.final_state
    cutoff = atom.cutoff_radius
    if math.hypot(r[0], r[1]) >= cutoff:
        return r, p, 0.0, 0.0
    y0 = np.concatenate([r, p, _IDENTITY4.ravel(), [0.0]])

    def reached(tau, y):
        return math.hypot(y[0], y[1]) - cutoff

    reached.terminal = True
    reached.direction = 1
    sol = solve_ivp(_equations(None, atom), (0.0, max_time), y0, method="DOP853",
                    rtol=RTOL, atol=ATOL, events=reached)
    if sol.status != 1:
        raise BoundElectronError("electron never leaves the truncated potential")
    y = sol.y[:, -1]
    return y[0:2], y[2:4], float(sol.t[-1]), float(y[20])


def asymptotic_momentum(atom: TargetAtom, r, p) -> np.ndarray:
    """Detector momentum of a field-free electron at (r, p)"""
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    radius = math.hypot(r[0], r[1])
    if not atom.has_potential or radius >= atom.cutoff_radius:
        return p.copy()
    if atom.truncation is not None:
        raise DomainError("truncated potential: continue propagation beyond the cutoff first")
    z = atom.z_eff
    energy = 0.5 * float(p @ p) - z / radius
    if energy <= 0:
        raise BoundElectronError(f"electron is bound (E = {energy:.3e})")
    k = math.sqrt(2 * energy)
    ang = r[0] * p[1] - r[1] * p[0]
    runge_lenz = ang * np.array([p[1], -p[0]]) - z * r / radius
    l_cross_a = ang * np.array([-runge_lenz[1], runge_lenz[0]])
    return k * (k * l_cross_a - z * runge_lenz) / (z ** 2 + k ** 2 * ang ** 2)


def coulomb_tail_phase(atom: TargetAtom, r, p) -> float:
    """Regularized Coulomb phase accumulated from (r, p) to infinity without a field"""
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    radius = math.hypot(r[0], r[1])
    if not atom.has_potential or atom.truncation is not None or radius >= atom.cutoff_radius:
        return 0.0
    z = atom.z_eff
    energy = 0.5 * float(p @ p) - z / radius
    if energy <= 0:
        raise BoundElectronError(f"electron is bound (E = {energy:.3e})")
    k = math.sqrt(2 * energy)
    ang = r[0] * p[1] - r[1] * p[0]
    a = z / k ** 2
    ecc = math.sqrt(1 + (k * ang / z) ** 2)
    cosh_f = max(1.0, (1 + radius / a) / ecc)
    f_end = math.copysign(math.acosh(cosh_f), float(r @ p))
    time_scale = math.sqrt(a ** 3 / z)
    return (z / k) * (math.log(2 / (ecc * time_scale)) - f_end)


def real_time_action(traj: Trajectory, atom: TargetAtom, field: Optional[LaserField], pf) -> float:
    """Real-leg action measured against a free electron carrying the final momentum"""
    r_end, p_end = traj.final_state
    tail = 0.0
    if atom.has_potential:
        if atom.truncation is not None:
            _, _, elapsed, increment = _extend_to_cutoff(atom, traj)
            tail = increment + 0.5 * float(np.dot(pf, pf)) * elapsed
        else:
            tail = coulomb_tail_phase(atom, r_end, p_end)
    reference = _free_phase(field, (float(pf[0]), float(pf[1])), traj.t_end)
    return float(traj.action[-1] + tail + float(np.real(reference)))


def final_momentum(atom: TargetAtom, traj: Trajectory) -> np.ndarray:
    r_end, p_end = traj.final_state
    if atom.has_potential and atom.truncation is not None:
        _, p_cut, _, _ = _extend_to_cutoff(atom, traj)
        return np.asarray(p_cut, dtype=float)
    return asymptotic_momentum(atom, r_end, p_end)


def _maslov_phase(traj: Trajectory) -> float:
    """pi per sign change of det dp/dp0 along the trajectory, plus the final sign"""
    dets = traj.momentum_determinants()
    signs = np.sign(dets[np.abs(dets) > 0])
    crossings = int(np.count_nonzero(np.diff(signs) != 0)) if signs.size > 1 else 0
    return math.pi * crossings


def _unpack(x: np.ndarray) -> Tuple[complex, Tuple[float, float]]:
    return complex(x[0], x[1]), (float(x[2]), float(x[3]))


class _Shooter:
    """Residual map (Re t', Im t', p0z, p0x) -> (tunneling, momentum mismatch)"""

    def __init__(self, field: LaserField, atom: TargetAtom, target, t_end: float, settings: SolverSettings):
        self.field = field
        self.atom = atom
        self.target = np.asarray(target, dtype=float)
        self.t_end = t_end
        self.settings = settings

    def flow(self, x: np.ndarray):
        t_prime, p0 = _unpack(x)
        if t_prime.imag <= 0:
            raise DomainError("Newton step left the upper half plane")
        r0 = tunnel_exit(self.field, p0, t_prime)
        traj = propagate(self.field, self.atom, r0, p0, t_prime.real, self.t_end - t_prime.real,
                         rtol=self.settings.rtol, atol=self.settings.atol)
        pf = final_momentum(self.atom, traj)
        return t_prime, p0, r0, traj, pf

    def residual(self, x: np.ndarray, flow=None) -> np.ndarray:
        if flow is None:
            flow = self.flow(x)
        t_prime, p0, _, _, pf = flow
        tunnel = saddle_residual(self.field, self.atom, p0, t_prime)
        return np.array([tunnel.real, tunnel.imag, pf[0] - self.target[0], pf[1] - self.target[1]])

    def jacobian(self, x: np.ndarray, f0: np.ndarray, flow) -> np.ndarray:
        if self.settings.jacobian == "stability" and self.atom.truncation is None:
            return self._stability_jacobian(x, flow)
        jac = np.empty((4, 4))
        h = self.settings.fd_step
        for k in range(4):
            shifted = x.copy()
            shifted[k] += h
            jac[:, k] = (self.residual(shifted) - f0) / h
        return jac

    def _stability_jacobian(self, x: np.ndarray, flow) -> np.ndarray:
        t_prime, p0, r0, traj, _ = flow
        jac = np.zeros((4, 4))
        a = self.field.vector_potential(t_prime)
        e = self.field.electric_field(t_prime)
        vz, vx = p0[0] + a[0], p0[1] + a[1]
        dt = complex(-2 * (vz * e[0] + vx * e[1]))
        jac[0:2, 0] = [dt.real, dt.imag]
        jac[0:2, 1] = [(1j * dt).real, (1j * dt).imag]
        jac[0:2, 2] = [(2 * vz).real, (2 * vz).imag]
        jac[0:2, 3] = [(2 * vx).real, (2 * vx).imag]

        h = self.settings.fd_step
        y0 = np.concatenate([r0, p0])
        dy0 = np.empty((4, 4))
        for k in range(4):
            shifted = x.copy()
            shifted[k] += h
            t_s, p_s = _unpack(shifted)
            dy0[:, k] = (np.concatenate([tunnel_exit(self.field, p_s, t_s), p_s]) - y0) / h
        m = traj.final_stability
        start_rhs = _equations(self.field, self.atom)(t_prime.real, np.concatenate([y0, _IDENTITY4.ravel(), [0.0]]))[0:4]
        dy_end = m @ dy0
        dy_end[:, 0] -= m @ start_rhs

        r_end, p_end = traj.final_state
        state = np.concatenate([r_end, p_end])
        dmap = np.empty((2, 4))
        step = 1e-7
        for k in range(4):
            plus, minus = state.copy(), state.copy()
            plus[k] += step
            minus[k] -= step
            dmap[:, k] = (asymptotic_momentum(self.atom, plus[0:2], plus[2:4])
                          - asymptotic_momentum(self.atom, minus[0:2], minus[2:4])) / (2 * step)
        jac[2:4, :] = dmap @ dy_end
        return jac


def _assemble(field: LaserField, atom: TargetAtom, flow, target, seed: OrbitSolution, iterations: int,
              residual: float, model: str) -> OrbitSolution:
    t_prime, p0, r0, traj, pf = flow
    action = sub_barrier_action(field, atom, p0, t_prime) + real_time_action(traj, atom, field, pf)
    prefactor = saddle_prefactor(field, atom, p0, t_prime, model)
    det = float(np.linalg.det(traj.final_stability[2:4, 2:4]))
    solution = OrbitSolution(
        t_prime=t_prime,
        p0=p0,
        exit_position=(float(r0[0]), float(r0[1])),
        pf=(float(pf[0]), float(pf[1])),
        target=(float(target[0]), float(target[1])),
        action=action,
        stability_det=det,
        maslov_phase=_maslov_phase(traj),
        prefactor=prefactor,
        class_label=seed.class_label,
        seed_group=seed.seed_group,
        iterations=iterations,
        residual=residual,
        trajectory=traj,
    )
    orbit, legacy, tie = _classification(solution)
    return replace(solution, orbit_label=orbit, legacy_label=legacy, label_tie=tie)


def shoot(
    field: LaserField,
    atom: TargetAtom,
    guess: OrbitSolution,
    p_target,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> OrbitSolution:
    """Newton iteration on (Re t', Im t', p0z, p0x) to reach ``p_target``"""
    if not guess.t_prime.imag > 0:
        raise DomainError(f"seed time must lie in the upper half plane, got {guess.t_prime}")
    t_end = guess.t_prime.real + settings.horizon_cycles * field.period
    shooter = _Shooter(field, atom, p_target, t_end, settings)
    x = np.array([guess.t_prime.real, guess.t_prime.imag, guess.p0[0], guess.p0[1]], dtype=float)
    flow = shooter.flow(x)
    f = shooter.residual(x, flow)
    norm = float(np.linalg.norm(f))
    best = (norm, x.copy())
    for iteration in range(1, settings.newton_max_iter + 1):
        if norm < settings.newton_tol and math.hypot(f[2], f[3]) < TARGET_TOL:
            logger.debug("shoot converged in %d iterations, |F| = %.2e", iteration - 1, norm)
            return _assemble(field, atom, flow, p_target, guess, iteration - 1, norm, settings.model)
        jac = shooter.jacobian(x, f, flow)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"singular Jacobian: {exc}", best[0], best[1]) from exc
        scale = 1.0
        for _ in range(8):
            trial = x + scale * step
            try:
                trial_flow = shooter.flow(trial)
                trial_f = shooter.residual(trial, trial_flow)
            except (DomainError, NumericalError):
                scale *= 0.5
                continue
            trial_norm = float(np.linalg.norm(trial_f))
            if trial_norm < norm or scale < 1e-2:
                break
            scale *= 0.5
        else:
            raise ConvergenceError("line search failed", best[0], best[1])
        x, flow, f, norm = trial, trial_flow, trial_f, trial_norm
        if norm < best[0]:
            best = (norm, x.copy())
    raise ConvergenceError(f"no convergence after {settings.newton_max_iter} iterations "
                           f"(best |F| = {best[0]:.2e})", best[0], best[1])


def sfa_seed(field: LaserField, atom: TargetAtom, p_target, group: Group) -> OrbitSolution:
    """Seed taken from the SFA saddle of the same group at the target momentum"""
    t1, t2 = grouped_times(field, atom, p_target)
    sol = t1 if group is Group.T1 else t2
    return OrbitSolution(t_prime=sol.t_prime, p0=(float(p_target[0]), float(p_target[1])), seed_group=group)


def _predict(previous: OrbitSolution, target) -> OrbitSolution:
    shift = (target[0] - previous.target[0], target[1] - previous.target[1])
    return replace(previous, p0=(previous.p0[0] + shift[0], previous.p0[1] + shift[1]), trajectory=None)


def _continue_branch(reference: OrbitSolution, solution: OrbitSolution) -> OrbitSolution:
    """Keep the square root of the prefactor within pi/2 of its neighbour"""
    phase = solution.maslov_phase
    ref_value = reference.prefactor / reference.stability_root()
    for _ in range(2):
        value = solution.prefactor / (math.sqrt(abs(solution.stability_det)) * cmath.exp(0.5j * phase))
        if abs(cmath.phase(value / ref_value)) <= math.pi / 2:
            break
        phase += 2 * math.pi
    return replace(solution, maslov_phase=phase)


def continuation_sweep(
    field: LaserField,
    atom: TargetAtom,
    seed_solution: OrbitSolution,
    targets: Sequence[Tuple[float, float]],
    direction: Direction = Direction.COUNTERCLOCKWISE,
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> List[Optional[OrbitSolution]]:
    """March along ``targets`` seeding each solve with its neighbour; None marks a gap"""
    targets = [(float(t[0]), float(t[1])) for t in targets]
    for a, b in zip(targets, targets[1:]):
        if math.dist(a, b) > settings.max_path_step + 1e-12:
            raise DomainError(f"continuation path step {math.dist(a, b):.3f} exceeds {settings.max_path_step}")
    label = CLASS_LABELS[(seed_solution.seed_group, Direction(direction))]
    current = replace(seed_solution, class_label=label)
    results: List[Optional[OrbitSolution]] = []
    anchor: Optional[OrbitSolution] = current if current.converged and current.target is not None else None
    for target in targets:
        solved = _solve_with_bisection(field, atom, current, anchor, target, settings)
        if solved is None:
            logger.warning("continuation gap at p=(%.3f, %.3f) for class %s", target[0], target[1], label)
            results.append(None)
            continue
        solved = replace(solved, class_label=label)
        if anchor is not None:
            solved = _continue_branch(anchor, solved)
        results.append(solved)
        anchor = solved
        current = solved
    return results


def _solve_with_bisection(field, atom, current: OrbitSolution, anchor: Optional[OrbitSolution], target,
                          settings: SolverSettings) -> Optional[OrbitSolution]:
    guess = _predict(anchor, target) if anchor is not None else current
    try:
        return shoot(field, atom, guess, target, settings)
    except (ConvergenceError, DomainError, NumericalError) as exc:
        if anchor is None:
            logger.debug("seed solve failed at %s: %s", target, exc)
            return None
    start = np.array(anchor.target)
    end = np.array(target)
    pieces = 2
    for _ in range(settings.max_bisections):
        step_anchor = anchor
        try:
            for k in range(1, pieces + 1):
                point = tuple(start + (end - start) * k / pieces)
                step_anchor = shoot(field, atom, _predict(step_anchor, point), point, settings)
            return step_anchor
        except (ConvergenceError, DomainError, NumericalError):
            pieces *= 2
    return None


def ring_targets(radius: float, start_angle: float, direction: Direction, step: float = SWEEP_STEP,
                 span: float = 2 * math.pi) -> List[Tuple[float, float]]:
    """Points on a circle walked from ``start_angle`` through ``start_angle +- span``, both ends included.

    Angles are measured from +p_z toward +p_x.
    """
    count = max(1, int(math.ceil(radius * span / step)))
    sign = 1.0 if Direction(direction) is Direction.COUNTERCLOCKWISE else -1.0
    angles = start_angle + sign * np.linspace(0.0, span, count + 1)
    return [(radius * math.cos(a), radius * math.sin(a)) for a in angles]


def seed_angle(group: Group) -> float:
    """Emission angle where the exit side and the drift direction agree"""
    return 0.0 if group is Group.T1 else math.pi


def class_seed(field: LaserField, atom: TargetAtom, group: Group, radius: float = SEED_RADIUS,
               settings: SolverSettings = DEFAULT_SETTINGS) -> OrbitSolution:
    angle = seed_angle(group)
    target = (radius * math.cos(angle), radius * math.sin(angle))
    return shoot(field, atom, sfa_seed(field, atom, target, group), target, settings)


def _side(value: float) -> int:
    # values within TIE_TOL of zero count as non-negative
    return 1 if value > -TIE_TOL else -1


def _classification(sol: OrbitSolution) -> Tuple[str, int, bool]:
    z0 = sol.exit_position[0]
    # grid targets carry exact zeros on the axes, pf only matches them to TARGET_TOL
    pfz, pfx = sol.target if sol.target is not None else sol.pf
    p0x = sol.p0[1]
    exit_sign = _side(z0) * _side(pfz)
    drift_sign = _side(p0x) * _side(pfx)
    tie = min(abs(pfz), abs(pfx), abs(p0x)) < TIE_TOL
    if exit_sign > 0 and drift_sign > 0:
        legacy = 1
    elif drift_sign > 0:
        legacy = 2
    elif exit_sign < 0:
        legacy = 3
    else:
        legacy = 4
    if _side(pfz) > 0:
        quadrant = 0 if _side(pfx) > 0 else 3
    else:
        quadrant = 1 if _side(pfx) > 0 else 2
    return ORBIT_TABLE[legacy][quadrant], legacy, tie


def classify_orbit(sol: OrbitSolution) -> Tuple[str, int]:
    """(orbit letter a-d, legacy number 1-4).

    The legacy number comes from the sign of z0 * p_fz (exit side against
    final direction) and of p_0x * p_fx (whether the transverse momentum
    kept its sign); the letter then follows from the quadrant of p_f.
    """
    if sol.exit_position is None or sol.pf is None:
        raise DomainError("classification needs a converged orbit")
    orbit, legacy, tie = _classification(sol)
    if tie:
        logger.debug("classification tie at pf=%s resolved toward the non-negative side", sol.pf)
    return orbit, legacy


def cqsfa_amplitude(solutions: Sequence[OrbitSolution], model: str = "unit") -> complex:
    """Coherent sum of orbit contributions at one final momentum"""
    if not solutions:
        return 0j
    target = solutions[0].target
    total = 0j
    for sol in solutions:
        if sol.target is None or target is None or math.dist(sol.target, target) > 1e-9:
            raise DomainError("all orbits in a coherent sum must share the same final momentum")
        if sol.maslov_phase is None:
            raise MaslovContinuityError("orbit is missing its Maslov branch data")
        total += sol.amplitude()
    return total


def write_trajectory(traj: Trajectory, path: str, header: Optional[dict] = None) -> None:
    lines = [f"{key} = {value}" for key, value in (header or {}).items()]
    lines.append("tau r_z r_x p_z p_x")
    table = np.column_stack([traj.tau, traj.r, traj.p])
    np.savetxt(path, table, fmt="%.17g", header="\n".join(lines), comments="# ")


def _angular_span(start: float, stop: float, direction: Direction) -> float:
    if Direction(direction) is Direction.COUNTERCLOCKWISE:
        return (stop - start) % (2 * math.pi)
    return (start - stop) % (2 * math.pi)


def _radial_path(angle: float, r_from: float, stops: Sequence[float], step: float) -> List[Tuple[float, float]]:
    """Points along a ray from r_from through every radius in ``stops`` (all on one side)"""
    if not stops:
        return []
    r_to = stops[-1]
    count = max(1, int(math.ceil(abs(r_to - r_from) / step)))
    radii = set(np.round(np.linspace(r_from, r_to, count + 1)[1:], 12).tolist()) | set(stops)
    ordered = sorted(radii, reverse=r_to < r_from)
    return [(r * math.cos(angle), r * math.sin(angle)) for r in ordered]


def distinct_orbits(solutions: Iterable[Optional[OrbitSolution]]) -> Dict[str, OrbitSolution]:
    """Solutions at one momentum keyed by orbit letter.

    Classes that converged onto the same saddle count once. If two different
    saddles claim the same letter the first one is kept.
    """
    kept: List[OrbitSolution] = []
    for sol in solutions:
        if sol is None:
            continue
        if any(abs(sol.t_prime - other.t_prime) < SAME_ORBIT_TOL and math.dist(sol.p0, other.p0) < SAME_ORBIT_TOL
               for other in kept):
            continue
        kept.append(sol)
    found: Dict[str, OrbitSolution] = {}
    for sol in kept:
        if sol.orbit_label in found:
            logger.debug("two saddles labelled %s at p=%s; keeping t'=%s", sol.orbit_label, sol.target,
                         found[sol.orbit_label].t_prime)
            continue
        found[sol.orbit_label] = sol
    return found


def class_seeds(field: LaserField, atom: TargetAtom,
                settings: SolverSettings = DEFAULT_SETTINGS) -> List[Tuple[OrbitSolution, Direction]]:
    """(seed, direction) for every continuation class whose seed converged"""
    seeds = []
    for group in (Group.T1, Group.T2):
        try:
            seed = class_seed(field, atom, group, settings=settings)
        except (ConvergenceError, DomainError, NumericalError) as exc:
            logger.warning("seed for %s failed: %s", group.value, exc)
            continue
        seeds.extend((seed, direction) for direction in (Direction.COUNTERCLOCKWISE, Direction.CLOCKWISE))
    return seeds


def ring_net(
    field: LaserField,
    atom: TargetAtom,
    seed: OrbitSolution,
    direction: Direction,
    targets: Sequence[Tuple[float, float]],
    settings: SolverSettings = DEFAULT_SETTINGS,
) -> List[Optional[OrbitSolution]]:
    """Solutions of one continuation class at each of ``targets`` (None where the class is lost).

    The seed is carried around its ring to equally spaced spokes, out or in
    along each spoke to the radii of the targets nearest to it, and from
    there across to the targets themselves. The ring is only walked as far
    as the last spoke that has targets.
    """
    direction = Direction(direction)
    targets = [(float(t[0]), float(t[1])) for t in targets]
    results: List[Optional[OrbitSolution]] = [None] * len(targets)
    if not targets:
        return results
    if seed.target is None or not seed.converged:
        raise DomainError("ring continuation needs a converged seed")
    radius0 = math.hypot(*seed.target)
    start = math.atan2(seed.target[1], seed.target[0])
    reach = max(radius0, max(math.hypot(*t) for t in targets))
    n_spokes = max(MIN_SPOKES, int(math.ceil(2 * math.pi * reach / SPOKE_SPACING)))
    width = 2 * math.pi / n_spokes

    members: Dict[int, List[int]] = {}
    for k, target in enumerate(targets):
        if math.hypot(*target) == 0.0:
            logger.debug("class %s cannot be followed to p = 0", CLASS_LABELS[(seed.seed_group, direction)])
            continue
        offset = _angular_span(start, math.atan2(target[1], target[0]), direction)
        # targets just short of a full turn stay on the last spoke, before the seed's branch cut
        spoke = min(int(round(offset / width)), n_spokes - 1)
        members.setdefault(spoke, []).append(k)
    if not members:
        return results

    sign = 1.0 if direction is Direction.COUNTERCLOCKWISE else -1.0
    ring: List[Tuple[float, float]] = []
    spoke_index = {0: -1}
    for spoke in range(1, max(members) + 1):
        angle = start + sign * width * (spoke - 1)
        ring.extend(ring_targets(radius0, angle, direction, step=settings.max_path_step, span=width)[1:])
        spoke_index[spoke] = len(ring) - 1
    swept = continuation_sweep(field, atom, seed, ring, direction, settings)
    labelled = replace(seed, class_label=CLASS_LABELS[(seed.seed_group, direction)])

    for spoke in sorted(members):
        anchor = labelled if spoke == 0 else swept[spoke_index[spoke]]
        if anchor is None:
            continue
        angle = start + sign * width * spoke
        radii = sorted({round(math.hypot(*targets[k]), 12) for k in members[spoke]})
        nodes = {round(radius0, 12): anchor}
        for stops in ([r for r in radii if r >= radius0], sorted((r for r in radii if r < radius0), reverse=True)):
            path = _radial_path(angle, radius0, stops, settings.max_path_step)
            for point, sol in zip(path, continuation_sweep(field, atom, anchor, path, direction, settings)):
                if sol is not None:
                    nodes[round(math.hypot(*point), 12)] = sol
        for k in members[spoke]:
            node = nodes.get(round(math.hypot(*targets[k]), 12))
            if node is None:
                continue
            if math.dist(node.target, targets[k]) < 1e-12:
                results[k] = node
            else:
                results[k] = solve_from_nodes(field, atom, [node], targets[k], direction, settings)
    return results


def solve_from_nodes(field: LaserField, atom: TargetAtom, nodes: Sequence[OrbitSolution], target,
                     direction: Direction, settings: SolverSettings = DEFAULT_SETTINGS) -> Optional[OrbitSolution]:
    """Shoot to ``target`` from the nearest solved node"""
    if not nodes:
        return None
    points = np.array([node.target for node in nodes])
    nearest = nodes[int(np.argmin(np.hypot(points[:, 0] - target[0], points[:, 1] - target[1])))]
    wide = replace(settings, max_path_step=math.inf)
    result = continuation_sweep(field, atom, nearest, [tuple(target)], direction, wide)
    return result[0]


def axis_solutions(field: LaserField, atom: TargetAtom, samples: Sequence[float],
                   settings: SolverSettings = DEFAULT_SETTINGS) -> dict:
    """Orbit solutions on the p_z = 0 axis keyed by (p_x, orbit letter)"""
    samples = [float(s) for s in samples]
    targets = [(0.0, s) for s in samples]
    per_class = [ring_net(field, atom, seed, direction, targets, settings)
                 for seed, direction in class_seeds(field, atom, settings)]
    found = {}
    for k, sample in enumerate(samples):
        for label, sol in distinct_orbits(result[k] for result in per_class).items():
            found[(sample, label)] = sol
    return found


def orbits_at(field: LaserField, atom: TargetAtom, target,
              settings: SolverSettings = DEFAULT_SETTINGS) -> Dict[str, OrbitSolution]:
    """Every orbit reaching one detector momentum, keyed by orbit letter"""
    target = (float(target[0]), float(target[1]))
    if math.hypot(*target) == 0.0:
        raise DomainError("orbits cannot be followed to p = 0")
    return distinct_orbits(ring_net(field, atom, seed, direction, [target], settings)[0]
                           for seed, direction in class_seeds(field, atom, settings))
