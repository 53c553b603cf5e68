"""
Tests for the Coulomb quantum-orbit engine
"""

import math
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from cqsfa_engine import (
    CLASS_LABELS,
    Direction,
    OrbitSolution,
    asymptotic_momentum,
    axis_solutions,
    class_seed,
    class_seeds,
    classify_orbit,
    continuation_sweep,
    cqsfa_amplitude,
    distinct_orbits,
    orbits_at,
    propagate,
    ring_net,
    ring_targets,
    sfa_seed,
    shoot,
    solve_from_nodes,
    sub_barrier_action,
    sub_barrier_action_quadrature,
    tunnel_exit,
    tunnel_exit_quadrature,
    write_trajectory,
)
from errors import DomainError
from field_potential import TargetAtom, field_from_experiment
from sfa_amplitude import orbit_amplitude
from sfa_times import Group, grouped_times


class TestSubBarrier:
    """Tunnel exit and sub-barrier action"""

    def setup_method(self):
        self.field = field_from_experiment(2.5e14, 735.0)
        self.atom = TargetAtom(ip=0.90357)

    def test_tunnel_exit_at_zero_momentum(self):
        """Linear polarization, p = 0: the two exits sit at z = +-8.90"""
        t1, t2 = grouped_times(self.field, self.atom, (0.0, 0.0))
        exit_1 = tunnel_exit(self.field, (0.0, 0.0), t1.t_prime)
        exit_2 = tunnel_exit(self.field, (0.0, 0.0), t2.t_prime)
        assert exit_1[0] == pytest.approx(8.90, abs=0.01)
        assert exit_2[0] == pytest.approx(-8.90, abs=0.01)
        assert exit_1[1] == pytest.approx(0.0, abs=1e-12)

    def test_closed_forms_match_quadrature(self):
        """Analytic sub-barrier integrals agree with contour quadrature"""
        field = self.field.with_eps(0.4)
        for p in [(0.3, 0.2), (-0.6, 0.5)]:
            for sol in grouped_times(field, self.atom, p):
                np.testing.assert_allclose(tunnel_exit(field, p, sol.t_prime),
                                           tunnel_exit_quadrature(field, p, sol.t_prime), atol=1e-8)
                closed = sub_barrier_action(field, self.atom, p, sol.t_prime)
                numeric = sub_barrier_action_quadrature(field, self.atom, p, sol.t_prime)
                assert abs(closed - numeric) < 1e-8

    def test_real_time_rejected(self):
        """Ionization times must have a positive imaginary part"""
        with pytest.raises(DomainError):
            tunnel_exit(self.field, (0.0, 0.0), 10.0 + 0j)


class TestPropagation:
    """Field-free Kepler propagation and asymptotic mapping"""

    def setup_method(self):
        self.atom = TargetAtom(ip=0.90357)

    def test_energy_and_symplectic_structure(self):
        """Without a field the energy is conserved and M stays symplectic"""
        traj = propagate(None, self.atom, (5.0, 0.0), (0.4, 0.7), 0.0, 50.0)
        r0, p0 = traj.r[0], traj.p[0]
        r1, p1 = traj.final_state
        e0 = 0.5 * p0 @ p0 - 1 / np.hypot(*r0)
        e1 = 0.5 * p1 @ p1 - 1 / np.hypot(*r1)
        assert e1 == pytest.approx(e0, abs=1e-8)
        assert traj.symplectic_defect() < 1e-6

    def test_asymptotic_momentum_is_conserved_along_kepler_orbit(self):
        """The detector momentum is an invariant of field-free motion"""
        traj = propagate(None, self.atom, (5.0, 0.0), (0.4, 0.7), 0.0, 50.0)
        start = asymptotic_momentum(self.atom, traj.r[0], traj.p[0])
        end = asymptotic_momentum(self.atom, *traj.final_state)
        np.testing.assert_allclose(start, end, atol=1e-7)
        energy = 0.5 * traj.p[0] @ traj.p[0] - 1 / 5.0
        assert np.linalg.norm(start) == pytest.approx(math.sqrt(2 * energy), rel=1e-10)

    def test_kepler_mapping_matches_long_integration(self):
        """Ten thousand a.u. out, the raw momentum has turned into the mapped asymptote"""
        traj = propagate(None, self.atom, (5.0, 0.0), (0.4, 0.7), 0.0, 2e4)
        r_end, p_end = traj.final_state
        assert np.hypot(*r_end) > 5e3
        mapped = asymptotic_momentum(self.atom, traj.r[0], traj.p[0])
        assert np.linalg.norm(p_end - mapped) < 2e-3
        np.testing.assert_allclose(asymptotic_momentum(self.atom, r_end, p_end), mapped, atol=1e-6)

    def test_start_at_origin(self):
        """Propagation cannot start on the Coulomb singularity"""
        with pytest.raises(DomainError):
            propagate(None, self.atom, (0.0, 0.0), (0.1, 0.1), 0.0, 1.0)

    def test_trajectory_dump(self, tmp_path):
        """Trajectory dumps carry a commented header and five columns"""
        traj = propagate(None, TargetAtom(ip=0.5, z_eff=0.0), (1.0, 0.0), (0.2, 0.1), 0.0, 10.0)
        path = tmp_path / "traj.dat"
        write_trajectory(traj, str(path), {"orbit": "a"})
        lines = path.read_text().splitlines()
        assert lines[0] == "# orbit = a"
        table = np.loadtxt(path)
        assert table.shape == (len(traj.tau), 5)


class TestCoulombFreeReduction:
    """With z_eff = 0 the Coulomb orbits reduce to the SFA"""

    def setup_method(self):
        self.field = field_from_experiment(2.5e14, 735.0, eps=0.2)
        self.free = TargetAtom(ip=0.90357, z_eff=0.0)

    def test_shoot_reproduces_sfa_amplitude(self):
        """Times and amplitudes equal their SFA counterparts"""
        for p in [(0.5, 0.3), (-0.4, 0.6), (0.9, -0.2)]:
            t1, t2 = grouped_times(self.field, self.free, p)
            for group, sfa_time in ((Group.T1, t1), (Group.T2, t2)):
                sol = shoot(self.field, self.free, sfa_seed(self.field, self.free, p, group), p)
                assert abs(sol.t_prime - sfa_time.t_prime) < 1e-8
                expected = orbit_amplitude(self.field, self.free, p, sfa_time).amplitude
                assert abs(sol.amplitude() - expected) < 1e-8 * max(1.0, abs(expected))
                assert sol.stability_det == pytest.approx(1.0)

    def test_continuation_follows_sfa_branch(self):
        """A short sweep stays on the SFA saddle of its group"""
        seed = class_seed(self.field, self.free, Group.T1, radius=1.0)
        targets = [(1.0, 0.05 * k) for k in range(1, 6)]
        path = continuation_sweep(self.field, self.free, seed, targets, Direction.COUNTERCLOCKWISE)
        assert all(sol is not None for sol in path)
        for sol, target in zip(path, targets):
            t1, _ = grouped_times(self.field, self.free, target)
            assert abs(sol.t_prime - t1.t_prime) < 1e-6
            assert sol.class_label == CLASS_LABELS[(Group.T1, Direction.COUNTERCLOCKWISE)]

    def test_coherent_sum_needs_common_target(self):
        """Orbits at different final momenta cannot be summed"""
        a = shoot(self.field, self.free, sfa_seed(self.field, self.free, (0.5, 0.3), Group.T1), (0.5, 0.3))
        b = shoot(self.field, self.free, sfa_seed(self.field, self.free, (0.5, 0.4), Group.T2), (0.5, 0.4))
        assert cqsfa_amplitude([a]) == pytest.approx(a.amplitude())
        assert cqsfa_amplitude([]) == 0
        with pytest.raises(DomainError):
            cqsfa_amplitude([a, b])

    def test_path_step_limit(self):
        """Continuation refuses steps longer than the configured maximum"""
        seed = sfa_seed(self.field, self.free, (1.0, 0.0), Group.T1)
        with pytest.raises(DomainError):
            continuation_sweep(self.field, self.free, seed, [(1.0, 0.0), (0.0, 1.0)])

    def test_free_orbits_are_a_or_b_in_every_quadrant(self):
        """Without a potential p_x never flips, so T1 lands on a and T2 on b"""
        for p in [(0.5, 0.3), (-0.5, 0.3), (-0.5, -0.3), (0.5, -0.3), (0.6, 0.0), (0.0, 0.6)]:
            first = shoot(self.field, self.free, sfa_seed(self.field, self.free, p, Group.T1), p)
            second = shoot(self.field, self.free, sfa_seed(self.field, self.free, p, Group.T2), p)
            assert classify_orbit(first)[0] == "a"
            assert classify_orbit(second)[0] == "b"
            assert classify_orbit(first)[1] in (1, 2)
            assert classify_orbit(second)[1] in (1, 2)

    def test_ring_net_reaches_every_target(self):
        """Each class follows its SFA saddle to targets all around the plane"""
        targets = [(0.5, 0.3), (-0.5, 0.3), (-0.5, -0.3), (0.5, -0.3), (0.0, 0.8), (1.4, 0.0), (-0.2, -1.1)]
        seeds = class_seeds(self.field, self.free)
        assert len(seeds) == 4
        for seed, direction in seeds:
            solutions = ring_net(self.field, self.free, seed, direction, targets)
            assert len(solutions) == len(targets)
            index = 0 if seed.seed_group is Group.T1 else 1
            for sol, target in zip(solutions, targets):
                assert sol is not None
                assert math.dist(sol.target, target) < 1e-12
                assert abs(sol.t_prime - grouped_times(self.field, self.free, target)[index].t_prime) < 1e-6
                assert sol.orbit_label == ("a" if seed.seed_group is Group.T1 else "b")
                assert sol.class_label == CLASS_LABELS[(seed.seed_group, direction)]

    def test_ring_net_edge_cases(self):
        """No targets gives nothing, p = 0 stays unsolved, unconverged seeds are refused"""
        seed, direction = class_seeds(self.field, self.free)[0]
        assert ring_net(self.field, self.free, seed, direction, []) == []
        assert ring_net(self.field, self.free, seed, direction, [(0.0, 0.0)]) == [None]
        with pytest.raises(DomainError):
            ring_net(self.field, self.free, OrbitSolution(t_prime=1j, p0=(1.2, 0.0)), direction, [(0.5, 0.5)])

    def test_solve_from_nearest_node(self):
        """The closest node seeds the final shot"""
        near = shoot(self.field, self.free, sfa_seed(self.field, self.free, (1.0, 0.0), Group.T1), (1.0, 0.0))
        far = shoot(self.field, self.free, sfa_seed(self.field, self.free, (-1.0, 0.0), Group.T1), (-1.0, 0.0))
        sol = solve_from_nodes(self.field, self.free, [far, near], (1.0, 0.1), Direction.COUNTERCLOCKWISE)
        t1, _ = grouped_times(self.field, self.free, (1.0, 0.1))
        assert abs(sol.t_prime - t1.t_prime) < 1e-8
        assert solve_from_nodes(self.field, self.free, [], (1.0, 0.1), Direction.COUNTERCLOCKWISE) is None

    def test_orbits_at_finds_the_two_sfa_orbits(self):
        """Coincident classes merge into orbits a and b with the SFA magnitudes"""
        p = (0.5, 0.3)
        found = orbits_at(self.field, self.free, p)
        assert set(found) == {"a", "b"}
        for label, sfa_time in zip(("a", "b"), grouped_times(self.field, self.free, p)):
            expected = orbit_amplitude(self.field, self.free, p, sfa_time).amplitude
            assert abs(found[label].t_prime - sfa_time.t_prime) < 1e-6
            assert abs(found[label].amplitude()) == pytest.approx(abs(expected), rel=1e-6)
        with pytest.raises(DomainError):
            orbits_at(self.field, self.free, (0.0, 0.0))

    def test_axis_solutions(self):
        """Every minor-axis sample carries orbits a and b and nothing else"""
        samples = [-0.6, -0.3, 0.3, 0.6]
        found = axis_solutions(self.field, self.free, samples)
        assert set(found) == {(s, label) for s in samples for label in ("a", "b")}
        for s in samples:
            t1, t2 = grouped_times(self.field, self.free, (0.0, s))
            assert abs(found[(s, "a")].t_prime.imag - t1.t_prime.imag) < 1e-6
            assert abs(found[(s, "b")].t_prime.imag - t2.t_prime.imag) < 1e-6


class TestClassification:
    """Orbit letters from exit side and drift signs"""

    def _solution(self, exit_z, p0, pf):
        return OrbitSolution(t_prime=1j, p0=p0, exit_position=(exit_z, 0.0), pf=pf, target=pf)

    def test_first_quadrant(self):
        """Same-side exit with unchanged drift is orbit a (legacy 1)"""
        assert classify_orbit(self._solution(8.9, (0.4, 0.2), (0.5, 0.3))) == ("a", 1)
        assert classify_orbit(self._solution(-8.9, (0.4, 0.2), (0.5, 0.3))) == ("b", 2)

    def test_other_quadrants(self):
        """Letters follow the quadrant table"""
        assert classify_orbit(self._solution(-8.9, (-0.4, -0.2), (-0.5, 0.3))) == ("c", 4)
        assert classify_orbit(self._solution(-8.9, (0.4, 0.2), (0.5, -0.3))) == ("c", 3)
        assert classify_orbit(self._solution(8.9, (0.4, 0.2), (0.5, -0.3))) == ("d", 4)

    def test_axis_ties_resolve_to_the_non_negative_side(self):
        """Near-zero p_x values within the solver tolerance do not flip the letter"""
        on_axis = OrbitSolution(t_prime=1j, p0=(0.4, -3e-6), exit_position=(8.9, 0.0), pf=(0.5, -4e-7),
                                target=(0.5, 0.0))
        assert classify_orbit(on_axis) == ("a", 1)
        mirrored = OrbitSolution(t_prime=1j, p0=(-0.4, 2e-6), exit_position=(-8.9, 0.0), pf=(-0.5, 1e-7),
                                 target=(-0.5, 0.0))
        assert classify_orbit(mirrored) == ("b", 1)

    def test_distinct_orbits(self):
        """Coincident saddles count once and the first claim on a letter wins"""
        a = replace(self._solution(8.9, (0.4, 0.2), (0.5, 0.3)), orbit_label="a")
        twin = replace(self._solution(8.9, (0.4, 0.2 + 1e-7), (0.5, 0.3)), orbit_label="a")
        other = OrbitSolution(t_prime=2j, p0=(0.1, 0.2), exit_position=(8.9, 0.0), pf=(0.5, 0.3),
                              target=(0.5, 0.3), orbit_label="a")
        b = replace(self._solution(-8.9, (0.4, 0.2), (0.5, 0.3)), orbit_label="b")
        found = distinct_orbits([None, a, twin, other, b])
        assert set(found) == {"a", "b"}
        assert found["a"] is a
        assert distinct_orbits([None]) == {}

    def test_unconverged(self):
        """Seeds cannot be classified"""
        with pytest.raises(DomainError):
            classify_orbit(OrbitSolution(t_prime=1j, p0=(0.0, 0.0)))


class TestRingTargets:
    """Circular continuation paths"""

    def test_direction_and_radius(self):
        """Counterclockwise walks toward +p_x from angle 0"""
        ccw = ring_targets(1.2, 0.0, Direction.COUNTERCLOCKWISE, step=0.05)
        cw = ring_targets(1.2, 0.0, Direction.CLOCKWISE, step=0.05)
        assert ccw[1][1] > 0
        assert cw[1][1] < 0
        np.testing.assert_allclose([math.hypot(*t) for t in ccw], 1.2)
        steps = [math.dist(a, b) for a, b in zip(ccw, ccw[1:])]
        assert max(steps) <= 0.05 + 1e-12

    def test_partial_span_includes_both_ends(self):
        """A quarter turn starts at the start angle and stops exactly on the end angle"""
        arc = ring_targets(1.0, 0.0, Direction.COUNTERCLOCKWISE, step=0.1, span=math.pi / 2)
        np.testing.assert_allclose(arc[0], (1.0, 0.0), atol=1e-15)
        np.testing.assert_allclose(arc[-1], (0.0, 1.0), atol=1e-15)
        assert len(arc) == math.ceil(math.pi / 2 / 0.1) + 1
        assert max(math.dist(a, b) for a, b in zip(arc, arc[1:])) <= 0.1


@pytest.mark.slow
class TestCoulombOrbits:
    """Full Coulomb orbits (slow)"""

    def setup_method(self):
        self.field = field_from_experiment(2.5e14, 735.0)
        self.atom = TargetAtom(ip=0.90357)

    def test_seed_orbit_converges(self):
        """The T1 seed orbit converges and hits its target momentum"""
        sol = class_seed(self.field, self.atom, Group.T1)
        assert sol.converged
        assert math.dist(sol.pf, sol.target) < 1e-6
        assert sol.t_prime.imag > 0
        assert sol.orbit_label in ("a", "b", "c", "d")

    def test_mirrored_classes_give_even_imaginary_times(self):
        """Without ellipticity Im t' is even in p_x for every orbit found on both sides"""
        samples = [-0.9, -0.5, 0.5, 0.9]
        found = axis_solutions(self.field, self.atom, samples)
        assert (0.5, "a") in found and (-0.5, "a") in found
        shared = [(s, label) for (s, label) in found if s > 0 and (-s, label) in found]
        assert shared
        for s, label in shared:
            assert abs(found[(s, label)].t_prime.imag - found[(-s, label)].t_prime.imag) < 1e-6

    def test_coulomb_correction_fades_with_momentum(self):
        """Orbit a approaches its SFA ionization time as |p_x| grows"""
        found = axis_solutions(self.field, self.atom, [0.3, 1.5])

        def shift(s):
            sfa = grouped_times(self.field, self.atom, (0.0, s))[0].t_prime.imag
            return abs(found[(s, "a")].t_prime.imag - sfa)

        assert shift(1.5) < 0.25 * shift(0.3)

    def test_rescattered_orbits_are_suppressed_by_ellipticity(self):
        """Im t' of orbits c and d at p_x = 0.5 does not decrease as eps grows"""
        per_eps = [orbits_at(self.field.with_eps(eps), self.atom, (0.0, 0.5)) for eps in (0.0, 0.1, 0.2, 0.3)]
        labels = [label for label in ("c", "d") if all(label in found for found in per_eps)]
        assert labels
        for label in labels:
            values = [found[label].t_prime.imag for found in per_eps]
            assert all(later >= earlier - 1e-6 for earlier, later in zip(values, values[1:]))
