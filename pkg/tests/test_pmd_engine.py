"""
Tests for momentum-grid assembly, normalization and the PMD file format
"""

import math
import os
import sys
from unittest.mock import patch

import numpy as np
import pytest

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from errors import DomainError
from field_potential import TargetAtom, field_from_experiment
from pmd_engine import (
    FORMAT_VERSION,
    THREADS_ENV,
    GridAxes,
    PMDGrid,
    PmdOptions,
    build_grid,
    compute_pmd,
    normalize_log,
    pair_interference,
    read_header,
    read_pmd,
    resolve_threads,
    write_pmd,
)
from sfa_amplitude import sfa_orbit_amplitudes


def _small_sfa_grid(n=9, eps=0.0, threads=1):
    field = field_from_experiment(2.5e14, 735.0, eps=eps)
    atom = TargetAtom(ip=0.90357)
    axes = GridAxes(-1.0, 1.0, n, -1.0, 1.0, n)
    grid = compute_pmd("sfa", field, atom, build_grid(axes), options=PmdOptions(threads=threads, progress=False))
    return field, atom, grid


class TestGridConstruction:
    """Axes and grid validation"""

    def test_axes(self):
        """Axes include both bounds"""
        axes = GridAxes(-1.0, 1.0, 5, -0.5, 0.5, 3)
        np.testing.assert_allclose(axes.pz, [-1.0, -0.5, 0.0, 0.5, 1.0])
        np.testing.assert_allclose(axes.px, [-0.5, 0.0, 0.5])
        assert axes.spacing == pytest.approx((0.5, 0.5))

    def test_invalid_axes(self):
        """Degenerate or inverted axes are rejected"""
        with pytest.raises(DomainError):
            build_grid(GridAxes(n_z=1))
        with pytest.raises(DomainError):
            build_grid(GridAxes(pz_min=1.0, pz_max=-1.0))

    def test_masked_fraction(self):
        """Masked cells are counted against the whole grid"""
        grid = PMDGrid(axes=GridAxes(n_z=2, n_x=2))
        assert grid.masked_fraction() == 0.0
        grid.probability = np.array([[1.0, math.nan], [2.0, 3.0]])
        assert grid.masked_fraction() == pytest.approx(0.25)
        with pytest.raises(DomainError):
            grid.coherent_sum(["a"])


class TestSfaGrid:
    """SFA distributions on small grids"""

    def setup_method(self):
        self.field, self.atom, self.grid = _small_sfa_grid()

    def test_probability_is_coherent_sum(self):
        """The probability is |M_a + M_b|^2 and every cell is filled"""
        expected = np.abs(self.grid.amplitudes["a"] + self.grid.amplitudes["b"]) ** 2
        np.testing.assert_array_equal(self.grid.probability, expected)
        assert self.grid.available["a"].all() and self.grid.available["b"].all()
        assert self.grid.metadata["status"] == "ok"
        assert self.grid.metadata["orbits"] == "a,b"

    def test_orbit_magnitudes_match_pointwise_amplitudes(self):
        """Stored orbit moduli equal the pointwise SFA contributions"""
        axes = self.grid.axes
        for iz, ix in [(0, 0), (4, 7), (8, 3)]:
            p = (float(axes.pz[iz]), float(axes.px[ix]))
            parts = sfa_orbit_amplitudes(self.field, self.atom, p)
            for label in ("a", "b"):
                assert abs(self.grid.amplitudes[label][iz, ix]) == pytest.approx(abs(parts[label].amplitude),
                                                                                 rel=1e-12)

    def test_linear_polarization_is_even_in_px(self):
        """At eps = 0 the orbit yields are mirror symmetric in p_x"""
        incoherent = np.abs(self.grid.amplitudes["a"]) ** 2 + np.abs(self.grid.amplitudes["b"]) ** 2
        np.testing.assert_allclose(incoherent, incoherent[:, ::-1], rtol=1e-9)

    def test_worker_count_does_not_change_results(self):
        """One and two workers give identical grids"""
        _, _, serial = _small_sfa_grid(n=5, eps=0.2, threads=1)
        _, _, parallel = _small_sfa_grid(n=5, eps=0.2, threads=2)
        np.testing.assert_array_equal(serial.probability, parallel.probability)
        np.testing.assert_array_equal(serial.amplitudes["a"], parallel.amplitudes["a"])

    def test_pair_interference(self):
        """The (a, b) pair reproduces the full SFA sum; CQSFA letters are absent"""
        np.testing.assert_array_equal(pair_interference(self.grid, ("a", "b")), self.grid.probability)
        with pytest.raises(DomainError):
            pair_interference(self.grid, ("a", "c"))
        with pytest.raises(DomainError):
            pair_interference(self.grid, ("a",))

    def test_normalize_log(self):
        """The log view peaks at 0 and is clamped at -floor decades"""
        view = normalize_log(self.grid, "log10", floor=6.0)
        assert np.nanmax(view.display) == pytest.approx(0.0)
        assert np.nanmin(view.display) >= -6.0
        again = normalize_log(view, "log10", floor=6.0)
        np.testing.assert_array_equal(again.display, view.display)
        assert self.grid.display is None
        linear = normalize_log(self.grid, "linear")
        assert np.nanmax(linear.display) == pytest.approx(1.0)
        with pytest.raises(DomainError):
            normalize_log(self.grid, "sqrt")

    def test_bad_inputs(self):
        """Unknown methods, orbits and cycle counts are rejected"""
        grid = build_grid(GridAxes(n_z=3, n_x=3))
        with pytest.raises(DomainError):
            compute_pmd("tdse", self.field, self.atom, grid)
        with pytest.raises(DomainError):
            compute_pmd("sfa", self.field, self.atom, grid, orbit_set=("c",))
        with pytest.raises(DomainError):
            compute_pmd("sfa", self.field, self.atom, grid, n_cycles=0)


    def test_discarded_saddles_contribute_zero(self):
        """Cells past a Stokes line keep their other orbit and stay unmasked in every view"""
        field = field_from_experiment(2.5e14, 735.0, eps=0.7)
        axes = GridAxes(-2.5, 2.5, 11, -0.5, 0.5, 3)
        options = PmdOptions(stokes_policy="discard", threads=1, progress=False)
        grid = compute_pmd("sfa", field, self.atom, build_grid(axes), options=options)
        assert grid.discarded.any()
        assert grid.available["a"].all() and grid.available["b"].all()
        silent = (grid.amplitudes["a"] == 0) | (grid.amplitudes["b"] == 0)
        np.testing.assert_array_equal(silent, grid.discarded)
        assert grid.masked_fraction() == 0.0
        assert np.isfinite(pair_interference(grid, ("a", "b"))).all()
        assert grid.metadata["stokes_discarded"] == str(int(np.count_nonzero(grid.discarded)))

class TestPmdFile:
    """Text serialization of computed grids"""

    def setup_method(self):
        _, _, self.grid = _small_sfa_grid(n=5)

    def test_header_and_ordering(self, tmp_path):
        """Header lines come first and p_z varies fastest"""
        path = tmp_path / "pmd.dat"
        write_pmd(self.grid, str(path), {"eps": 0.0})
        header = read_header(str(path))
        assert header["format_version"] == str(FORMAT_VERSION)
        assert header["eps"] == "0.0"
        assert header["columns"].startswith("pz,px,prob")
        rows = [line for line in path.read_text().splitlines() if not line.startswith("#")]
        assert len(rows) == 25
        first, second = (list(map(float, row.split(",")[:2])) for row in rows[:2])
        assert first == [-1.0, -1.0]
        assert second == [-0.5, -1.0]

    def test_read_back(self, tmp_path):
        """Values survive a write and read exactly"""
        path = tmp_path / "pmd.dat"
        write_pmd(self.grid, str(path))
        loaded = read_pmd(str(path))
        assert loaded.axes == self.grid.axes
        np.testing.assert_array_equal(loaded.probability, self.grid.probability)
        np.testing.assert_array_equal(loaded.amplitudes["b"], self.grid.amplitudes["b"])
        assert loaded.selected == ("a", "b")

    def test_unsupported_version(self, tmp_path):
        """Files from another format version are refused"""
        path = tmp_path / "old.dat"
        path.write_text("# format_version = 0\n# columns = pz,px,prob\n0,0,1\n")
        with pytest.raises(DomainError):
            read_pmd(str(path))

    def test_uncomputed_grid(self, tmp_path):
        """An empty grid cannot be written"""
        with pytest.raises(DomainError):
            write_pmd(build_grid(GridAxes(n_z=3, n_x=3)), str(tmp_path / "empty.dat"))


class TestThreads:
    """Worker-count resolution"""

    def test_flag_wins(self):
        """An explicit count overrides the environment"""
        with patch.dict(os.environ, {THREADS_ENV: "3"}):
            assert resolve_threads(2) == 2
            assert resolve_threads() == 3

    def test_default_is_cpu_count(self):
        """Without flag or environment the CPU count is used"""
        with patch.dict(os.environ, {}, clear=True):
            assert resolve_threads() == (os.cpu_count() or 1)

    def test_invalid_counts(self):
        """Non-integer and nonpositive counts raise DomainError"""
        with patch.dict(os.environ, {THREADS_ENV: "many"}):
            with pytest.raises(DomainError):
                resolve_threads()
        with pytest.raises(DomainError):
            resolve_threads(0)


class TestCqsfaGrid:
    """CQSFA distributions without a Coulomb potential"""

    def setup_method(self):
        self.field = field_from_experiment(2.5e14, 735.0, eps=0.2)
        self.free = TargetAtom(ip=0.90357, z_eff=0.0)
        self.axes = GridAxes(-1.0, 1.0, 6, -0.8, 0.8, 4)
        options = PmdOptions(threads=1, progress=False)
        self.grid = compute_pmd("cqsfa", self.field, self.free, build_grid(self.axes, ("a", "b", "c", "d")),
                                orbit_set=("a", "b", "c", "d"), options=options)
        self.sfa = compute_pmd("sfa", self.field, self.free, build_grid(self.axes), options=options)

    def test_missing_orbits_do_not_mask_the_grid(self):
        """Orbits c and d never appear, so only a and b decide the mask"""
        assert self.grid.available["a"].all() and self.grid.available["b"].all()
        assert not self.grid.available["c"].any() and not self.grid.available["d"].any()
        assert self.grid.masked_fraction() == 0.0
        assert self.grid.metadata["absent_orbits"] == "c,d"

    def test_reduces_to_sfa(self):
        """Every cell matches the SFA orbit moduli and the coherent probability"""
        for label in ("a", "b"):
            np.testing.assert_allclose(np.abs(self.grid.amplitudes[label]), np.abs(self.sfa.amplitudes[label]),
                                       rtol=1e-6)
        np.testing.assert_allclose(self.grid.probability, self.sfa.probability, rtol=1e-6)
