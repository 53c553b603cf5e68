"""
Tests for PMD and scan figures and the generated plot recipes
"""

import os
import sys

import numpy as np
import pytest

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from analysis import ScanCurve
from errors import DomainError
from pmd_engine import GridAxes, PMDGrid
from plotting import plot_pmd, plot_scan, write_plot_script


class TestFigures:
    """PNG output"""

    def setup_method(self):
        axes = GridAxes(-1.0, 1.0, 6, -1.0, 1.0, 5)
        pz, px = np.meshgrid(axes.pz, axes.px, indexing="ij")
        self.grid = PMDGrid(axes=axes, probability=np.exp(-(pz ** 2 + px ** 2)), selected=("a", "b"),
                            metadata={"method": "sfa"})

    def test_pmd_png(self, tmp_path):
        """Both scales render to a non-empty PNG"""
        for scale in ("log10", "linear"):
            path = tmp_path / f"pmd_{scale}.png"
            assert plot_pmd(self.grid, str(path), scale) == str(path)
            assert path.stat().st_size > 0

    def test_scan_png(self, tmp_path):
        """Scan curves render; an empty list is refused"""
        curve = ScanCurve(abscissa=[-1.0, 0.0, 1.0], ordinate=[15.0, 14.1, 15.0], orbit_label="a", method="sfa")
        path = tmp_path / "scan.png"
        plot_scan([curve], str(path))
        assert path.stat().st_size > 0
        with pytest.raises(DomainError):
            plot_scan([], str(path))


class TestPlotScripts:
    """Standalone recipes written next to data files"""

    def test_pmd_recipe(self, tmp_path):
        """The recipe names its data file and image and is valid Python"""
        script = write_plot_script(str(tmp_path / "run.dat"), "pmd", "log10", 6.0)
        assert script == str(tmp_path / "run.plot.py")
        text = open(script, encoding="utf-8").read()
        assert "'run.dat'" in text
        assert "'run.png'" in text
        compile(text, script, "exec")

    def test_scan_recipe(self, tmp_path):
        """Scan recipes read two space-separated columns"""
        script = write_plot_script(str(tmp_path / "scan_a.dat"), "scan")
        text = open(script, encoding="utf-8").read()
        assert "sep=\" \"" in text
        compile(text, script, "exec")

    def test_unknown_kind(self, tmp_path):
        """Only pmd and scan recipes exist"""
        with pytest.raises(DomainError):
            write_plot_script(str(tmp_path / "x.dat"), "histogram")
