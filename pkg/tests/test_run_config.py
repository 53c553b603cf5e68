"""
Tests for run configuration files and PMD headers as configs
"""

import os
import sys

import pytest

# Add src directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from errors import DomainError
from field_potential import field_from_experiment
from pmd_engine import GridAxes, PmdOptions, build_grid, compute_pmd, write_pmd
from run_config import DEFAULT_CQSFA_CYCLES, RunConfig, parse_key_values


class TestRunConfig:
    """Defaults, layering and validation"""

    def setup_method(self):
        self.config = RunConfig()

    def test_defaults_validate(self):
        """The default run is the linear-polarization SFA distribution"""
        config = self.config.validate()
        assert config.run.method == "sfa"
        assert config.run.n_cycles == 1
        assert config.laser().omega == pytest.approx(0.061991, abs=1e-6)
        assert config.target().has_potential

    def test_cqsfa_default_cycles(self):
        """CQSFA runs sum four cycles unless told otherwise"""
        config = RunConfig.from_mapping({"method": "cqsfa", "orbits": "a,b,c,d"}).validate()
        assert config.run.n_cycles == DEFAULT_CQSFA_CYCLES
        assert RunConfig.from_mapping({"method": "cqsfa", "cycles": "2"}).run.n_cycles == 2

    def test_header_round_trip(self):
        """to_header text parses back to the same configuration"""
        config = RunConfig.from_mapping({"eps": "0.35", "truncation": "2", "n_z": "51", "orbits": "b"})
        lines = [f"# {key} = {value}\n" for key, value in config.to_header().items()]
        again = RunConfig.from_header(lines)
        assert again == config
        assert again.to_header() == config.to_header()

    def test_flags_override_file(self, tmp_path):
        """Values layered later win"""
        path = tmp_path / "run.cfg"
        path.write_text("# study settings\neps = 0.2\nn_x = 31\n\nmethod = sfa\n")
        base = RunConfig.from_file(str(path))
        assert base.field.eps == 0.2
        layered = RunConfig.from_mapping({"eps": 0.4, "n_z": None}, base)
        assert layered.field.eps == 0.4
        assert layered.run.n_x == 31
        assert layered.run.n_z == base.run.n_z
        assert base.field.eps == 0.2

    def test_unknown_keys_are_ignored(self):
        """Informational header keys do not affect the run"""
        config = RunConfig.from_mapping({"status": "ok", "format_version": "1"})
        assert config == RunConfig()

    def test_bad_lines_and_values(self, tmp_path):
        """Malformed lines, unparsable values and missing files raise DomainError"""
        with pytest.raises(DomainError):
            parse_key_values(["eps 0.2"])
        assert parse_key_values(["# pz px prob", "eps = 0.2"]) == {"eps": "0.2"}
        with pytest.raises(DomainError):
            RunConfig.from_mapping({"n_z": "many"})
        with pytest.raises(DomainError):
            RunConfig.from_file(str(tmp_path / "missing.cfg"))

    def test_field_needs_complete_pairs(self):
        """up without omega is an incomplete field"""
        with pytest.raises(DomainError):
            RunConfig.from_mapping({"up": "0.46"}).validate()
        config = RunConfig.from_mapping({"up": "0.46", "omega": "0.06"}).validate()
        assert config.laser().up == 0.46

    def test_truncation(self):
        """A truncation multiplier builds the tapered atom"""
        atom = RunConfig.from_mapping({"truncation": "2"}).target()
        assert atom.truncation.r0 == pytest.approx(21.41, abs=0.01)
        assert RunConfig.from_mapping({"truncation": "off"}).target().truncation is None

    def test_validation(self):
        """Out-of-range run settings fail fast"""
        for values in (
            {"method": "tdse"},
            {"orbits": "c"},
            {"cycles": "0"},
            {"n_z": "1"},
            {"pz_min": "1.0", "pz_max": "-1.0"},
            {"scale": "sqrt"},
            {"model": "gaussian"},
            {"stokes": "never"},
            {"newton_tol": "-1"},
            {"jacobian": "analytic"},
            {"eps": "1.5"},
        ):
            with pytest.raises(DomainError):
                RunConfig.from_mapping(values).validate()

    def test_pmd_file_as_config(self, tmp_path):
        """The header of a PMD file reproduces the run that wrote it"""
        config = RunConfig.from_mapping({"eps": "0.2", "cycles": "1", "n_z": "4", "n_x": "3", "pz_min": "-0.6",
                                         "pz_max": "0.6", "px_min": "-0.3", "px_max": "0.3"}).validate()
        grid = compute_pmd("sfa", config.laser(), config.target(), build_grid(config.run.axes()),
                           options=PmdOptions(threads=1, progress=False))
        path = tmp_path / "pmd.dat"
        write_pmd(grid, str(path), header=config.to_header())
        again = RunConfig.from_file(str(path))
        assert again == config
        assert again.run.axes() == GridAxes(-0.6, 0.6, 4, -0.3, 0.3, 3)
        assert again.laser() == field_from_experiment(2.5e14, 735.0, eps=0.2)
