"""
Run configuration: field, atom and run blocks.

A config file is plain text with one ``key = value`` per line and ``#``
comments. The same keys appear in the header of every PMD file, so a PMD
file can be fed back as ``--config`` to reproduce it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dataclass_field, replace
from itertools import takewhile
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

from cqsfa_engine import SolverSettings
from errors import DomainError
from field_potential import LaserField, TargetAtom, field_from_experiment, truncated_atom
from pmd_engine import CQSFA_ORBITS, SFA_ORBITS, GridAxes
from sfa_amplitude import DIPOLE_MODELS, parse_orbit_set

logger = logging.getLogger(__name__)

METHODS = ("sfa", "cqsfa")
SCALES = ("linear", "log10")
STOKES_POLICIES = ("keep", "discard", "auto")
DEFAULT_CQSFA_CYCLES = 4


def _optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "off") else float(text)


def _optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none") else int(text)


def _orbits(text: str) -> Tuple[str, ...]:
    return tuple(label.strip() for label in text.split(",") if label.strip())


@dataclass
class FieldBlock:
    intensity: Optional[float] = 2.5e14
    wavelength: Optional[float] = 735.0
    up: Optional[float] = None
    omega: Optional[float] = None
    eps: float = 0.0
    phi: float = 0.0

    def build(self) -> LaserField:
        if self.up is not None or self.omega is not None:
            if self.up is None or self.omega is None:
                raise DomainError("give both up and omega, or intensity and wavelength")
            return LaserField(up=self.up, omega=self.omega, eps=self.eps, phi=self.phi)
        if self.intensity is None or self.wavelength is None:
            raise DomainError("the field needs intensity and wavelength, or up and omega")
        return field_from_experiment(self.intensity, self.wavelength, self.eps, self.phi)


@dataclass
class AtomBlock:
    ip: float = 0.90357
    z_eff: float = 1.0
    truncation: Optional[float] = None

    def build(self, laser: LaserField) -> TargetAtom:
        atom = TargetAtom(ip=self.ip, z_eff=self.z_eff)
        if self.truncation is None:
            return atom
        return truncated_atom(laser, atom, self.truncation)


@dataclass
class RunBlock:
    method: str = "sfa"
    orbits: Tuple[str, ...] = ("a", "b")
    cycles: Optional[int] = None
    pz_min: float = -1.5
    pz_max: float = 1.5
    n_z: int = 201
    px_min: float = -1.5
    px_max: float = 1.5
    n_x: int = 201
    scale: str = "log10"
    output: str = "pmd.dat"
    model: str = "unit"
    stokes: str = "auto"
    newton_tol: Optional[float] = None
    jacobian: str = "finite_difference"

    @property
    def n_cycles(self) -> int:
        if self.cycles is not None:
            return self.cycles
        return DEFAULT_CQSFA_CYCLES if self.method == "cqsfa" else 1

    def axes(self) -> GridAxes:
        return GridAxes(self.pz_min, self.pz_max, self.n_z, self.px_min, self.px_max, self.n_x)


# key -> (block, parser, formatter)
_KEYS: Dict[str, Tuple[str, Callable[[str], object], Callable[[object], str]]] = {
    "intensity": ("field", _optional_float, lambda v: "none" if v is None else repr(v)),
    "wavelength": ("field", _optional_float, lambda v: "none" if v is None else repr(v)),
    "up": ("field", _optional_float, lambda v: "none" if v is None else repr(v)),
    "omega": ("field", _optional_float, lambda v: "none" if v is None else repr(v)),
    "eps": ("field", float, repr),
    "phi": ("field", float, repr),
    "ip": ("atom", float, repr),
    "z_eff": ("atom", float, repr),
    "truncation": ("atom", _optional_float, lambda v: "off" if v is None else repr(v)),
    "method": ("run", str, str),
    "orbits": ("run", _orbits, lambda v: ",".join(v)),
    "cycles": ("run", _optional_int, lambda v: "none" if v is None else str(v)),
    "pz_min": ("run", float, repr),
    "pz_max": ("run", float, repr),
    "n_z": ("run", int, str),
    "px_min": ("run", float, repr),
    "px_max": ("run", float, repr),
    "n_x": ("run", int, str),
    "scale": ("run", str, str),
    "output": ("run", str, str),
    "model": ("run", str, str),
    "stokes": ("run", str, str),
    "newton_tol": ("run", _optional_float, lambda v: "none" if v is None else repr(v)),
    "jacobian": ("run", str, str),
}

CONFIG_KEYS = tuple(_KEYS)


@dataclass
class RunConfig:
    field: FieldBlock = dataclass_field(default_factory=FieldBlock)
    atom: AtomBlock = dataclass_field(default_factory=AtomBlock)
    run: RunBlock = dataclass_field(default_factory=RunBlock)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], base: Optional["RunConfig"] = None) -> "RunConfig":
        """Layer ``values`` over ``base``; strings are parsed, other values used as is"""
        config = base.copy() if base is not None else cls()
        for key, value in values.items():
            if value is None:
                continue
            if key not in _KEYS:
                logger.debug("ignoring informational key %r", key)
                continue
            block, parse, _ = _KEYS[key]
            if isinstance(value, str):
                try:
                    value = parse(value)
                except ValueError as exc:
                    raise DomainError(f"bad value for {key!r}: {value!r}") from exc
            setattr(getattr(config, block), key, value)
        return config

    @classmethod
    def from_header(cls, lines: Iterable[str]) -> "RunConfig":
        return cls.from_mapping(parse_key_values(lines))

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as handle:
                lines = handle.readlines()
        except OSError as exc:
            raise DomainError(f"cannot read config file {path}: {exc}") from exc
        if any(line.startswith("# format_version") for line in lines):
            # a PMD file: only its header is configuration
            lines = list(takewhile(lambda line: line.startswith("#"), lines))
        return cls.from_header(lines)

    def copy(self) -> "RunConfig":
        return RunConfig(field=replace(self.field), atom=replace(self.atom), run=replace(self.run))

    def to_header(self) -> Dict[str, str]:
        """Ordered ``key -> value`` text for file headers"""
        out: Dict[str, str] = {}
        for key, (block, _, fmt) in _KEYS.items():
            out[key] = fmt(getattr(getattr(self, block), key))
        return out

    def laser(self) -> LaserField:
        return self.field.build()

    def target(self) -> TargetAtom:
        return self.atom.build(self.laser())

    def solver_settings(self) -> SolverSettings:
        settings = SolverSettings(model=self.run.model, jacobian=self.run.jacobian)
        if self.run.newton_tol is not None:
            settings = replace(settings, newton_tol=self.run.newton_tol)
        return settings

    def validate(self) -> "RunConfig":
        """Fail fast: every value must satisfy the preconditions of the engines"""
        laser = self.laser()
        self.atom.build(laser)
        run = self.run
        if run.method not in METHODS:
            raise DomainError(f"unknown method {run.method!r}, expected one of {METHODS}")
        parse_orbit_set(run.orbits, SFA_ORBITS if run.method == "sfa" else CQSFA_ORBITS)
        if run.n_cycles < 1:
            raise DomainError(f"cycles must be at least 1, got {run.cycles}")
        if run.n_z < 2 or run.n_x < 2:
            raise DomainError(f"grid needs at least 2 points per axis, got {run.n_z} x {run.n_x}")
        if not (run.pz_max > run.pz_min and run.px_max > run.px_min):
            raise DomainError("grid bounds must satisfy max > min on both axes")
        if run.scale not in SCALES:
            raise DomainError(f"unknown scale {run.scale!r}, expected one of {SCALES}")
        if run.model not in DIPOLE_MODELS:
            raise DomainError(f"unknown dipole model {run.model!r}, expected one of {DIPOLE_MODELS}")
        if run.stokes not in STOKES_POLICIES:
            raise DomainError(f"unknown Stokes policy {run.stokes!r}, expected one of {STOKES_POLICIES}")
        if run.newton_tol is not None and not run.newton_tol > 0:
            raise DomainError(f"newton_tol must be positive, got {run.newton_tol}")
        self.solver_settings()
        return self


def parse_key_values(lines: Iterable[str]) -> Dict[str, str]:
    """``key = value`` pairs; leading ``#`` header markers and blank lines are skipped"""
    values: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.strip()
        if line.startswith("#"):
            line = line[1:].strip()
        if not line:
            continue
        if "=" not in line:
            # header lines such as the column legend carry no assignment
            if raw.lstrip().startswith("#"):
                continue
            raise DomainError(f"line {number}: expected 'key = value', got {raw.rstrip()!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values

