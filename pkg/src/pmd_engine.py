"""
Momentum-grid assembly of photoelectron momentum distributions.

Per-orbit complex amplitudes are stored on the grid so any coherent
combination (full sum, pair panels) can be recomputed without re-solving.
"""

from __future__ import annotations

import logging
import math
import multiprocessing as mp
import os
from dataclasses import dataclass, field as dataclass_field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from cqsfa_engine import (
    CLASS_LABELS,
    DEFAULT_SETTINGS,
    OrbitSolution,
    SolverSettings,
    class_seeds,
    distinct_orbits,
    ring_net,
)
from errors import DomainError, NumericalError
from field_potential import LaserField, TargetAtom
from sfa_amplitude import cycle_sum_factor, parse_orbit_set, sfa_orbit_amplitudes
from sfa_times import STOKES_KEEP_BOTH_EPS, stokes_critical_momentum

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MASKED_WARNING_FRACTION = 0.05
STOKES_ANGLE_BINS = 72
SFA_ORBITS = ("a", "b")
CQSFA_ORBITS = ("a", "b", "c", "d")
THREADS_ENV = "ORBIT_HOLOGRAPHY_THREADS"


@dataclass(frozen=True)
class GridAxes:
    pz_min: float = -1.5
    pz_max: float = 1.5
    n_z: int = 300
    px_min: float = -1.5
    px_max: float = 1.5
    n_x: int = 300

    @property
    def pz(self) -> np.ndarray:
        return np.linspace(self.pz_min, self.pz_max, self.n_z)

    @property
    def px(self) -> np.ndarray:
        return np.linspace(self.px_min, self.px_max, self.n_x)

    @property
    def spacing(self) -> Tuple[float, float]:
        return ((self.pz_max - self.pz_min) / (self.n_z - 1), (self.px_max - self.px_min) / (self.n_x - 1))


@dataclass
class PMDGrid:
    axes: GridAxes
    amplitudes: Dict[str, np.ndarray] = dataclass_field(default_factory=dict)
    available: Dict[str, np.ndarray] = dataclass_field(default_factory=dict)
    probability: Optional[np.ndarray] = None
    display: Optional[np.ndarray] = None
    scale: str = "raw"
    selected: Tuple[str, ...] = ()
    discarded: Optional[np.ndarray] = None
    metadata: Dict[str, str] = dataclass_field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.axes.n_z, self.axes.n_x

    @property
    def cell_count(self) -> int:
        return self.axes.n_z * self.axes.n_x

    def coherent_sum(self, labels: Iterable[str]) -> np.ndarray:
        total = np.zeros(self.shape, dtype=complex)
        for label in labels:
            if label not in self.amplitudes:
                raise DomainError(f"orbit {label!r} has no stored amplitudes")
            total += self.amplitudes[label]
        return total

    def masked_fraction(self) -> float:
        if self.probability is None:
            return 0.0
        return float(np.count_nonzero(~np.isfinite(self.probability))) / self.cell_count


@dataclass(frozen=True)
class PmdOptions:
    model: str = "unit"
    stokes_policy: str = "auto"
    threads: Optional[int] = None
    progress: bool = True
    settings: SolverSettings = DEFAULT_SETTINGS


def resolve_threads(threads: Optional[int] = None) -> int:
    """Flag value, else the environment variable, else the machine's CPU count"""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError as exc:
                raise DomainError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise DomainError(f"thread count must be positive, got {threads}")
    return threads


def build_grid(axes: GridAxes, orbits: Sequence[str] = SFA_ORBITS) -> PMDGrid:
    if axes.n_z < 2 or axes.n_x < 2:
        raise DomainError(f"grid needs at least 2 points per axis, got {axes.n_z} x {axes.n_x}")
    if not (axes.pz_max > axes.pz_min and axes.px_max > axes.px_min):
        raise DomainError("grid bounds must satisfy max > min on both axes")
    shape = (axes.n_z, axes.n_x)
    return PMDGrid(
        axes=axes,
        amplitudes={label: np.zeros(shape, dtype=complex) for label in orbits},
        available={label: np.zeros(shape, dtype=bool) for label in orbits},
        discarded=np.zeros(shape, dtype=bool),
    )


def _ordered_map(worker, tasks: List[tuple], threads: int, progress: bool, desc: str) -> list:
    """Ordered parallel map; results never depend on the worker count"""
    if threads <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tqdm(tasks, desc=desc, disable=not progress)]
    with mp.Pool(processes=min(threads, len(tasks))) as pool:
        return list(tqdm(pool.imap(worker, tasks), total=len(tasks), desc=desc, disable=not progress))


def _stokes_table(field: LaserField, atom: TargetAtom, policy: str) -> Optional[np.ndarray]:
    if policy == "keep" or field.eps == 0.0 or (policy == "auto" and field.eps <= STOKES_KEEP_BOTH_EPS):
        return None
    angles = np.linspace(-math.pi, math.pi, STOKES_ANGLE_BINS, endpoint=False)
    return np.array([stokes_critical_momentum(field, atom, float(a)) for a in angles])


def _critical_for(table: Optional[np.ndarray], pz: float, px: float) -> Optional[float]:
    if table is None:
        return None
    index = int(round((math.atan2(px, pz) + math.pi) / (2 * math.pi) * STOKES_ANGLE_BINS)) % STOKES_ANGLE_BINS
    return float(table[index])


def _sfa_row(task: tuple):
    field, atom, pz_values, px, references, options, table, n_cycles = task
    n = len(pz_values)
    amps = {label: np.full(n, np.nan + 0j) for label in SFA_ORBITS}
    discarded = np.zeros(n, dtype=bool)
    refs = dict(references)
    for iz, pz in enumerate(pz_values):
        p = (float(pz), float(px))
        contributions = sfa_orbit_amplitudes(
            field, atom, p, options.model, options.stokes_policy, refs, _critical_for(table, p[0], p[1])
        )
        factor = cycle_sum_factor(field, atom, p, n_cycles)
        for label, contribution in contributions.items():
            # a saddle switched off past its Stokes line contributes nothing
            if contribution is None:
                discarded[iz] = True
                amps[label][iz] = 0j
                continue
            refs[label] = contribution.prefactor
            amps[label][iz] = contribution.amplitude * factor
    return amps, discarded


def _fill_sfa(grid: PMDGrid, field: LaserField, atom: TargetAtom, n_cycles: int, options: PmdOptions) -> None:
    pz_values = grid.axes.pz
    px_values = grid.axes.px
    table = _stokes_table(field, atom, options.stokes_policy)
    # the first column fixes the square-root branch for each row
    column_refs: List[Dict[str, complex]] = []
    refs: Dict[str, complex] = {}
    for px in px_values:
        contributions = sfa_orbit_amplitudes(
            field, atom, (float(pz_values[0]), float(px)), options.model, options.stokes_policy, refs,
            _critical_for(table, float(pz_values[0]), float(px)),
        )
        refs = {label: c.prefactor for label, c in contributions.items() if c is not None} or refs
        column_refs.append(dict(refs))
    tasks = [(field, atom, pz_values, float(px), column_refs[ix], options, table, n_cycles)
             for ix, px in enumerate(px_values)]
    rows = _ordered_map(_sfa_row, tasks, resolve_threads(options.threads), options.progress, "SFA rows")
    for ix, (amps, discarded) in enumerate(rows):
        for label in SFA_ORBITS:
            column = amps[label]
            grid.amplitudes[label][:, ix] = np.nan_to_num(column, nan=0.0)
            grid.available[label][:, ix] = np.isfinite(column)
        grid.discarded[:, ix] = discarded


def _cqsfa_class(task: tuple) -> List[Optional[OrbitSolution]]:
    field, atom, seed, direction, targets, settings = task
    label = CLASS_LABELS[(seed.seed_group, direction)]
    try:
        solutions = ring_net(field, atom, seed, direction, targets, settings)
    except (DomainError, NumericalError) as exc:
        logger.warning("continuation of class %s failed: %s", label, exc)
        return [None] * len(targets)
    # trajectories stay in the worker
    return [None if sol is None else replace(sol, trajectory=None) for sol in solutions]


def _fill_cqsfa(grid: PMDGrid, field: LaserField, atom: TargetAtom, n_cycles: int, options: PmdOptions) -> None:
    settings = replace(options.settings, model=options.model)
    n_z = grid.axes.n_z
    targets = [(float(pz), float(px)) for px in grid.axes.px for pz in grid.axes.pz]
    seeds = class_seeds(field, atom, settings)
    tasks = [(field, atom, seed, direction, targets, settings) for seed, direction in seeds]
    per_class = _ordered_map(_cqsfa_class, tasks, resolve_threads(options.threads), options.progress,
                             "CQSFA classes")
    for k, target in enumerate(targets):
        iz, ix = k % n_z, k // n_z
        orbits = distinct_orbits(solutions[k] for solutions in per_class)
        if not orbits:
            continue
        factor = cycle_sum_factor(field, atom, target, n_cycles)
        for label, sol in orbits.items():
            grid.amplitudes[label][iz, ix] = sol.amplitude() * factor
            grid.available[label][iz, ix] = True


def compute_pmd(
    method: str,
    field: LaserField,
    atom: TargetAtom,
    grid: PMDGrid,
    orbit_set: Iterable[str] = SFA_ORBITS,
    n_cycles: int = 1,
    options: PmdOptions = PmdOptions(),
) -> PMDGrid:
    """Fill ``grid`` with per-orbit amplitudes and the coherent probability.

    A CQSFA cell is masked when a selected orbit that exists elsewhere on the
    grid was not found there. Selected orbits found nowhere are reported as
    absent and do not mask anything.
    """
    if method not in ("sfa", "cqsfa"):
        raise DomainError(f"unknown method {method!r}, expected 'sfa' or 'cqsfa'")
    allowed = SFA_ORBITS if method == "sfa" else CQSFA_ORBITS
    labels = parse_orbit_set(orbit_set, allowed)
    if n_cycles < 1:
        raise DomainError(f"n_cycles must be at least 1, got {n_cycles}")
    fresh = build_grid(grid.axes, allowed)
    grid.amplitudes, grid.available, grid.discarded = fresh.amplitudes, fresh.available, fresh.discarded
    if method == "sfa":
        _fill_sfa(grid, field, atom, n_cycles, options)
    else:
        _fill_cqsfa(grid, field, atom, n_cycles, options)
    grid.selected = labels
    probability = np.abs(grid.coherent_sum(labels)) ** 2
    present = [label for label in labels if grid.available[label].any()]
    absent = [label for label in labels if label not in present]
    missing = np.zeros(grid.shape, dtype=bool)
    for label in present:
        missing |= ~grid.available[label]
    probability[missing] = np.nan
    grid.probability = probability
    grid.display = None
    grid.scale = "raw"
    fraction = grid.masked_fraction()
    grid.metadata.update({
        "method": method,
        "orbits": ",".join(labels),
        "cycles": str(n_cycles),
        "masked_fraction": f"{fraction:.6f}",
        "stokes_discarded": str(int(np.count_nonzero(grid.discarded))),
        "status": "ok",
    })
    if absent:
        grid.metadata["absent_orbits"] = ",".join(absent)
        logger.warning("orbits %s were not found anywhere on the grid", ",".join(absent))
    if fraction > MASKED_WARNING_FRACTION:
        grid.metadata["status"] = "warning: masked cells above 5%"
        logger.warning("%.1f%% of PMD cells are masked", 100 * fraction)
    return grid


def pair_interference(grid: PMDGrid, pair: Sequence[str]) -> np.ndarray:
    """|M_i + M_j|^2 from stored amplitudes"""
    if len(pair) != 2:
        raise DomainError(f"a pair needs exactly two orbit labels, got {pair}")
    for label in pair:
        if label not in grid.amplitudes or not grid.available[label].any():
            raise DomainError(f"orbit {label!r} has no computed amplitudes")
    total = grid.amplitudes[pair[0]] + grid.amplitudes[pair[1]]
    probability = np.abs(total) ** 2
    missing = ~(grid.available[pair[0]] & grid.available[pair[1]])
    probability[missing] = np.nan
    return probability


def normalize_log(grid: PMDGrid, scale: str = "log10", floor: float = 6.0) -> PMDGrid:
    """Divide by the maximum; the log10 view is clamped at -floor decades"""
    if grid.probability is None:
        raise DomainError("grid has no probability to normalize")
    peak = np.nanmax(grid.probability) if np.any(np.isfinite(grid.probability)) else 0.0
    if not peak > 0:
        raise DomainError("cannot normalize an all-zero grid")
    linear = grid.probability / peak
    if scale == "linear":
        display = linear
    elif scale == "log10":
        with np.errstate(divide="ignore"):
            display = np.maximum(np.log10(linear), -floor)
    else:
        raise DomainError(f"unknown scale {scale!r}")
    return replace(grid, display=display, scale=scale)


def _columns(grid: PMDGrid) -> List[str]:
    columns = ["pz", "px", "prob"]
    for label in grid.amplitudes:
        columns += [f"re_{label}", f"im_{label}"]
    return columns


def write_pmd(grid: PMDGrid, path: str, header: Optional[Dict[str, object]] = None) -> None:
    """UTF-8 text: '# key = value' header, then one 'pz,px,prob,...' line per cell with p_z fastest"""
    if grid.probability is None:
        raise DomainError("grid has not been computed")
    pz_grid, px_grid = np.meshgrid(grid.axes.pz, grid.axes.px, indexing="ij")
    data = {
        "pz": pz_grid.ravel(order="F"),
        "px": px_grid.ravel(order="F"),
        "prob": grid.probability.ravel(order="F"),
    }
    for label, values in grid.amplitudes.items():
        masked = np.where(grid.available[label], values, np.nan + 0j).ravel(order="F")
        data[f"re_{label}"] = masked.real
        data[f"im_{label}"] = masked.imag
    lines = dict(header or {})
    lines.update(grid.metadata)
    lines["format_version"] = FORMAT_VERSION
    lines["columns"] = ",".join(_columns(grid))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, value in lines.items():
            handle.write(f"# {key} = {value}\n")
        pd.DataFrame(data, columns=_columns(grid)).to_csv(
            handle, header=False, index=False, float_format="%.17g", na_rep="nan", lineterminator="\n"
        )


def read_header(path: str) -> Dict[str, str]:
    header: Dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            if "=" in line:
                key, value = line[1:].split("=", 1)
                header[key.strip()] = value.strip()
    return header


def read_pmd(path: str) -> PMDGrid:
    header = read_header(path)
    if header.get("format_version") != str(FORMAT_VERSION):
        raise DomainError(f"{path}: unsupported PMD format version {header.get('format_version')!r}")
    columns = header["columns"].split(",")
    table = pd.read_csv(path, comment="#", header=None, names=columns)
    pz = np.unique(table["pz"].to_numpy())
    px = np.unique(table["px"].to_numpy())
    axes = GridAxes(float(pz[0]), float(pz[-1]), len(pz), float(px[0]), float(px[-1]), len(px))
    shape = (len(pz), len(px))
    grid = PMDGrid(axes=axes, metadata=header)
    grid.probability = table["prob"].to_numpy().reshape(shape, order="F")
    labels = [name[3:] for name in columns if name.startswith("re_")]
    for label in labels:
        values = (table[f"re_{label}"].to_numpy() + 1j * table[f"im_{label}"].to_numpy()).reshape(shape, order="F")
        grid.available[label] = np.isfinite(values)
        grid.amplitudes[label] = np.nan_to_num(values, nan=0.0)
    grid.selected = tuple(header.get("orbits", ",".join(labels)).split(","))
    return grid
