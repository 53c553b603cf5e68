"""
Analytic estimates and diagnostics: distribution centers, transverse width,
critical ellipticity, Im t' scans along the minor axis and fringe visibility.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter1d
from scipy.optimize import minimize_scalar

from errors import DomainError, NumericalError
from field_potential import LaserField, TargetAtom
from sfa_times import grouped_times

logger = logging.getLogger(__name__)

DEFAULT_OVERLAP_THRESHOLD = 5.0
ORBIT_GROUPS = {"a": 0, "b": 1}
LOBE_SEARCH = 0.3


@dataclass
class ScanCurve:
    abscissa: np.ndarray
    ordinate: np.ndarray
    orbit_label: str
    method: str
    axis_kind: str = "final_px"
    metadata: Dict[str, str] = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=float)
        self.ordinate = np.asarray(self.ordinate, dtype=float)
        finite = np.isfinite(self.abscissa)
        if np.any(np.diff(self.abscissa[finite]) <= 0):
            raise DomainError("scan abscissa must be strictly increasing")


def distribution_centers(field: LaserField, peak_index: int = 0) -> np.ndarray:
    """Drift momentum of electrons released at the n-th field peak"""
    return np.array([0.0, -field.eps * field.a0 * (-1) ** peak_index])


def center_at_time(field: LaserField, t) -> np.ndarray:
    """Drift momentum -A(Re t) for a release at an arbitrary time"""
    return -np.real(field.vector_potential(np.real(t)))


def center_separation(field: LaserField) -> float:
    return 2 * field.eps * field.a0


def transverse_width(field: LaserField, atom: TargetAtom) -> float:
    return math.sqrt(field.omega * math.sqrt(field.up) / (math.sqrt(1 + field.eps ** 2) * math.sqrt(2 * atom.ip)))


def critical_ellipticity(field: LaserField, atom: TargetAtom, threshold: float = DEFAULT_OVERLAP_THRESHOLD) -> float:
    """Ellipticity at which the two half-cycle lobes sit ``threshold`` widths apart"""
    if not threshold > 0:
        raise DomainError(f"overlap threshold must be positive, got {threshold}")
    if threshold == DEFAULT_OVERLAP_THRESHOLD:
        w, ip, up = field.omega, atom.ip, field.up
        return (5 * math.sqrt(w) / (32 * math.sqrt(ip) * math.sqrt(up))) * math.sqrt(
            25 * w + math.sqrt(2048 * ip * up + 625 * w ** 2)
        )
    c = threshold ** 2 * field.omega / (16 * math.sqrt(field.up) * math.sqrt(2 * atom.ip))
    return math.sqrt(0.5 * (c ** 2 + c * math.sqrt(c ** 2 + 4)))


def lobe_overlap_gap(field: LaserField, atom: TargetAtom, threshold: float = DEFAULT_OVERLAP_THRESHOLD) -> float:
    """Center separation minus ``threshold`` transverse widths"""
    return center_separation(field) - threshold * transverse_width(field, atom)


def sfa_time_scan(field: LaserField, atom: TargetAtom, orbit_label: str, samples: Sequence[float]) -> ScanCurve:
    if orbit_label not in ORBIT_GROUPS:
        raise DomainError(f"the SFA has orbits a and b only, got {orbit_label!r}")
    index = ORBIT_GROUPS[orbit_label]
    values = [grouped_times(field, atom, (0.0, float(px)))[index].t_prime.imag for px in samples]
    return ScanCurve(abscissa=samples, ordinate=values, orbit_label=orbit_label, method="sfa")


def imaginary_time_scan(
    method: str,
    field: LaserField,
    atom: TargetAtom,
    orbit_label: str,
    axis_kind: str = "final_px",
    samples: Optional[Sequence[float]] = None,
    settings=None,
    solutions: Optional[dict] = None,
) -> ScanCurve:
    """Im t' along the p_z = 0 cut for one orbit.

    ``solutions`` may carry a precomputed ``axis_solutions`` map so several
    orbits can share one set of continuations.
    """
    if samples is None:
        samples = np.linspace(-1.5, 1.5, 21)
    samples = np.sort(np.asarray(samples, dtype=float))
    if axis_kind not in ("final_px", "initial_px"):
        raise DomainError(f"unknown scan axis {axis_kind!r}")
    if method == "sfa":
        # p0 = pf without a binding potential, so both axes coincide
        curve = sfa_time_scan(field, atom, orbit_label, samples)
        curve.axis_kind = axis_kind
        return curve
    if method != "cqsfa":
        raise DomainError(f"unknown method {method!r}")

    from cqsfa_engine import DEFAULT_SETTINGS, axis_solutions

    if solutions is None:
        solutions = axis_solutions(field, atom, samples, settings or DEFAULT_SETTINGS)
    abscissa: List[float] = []
    ordinate: List[float] = []
    for px in samples:
        sol = solutions.get((float(px), orbit_label))
        if sol is None:
            logger.debug("no %s solution at p_x=%.3f", orbit_label, px)
            if axis_kind == "final_px":
                abscissa.append(float(px))
                ordinate.append(math.nan)
            continue
        abscissa.append(float(px) if axis_kind == "final_px" else sol.p0[1])
        ordinate.append(sol.t_prime.imag)
    if axis_kind == "initial_px":
        order = np.argsort(abscissa)
        abscissa = list(np.asarray(abscissa)[order])
        ordinate = list(np.asarray(ordinate)[order])
        keep = [0] + [k for k in range(1, len(abscissa)) if abscissa[k] > abscissa[k - 1]] if abscissa else []
        abscissa = [abscissa[k] for k in keep]
        ordinate = [ordinate[k] for k in keep]
    return ScanCurve(abscissa=abscissa, ordinate=ordinate, orbit_label=orbit_label, method="cqsfa", axis_kind=axis_kind)


def write_scan(curve: ScanCurve, path: str, metadata: Optional[Dict[str, object]] = None) -> None:
    header = dict(metadata or {})
    header.update({"method": curve.method, "orbit": curve.orbit_label, "axis": curve.axis_kind})
    table = pd.DataFrame({"p": curve.abscissa, "im_t": curve.ordinate})
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, value in header.items():
            handle.write(f"# {key} = {value}\n")
        handle.write("# p  im_t\n")
        table.to_csv(handle, sep=" ", header=False, index=False, float_format="%.17g", na_rep="nan")


def read_scan(path: str) -> ScanCurve:
    metadata: Dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#") and "=" in line:
                key, value = line[1:].split("=", 1)
                metadata[key.strip()] = value.strip()
    table = pd.read_csv(path, sep=" ", comment="#", header=None, names=["p", "im_t"])
    return ScanCurve(
        abscissa=table["p"].to_numpy(),
        ordinate=table["im_t"].to_numpy(),
        orbit_label=metadata.get("orbit", "a"),
        method=metadata.get("method", "sfa"),
        axis_kind=metadata.get("axis", "final_px"),
        metadata=metadata,
    )


def sfa_lobe_centers(field: LaserField, atom: TargetAtom) -> Dict[str, np.ndarray]:
    """Momentum of the strongest single-cycle SFA emission for orbits a and b.

    Each orbit's distribution is even in p_z, so its maximum lies on the
    p_z = 0 axis; it is searched for around the drift momentum of the
    orbit's release time. Beyond the adiabatic estimate the lobes sit
    further out in p_x because the electron leaves with a nonzero
    transverse momentum.
    """
    from sfa_amplitude import orbit_amplitude

    released = grouped_times(field, atom, (0.0, 0.0))
    centers: Dict[str, np.ndarray] = {}
    for label, index in ORBIT_GROUPS.items():
        start = float(center_at_time(field, released[index].t_prime)[1])

        def weakness(px: float) -> float:
            sol = grouped_times(field, atom, (0.0, px))[index]
            return -2.0 * math.log(abs(orbit_amplitude(field, atom, (0.0, px), sol).amplitude))

        result = minimize_scalar(weakness, bounds=(start - LOBE_SEARCH, start + LOBE_SEARCH), method="bounded",
                                 options={"xatol": 1e-8})
        if not result.success:
            raise NumericalError(f"lobe search for orbit {label} failed: {result.message}")
        centers[label] = np.array([0.0, float(result.x)])
    return centers


def fringe_visibility(cut: Sequence[float], window: Optional[int] = None, floor: float = 0.1,
                      reference: Optional[Sequence[float]] = None) -> float:
    """Contrast of a 1D probability cut after dividing out its envelope.

    The envelope is ``reference`` when given (for instance the incoherent sum
    of the interfering orbits). Otherwise it is estimated from the cut with a
    moving average of ``window`` samples, extrapolated as 2 MA - MA(MA) so
    smooth lobes are not mistaken for fringes. Only samples whose envelope
    exceeds ``floor`` times its maximum are used, and with the moving
    average also only those a full window away from either end.
    """
    values = np.asarray(cut, dtype=float)
    if values.size < 8:
        raise DomainError("fringe visibility needs at least 8 samples")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise DomainError("fringe visibility needs finite nonnegative samples")
    if not np.any(values > 0):
        raise DomainError("visibility is undefined for an all-zero cut")
    if reference is not None:
        envelope = np.asarray(reference, dtype=float)
        if envelope.shape != values.shape or not np.all(np.isfinite(envelope)):
            raise DomainError("the reference envelope must be finite and match the cut")
        inner = slice(None)
    else:
        if window is None:
            window = max(3, values.size // 8)
        window = int(min(max(window, 1), values.size))
        once = uniform_filter1d(values, size=window, mode="nearest")
        envelope = 2 * once - uniform_filter1d(once, size=window, mode="nearest")
        margin = window
        inner = slice(margin, values.size - margin) if values.size - 2 * margin >= 2 else slice(None)
    env = envelope[inner]
    keep = env > floor * env.max()
    if not np.any(keep):
        raise DomainError("the envelope has no samples above the floor")
    ratio = values[inner][keep] / env[keep]
    high, low = ratio.max(), ratio.min()
    if high + low == 0:
        return 0.0
    return float(min((high - low) / (high + low), 1.0))


def pair_contrast(first: Sequence[complex], second: Sequence[complex]) -> float:
    """Intensity-weighted fringe contrast of two interfering amplitudes.

    2 sum|M1||M2| / sum(|M1|^2 + |M2|^2): 1 for equal amplitudes everywhere,
    0 when the two never overlap.
    """
    a = np.abs(np.asarray(first, dtype=complex))
    b = np.abs(np.asarray(second, dtype=complex))
    if a.shape != b.shape:
        raise DomainError("pair contrast needs amplitudes on the same samples")
    total = float(np.sum(a ** 2 + b ** 2))
    if not total > 0:
        raise DomainError("contrast is undefined for vanishing amplitudes")
    return float(2 * np.sum(a * b) / total)


def sfa_cut_visibility(field: LaserField, atom: TargetAtom, samples: Optional[Sequence[float]] = None) -> float:
    """Contrast of the a+b interference along the p_z = 0 cut"""
    from sfa_amplitude import sfa_orbit_amplitudes

    if samples is None:
        samples = np.linspace(-1.2, 1.2, 241)
    first, second = [], []
    for px in np.asarray(samples, dtype=float):
        contributions = sfa_orbit_amplitudes(field, atom, (0.0, float(px)), stokes_policy="keep")
        first.append(contributions["a"].amplitude)
        second.append(contributions["b"].amplitude)
    return pair_contrast(first, second)
