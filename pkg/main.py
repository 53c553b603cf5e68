#!/usr/bin/env python3
"""
Orbit Holography - command-line entry point
Quantum-orbit photoelectron momentum distributions in elliptically polarized fields
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from analysis import (  # noqa: E402
    critical_ellipticity,
    distribution_centers,
    imaginary_time_scan,
    lobe_overlap_gap,
    sfa_lobe_centers,
    transverse_width,
    write_scan,
)
from cqsfa_engine import axis_solutions, orbits_at, write_trajectory  # noqa: E402
from errors import ConvergenceError, DomainError, NumericalError  # noqa: E402
from pmd_engine import (  # noqa: E402
    CQSFA_ORBITS,
    SFA_ORBITS,
    PmdOptions,
    build_grid,
    compute_pmd,
    pair_interference,
    read_pmd,
    write_pmd,
)
from plotting import plot_pmd, plot_scan, write_plot_script  # noqa: E402
from run_config import CONFIG_KEYS, RunBlock, RunConfig  # noqa: E402
from sfa_amplitude import parse_orbit_set  # noqa: E402
from sfa_times import grouped_times, residual_tolerance, saddle_residual, stokes_critical_momentum  # noqa: E402

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_NUMERICAL = 2
EXIT_USAGE = 64

DEFAULT_OUTPUTS = {
    "pmd": "pmd.dat",
    "pair": "pair.dat",
    "scan-imt": "scan_imt.dat",
    "stokes": "stokes.dat",
    "traj": "traj.dat",
}

logger = logging.getLogger("orbit_holography")


class UsageParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with status 64"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    field = parent.add_argument_group("field (atomic units unless stated)")
    field.add_argument("--intensity", type=float, help="laser intensity in W/cm^2, fixes Up (default 2.5e14)")
    field.add_argument("--wavelength", type=float, help="wavelength in nm (default 735)")
    field.add_argument("--up", type=float, help="ponderomotive energy in hartree, overrides intensity")
    field.add_argument("--omega", type=float, help="angular frequency in a.u., used with --up")
    field.add_argument("--eps", type=float, help="ellipticity in [0, 1] (default 0)")
    field.add_argument("--phi", type=float, help="offset phase of the unit cell in rad (default 0)")

    atom = parent.add_argument_group("atom")
    atom.add_argument("--ip", type=float, help="ionization potential in hartree (default 0.90357)")
    atom.add_argument("--z-eff", type=float, help="asymptotic charge in a.u.; 0 switches the potential off")
    atom.add_argument("--truncation", type=str, metavar="MULT",
                      help="taper the Coulomb tail from MULT * ip / E_max, or 'off' (default off)")

    run = parent.add_argument_group("run")
    run.add_argument("--method", type=str, help="sfa or cqsfa (default sfa)")
    run.add_argument("--orbits", type=str, help="comma-separated orbit subset, e.g. a,b (default a,b)")
    run.add_argument("--cycles", type=int, help="number of field cycles summed (default 1 sfa, 4 cqsfa)")
    run.add_argument("--pz-min", type=float, help="grid lower p_z in a.u. (default -1.5)")
    run.add_argument("--pz-max", type=float, help="grid upper p_z in a.u. (default 1.5)")
    run.add_argument("--n-z", type=int, help="grid points along p_z (default 201)")
    run.add_argument("--px-min", type=float, help="grid lower p_x in a.u. (default -1.5)")
    run.add_argument("--px-max", type=float, help="grid upper p_x in a.u. (default 1.5)")
    run.add_argument("--n-x", type=int, help="grid points along p_x (default 201)")
    run.add_argument("--scale", type=str, help="linear or log10 view for plots (default log10)")
    run.add_argument("-o", "--output", type=str, help="output file path")
    run.add_argument("--model", type=str, help="dipole model: unit or hydrogenic_1s (default unit)")
    run.add_argument("--stokes", type=str, help="Stokes policy: keep, discard or auto (default auto)")
    run.add_argument("--newton-tol", type=float, help="CQSFA Newton residual tolerance (default 1e-8)")
    run.add_argument("--jacobian", type=str, help="CQSFA Jacobian: finite_difference or stability")

    general = parent.add_argument_group("general")
    general.add_argument("--config", type=str, help="key = value file (or a PMD file); flags override it")
    general.add_argument("--threads", type=int, help="worker processes (default ORBIT_HOLOGRAPHY_THREADS or the CPU count)")
    general.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    general.add_argument("-q", "--quiet", action="store_true", help="no progress bars or status lines")
    return parent


def build_parser() -> UsageParser:
    parser = UsageParser(
        prog="orbit-holography",
        description="Photoelectron momentum distributions from SFA and Coulomb quantum orbits",
    )
    parser.add_argument("--version", action="version", version="%(prog)s 1.0.0")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _common_flags()

    sub.add_parser("pmd", parents=[common], help="momentum distribution on a grid").add_argument(
        "--png", action="store_true", help="also render the plot")

    pair = sub.add_parser("pair", parents=[common], help="two-orbit interference panel")
    pair.add_argument("--pair", type=str, required=True, help="two orbit letters, e.g. b,c")
    pair.add_argument("--input", type=str, help="PMD file with stored amplitudes (default: compute)")
    pair.add_argument("--png", action="store_true", help="also render the plot")

    times = sub.add_parser("times", parents=[common], help="grouped SFA ionization times at one momentum")
    times.add_argument("--pz", type=float, required=True, help="final p_z in a.u.")
    times.add_argument("--px", type=float, required=True, help="final p_x in a.u.")

    scan = sub.add_parser("scan-imt", parents=[common], help="Im t' along the p_z = 0 axis")
    scan.add_argument("--axis", choices=("final_px", "initial_px"), default="final_px",
                      help="abscissa: detector p_x or p_x at the tunnel exit")
    scan.add_argument("--p-max", type=float, default=1.5, help="scan range |p_x| <= P_MAX in a.u.")
    scan.add_argument("--samples", type=int, default=21, help="number of scan points")
    scan.add_argument("--png", action="store_true", help="also render the plot")

    stokes = sub.add_parser("stokes", parents=[common], help="Stokes critical momentum against angle")
    stokes.add_argument("--eps-list", type=str, help="comma-separated ellipticities (default: --eps)")
    stokes.add_argument("--angles", type=int, default=72, help="number of emission angles")

    estimate = sub.add_parser("estimate", parents=[common], help="centers, transverse width, critical ellipticity")
    estimate.add_argument("--threshold", type=float, default=5.0, help="lobe separation in transverse widths")

    traj = sub.add_parser("traj", parents=[common], help="dump one CQSFA trajectory")
    traj.add_argument("--pz", type=float, required=True, help="final p_z in a.u.")
    traj.add_argument("--px", type=float, required=True, help="final p_x in a.u.")
    traj.add_argument("--orbit", choices=CQSFA_ORBITS, required=True, help="orbit letter")
    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


def load_config(args: argparse.Namespace) -> RunConfig:
    """Flags layered over --config (or over the header of --input)"""
    source = args.config or getattr(args, "input", None)
    base = RunConfig.from_file(source) if source else RunConfig()
    flags = {key: getattr(args, key) for key in CONFIG_KEYS if getattr(args, key, None) is not None}
    return RunConfig.from_mapping(flags, base).validate()


class OrbitHolographyApp:
    def __init__(self, args: argparse.Namespace, config: RunConfig):
        self.args = args
        self.config = config
        self.field = config.laser()
        self.atom = config.target()

    def say(self, message: str = "") -> None:
        if not self.args.quiet:
            print(message)

    def output_path(self) -> str:
        if self.args.output:
            return self.args.output
        if self.args.config and self.config.run.output != RunBlock().output:
            return self.config.run.output
        return DEFAULT_OUTPUTS[self.args.command]

    def options(self) -> PmdOptions:
        run = self.config.run
        return PmdOptions(model=run.model, stokes_policy=run.stokes, threads=self.args.threads,
                          progress=not self.args.quiet, settings=self.config.solver_settings())

    def run_pmd(self) -> int:
        """Compute and write a PMD file plus its plot recipe"""
        run = self.config.run
        path = self.output_path()
        allowed = SFA_ORBITS if run.method == "sfa" else CQSFA_ORBITS
        self.say(f"📊 {run.method.upper()} PMD on a {run.n_z} x {run.n_x} grid, orbits {'+'.join(run.orbits)}, "
                 f"{run.n_cycles} cycle(s), eps = {self.field.eps}")
        grid = compute_pmd(run.method, self.field, self.atom, build_grid(run.axes(), allowed),
                           run.orbits, run.n_cycles, self.options())
        self._write_grid(grid, path)
        return EXIT_OK

    def run_pair(self) -> int:
        """|M_i + M_j|^2 from stored or freshly computed amplitudes"""
        pair = parse_orbit_set(self.args.pair.split(","), CQSFA_ORBITS)
        if len(pair) != 2:
            raise DomainError(f"--pair needs two distinct orbit letters, got {self.args.pair!r}")
        run = self.config.run
        if self.args.input:
            grid = read_pmd(self.args.input)
        else:
            allowed = SFA_ORBITS if run.method == "sfa" else CQSFA_ORBITS
            grid = compute_pmd(run.method, self.field, self.atom, build_grid(run.axes(), allowed),
                               allowed, run.n_cycles, self.options())
        panel = replace(grid, probability=pair_interference(grid, pair), selected=pair,
                        metadata=dict(grid.metadata, orbits=",".join(pair)))
        self._write_grid(panel, self.output_path())
        return EXIT_OK

    def _write_grid(self, grid, path: str) -> None:
        header = self.config.to_header()
        header["output"] = path
        write_pmd(grid, path, header=header)
        script = write_plot_script(path, "pmd", self.config.run.scale)
        finite = np.isfinite(grid.probability)
        if finite.any():
            iz, ix = np.unravel_index(np.nanargmax(grid.probability), grid.shape)
            self.say(f"   strongest cell at p = ({grid.axes.pz[iz]:.4f}, {grid.axes.px[ix]:.4f})")
        self.say(f"✅ PMD written to {path}")
        self.say(f"📊 plot recipe: {script}")
        if grid.metadata.get("status", "ok") != "ok":
            self.say(f"⚠️  {grid.metadata['status']} ({float(grid.metadata['masked_fraction']):.1%})")
        if getattr(self.args, "png", False):
            image = plot_pmd(grid, os.path.splitext(path)[0] + ".png", self.config.run.scale)
            self.say(f"📊 image: {image}")

    def run_times(self) -> int:
        p = (self.args.pz, self.args.px)
        tolerance = residual_tolerance(self.atom)
        print(f"Grouped SFA ionization times at p = ({p[0]}, {p[1]}), eps = {self.field.eps}")
        worst = 0.0
        for label, sol in zip(("t1", "t2"), grouped_times(self.field, self.atom, p)):
            residual = abs(saddle_residual(self.field, self.atom, p, sol.t_prime))
            worst = max(worst, residual)
            flags = []
            if sol.from_fallback:
                flags.append("companion-root fallback")
            if sol.stokes_discarded:
                flags.append("discarded")
            note = f"  [{', '.join(flags)}]" if flags else ""
            print(f"  {label} ({sol.branch.value}): t' = {sol.t_prime.real:.10f} {sol.t_prime.imag:+.10f}j  "
                  f"omega t' = {self.field.omega * sol.t_prime.real:.6f} {self.field.omega * sol.t_prime.imag:+.6f}j  "
                  f"|residual| = {residual:.2e}{note}")
        if worst >= tolerance:
            raise NumericalError(f"saddle residual {worst:.2e} above tolerance {tolerance:.2e}")
        self.say(f"✅ residuals below {tolerance:.1e}")
        return EXIT_OK

    def run_scan(self) -> int:
        run = self.config.run
        allowed = SFA_ORBITS if run.method == "sfa" else CQSFA_ORBITS
        labels = parse_orbit_set(run.orbits, allowed)
        if self.args.samples < 2 or not self.args.p_max > 0:
            raise DomainError("a scan needs at least 2 samples and a positive --p-max")
        samples = np.linspace(-self.args.p_max, self.args.p_max, self.args.samples)
        solutions = None
        if run.method == "cqsfa":
            solutions = axis_solutions(self.field, self.atom, samples, self.config.solver_settings())
        stem, ext = os.path.splitext(self.output_path())
        curves = []
        for label in labels:
            curve = imaginary_time_scan(run.method, self.field, self.atom, label, self.args.axis, samples,
                                        self.config.solver_settings(), solutions)
            path = f"{stem}_{label}{ext or '.dat'}"
            write_scan(curve, path, metadata=self.config.to_header())
            write_plot_script(path, "scan")
            curves.append(curve)
            missing = int(np.count_nonzero(~np.isfinite(curve.ordinate)))
            self.say(f"✅ orbit {label}: {len(curve.abscissa)} points written to {path}"
                     + (f" ({missing} unsolved)" if missing else ""))
        if self.args.png:
            image = plot_scan(curves, f"{stem}.png")
            self.say(f"📊 image: {image}")
        return EXIT_OK

    def run_stokes(self) -> int:
        """Critical momentum beyond which the t2 saddle is dropped, per emission angle"""
        try:
            eps_values = ([float(e) for e in self.args.eps_list.split(",") if e.strip()]
                          if self.args.eps_list else [self.field.eps])
        except ValueError as exc:
            raise DomainError(f"bad --eps-list {self.args.eps_list!r}") from exc
        if self.args.angles < 1:
            raise DomainError("--angles must be positive")
        angles = np.linspace(-math.pi, math.pi, self.args.angles, endpoint=False)
        table = {"angle": angles}
        for eps in eps_values:
            field = self.field.with_eps(eps)
            table[f"p_crit_eps_{eps:g}"] = [stokes_critical_momentum(field, self.atom, float(a)) for a in angles]
            found = np.isfinite(table[f"p_crit_eps_{eps:g}"])
            self.say(f"   eps = {eps:g}: transition found at {int(found.sum())} of {len(angles)} angles")
        path = self.output_path()
        frame = pd.DataFrame(table)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for key, value in self.config.to_header().items():
                handle.write(f"# {key} = {value}\n")
            handle.write(f"# columns = {' '.join(frame.columns)}\n")
            frame.to_csv(handle, sep=" ", header=False, index=False, float_format="%.17g", na_rep="nan")
        self.say(f"✅ Stokes table written to {path}")
        return EXIT_OK

    def run_estimate(self) -> int:
        field, atom = self.field, self.atom
        center = distribution_centers(field, 0)
        print("📊 ANALYTIC ESTIMATES".center(60, "="))
        print(f"Up = {field.up:.5f}  omega = {field.omega:.6f}  E_max = {field.e_max:.6f}  eps = {field.eps}")
        print(f"Distribution centers: ({center[0]:.4f}, {center[1]:.4f}) and ({-center[0]:.4f}, {-center[1]:.4f})")
        print(f"Center separation: {2 * abs(center[1]):.4f}")
        if field.eps < 1.0:
            lobes = sfa_lobe_centers(field, atom)
            print(f"SFA lobe maxima: a at p_x = {lobes['a'][1]:+.4f}, b at p_x = {lobes['b'][1]:+.4f}")
        print(f"Transverse width sigma_perp: {transverse_width(field, atom):.4f}")
        gap = lobe_overlap_gap(field, atom, self.args.threshold)
        print(f"Separation minus {self.args.threshold:g} widths: {gap:+.4f} "
              f"({'lobes separated' if gap > 0 else 'lobes overlap'})")
        print(f"Critical ellipticity eps_c: {critical_ellipticity(field, atom, self.args.threshold):.4f}")
        return EXIT_OK

    def run_traj(self) -> int:
        target = (self.args.pz, self.args.px)
        solutions = orbits_at(self.field, self.atom, target, self.config.solver_settings())
        sol = solutions.get(self.args.orbit)
        if sol is None or sol.trajectory is None:
            raise ConvergenceError(f"orbit {self.args.orbit} not found at p = {target}")
        path = self.output_path()
        header = self.config.to_header()
        header.update({
            "orbit": sol.orbit_label,
            "class": sol.class_label,
            "t_prime": f"{sol.t_prime.real!r} {sol.t_prime.imag!r}",
            "p0": f"{sol.p0[0]!r} {sol.p0[1]!r}",
            "exit": f"{sol.exit_position[0]!r} {sol.exit_position[1]!r}",
        })
        write_trajectory(sol.trajectory, path, header)
        self.say(f"✅ orbit {sol.orbit_label} (class {sol.class_label}): Im t' = {sol.t_prime.imag:.4f}, "
                 f"exit z0 = {sol.exit_position[0]:.3f}")
        self.say(f"📊 trajectory written to {path}")
        return EXIT_OK

    def dispatch(self) -> int:
        handlers = {
            "pmd": self.run_pmd,
            "pair": self.run_pair,
            "times": self.run_times,
            "scan-imt": self.run_scan,
            "stokes": self.run_stokes,
            "estimate": self.run_estimate,
            "traj": self.run_traj,
        }
        return handlers[self.args.command]()


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one subcommand and return the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.verbose, args.quiet)
    try:
        config = load_config(args)
        logger.debug("run config: %s", config.to_header())
        return OrbitHolographyApp(args, config).dispatch()
    except DomainError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NumericalError as exc:
        print(f"❌ numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
