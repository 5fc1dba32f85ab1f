"""Scenario execution: solve, dose, convergence and adaptive studies."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..adaptivity import AdaptReport, adapt_loop
from ..analytic import error_norms
from ..dose import DoseField, Representation, compute_dose
from ..fespace import FeSpace, NodalField
from ..problem import solve_transport
from ..solvers import LinearSolveReport
from .config import Scenario

log = logging.getLogger(__name__)


@dataclass
class RunSummary:
    scenario: str
    scenario_hash: str
    dofs: int
    solver: LinearSolveReport
    fluence_min: float
    fluence_max: float
    g_sup: float
    dose_kind: str = ""
    dose_min: float | None = None
    dose_max: float | None = None
    dose_peak_depth: float | None = None
    energy_error: float | None = None
    l2_error: float | None = None
    timings: dict = field(default_factory=dict)
    manifest: list = field(default_factory=list)

    def lines(self):
        out = [
            f"scenario            {self.scenario}",
            f"scenario_hash       {self.scenario_hash}",
            f"dofs                {self.dofs}",
            f"solver              {self.solver.method}",
            f"solver_iterations   {self.solver.iterations}",
            f"solver_residual     {self.solver.residual_norm:.6e}",
            f"fluence_min         {self.fluence_min:.17g}",
            f"fluence_max         {self.fluence_max:.17g}",
            f"g_sup               {self.g_sup:.17g}",
        ]
        if self.dose_min is not None:
            out += [f"dose_kind           {self.dose_kind}",
                    f"dose_min            {self.dose_min:.17g}",
                    f"dose_max            {self.dose_max:.17g}",
                    f"dose_peak_depth     {self.dose_peak_depth:.17g}"]
        if self.energy_error is not None:
            out += [f"energy_error        {self.energy_error:.17g}",
                    f"l2_error            {self.l2_error:.17g}"]
        out += [f"time_{k:<15s}{v:.3f} s" for k, v in self.timings.items()]
        out += [f"file                {name}" for name in self.manifest]
        return out

    def write(self, path):
        Path(path).write_text("\n".join(self.lines()) + "\n")


def _out_dir(scenario: Scenario, out) -> Path:
    d = Path(out) if out is not None else scenario.output_dir
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_fluence(psi: NodalField, path, g_sup: float):
    names = [f"x{k + 1}" for k in range(psi.space.dim - 1)] + ["E", "fluence"]
    with open(path, "w") as fh:
        fh.write(f"# provenance={psi.meta.get('provenance', '')} g_sup={g_sup:.17g}\n")
        fh.write(",".join(names) + "\n")
        np.savetxt(fh, np.column_stack([psi.space.coordinates, psi.coefficients]), delimiter=",", fmt="%.17g")


def make_dose(scenario: Scenario, psi: NodalField, kind=None) -> DoseField:
    kind = kind or scenario.config["dose"]["kind"]
    return compute_dose(kind, psi, scenario.materials(), scenario.energy_rule(psi.space.mesh),
                        scenario.dose_grid())


def run(scenario: Scenario, out=None, *, dose: bool = True, adaptive: bool | None = None) -> RunSummary:
    """Solve the scenario and write its artefacts; returns the summary."""
    out = _out_dir(scenario, out)
    timings, manifest = {}, []
    adaptive = scenario.config["adaptivity"]["enabled"] if adaptive is None else adaptive
    t0 = time.perf_counter()
    if adaptive:
        ad = scenario.config["adaptivity"]
        psi, report = adapt_loop(scenario, ad["max_levels"], ad["theta"])
        report.to_csv(out / "adapt.csv")
        manifest.append("adapt.csv")
        rep = LinearSolveReport(f"adaptive-{scenario.config['solver']['method']}", float("nan"),
                                sum(r.solver_iterations for r in report.records))
    else:
        problem = scenario.problem()
        psi, rep = solve_transport(FeSpace(problem.mesh), problem)
    timings["solve"] = time.perf_counter() - t0
    lo, hi = psi.min_max()
    summary = RunSummary(scenario.name, scenario.hash, psi.space.n_nodes, rep, lo, hi, scenario.g_sup,
                         timings=timings, manifest=manifest)
    ex = scenario.exact()
    if ex is not None:
        summary.l2_error, summary.energy_error = error_norms(psi, ex, scenario.coefficients())
    if scenario.config["output"].get("fluence_csv", True):
        write_fluence(psi, out / "fluence.csv", scenario.g_sup)
        manifest.append("fluence.csv")
    if dose:
        t1 = time.perf_counter()
        D = make_dose(scenario, psi)
        timings["dose"] = time.perf_counter() - t1
        D.to_csv(out / "dose.csv")
        manifest.append("dose.csv")
        summary.dose_kind = D.representation.value
        summary.dose_min, summary.dose_max = D.min_max()
        peak = D.peak_location()
        summary.dose_peak_depth = float(peak @ np.asarray(scenario.config["domain"]["omega"], float))
    (out / "scenario.yaml").write_text(scenario.to_yaml())
    manifest.append("scenario.yaml")
    manifest.append("summary.txt")
    summary.write(out / "summary.txt")
    return summary


def run_dose(scenario: Scenario, out=None) -> dict:
    """Solve once and write the dose in every representation."""
    out = _out_dir(scenario, out)
    problem = scenario.problem()
    psi, _ = solve_transport(FeSpace(problem.mesh), problem)
    doses = {}
    for kind in Representation:
        D = make_dose(scenario, psi, kind)
        D.to_csv(out / f"dose_{kind.value}.csv")
        doses[kind.value] = D
    return doses


@dataclass
class ConvergenceRow:
    level: int
    dofs: int
    h: float
    energy_error: float
    l2_error: float
    slope: float | None


def pairwise_slopes(h, err):
    h, err = np.asarray(h, float), np.asarray(err, float)
    return [None] + list(np.log(err[1:] / err[:-1]) / np.log(h[1:] / h[:-1]))


def fitted_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def convergence_study(scenario: Scenario, levels: int | None = None, out=None) -> list[ConvergenceRow]:
    """Uniform refinement study against the closed-form fluence.

    Level k uses the base resolution times 2**k on every axis.
    """
    ex = scenario.exact()
    if ex is None:
        raise ValueError("a convergence study needs the closed-form benchmark "
                         "(one material, epsilon = 0, no source, no beam profile)")
    levels = levels or scenario.config["convergence"]["levels"]
    base = scenario.config["mesh"]["resolution"]
    coeffs = scenario.coefficients()
    rows, hs, errs = [], [], []
    for k in range(levels):
        problem = scenario.problem([n * 2**k for n in base])
        psi, _ = solve_transport(FeSpace(problem.mesh), problem)
        l2, en = error_norms(psi, ex, coeffs)
        h = float(problem.mesh.diameters().max())
        hs.append(h)
        errs.append(en)
        rows.append(ConvergenceRow(k, psi.space.n_nodes, h, en, l2, None))
        log.info("level %d: %d dofs, energy error %.4e", k, psi.space.n_nodes, en)
    for row, s in zip(rows, pairwise_slopes(hs, errs)):
        row.slope = s
    if out is not None:
        write_convergence(rows, _out_dir(scenario, out) / "convergence.csv")
    return rows


def write_convergence(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "dofs", "energy_error", "l2_error", "slope"])
        for r in rows:
            w.writerow([r.level, r.dofs, f"{r.energy_error:.17g}", f"{r.l2_error:.17g}",
                        "" if r.slope is None else f"{r.slope:.17g}"])


def adapt_study(scenario: Scenario, levels=None, theta=None, out=None) -> tuple[NodalField, AdaptReport]:
    ad = scenario.config["adaptivity"]
    psi, report = adapt_loop(scenario, ad["max_levels"] if levels is None else levels,
                             ad["theta"] if theta is None else theta)
    if out is not None:
        report.to_csv(_out_dir(scenario, out) / "adapt.csv")
    return psi, report
