"""``protonfem`` command line.

    protonfem run      --preset example1-vi --out out/ex1
    protonfem converge --config scenario.yaml --levels 4
    protonfem adapt    --preset example1-adaptive
    protonfem dose     --preset example4-orbital
    protonfem presets

Exit status: 0 on success, 2 for configuration errors, 3 for solver failures.
"""
from __future__ import annotations

import argparse
import logging
import sys

from ..assembly import ConfigurationError
from ..fespace import FieldError
from ..materials import MaterialError
from ..mesh import MeshError, UnsupportedOperation
from ..solvers import SolverError
from . import runner
from .config import PRESET_SCENARIOS, ConfigError, load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _parser():
    p = argparse.ArgumentParser(prog="protonfem", description="Finite-element proton transport runner")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--config", help="scenario YAML file")
        g.add_argument("--preset", choices=sorted(PRESET_SCENARIOS), help="built-in scenario")
        sp.add_argument("--out", help="output directory (default: output.directory of the scenario)")

    scenario_args(sub.add_parser("run", help="solve a scenario and write fluence, dose and summary"))
    c = sub.add_parser("converge", help="uniform refinement study against the closed-form benchmark")
    scenario_args(c)
    c.add_argument("--levels", type=int, help="number of levels (default: convergence.levels)")
    a = sub.add_parser("adapt", help="adaptive solve-estimate-mark-refine loop")
    scenario_args(a)
    a.add_argument("--levels", type=int, help="maximum refinements (default: adaptivity.max_levels)")
    a.add_argument("--theta", type=float, help="marking fraction (default: adaptivity.theta)")
    scenario_args(sub.add_parser("dose", help="solve and write the dose in all three projections"))
    sub.add_parser("presets", help="list built-in scenarios")
    return p


def _execute(args) -> int:
    if args.command == "presets":
        for name in sorted(PRESET_SCENARIOS):
            print(name)
        return EXIT_OK
    scenario = load_scenario(args.config, args.preset)
    out = args.out
    if args.command == "run":
        summary = runner.run(scenario, out)
        print("\n".join(summary.lines()))
    elif args.command == "converge":
        rows = runner.convergence_study(scenario, args.levels, out=out or scenario.output_dir)
        print("level,dofs,energy_error,l2_error,slope")
        for r in rows:
            print(f"{r.level},{r.dofs},{r.energy_error:.6e},{r.l2_error:.6e},"
                  f"{'' if r.slope is None else format(r.slope, '.4f')}")
    elif args.command == "adapt":
        if args.theta is not None and not 0 < args.theta <= 1:
            raise ConfigError([f"--theta: must lie in (0, 1], got {args.theta}"])
        _, report = runner.adapt_study(scenario, args.levels, args.theta, out=out or scenario.output_dir)
        print("level,dofs,marked,eta_sum,energy_error")
        for r in report.records:
            err = "" if r.energy_error is None else f"{r.energy_error:.6e}"
            print(f"{r.level},{r.dofs},{r.marked},{r.eta_sum:.6e},{err}")
    elif args.command == "dose":
        doses = runner.run_dose(scenario, out)
        for kind, D in doses.items():
            lo, hi = D.min_max()
            print(f"{kind:16s} min {lo:.6e} max {hi:.6e} peak at {D.peak_location().tolist()}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _execute(args)
    except (ConfigError, ConfigurationError, MaterialError, UnsupportedOperation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, MeshError, FieldError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
