from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from sharing_club import __version__
from sharing_club.analytics import (
    MeanFieldModel, SolverError, control_parameter, critical_k_rho, critical_population,
    empty_membership_unstable, fixed_points, verdict
)
from sharing_club.domain import DistributionError
from sharing_club.payloads import PayloadMode
from sharing_club.reports import RunManifest, TableFormat, config_hash, write_json, write_table
from sharing_club.scenarios import ScenarioError, ShiftDirection, match_statistics
from sharing_club.simulator import SimConfig, SimulationError, ensemble
from sharing_club.specfiles import SpecBundle, SpecFileError, load_spec
from sharing_club.sweeps import (
    bifurcation_frame, bifurcation_scan, equilibrium_sweep, ncrit_shift_sweep, ncrit_sweep, phase_field
)

log = logging.getLogger(__name__)

LOG_FORMAT: str = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"

DEFAULT_BETAS = [round(b, 1) for b in np.arange(0.5, 1.55, 0.1)]
DEFAULT_S_MAXES = [300, 500, 1000, 3000]
DEFAULT_DELTA_FRACTIONS = [round(f, 2) for f in np.arange(-0.9, 0.95, 0.1)]
DEFAULT_EQ_BETAS = [0.6, 0.8, 1.0, 1.2]
DEFAULT_NK_RHO = np.geomspace(1.0, 1e5, 41).tolist()


def _analysis(model: MeanFieldModel, n_ceiling: Optional[float]) -> dict:
    report = {
        "N": model.n_peers,
        "k_rho": model.k_rho,
        "d": model.request_size,
        "control_parameter": control_parameter(model),
        "empty_club_unstable": empty_membership_unstable(model),
        "verdict": verdict(model).value,
        "fixed_points": [p.to_dict() for p in fixed_points(model)],
        "match": match_statistics(model.demand, model.supply)._asdict(),
    }
    try:
        report["critical_k_rho"] = critical_k_rho(model)
    except SolverError:
        report["critical_k_rho"] = None
    if model.request_size > 1:
        report["critical"] = critical_population(model, n_ceiling).to_dict()
    if model.pop.type_labels is not None:
        report["supply"] = dict(zip(model.pop.type_labels, model.supply.probs.tolist()))
        report["demand"] = dict(zip(model.pop.type_labels, model.demand.probs.tolist()))
    return report


def cmd_analyze(args: argparse.Namespace, bundle: SpecBundle) -> list[Path]:
    """Threshold verdict, fixed points and critical point of a club."""
    model = bundle.model
    report = {"spec": bundle.content_hash, **_analysis(model, args.n_ceiling)}
    contributors = bundle.population.contributors()
    if bundle.scenario is None and len(contributors) < len(bundle.population):
        reduced = MeanFieldModel(contributors, bundle.params)
        report["contributors"] = _analysis(reduced, args.n_ceiling)
    log.info("pi = %.6g, verdict: %s", report["control_parameter"], report["verdict"])
    return [write_json(report, args.out_dir / "analysis.json")]


def _require_scenario(bundle: SpecBundle, command: str):
    if bundle.scenario is None:
        raise SpecFileError(f"{bundle.path}: '{command}' needs a scenario file")
    return bundle.scenario


def cmd_sweep(args: argparse.Namespace, bundle: SpecBundle) -> list[Path]:
    """Critical population against beta and shift, and equilibrium fraction against N*k*rho."""
    scenario = _require_scenario(bundle, "sweep")
    beta, s_max, k_rho, d = scenario.zipf.beta, scenario.zipf.s_max, scenario.k_rho, scenario.params.request_size
    direction = scenario.shift.direction if scenario.shift is not None else ShiftDirection.DEMAND_LEAD
    fmt, tag = TableFormat(args.format), bundle.content_hash

    outputs = [
        write_table(ncrit_sweep(args.betas, args.s_maxes, k_rho, request_size=d, workers=args.workers),
                    args.out_dir / "ncrit_vs_beta", tag, fmt),
        write_table(ncrit_shift_sweep(beta, s_max, k_rho, args.delta_fractions, direction, d, args.workers),
                    args.out_dir / "ncrit_vs_delta", tag, fmt),
        write_table(equilibrium_sweep(args.eq_betas, s_max, args.nk_rho, d, args.workers),
                    args.out_dir / "neq_vs_Nkrho", tag, fmt),
    ]
    if d > 1:
        model = MeanFieldModel.from_scenario(scenario)
        n_crit = critical_population(model).N_crit
        n_values = np.geomspace(0.5 * n_crit, 20.0 * n_crit, args.bifurcation_points)
        outputs.append(write_table(bifurcation_frame(bifurcation_scan(model, n_values)),
                                   args.out_dir / "bifurcation", tag, fmt))
    return outputs


def cmd_simulate(args: argparse.Namespace, bundle: SpecBundle) -> list[Path]:
    """Sample paths of the club and their ensemble summary."""
    if not bundle.whole_chunks:
        raise SpecFileError(f"{bundle.path}: 'simulate' needs a whole number of chunks k")
    cfg = SimConfig(
        seed=args.seed, rounds=args.rounds, burn_in=args.burn_in, payload_mode=args.payload_mode,
        self_supply=args.self_supply or bundle.self_supply,
    )
    initial = bundle.initial_frac if args.initial_frac is None else args.initial_frac
    summary = ensemble(bundle.population, bundle.params, cfg, args.seeds, initial, args.workers)
    log.info("Mean equilibrium fraction over %d seeds: %.4f (%s)",
             args.seeds, summary.mean_equilibrium, summary.phase_counts)
    fmt, tag = TableFormat(args.format), bundle.content_hash
    return [
        write_table(summary.trajectories[0].to_frame(), args.out_dir / "trajectory", tag, fmt),
        write_table(summary.to_frame(), args.out_dir / "ensemble", tag, fmt),
    ]


def cmd_phase(args: argparse.Namespace, bundle: SpecBundle) -> list[Path]:
    """Direction field of the club dynamics over n/N."""
    frame = phase_field(bundle.model, args.resolution)
    return [write_table(frame, args.out_dir / "phase", bundle.content_hash, TableFormat(args.format))]


def _grid_points(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 2:
        raise argparse.ArgumentTypeError(f"a grid needs at least two points, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sharing-club", description="Information sharing club experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--out-dir", type=Path, default=Path("."), help="Directory for every output file.")
    parser.add_argument("--format", choices=[f.value for f in TableFormat], default="csv")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="Only log warnings and errors.")
    verbosity.add_argument("--verbose", action="store_true", help="Log solver and simulation details.")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="Threshold, fixed points and critical point of a club.")
    analyze.add_argument("spec", type=Path)
    analyze.add_argument("--n-ceiling", type=float, default=None, help="Largest n scanned for N_crit (d > 1).")
    analyze.set_defaults(func=cmd_analyze)

    sweep = sub.add_parser("sweep", help="N_crit and equilibrium sweeps around a Zipf scenario.")
    sweep.add_argument("spec", type=Path)
    sweep.add_argument("--betas", type=float, nargs="+", default=DEFAULT_BETAS)
    sweep.add_argument("--s-maxes", type=int, nargs="+", default=DEFAULT_S_MAXES)
    sweep.add_argument("--delta-fractions", type=float, nargs="+", default=DEFAULT_DELTA_FRACTIONS)
    sweep.add_argument("--eq-betas", type=float, nargs="+", default=DEFAULT_EQ_BETAS)
    sweep.add_argument("--nk-rho", type=float, nargs="+", default=DEFAULT_NK_RHO)
    sweep.add_argument("--bifurcation-points", type=_grid_points, default=40)
    sweep.add_argument("--workers", type=int, default=None)
    sweep.set_defaults(func=cmd_sweep)

    simulate = sub.add_parser("simulate", help="Stochastic membership trajectories.")
    simulate.add_argument("spec", type=Path)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--rounds", type=int, default=1000)
    simulate.add_argument("--burn-in", type=int, default=0)
    simulate.add_argument("--seeds", type=int, default=1, help="Ensemble size.")
    simulate.add_argument("--initial-frac", type=float, default=None)
    simulate.add_argument("--self-supply", action="store_true", help="Let a member's own chunks serve its requests.")
    simulate.add_argument("--payload-mode", choices=[m.label for m in PayloadMode], default="fixed_multinomial")
    simulate.add_argument("--workers", type=int, default=None)
    simulate.set_defaults(func=cmd_simulate)

    phase = sub.add_parser("phase", help="Direction field of the club dynamics.")
    phase.add_argument("spec", type=Path)
    phase.add_argument("--resolution", type=_grid_points, default=101)
    phase.set_defaults(func=cmd_phase)
    return parser


def _run_config(args: argparse.Namespace, bundle: SpecBundle) -> dict:
    skipped = {"func", "out_dir", "quiet", "verbose", "spec", "format"}
    config = {k: v for k, v in vars(args).items() if k not in skipped}
    config["spec"] = bundle.content_hash
    config["format"] = args.format
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)

    try:
        bundle = load_spec(args.spec)
        outputs = args.func(args, bundle)
        seed = getattr(args, "seed", None)
        RunManifest(argv, config_hash(_run_config(args, bundle)), seed).write(outputs)
    except (SpecFileError, DistributionError, ScenarioError, SimulationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SolverError as e:
        print(f"solver error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
