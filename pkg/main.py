import argparse
import logging
import os
import sys

import numpy as np

from src.domain.grid import build_grid
from src.evolution.propagator import CNPropagator
from src.instruments.initial_states import build_initial_state
from src.instruments.run_config import load_run_config
from src.instruments.settings import SolverSettings
from src.instruments.spectral_bench import check_residuals, export_bench, run_bench
from src.measurements.cascade import StageFactory, joint_distribution_2particle, run_cascades
from src.measurements.detection import record_distribution
from src.measurements.povm import assemble_J
from src.measurements.spectrum import spectrum_report
from src.operators.dirac import assemble_dirac_1d
from src.operators.potentials import build_potential
from src.operators.schrodinger import assemble_schrodinger
from src.utils.errors import CollapseError, ConfigError, FeasibilityError, InvariantViolation
from src.utils.utils import write_csv, write_json, write_jsonl

logger = logging.getLogger(__name__)
base_path = os.path.dirname(__file__)

EXIT_OK, EXIT_CONFIG, EXIT_FEASIBILITY, EXIT_INVARIANT = 0, 2, 3, 4
POVM_TOL = 1e-10


def setup_logging(log_dir):
    os.makedirs(log_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(log_dir, 'absorbd.log')),
            logging.StreamHandler()
        ]
    )


def build_problem(config, settings):
    """Grid, operator and normalized initial state of a run config."""
    grid = build_grid(config.domain, config.nodes_per_axis)
    V = build_potential(grid, config.potential, config.units.mass)
    if config.equation == "dirac":
        H = assemble_dirac_1d(grid, config.dirac_mass, V, config.theta, config.units)
        psi0 = build_initial_state(grid, config.initial_state, config.seed, components=2,
                                   projector=H.domain_projector)
    else:
        H = assemble_schrodinger(grid, V, config.boundary, config.units)
        psi0 = build_initial_state(grid, config.initial_state, config.seed)
    return grid, H, psi0


def cmd_run(config, out_dir, settings):
    """survival.csv, distribution.csv and summary.json for one evolution to the horizon."""
    _, H, psi0 = build_problem(config, settings)
    prop = CNPropagator(H, config.tau)
    dist = record_distribution(prop, psi0, n_steps=config.n_steps)
    summary = dist.summary()
    write_csv(dist.survival_frame(), os.path.join(out_dir, 'survival.csv'))
    write_csv(dist.to_frame(), os.path.join(out_dir, 'distribution.csv'))
    write_json(summary, os.path.join(out_dir, 'summary.json'))
    logger.info(f"Total detected: {summary['total_detected']:.6f}, survivor: {summary['survivor']:.6f}")
    return summary


def cmd_povm(config, out_dir, settings):
    _, H, _ = build_problem(config, settings)
    prop = CNPropagator(H, config.tau)
    povm = assemble_J(prop, n_steps=config.n_steps, dense_limit=settings.DENSE_LIMIT)
    report = povm.report(POVM_TOL)
    write_json(report, os.path.join(out_dir, 'povm_report.json'))
    if report["completeness_residual"] > POVM_TOL:
        raise InvariantViolation(f"POVM completeness residual {report['completeness_residual']:.3e}")
    return report


def cmd_cascade(config, out_dir, settings, jobs=1):
    """runs.jsonl, plus joint_table.csv when cascade.exhaustive is set for two particles."""
    if config.equation != "schrodinger":
        raise ConfigError("equation", "cascade runs the Schroedinger equation only")
    grid, H, psi0 = build_problem(config, settings)
    factory = StageFactory(grid.base_grid(), config.boundary, config.units, config.tau, config.stage_potentials)
    runs = int(config.cascade.get("runs", 100))
    results = run_cascades(factory, psi0, config.t_max, runs, config.seed, jobs)
    write_jsonl([r.to_dict() for r in results], os.path.join(out_dir, 'runs.jsonl'))
    summary = {"runs": runs, "truncated": int(sum(r.truncated for r in results)),
               "events": int(sum(len(r.events) for r in results))}
    if config.cascade.get("exhaustive"):
        joint = joint_distribution_2particle(factory, psi0, config.t_max, dense_limit=settings.DENSE_LIMIT)
        write_csv(joint.to_frame(), os.path.join(out_dir, 'joint_table.csv'))
        summary.update({"total_mass": joint.total_mass, "povm_residual": joint.povm_residual,
                        "marginal_residual": joint.marginal_residual})
    write_json(summary, os.path.join(out_dir, 'cascade_summary.json'))
    return summary


def cmd_spectrum(config, out_dir, settings):
    _, H, _ = build_problem(config, settings)
    report = spectrum_report(H, settings.DENSE_LIMIT)
    if H.emitting:
        logger.warning(f"Emitting boundary: spectrum may leave the lower half plane (max Im = {report.max_imag:.3e})")
    elif not report.in_lower_half_plane:
        raise InvariantViolation(f"Eigenvalue above the real axis: max Im = {report.max_imag:.3e}")
    spectrum, gram = report.to_frames()
    write_csv(spectrum, os.path.join(out_dir, 'spectrum.csv'))
    write_csv(gram, os.path.join(out_dir, 'gram.csv'))
    write_json(report.summary(), os.path.join(out_dir, 'spectrum_summary.json'))
    return report.summary()


def cmd_bench(config, out_dir, settings, jobs=1, text=None):
    """bench_report.json and bench_report.xlsx; fails after writing them when a residual is out of tolerance."""
    reports = run_bench(config.bench, config.units, config.seed, jobs, text)
    export_bench(reports, out_dir)
    check_residuals(reports)
    return [r.to_dict() for r in reports]


COMMANDS = {
    "run": cmd_run,
    "povm": cmd_povm,
    "cascade": cmd_cascade,
    "spectrum": cmd_spectrum,
    "bench": cmd_bench,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="absorbd", description="Absorbing boundary rule solver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__.splitlines()[0] if func.__doc__ else None)
        p.add_argument("--config", default=os.path.join(base_path, 'test_inputs.json'), help="JSON run config")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel Monte Carlo runs / bench cases")
        p.add_argument("--allow-emitting", action="store_true", help="permit kappa < 0")
    return parser


def resolve_out_dir(args, config, settings):
    return os.environ.get("ABSORBD_OUT") or args.out or config.output_dir or settings.OUTPUT_DIR


def main(argv=None):
    args = build_parser().parse_args(argv)
    settings = SolverSettings()
    setup_logging(settings.LOG_DIR)
    try:
        config = load_run_config(args.config, settings, allow_emitting=args.allow_emitting, seed=args.seed)
        out_dir = resolve_out_dir(args, config, settings)
        os.makedirs(out_dir, exist_ok=True)
        logger.info(f"Running '{args.command}' with output to {os.path.abspath(out_dir)}")
        if args.command == "cascade":
            COMMANDS[args.command](config, out_dir, settings, args.jobs)
        elif args.command == "bench":
            with open(args.config, 'r') as f:
                text = f.read()
            cmd_bench(config, out_dir, settings, args.jobs, text)
        else:
            COMMANDS[args.command](config, out_dir, settings)
    except ConfigError as e:
        logger.error(f"Config error: {str(e)}")
        return EXIT_CONFIG
    except (FeasibilityError, np.linalg.LinAlgError) as e:
        logger.error(f"Numerical guard: {str(e)}")
        return EXIT_FEASIBILITY
    except (InvariantViolation, CollapseError) as e:
        logger.error(f"Invariant violation: {str(e)}")
        return EXIT_INVARIANT
    except ValueError as e:
        logger.error(f"Invalid run setup: {str(e)}")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
