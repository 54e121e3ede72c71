import logging

from commands.router import CommandRouter, argument
from services.config import ExperimentConfig
from services.experiments import run_dir, scalability_members, scalability, sweep_lambda

logger = logging.getLogger(__name__)

router = CommandRouter(tags=["sweeps"])


@router.command(
    "sweep-lambda",
    help="One training run per (lambda, seed) with per-lambda means",
    arguments=[
        argument("--lambdas", nargs="+", type=float, required=True, help="Regulariser weights, e.g. 0 0.1 0.5"),
        argument("--seeds", nargs="+", type=int, required=True, help="Run seeds"),
    ],
)
def sweep(args, config: ExperimentConfig) -> int:
    config.validate_paths()
    out_dir = run_dir(config.output_dir, "sweep-lambda", config.seed)
    rows = sweep_lambda(config, args.lambdas, args.seeds, out_dir)
    print(f"Finished {len(rows)} runs, aggregate written to {out_dir}/aggregate.csv")
    return 0


@router.command(
    "scalability",
    help="Multi-filter networks at fixed qubits vs single-filter networks with more qubits",
    arguments=[
        argument("--filters", nargs="*", type=int, default=[], help="Filter counts for the multi-filter side"),
        argument("--qubits", nargs="*", type=int, default=[], help="Qubit counts for the single-filter side (4, 8, 12, 16)"),
        argument("--seeds", nargs="+", type=int, required=True, help="Run seeds"),
        argument("--lambdas", nargs="+", type=float, default=None, help="Regulariser weights for the multi-filter side"),
    ],
)
def scale(args, config: ExperimentConfig) -> int:
    # Reject unmapped qubit counts before touching the dataset
    members = scalability_members(config, args.filters, args.qubits, args.seeds, args.lambdas)
    config.validate_paths()
    logger.info(f"Scalability comparison with {len(members)} runs")
    out_dir = run_dir(config.output_dir, "scalability", config.seed)
    rows = scalability(config, args.filters, args.qubits, args.seeds, out_dir, args.lambdas)
    print(f"Finished {len(rows)} runs, aggregate written to {out_dir}/aggregate.csv")
    return 0
