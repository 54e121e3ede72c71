import logging

from commands.router import CommandRouter, argument
from services.config import ExperimentConfig
from services.experiments import grad_variance, gradcheck, run_dir

logger = logging.getLogger(__name__)

router = CommandRouter(tags=["diagnostics"])


@router.command("gradcheck", help="Run the gradient oracles and fail on any tolerance breach")
def check(args, config: ExperimentConfig) -> int:
    results = gradcheck(config)
    for r in results:
        status = "ok" if r.passed else "FAILED"
        print(f"{status:6} {r.name}: max deviation {r.deviation:.3e} (tolerance {r.tolerance:.0e})")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"Gradient checks failed: {', '.join(failed)}")
        return 1
    return 0


@router.command(
    "grad-variance",
    help="Variance of one circuit gradient over random initialisations, per qubit count",
    arguments=[
        argument("--qubits", nargs="+", type=int, required=True, help="Qubit counts (4, 8, 12, 16)"),
        argument("--samples", type=int, default=200, help="Random initialisations per qubit count"),
    ],
)
def variance(args, config: ExperimentConfig) -> int:
    out_dir = run_dir(config.output_dir, "grad-variance", config.seed)
    rows = grad_variance(args.qubits, args.samples, config.seed, out_dir)
    for n_q, n_params, mean, var in rows:
        print(f"{n_q:3d} qubits, {n_params:3d} params: mean {mean:+.3e}, variance {var:.3e}")
    return 0
