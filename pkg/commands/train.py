import logging

from commands.router import CommandRouter
from services.config import ExperimentConfig
from services.experiments import run_dir, train_run

logger = logging.getLogger(__name__)

router = CommandRouter(tags=["train"])


@router.command("train", help="Train one network and write metrics.csv, checkpoint.npz and config.json")
def train(args, config: ExperimentConfig) -> int:
    config.validate_paths()
    out_dir = run_dir(config.output_dir, "train", config.seed)
    result = train_run(config, out_dir)
    final = result.metrics.final
    print(f"Training finished after {final.epoch} epochs: "
          f"train {final.top1_train:.1f}%, test {final.top1_test:.1f}%, output {out_dir}")
    return 0
