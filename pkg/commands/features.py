import logging

from commands.router import CommandRouter, argument
from services.config import ExperimentConfig, normalise_key
from services.experiments import DATA_KEYS, export_features, run_dir

logger = logging.getLogger(__name__)

router = CommandRouter(tags=["features"])

# Flags this command reads from the run config itself
RUN_KEYS = ("output_dir", "seed", "threads")


@router.command(
    "export-features",
    help="Write every feature channel of one image as a binary PGM",
    arguments=[
        argument("--checkpoint", required=True, help="checkpoint.npz from a training run"),
        argument("--index", type=int, default=None, help="Index into the checkpoint's test subset"),
        argument("--image", default=None, help="Grayscale image file instead of a dataset index"),
        argument("--untrained", action="store_true", help="Use freshly initialised filters of the same geometry"),
    ],
)
def export(args, config: ExperimentConfig) -> int:
    overrides = getattr(args, "overrides", None) or {}
    data_overrides = {k: v for k, v in overrides.items() if normalise_key(k) in DATA_KEYS}
    ignored = sorted(k for k in overrides if normalise_key(k) not in DATA_KEYS + RUN_KEYS)
    if ignored:
        logger.warning(f"Model settings come from the checkpoint; ignoring --{', --'.join(ignored)}")
    out_dir = run_dir(config.output_dir, "export-features", config.seed)
    written = export_features(args.checkpoint, out_dir, index=args.index, image_path=args.image,
                              untrained=args.untrained, data_overrides=data_overrides, threads=config.threads)
    print(f"Wrote {len(written)} feature maps to {out_dir}")
    return 0
