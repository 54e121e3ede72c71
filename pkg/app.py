"""
Application settings and shared state.

Values come from the environment (optionally a .env file in the working
directory) so the same code runs on a laptop and inside the container.
"""
import logging
import os

from dotenv import load_dotenv

load_dotenv()

# Directories
DATA_DIR = os.getenv("SQUANV_DATA_DIR", "data")
OUTPUT_DIR = os.getenv("SQUANV_OUTPUT_DIR", "runs")

# Worker threads for circuit evaluation, 0 = one per physical core
THREADS = int(os.getenv("SQUANV_THREADS", "0") or 0)

LOG_LEVEL = os.getenv("SQUANV_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Install a single stream handler on the root logger"""
    root = logging.getLogger()
    if not any(getattr(h, "_squanv", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._squanv = True
        root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
