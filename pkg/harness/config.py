import os
import logging
from pathlib import Path

# Configure logging
logging.basicConfig(
    level=os.environ.get("HARNESS_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)

HARNESS_DIR = Path(__file__).resolve().parent
DATA_DIR = HARNESS_DIR / "data"


class Config:
    # Log level for every module logger
    LOG_LEVEL: str = os.environ.get("HARNESS_LOG_LEVEL", "INFO").upper()

    # Root for results/<experiment_id>/
    RESULTS_DIR: Path = Path(os.environ.get("HARNESS_RESULTS_DIR", "results"))
    logger.info(f"RESULTS_DIR set to: {RESULTS_DIR}")

    # Default language pack
    PACK_DIR: Path = Path(
        os.environ.get("HARNESS_PACK_DIR", str(DATA_DIR / "packs" / "default"))
    )
    logger.info(f"PACK_DIR set to: {PACK_DIR}")

    # All randomness flows from this seed unless --seed or the config overrides it
    DEFAULT_SEED: int = int(os.environ.get("HARNESS_DEFAULT_SEED", "20250417"))
    logger.info(f"DEFAULT_SEED set to: {DEFAULT_SEED}")

    # Absolute tolerance for payoff comparisons in the equilibrium solver
    TOLERANCE: float = float(os.environ.get("HARNESS_TOLERANCE", "1e-9"))

    # Concurrent game instances
    PARALLELISM: int = int(os.environ.get("HARNESS_PARALLELISM", "4"))

    # Base delay of the exponential backoff between transport retries
    BACKOFF_SECONDS: float = float(os.environ.get("HARNESS_BACKOFF_SECONDS", "0.5"))
    logger.info(
        f"TOLERANCE={TOLERANCE} PARALLELISM={PARALLELISM} "
        f"BACKOFF_SECONDS={BACKOFF_SECONDS}"
    )

    # Mock provider server host and port
    HOST: str = os.environ.get("HOST", "127.0.0.1")
    PORT: int = int(os.environ.get("PORT", "8000"))


config = Config()
