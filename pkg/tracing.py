import logging
from contextlib import contextmanager
from typing import Any, Iterator

import mlflow

import settings

logger = logging.getLogger(__name__)

_tracking_enabled = False


def setup_logging(level: str | None = None) -> None:
    logging.basicConfig(
        level=(level or settings.CHAINOPT_LOG_LEVEL).upper(),
        format="[%(levelname)s] %(name)s: %(message)s",
    )


def init_mlflow_tracking() -> bool:
    global _tracking_enabled

    if settings.MLFLOW_TRACKING_URL is not None:
        mlflow.set_tracking_uri(settings.MLFLOW_TRACKING_URL)
        mlflow.set_experiment(settings.MLFLOW_EXPERIMENT)
        logger.info("Using MLFlow tracking: %s", settings.MLFLOW_TRACKING_URL)
        _tracking_enabled = True
    else:
        logger.debug("MLFlow tracking is not enabled")
        _tracking_enabled = False
    return _tracking_enabled


@contextmanager
def tracked_run(run_name: str, params: dict[str, Any]) -> Iterator[None]:
    """Open an mlflow run for the block when tracking is enabled."""
    if not _tracking_enabled:
        yield
        return
    with mlflow.start_run(run_name=run_name):
        mlflow.log_params({key: str(value) for key, value in params.items()})
        yield


def log_metrics(metrics: dict[str, float]) -> None:
    if _tracking_enabled:
        mlflow.log_metrics(metrics)
