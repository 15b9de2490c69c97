import os

import dotenv

dotenv.load_dotenv()

CHAINOPT_THREADS = int(os.getenv("CHAINOPT_THREADS", os.cpu_count() or 1))
CHAINOPT_LOG_LEVEL = os.getenv("CHAINOPT_LOG_LEVEL", "INFO")

MLFLOW_TRACKING_URL = os.getenv("MLFLOW_TRACKING_URL")
MLFLOW_EXPERIMENT = os.getenv("CHAINOPT_MLFLOW_EXPERIMENT", "chainopt")
