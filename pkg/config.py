import os
from pathlib import Path

from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent

load_dotenv(BASE_DIR / ".env")

DATA_DIR = BASE_DIR / "data"

CORPUS_ROOT = Path(os.getenv("EDIT_GARDEN_CORPUS_ROOT", str(DATA_DIR / "corpus")))
DATASET_PATH = DATA_DIR / "dataset.json"
CHECKPOINT_PATH = DATA_DIR / "checkpoint.npz"
METRICS_PATH = DATA_DIR / "metrics.log"

CORPUS_ROOT_STR = str(CORPUS_ROOT)
DATASET_PATH_STR = str(DATASET_PATH)
CHECKPOINT_PATH_STR = str(CHECKPOINT_PATH)
METRICS_PATH_STR = str(METRICS_PATH)

LOG_LEVEL = os.getenv("EDIT_GARDEN_LOG_LEVEL", "WARNING")
DEFAULT_SEED = int(os.getenv("EDIT_GARDEN_SEED", "0"))
