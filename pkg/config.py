"""
EdgeFLow Simulator Configuration
"""
import json
import os
from pathlib import Path

# Base paths
BASE_DIR = Path(__file__).parent.resolve()
DEFAULT_OUTPUT_ROOT = BASE_DIR / "runs"
OUTPUT_ROOT_ENV = "EDGEFLOW_OUTPUT_ROOT"

# Federation defaults (N clients in M fixed clusters, N_m = N / M)
DEFAULT_NUM_CLIENTS = 100
DEFAULT_NUM_CLUSTERS = 10
DEFAULT_LOCAL_STEPS = 5
DEFAULT_ROUNDS = 200
DEFAULT_BATCH_SIZE = 64
DEFAULT_LEARNING_RATE = 0.05
DEFAULT_SEED = 0
DEFAULT_REPEATS = 1

# Model defaults
MODEL_KINDS = ["linear-softmax", "mlp"]
DEFAULT_MODEL_KIND = "linear-softmax"
DEFAULT_INPUT_DIM = 20
DEFAULT_NUM_CLASSES = 10

# Synthetic data defaults
DEFAULT_SAMPLES_PER_CLASS = 1000
DEFAULT_EVAL_SAMPLES_PER_CLASS = 200
DEFAULT_CLASS_SEPARATION = 4.0
DEFAULT_NOISE_STD = 1.0

# Scheduling
SCHEDULE_POLICIES = ["fixed_sequence", "random"]
CLUSTER_ASSIGNMENTS = ["contiguous", "interleaved"]
LOCAL_MODES = ["steps", "epochs"]

# Methods run by the harness
METHODS = ["fedavg", "edgeflow_seq", "edgeflow_rand"]
LEDGER_METHODS = ["fedavg", "hier_fl", "edgeflow"]

# Topology defaults (edge count E, branching b, depth d)
TOPOLOGY_KINDS = ["simple", "breadth_parallel", "depth_linear", "hybrid", "custom"]
DEFAULT_TOPOLOGY_KIND = "simple"
DEFAULT_EDGES = 4
DEFAULT_BRANCHING = 4
DEFAULT_DEPTH = 4

# Theory estimation defaults
DEFAULT_SMOOTHNESS_DIRECTIONS = 200
DEFAULT_SMOOTHNESS_RADIUS = 1.0
DEFAULT_GRADIENT_POINTS = 3
DEFAULT_BATCHES_PER_POINT = 8
DEFAULT_F_STAR_STEPS = 2000
DEFAULT_F_STAR_LR = 0.5

# Reporting
SMOOTHING_WINDOW = 5
THRESHOLD_FRACTION = 0.9
ROUND_CSV_HEADER = ["t", "method", "cluster", "loss", "acc", "params_hop_units"]

# API defaults
DEFAULT_API_HOST = "127.0.0.1"
DEFAULT_API_PORT = 5000

APP_NAME = "EdgeFLow Simulator"
APP_VERSION = "1.0.0"


# --- User settings persistence ---

SETTINGS_FILE = BASE_DIR / "settings.json"


def load_settings() -> dict:
    """Load user settings from settings.json. Returns {} on missing/corrupt."""
    try:
        if SETTINGS_FILE.exists():
            return json.loads(SETTINGS_FILE.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, OSError):
        pass
    return {}


def save_settings(data: dict):
    """Merge *data* into the existing settings file and write it back."""
    settings = load_settings()
    settings.update(data)
    SETTINGS_FILE.write_text(json.dumps(settings, indent=2), encoding="utf-8")


def get_output_root() -> Path:
    """Return the directory experiment outputs are written under.

    Priority: EDGEFLOW_OUTPUT_ROOT env var > settings.json > <repo>/runs
    """
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    saved = load_settings().get("output_root")
    if saved:
        return Path(saved)
    return DEFAULT_OUTPUT_ROOT
