"""Application configuration and constants."""
import math
from pathlib import Path

# Application information
APP_NAME = "TrajPilot"
APP_VERSION = "1.0.0"

# Time axis
SAMPLE_RATE_HZ = 10
STEP_SECONDS = 1.0 / SAMPLE_RATE_HZ

# Horizons and decoder defaults
DEFAULT_T_HIST = 50
DEFAULT_T_FUT = 60
DEFAULT_T_SUB = 10
DEFAULT_NUM_MODES = 6
DEFAULT_RADIUS = 50.0
DEFAULT_ROUNDS = 2
DEFAULT_EMBED_DIM = 64
DEFAULT_NUM_HEADS = 4
DEFAULT_DROPOUT = 0.1
FEEDFORWARD_MULTIPLIER = 4

# Fourier features: log-spaced bands in cycles per unit
NUM_FREQ_BANDS = 64
FREQ_MIN = 2.0 ** -6
FREQ_MAX = 2.0 ** 3

# Distribution heads
MIN_SCALE = 1e-3
BESSEL_SERIES_LIMIT = 30.0  # power series below, asymptotic expansion above

# Optimizer defaults
DEFAULT_LR = 5e-4
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_ADAM_EPS = 1e-8
DEFAULT_EPOCHS = 30
DEFAULT_BATCH_SIZE = 4

# Metrics
MISS_THRESHOLD = 2.0
TURN_THRESHOLD_DEG = 45.0
TURN_THRESHOLD = math.radians(TURN_THRESHOLD_DEG)
DEFAULT_HORIZONS = (10, 20, 30, 40, 50, 60)

# Gradient check
GRADCHECK_EPS = 1e-4
GRADCHECK_SAMPLES = 200
GRADCHECK_TOLERANCE = 1e-3
GRADCHECK_PRESET = "tiny"

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3

# Output file names
SCENE_FILE_PATTERN = "scene_{index:05d}.json"
SCENE_FILE_GLOB = "*.json"
RUN_CONFIG_FILENAME = "run_config.json"
TRAIN_LOG_FILENAME = "train_log.csv"
EPOCH_LOG_FILENAME = "epoch_log.csv"
METRICS_FILENAME = "metrics.csv"
TURN_METRICS_FILENAME = "metrics_turns.csv"
HORIZON_FILENAME = "horizon_curve.csv"
CHECKPOINT_DIRNAME = "checkpoints"
LAST_CHECKPOINT_FILENAME = "last.ckpt"
CHECKPOINT_SUFFIX = ".ckpt"
OPTIMIZER_SUFFIX = ".optim.pt"

# User configuration
CONFIG_DIR_NAME = ".trajpilot"
PRESETS_FILENAME = "presets.json"
BUILTIN_PRESETS = ("desk", "tiny", "paper")
PRESET_ALIASES = {"full": "paper"}
DEFAULT_PRESET = "desk"


def get_config_dir() -> Path:
    """Returns the user configuration directory."""
    return Path.home() / CONFIG_DIR_NAME


def get_presets_file() -> Path:
    """Returns the presets file path."""
    return get_config_dir() / PRESETS_FILENAME


# Rollout sketch
SKETCH_SIZE = 800
SKETCH_MARGIN = 20
SKETCH_COLORS = {
    'lane': "#b0b0b0",
    'crosswalk': "#d9c27a",
    'history': "#1f6aa5",
    'ground_truth': "#2e9e44",
    'prediction': "#d0342c",
}

# Messages
MESSAGES = {
    'no_scenes': "No valid scene files found in: {path}",
    'missing_dir': "Directory does not exist: {path}",
    'missing_file': "File does not exist: {path}",
    'skipped_scene': "Skipping invalid scene {path}: {reason}",
    'empty_turn_subset': "Turn filter left no focal agents; no turn report written.",
    'gradcheck_pass': "Gradient check passed: max relative error {error:.3e} (worst: {name})",
    'gradcheck_fail': "Gradient check FAILED: max relative error {error:.3e} (worst: {name})",
}
