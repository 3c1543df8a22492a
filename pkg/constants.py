"""
constants.py - Shared constants for botdna.

Single source of truth for alphabets, default palettes, binary container
magics, encoder presets and training defaults referenced across modules.
"""

# ---------------------------------------------------------------------------
# Digital DNA alphabets (symbol order defines palette assignment)
# ---------------------------------------------------------------------------

TYPE3_SYMBOLS    = ("A", "C", "T")
CONTENT5_SYMBOLS = ("N", "U", "H", "M", "X")

# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

TYPE3_LEVELS    = {"A": 85, "C": 170, "T": 255}
CONTENT5_LEVELS = {"N": 51, "U": 102, "H": 153, "M": 204, "X": 255}
PAD_LEVEL       = 0
TARGET_SIDE     = 256

RAW_IMAGE_MAGIC  = b"BDNA1"
CHECKPOINT_MAGIC = b"BWTS1"

# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

SPLIT_NAMES       = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)
RECENT_TWEETS     = 200

# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------

D_MODEL         = 768
TEXT_BUCKETS    = 4096
TEXT_MAX_TOKENS = 64        # positions, start vector included
CONV_CHANNELS   = 16

# mode → (pooled grid side, spatial positions T, channel width d_v)
VISION_PRESETS = {
    "vgg16_shape":   (32, 64, 512),
    "alexnet_shape": (28, 49, 256),
}

# ---------------------------------------------------------------------------
# Heads and training
# ---------------------------------------------------------------------------

CONCAT_HIDDEN = 128
NUM_CLASSES   = 2

DEFAULT_LR               = 1e-5
DEFAULT_MAX_EPOCHS       = 30
DEFAULT_EARLY_STOP       = 6
DEFAULT_PLATEAU_FACTOR   = 0.1
DEFAULT_PLATEAU_PATIENCE = 3
DEFAULT_BATCH_SIZE       = 32
DEFAULT_SEEDS            = (0, 1, 2, 3, 4)

METRIC_NAMES = ("precision", "recall", "f1", "accuracy", "specificity")

THREADS_ENV = "BOTDNA_THREADS"
