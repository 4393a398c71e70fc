# Settings for the CactusEval project
#
# Every default used by the library and the command line lives here. The run
# configuration (config.json and command-line flags) overrides these values;
# see utils/Config.py.

PROJECT_NAME = "CactusEval"
SCHEMA_VERSION = 1

# Logging, mirrors the LOG_* settings of a crawl run.
LOG_LEVEL = "INFO"
LOG_FILE = None
LOG_FILE_APPEND = False
LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s: %(message)s"

# Outputs
CONFIG_FILE = "config.json"
OUTPUT_FOLDER = "output"
OUTPUT_DIR_ENV = "CACTUS_OUTPUT_DIR"
STAMP_FILE = "stamp.json"
STAMP_TIME_FILE = "stamp.time.json"

# Label files
LABEL_FORMAT = "corner_pixel"
LABEL_DECIMALS = 6

# Splitting, 60/20/20 as in the published dataset table.
TRAIN_FRAC = 0.6
VAL_FRAC = 0.2
TEST_FRAC = 0.2
GROUP_AUGMENTED = False

# Augmentation, three derived images per base image (225 -> 900).
ROTATION_ANGLES = (90, 180, 270)

# Evaluation
IOU_THRESHOLD = 0.5
CONFIDENCE_THRESHOLD = 0.5
INTERPOLATION = "all_point"
IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_SAMPLES = 101
# A model is acceptable for use at 90 % when the confidence is set to 0.5.
ACCEPTABLE_MAP = 0.90

# Detection post-processing
NMS_IOU_THRESHOLD = 0.45

# Benchmark
WARMUP = 0
REPEATS = 1
WORKERS = 1

SEED = 0
