# Smallest concentration accepted anywhere; below this the value is rejected.
MIN_CONCENTRATION = 1e-12

# Special functions shift their argument up to this point before the asymptotic series.
ASYMPTOTIC_THRESHOLD = 8.0

DEFAULT_DENSITY_CLAMP = 30.0
DEFAULT_EVIDENCE_CLAMP = 1e12
BANDWIDTH_FLOOR = 1e-3
GDA_RIDGE_FLOOR = 1e-4
COVARIANCE_RIDGE_SCALE = 1e-6
DEGENERATE_COMPONENT_MASS = 1e-8

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_HIDDEN = (64, 64)

# Digits written for every real in checkpoints and CSV files.
SIGNIFICANT_DIGITS = 17

CLASSIFIER_CHECKPOINT = "classifier.ckpt"
DENSITY_CHECKPOINT = "density.ckpt"
CONFIG_SNAPSHOT = "config.txt"
TRAINING_LOG = "training_log.csv"
METRICS_FILE = "metrics.csv"
SCORES_FILE = "scores.csv"
ABLATION_FILE = "ablation.csv"
VERIFY_FILE = "verify.csv"

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_VERIFICATION = 2
