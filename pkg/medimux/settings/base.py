import os

LOG_LEVEL = os.getenv("MEDIMUX_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s [%(name)s] %(levelname)s: %(message)s"

# Quasi-Bayesian estimation
FAMILY = "linear"
DRAWS = int(os.getenv("MEDIMUX_DRAWS", 1000))
SIMS = int(os.getenv("MEDIMUX_SIMS", 1000))
CI_LEVEL = float(os.getenv("MEDIMUX_CI_LEVEL", 0.95))
SEED = int(os.getenv("MEDIMUX_SEED", 20190101))

# None means machine parallelism
THREADS = int(os.getenv("MEDIMUX_THREADS", 0)) or None

# Simulation studies
TRUTH_ROWS = int(os.getenv("MEDIMUX_TRUTH_ROWS", 1_000_000))
STUDY_RUNS = int(os.getenv("MEDIMUX_STUDY_RUNS", 200))
STUDY_SAMPLE_SIZES = [50, 200, 500, 1000]
STUDY_CORRELATIONS = [0.0, 0.2, 0.4, 0.6, 0.7, 0.8]

# Truth table cache, disabled when unset
CACHE_DIR = os.getenv("MEDIMUX_CACHE_DIR")
