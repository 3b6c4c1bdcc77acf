from .base import *  # noqa

# Sized for CI runs
STUDY_RUNS = 50
TRUTH_ROWS = 100_000
DRAWS = 200
SIMS = 200
STUDY_SAMPLE_SIZES = [1000]
STUDY_CORRELATIONS = [0.0, 0.7]
