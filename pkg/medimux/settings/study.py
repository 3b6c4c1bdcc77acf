from .base import *  # noqa

LOG_LEVEL = "WARNING"

STUDY_RUNS = 200
TRUTH_ROWS = 1_000_000
