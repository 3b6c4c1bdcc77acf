from .cache import load_or_generate  # noqa
from .spec import (  # noqa
    PRESETS,
    CovariateSpec,
    SimulationModelSpec,
    latent_confounder,
    model_1,
    model_2,
    preset,
)
from .study import StudyMetrics, StudyResult, run_study, simple_analysis  # noqa
from .table import (  # noqa
    CounterfactualTable,
    TruthResult,
    extract_observed,
    generate_counterfactual_table,
    monte_carlo_truth,
)
