import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from medimux.closed_form import ClosedFormInputs
from medimux.exceptions import InvalidModelSpec

SIMULATION_FAMILIES = ("linear", "logit")
COVARIATE_KINDS = ("normal", "bernoulli")


@dataclass
class CovariateSpec:
    """Pre-treatment covariate affecting the mediators and the outcome."""

    name: str
    kind: str = "normal"
    mean: float = 0.0
    sd: float = 1.0
    probability: float = 0.5
    mediator_loadings: tuple = ()
    outcome_loading: float = 0.0

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise InvalidModelSpec(
                f"Covariate {self.name!r}: kind must be one of {COVARIATE_KINDS}"
            )
        self.mediator_loadings = tuple(float(v) for v in self.mediator_loadings)

    def sample(self, rng, n_rows):
        if self.kind == "bernoulli":
            return (rng.random(n_rows) < self.probability).astype(float)
        return self.mean + self.sd * rng.standard_normal(n_rows)


@dataclass
class SimulationModelSpec:
    """
    Generative model of the counterfactual database: T ~ B(p_treatment),
    optional latent U ~ N(0, 1), mediators

        M(t) = mediator_intercepts + mediator_slopes t + latent_loadings U
               + X loadings + e2,        e2 ~ N(0, mediator_cov)

    and an outcome with linear predictor

        outcome_intercept + outcome_treatment t + outcome_mediators' M
        + latent_outcome_loading U + X outcome loadings

    plus N(0, outcome_sd^2) noise (linear) or a logistic draw (logit).
    """

    name: str
    mediator_intercepts: tuple
    mediator_slopes: tuple
    mediator_cov: np.ndarray
    outcome_intercept: float
    outcome_treatment: float
    outcome_mediators: tuple
    family: str = "linear"
    p_treatment: float = 0.3
    outcome_sd: float = 1.0
    latent_loadings: tuple = None
    latent_outcome_loading: float = 0.0
    latent_observed: bool = False
    covariates: tuple = ()
    mediator_names: tuple = ()

    def __post_init__(self):
        self.mediator_intercepts = np.asarray(self.mediator_intercepts, dtype=float)
        self.mediator_slopes = np.asarray(self.mediator_slopes, dtype=float)
        self.outcome_mediators = np.asarray(self.outcome_mediators, dtype=float)
        n_mediators = self.mediator_intercepts.shape[0]
        self.mediator_cov = np.asarray(self.mediator_cov, dtype=float).reshape(
            n_mediators, n_mediators
        )
        if self.latent_loadings is not None:
            self.latent_loadings = np.asarray(self.latent_loadings, dtype=float)
        self.covariates = tuple(
            c if isinstance(c, CovariateSpec) else CovariateSpec(**c)
            for c in self.covariates
        )
        if not self.mediator_names:
            self.mediator_names = tuple(f"M{k + 1}" for k in range(n_mediators))
        self.mediator_names = tuple(self.mediator_names)
        self._validate()

    def _validate(self):
        n_mediators = self.n_mediators
        if not 0 < self.p_treatment < 1:
            raise InvalidModelSpec(
                f"p_treatment must lie in (0, 1), got {self.p_treatment}"
            )
        if self.family not in SIMULATION_FAMILIES:
            raise InvalidModelSpec(
                f"Simulation family must be one of {SIMULATION_FAMILIES}, "
                f"got {self.family!r}"
            )
        for label, values in [
            ("mediator_slopes", self.mediator_slopes),
            ("outcome_mediators", self.outcome_mediators),
        ]:
            if values.shape != (n_mediators,):
                raise InvalidModelSpec(f"{label} needs {n_mediators} entries")
        if self.latent_loadings is not None and self.latent_loadings.shape != (
            n_mediators,
        ):
            raise InvalidModelSpec(f"latent_loadings needs {n_mediators} entries")
        for covariate in self.covariates:
            if len(covariate.mediator_loadings) not in (0, n_mediators):
                raise InvalidModelSpec(
                    f"Covariate {covariate.name!r} needs {n_mediators} "
                    "mediator loadings"
                )
        if not np.allclose(self.mediator_cov, self.mediator_cov.T):
            raise InvalidModelSpec("mediator_cov must be symmetric")
        if np.linalg.eigvalsh(self.mediator_cov).min() < -1e-10:
            raise InvalidModelSpec("mediator_cov must be positive semi-definite")

    @property
    def n_mediators(self):
        return self.mediator_intercepts.shape[0]

    @property
    def has_latent(self):
        return self.latent_loadings is not None

    def covariate_loadings(self):
        """P x K matrix of covariate effects on the mediators."""
        rows = [
            c.mediator_loadings or (0.0,) * self.n_mediators for c in self.covariates
        ]
        return np.asarray(rows, dtype=float).reshape(len(rows), self.n_mediators)

    def covariate_outcome_loadings(self):
        return np.asarray([c.outcome_loading for c in self.covariates], dtype=float)

    def conditional_mediator_cov(self):
        """Covariance of the mediators given T (U and covariates marginalized)."""
        cov = self.mediator_cov.copy()
        if self.has_latent:
            cov += np.outer(self.latent_loadings, self.latent_loadings)
        for covariate, loadings in zip(self.covariates, self.covariate_loadings()):
            variance = (
                covariate.probability * (1 - covariate.probability)
                if covariate.kind == "bernoulli"
                else covariate.sd**2
            )
            cov += variance * np.outer(loadings, loadings)
        return cov

    def with_correlation(self, correlation):
        """Copy whose mediator noise has the given pairwise correlation."""
        sd = np.sqrt(np.diag(self.mediator_cov))
        corr = np.full((self.n_mediators, self.n_mediators), float(correlation))
        np.fill_diagonal(corr, 1.0)
        return replace(self, mediator_cov=corr * np.outer(sd, sd))

    def as_dict(self):
        return {
            "name": self.name,
            "family": self.family,
            "p_treatment": self.p_treatment,
            "mediator_names": list(self.mediator_names),
            "mediator_intercepts": self.mediator_intercepts.tolist(),
            "mediator_slopes": self.mediator_slopes.tolist(),
            "mediator_cov": self.mediator_cov.tolist(),
            "outcome_intercept": self.outcome_intercept,
            "outcome_treatment": self.outcome_treatment,
            "outcome_mediators": self.outcome_mediators.tolist(),
            "outcome_sd": self.outcome_sd,
            "latent_loadings": (
                self.latent_loadings.tolist() if self.has_latent else None
            ),
            "latent_outcome_loading": self.latent_outcome_loading,
            "latent_observed": self.latent_observed,
            "covariates": [
                {
                    "name": c.name,
                    "kind": c.kind,
                    "mean": c.mean,
                    "sd": c.sd,
                    "probability": c.probability,
                    "mediator_loadings": list(c.mediator_loadings),
                    "outcome_loading": c.outcome_loading,
                }
                for c in self.covariates
            ],
        }

    def digest(self):
        canonical = json.dumps(self.as_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(canonical).hexdigest()

    def closed_form_inputs(self, covariate_rows=None):
        """
        True coefficients of this model as closed-form inputs. An unobserved U is
        folded into the mediator residual covariance; an observed U becomes
        the last covariate.
        """
        xi2 = self.covariate_loadings().T
        xi3 = self.covariate_outcome_loadings()
        sigma2 = self.mediator_cov.copy()
        if self.has_latent and self.latent_observed:
            xi2 = np.column_stack([xi2, self.latent_loadings])
            xi3 = np.append(xi3, self.latent_outcome_loading)
        elif self.has_latent:
            sigma2 = sigma2 + np.outer(self.latent_loadings, self.latent_loadings)

        return ClosedFormInputs(
            alpha2=self.mediator_intercepts,
            beta2=self.mediator_slopes,
            xi2=xi2,
            sigma2=sigma2,
            alpha3=self.outcome_intercept,
            beta3=self.outcome_treatment,
            gamma=self.outcome_mediators,
            xi3=xi3,
            sigma3=self.outcome_sd if self.family == "linear" else 1.0,
            family=self.family,
            covariate_rows=covariate_rows,
        )

    @classmethod
    def from_dict(cls, config):
        config = dict(config)
        config.setdefault("name", "custom")
        return cls(**config)


def _unit_cov(correlation):
    return [[1.0, correlation], [correlation, 1.0]]


# Configuration for each simulation preset
preset_configs = [
    {
        "name": "model_1",
        "family": "linear",
        "p_treatment": 0.3,
        "mediator_intercepts": (1.0, 2.0),
        "mediator_slopes": (4.0, 6.0),
        "outcome_intercept": 1.0,
        "outcome_treatment": 10.0,
        "outcome_mediators": (5.0, 4.0),
        "outcome_sd": 1.0,
    },
    {
        "name": "model_2",
        "family": "logit",
        "p_treatment": 0.3,
        "mediator_intercepts": (0.1, 0.2),
        "mediator_slopes": (0.6, 0.8),
        "outcome_intercept": -2.0,
        "outcome_treatment": 0.4,
        "outcome_mediators": (0.6, 0.8),
    },
    {
        "name": "latent_confounder",
        "family": "linear",
        "p_treatment": 0.3,
        "mediator_intercepts": (1.0, 2.0),
        "mediator_slopes": (4.0, 6.0),
        "latent_loadings": (2.0, 3.0),
        "outcome_intercept": 1.0,
        "outcome_treatment": 10.0,
        "outcome_mediators": (5.0, 4.0),
        "outcome_sd": 1.0,
    },
]

PRESETS = {}


def create_presets():
    """Register every entry of preset_configs by name."""
    for config in preset_configs:
        PRESETS[config["name"]] = config


def preset(name, correlation=0.0, **overrides):
    """
    Build a registered spec. ``correlation`` sets the correlation of the
    unit-variance mediator noise; keyword overrides replace config entries.
    """
    try:
        config = dict(PRESETS[name])
    except KeyError:
        raise InvalidModelSpec(
            f"Unknown simulation preset {name!r}; expected one of {sorted(PRESETS)}"
        ) from None
    config["mediator_cov"] = _unit_cov(correlation)
    config.update(overrides)
    return SimulationModelSpec(**config)


create_presets()


def model_1(correlation=0.0):
    """Linear outcome, two continuous mediators; deltaZ = 44, zeta = 10, tau = 54."""
    return preset("model_1", correlation)


def model_2(correlation=0.0):
    """Logit outcome, two continuous mediators."""
    return preset("model_2", correlation)


def latent_confounder(observed=False):
    """Mediators correlated only through U, exported as a covariate when observed."""
    return preset("latent_confounder", 0.0, latent_observed=observed)
