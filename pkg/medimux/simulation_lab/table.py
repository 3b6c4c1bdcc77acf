"""
Counterfactual database: every row holds both potential mediator vectors and
the outcome noise, so Y(t, M^1(t_1), ..., M^K(t_K)) can be evaluated for any
treatment combination on demand.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from medimux import rng as rngs
from medimux.exceptions import EmptyAfterFiltering, SampleTooLarge
from medimux.regression_core import Dataset, cholesky_factor

logger = logging.getLogger(__name__)

TREATMENTS = (0, 1)


@dataclass
class CounterfactualTable:
    spec: object
    t: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    noise: np.ndarray
    x: np.ndarray
    u: np.ndarray = None
    seed: int = None

    @property
    def n_rows(self):
        return self.t.shape[0]

    @property
    def n_mediators(self):
        return self.m0.shape[1]

    def mediators(self, arms):
        """
        Mediator matrix with column k taken from M^k(arms[k]). ``arms`` is a
        length-K sequence or an (n, K) array of 0/1 treatment values.
        """
        arms = np.broadcast_to(np.asarray(arms, dtype=float), self.m0.shape)
        return np.where(arms == 1, self.m1, self.m0)

    def linear_predictor(self, t, arms):
        spec = self.spec
        lp = (
            spec.outcome_intercept
            + spec.outcome_treatment * np.asarray(t, dtype=float)
            + self.mediators(arms) @ spec.outcome_mediators
            + self.x @ spec.covariate_outcome_loadings()
        )
        if self.u is not None:
            lp = lp + spec.latent_outcome_loading * self.u
        return lp

    def outcome(self, t, arms=None):
        """Y(t, M^1(arms[0]), ..., M^K(arms[K-1])) for every row, noise reused."""
        if arms is None:
            arms = np.full(self.n_mediators, t, dtype=float)
        lp = self.linear_predictor(t, arms)
        if self.spec.family == "logit":
            return (self.noise < special.expit(lp)).astype(float)
        return lp + self.noise

    def observed_mediators(self):
        return self.mediators(self.t[:, np.newaxis])

    def observed_outcome(self):
        return self.outcome(self.t, self.t[:, np.newaxis])


def generate_counterfactual_table(spec, n_rows, seed):
    """
    Draw ``n_rows`` i.i.d. rows from ``spec``. M(1) - M(0) is the constant
    treatment shift in every row: both arms share one residual vector.
    """
    if n_rows < 1:
        raise ValueError(f"n_rows must be at least 1, got {n_rows}")

    stream = rngs.substream(seed, rngs.TABLE)
    factor = cholesky_factor(spec.mediator_cov)

    t = (stream.random(n_rows) < spec.p_treatment).astype(float)
    u = stream.standard_normal(n_rows) if spec.has_latent else None
    x = np.column_stack(
        [covariate.sample(stream, n_rows) for covariate in spec.covariates]
        or [np.zeros((n_rows, 0))]
    )
    residuals = stream.standard_normal((n_rows, spec.n_mediators)) @ factor.T

    baseline = spec.mediator_intercepts + residuals + x @ spec.covariate_loadings()
    if u is not None:
        baseline = baseline + np.outer(u, spec.latent_loadings)

    if spec.family == "logit":
        noise = stream.random(n_rows)
    else:
        noise = spec.outcome_sd * stream.standard_normal(n_rows)

    logger.debug(f"Generated {n_rows} counterfactual rows for {spec.name}")
    return CounterfactualTable(
        spec=spec,
        t=t,
        m0=baseline,
        m1=baseline + spec.mediator_slopes,
        noise=noise,
        x=x,
        u=u,
        seed=seed,
    )


@dataclass
class TruthResult:
    effects: dict
    standard_errors: dict
    n_rows: int
    spec_name: str = None
    spec_digest: str = None
    seed: int = None

    def __getitem__(self, name):
        return self.effects[name]

    def as_dict(self):
        return {
            "spec": self.spec_name,
            "spec_digest": self.spec_digest,
            "n_rows": self.n_rows,
            "seed": self.seed,
            "effects": dict(self.effects),
            "standard_errors": dict(self.standard_errors),
        }


def _arms(n_mediators, value, k=None, k_value=None):
    arms = np.full(n_mediators, value, dtype=float)
    if k is not None:
        arms[k] = k_value
    return arms


def monte_carlo_truth(table):
    """
    True effects of the table's population as plain means of the defining
    row contrasts, with Monte-Carlo standard errors (row sd / sqrt(n)).
    """
    if table.n_rows < 1:
        raise ValueError("Cannot compute effects of an empty table")

    n_mediators = table.n_mediators
    contrasts = {}
    for t in TREATMENTS:
        for k in range(n_mediators):
            contrasts[f"delta{k + 1}({t})"] = table.outcome(
                t, _arms(n_mediators, t, k, 1)
            ) - table.outcome(t, _arms(n_mediators, t, k, 0))
            contrasts[f"eta{k + 1}({t})"] = table.outcome(
                t, _arms(n_mediators, 1, k, 1 - t)
            ) - table.outcome(t, _arms(n_mediators, 0, k, 1 - t))
        contrasts[f"deltaZ({t})"] = table.outcome(
            t, _arms(n_mediators, 1)
        ) - table.outcome(t, _arms(n_mediators, 0))
        contrasts[f"zeta({t})"] = table.outcome(
            1, _arms(n_mediators, t)
        ) - table.outcome(0, _arms(n_mediators, t))
    contrasts["tau"] = table.outcome(1) - table.outcome(0)

    for k in range(n_mediators):
        contrasts[f"delta{k + 1}"] = (
            contrasts[f"delta{k + 1}(0)"] + contrasts[f"delta{k + 1}(1)"]
        ) / 2
    contrasts["deltaZ"] = (contrasts["deltaZ(0)"] + contrasts["deltaZ(1)"]) / 2
    contrasts["zeta"] = (contrasts["zeta(0)"] + contrasts["zeta(1)"]) / 2

    n_rows = table.n_rows
    effects = {name: float(np.mean(values)) for name, values in contrasts.items()}
    standard_errors = {
        name: float(np.std(values, ddof=1) / np.sqrt(n_rows)) if n_rows > 1 else 0.0
        for name, values in contrasts.items()
    }

    tau = effects["tau"]
    for k in range(n_mediators):
        effects[f"PM{k + 1}"] = effects[f"delta{k + 1}"] / tau if tau else np.nan
    effects["PMZ"] = effects["deltaZ"] / tau if tau else np.nan

    return TruthResult(
        effects=effects,
        standard_errors=standard_errors,
        n_rows=n_rows,
        spec_name=table.spec.name,
        spec_digest=table.spec.digest(),
        seed=table.seed,
    )


def extract_observed(table, n, seed):
    """
    Sample ``n`` rows without replacement and keep only what an observer
    sees: T_i, Z_i(T_i) and Y(T_i, Z_i(T_i)). U is exported as the last
    covariate only when the model marks it observed.
    """
    if n < 1:
        raise EmptyAfterFiltering(f"Cannot extract a sample of {n} rows")
    if n > table.n_rows:
        raise SampleTooLarge(
            f"Sample of {n} rows requested from a table of {table.n_rows}"
        )

    stream = rngs.substream(seed, rngs.EXTRACT)
    rows = np.sort(stream.choice(table.n_rows, size=n, replace=False))

    spec = table.spec
    x = table.x[rows]
    covariate_names = [covariate.name for covariate in spec.covariates]
    if table.u is not None and spec.latent_observed:
        x = np.column_stack([x, table.u[rows]])
        covariate_names.append("U")

    return Dataset(
        t=table.t[rows],
        m=table.observed_mediators()[rows],
        y=table.observed_outcome()[rows],
        x=x,
        mediator_names=spec.mediator_names,
        covariate_names=tuple(covariate_names),
    )
