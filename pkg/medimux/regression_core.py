"""
Model fitting for the mediator system and the outcome model.

The mediators are regressed jointly on (1, T, X); because every equation
shares the same regressors, equation-by-equation least squares is the
efficient estimator and the coefficient covariance has Kronecker structure.
The outcome is regressed on (1, T, M^1..M^K, X) by least squares (linear
family) or by iteratively reweighted least squares (logit, probit).
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from medimux import rng as rngs
from medimux.exceptions import (
    CholeskyFailure,
    InsufficientRows,
    InvalidDataset,
    NonBinaryOutcome,
    NonBinaryTreatment,
    NotConverged,
    RankDeficient,
    SeparationDetected,
    SingularResidualCovariance,
)
from medimux.families import get_family

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
PSD_TOL = 1e-10
IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
MAX_STEP_HALVINGS = 30
SEPARATION_PROBABILITY = 1e-10
SEPARATION_SHARE = 0.99
CHOLESKY_MAX_JITTER = 1e-8


def _as_matrix(values, n_rows):
    matrix = np.asarray(values, dtype=float)
    if matrix.size == 0:
        return np.zeros((n_rows, 0))
    if matrix.ndim == 1:
        matrix = matrix[:, np.newaxis]
    return matrix


@dataclass
class Dataset:
    """
    Observed rectangular data: binary treatment t, K mediator columns m,
    outcome y and P covariate columns x.
    """

    t: np.ndarray
    m: np.ndarray
    y: np.ndarray
    x: Optional[np.ndarray] = None
    treatment_name: str = "T"
    mediator_names: tuple = ()
    outcome_name: str = "Y"
    covariate_names: tuple = ()
    dropped_rows: int = 0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).ravel()
        self.y = np.asarray(self.y, dtype=float).ravel()
        n_rows = self.t.shape[0]
        self.m = _as_matrix(self.m, n_rows)
        self.x = _as_matrix(self.x if self.x is not None else [], n_rows)

        if not self.mediator_names:
            self.mediator_names = tuple(f"M{k + 1}" for k in range(self.m.shape[1]))
        if not self.covariate_names:
            self.covariate_names = tuple(f"X{p + 1}" for p in range(self.x.shape[1]))
        self.mediator_names = tuple(self.mediator_names)
        self.covariate_names = tuple(self.covariate_names)

        self._validate()

    def _validate(self):
        n_rows = self.n_rows
        if self.y.shape[0] != n_rows or self.m.shape[0] != n_rows:
            raise InvalidDataset("Treatment, mediators and outcome differ in length")
        if self.x.shape[0] != n_rows:
            raise InvalidDataset("Covariates and treatment differ in length")
        if self.m.shape[1] < 1:
            raise InvalidDataset("At least one mediator is required")
        if len(self.mediator_names) != self.n_mediators:
            raise InvalidDataset("One name per mediator column is required")
        if len(self.covariate_names) != self.n_covariates:
            raise InvalidDataset("One name per covariate column is required")

        columns = [("t", self.t), ("m", self.m), ("y", self.y), ("x", self.x)]
        for name, values in columns:
            if not np.all(np.isfinite(values)):
                raise InvalidDataset(f"Missing or non-finite values in {name}")

        if not np.all(np.isin(self.t, (0.0, 1.0))):
            raise NonBinaryTreatment(
                f"Treatment {self.treatment_name!r} must only contain 0 and 1"
            )
        treated = int(np.sum(self.t))
        if treated < 2 or n_rows - treated < 2:
            raise InvalidDataset(
                "Each treatment arm needs at least two rows "
                f"(got {n_rows - treated} untreated, {treated} treated)"
            )

    @property
    def n_rows(self):
        return self.t.shape[0]

    @property
    def n_mediators(self):
        return self.m.shape[1]

    @property
    def n_covariates(self):
        return self.x.shape[1]

    @property
    def binary_outcome(self):
        return bool(np.all(np.isin(self.y, (0.0, 1.0))))

    def require_binary_outcome(self):
        if not self.binary_outcome:
            raise NonBinaryOutcome(
                f"Outcome {self.outcome_name!r} must only contain 0 and 1"
            )

    def select_mediators(self, indices):
        """Copy of the dataset keeping only the mediator columns in ``indices``."""
        indices = list(indices)
        return Dataset(
            t=self.t,
            m=self.m[:, indices],
            y=self.y,
            x=self.x,
            treatment_name=self.treatment_name,
            mediator_names=tuple(self.mediator_names[i] for i in indices),
            outcome_name=self.outcome_name,
            covariate_names=self.covariate_names,
            dropped_rows=self.dropped_rows,
        )

    def mediator_design(self):
        return np.column_stack([np.ones(self.n_rows), self.t, self.x])

    def outcome_design(self):
        return np.column_stack([np.ones(self.n_rows), self.t, self.m, self.x])


@dataclass
class LinearFit:
    coefficients: np.ndarray
    coef_cov: np.ndarray
    residual_variance: float
    residuals: np.ndarray
    xtx_inv: np.ndarray


@dataclass
class MediatorSystemFit:
    alpha2: np.ndarray
    beta2: np.ndarray
    xi2: np.ndarray
    sigma2: np.ndarray
    coef_cov: np.ndarray
    n_used: int

    @property
    def n_mediators(self):
        return self.alpha2.shape[0]

    @property
    def coefficients(self):
        """(2 + P) x K matrix, one column per mediator equation."""
        return np.vstack([self.alpha2, self.beta2, self.xi2.T])

    @property
    def stacked(self):
        """Coefficients stacked mediator by mediator, the order of coef_cov."""
        return self.coefficients.T.ravel()


@dataclass
class OutcomeFit:
    alpha3: float
    beta3: float
    gamma: np.ndarray
    xi3: np.ndarray
    family: str
    sigma3: float
    coef_cov: np.ndarray
    converged: bool = True
    n_iter: int = 0

    @property
    def coefficients(self):
        return np.concatenate([[self.alpha3, self.beta3], self.gamma, self.xi3])


@dataclass
class ParameterDraw:
    """One quasi-Bayesian draw of every model parameter."""

    alpha2: np.ndarray
    beta2: np.ndarray
    xi2: np.ndarray
    sigma2: np.ndarray
    alpha3: float
    beta3: float
    gamma: np.ndarray
    xi3: np.ndarray
    sigma3: float = 1.0
    family: str = "linear"
    index: int = 0
    sigma2_factor: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.alpha2 = np.atleast_1d(np.asarray(self.alpha2, dtype=float))
        self.beta2 = np.atleast_1d(np.asarray(self.beta2, dtype=float))
        n_mediators = self.alpha2.shape[0]
        self.xi2 = np.asarray(self.xi2, dtype=float).reshape(n_mediators, -1)
        self.sigma2 = np.asarray(self.sigma2, dtype=float).reshape(
            n_mediators, n_mediators
        )
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.xi3 = np.asarray(self.xi3, dtype=float).ravel()
        self.alpha3 = float(self.alpha3)
        self.beta3 = float(self.beta3)

    @property
    def mediator_params(self):
        return self.alpha2, self.beta2, self.xi2

    @property
    def outcome_params(self):
        return self.alpha3, self.beta3, self.gamma, self.xi3

    @classmethod
    def at_estimates(cls, med_fit, out_fit):
        return cls(
            alpha2=med_fit.alpha2,
            beta2=med_fit.beta2,
            xi2=med_fit.xi2,
            sigma2=med_fit.sigma2,
            alpha3=out_fit.alpha3,
            beta3=out_fit.beta3,
            gamma=out_fit.gamma,
            xi3=out_fit.xi3,
            sigma3=out_fit.sigma3,
            family=out_fit.family,
        )

    def residual_factor(self):
        """Lower Cholesky factor of sigma2, computed once per draw."""
        if self.sigma2_factor is None:
            self.sigma2_factor = cholesky_factor(self.sigma2)
        return self.sigma2_factor


def cholesky_factor(cov, max_jitter=CHOLESKY_MAX_JITTER):
    """
    Lower Cholesky factor of a covariance matrix. A zero matrix factors to
    zero; a matrix that is only numerically PSD gets diagonal jitter growing
    tenfold from 1e-14 up to ``max_jitter``.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.size == 0 or not np.any(cov):
        return np.zeros_like(cov)

    identity = np.eye(cov.shape[0])
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(cov + jitter * identity)
        except np.linalg.LinAlgError:
            jitter = 1e-14 if jitter == 0.0 else jitter * 10
            if jitter > max_jitter * (1 + 1e-9):
                raise CholeskyFailure(
                    f"Covariance matrix of size {cov.shape[0]} is not positive "
                    f"semi-definite even with jitter {max_jitter:g}"
                ) from None
            logger.debug(f"Cholesky failed, retrying with jitter {jitter:g}")


def _qr_solve(design, response, rank_tol=RANK_TOL):
    """Least-squares coefficients and (D'D)^-1 through a QR factorization."""
    n_rows, n_cols = design.shape
    if n_rows <= n_cols:
        raise InsufficientRows(
            f"Need more rows than regressors, got {n_rows} rows for {n_cols} columns"
        )

    q, r = linalg.qr(design, mode="economic")
    pivots = np.abs(np.diag(r))
    scale = pivots.max() if pivots.size else 0.0
    deficient = np.flatnonzero(pivots <= rank_tol * max(scale, 1.0))
    if deficient.size:
        raise RankDeficient(int(deficient[0]))

    coefficients = linalg.solve_triangular(r, q.T @ response)
    r_inv = linalg.solve_triangular(r, np.eye(n_cols))
    return coefficients, r_inv @ r_inv.T


def fit_ols(design, response):
    """
    Ordinary least squares with coefficient covariance
    residual_variance * (D'D)^-1, residual_variance = RSS / (n - q).
    """
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float).ravel()
    coefficients, xtx_inv = _qr_solve(design, response)

    residuals = response - design @ coefficients
    df_resid = design.shape[0] - design.shape[1]
    residual_variance = float(residuals @ residuals) / df_resid

    return LinearFit(
        coefficients=coefficients,
        coef_cov=residual_variance * xtx_inv,
        residual_variance=residual_variance,
        residuals=residuals,
        xtx_inv=xtx_inv,
    )


def fit_mediator_system(data):
    n_rows, n_mediators, n_covariates = (
        data.n_rows,
        data.n_mediators,
        data.n_covariates,
    )
    if n_rows <= 2 + n_covariates + n_mediators:
        raise InsufficientRows(
            f"Mediator system needs more than {2 + n_covariates + n_mediators} rows, "
            f"got {n_rows}"
        )

    design = data.mediator_design()
    coefficients, xtx_inv = _qr_solve(design, data.m)
    residuals = data.m - design @ coefficients

    sigma2 = residuals.T @ residuals / (n_rows - 2 - n_covariates)
    sigma2 = (sigma2 + sigma2.T) / 2
    smallest = np.linalg.eigvalsh(sigma2).min()
    if smallest < -PSD_TOL:
        raise SingularResidualCovariance(
            f"Residual covariance has eigenvalue {smallest:g} below {-PSD_TOL:g}"
        )

    return MediatorSystemFit(
        alpha2=coefficients[0],
        beta2=coefficients[1],
        xi2=coefficients[2:].T,
        sigma2=sigma2,
        coef_cov=np.kron(sigma2, xtx_inv),
        n_used=n_rows,
    )


def _split_outcome(coefficients, n_mediators):
    return (
        float(coefficients[0]),
        float(coefficients[1]),
        coefficients[2 : 2 + n_mediators],
        coefficients[2 + n_mediators :],
    )


def fit_outcome(data, family="linear", tol=IRLS_TOL, max_iter=IRLS_MAX_ITER):
    outcome_family = get_family(family)
    design = data.outcome_design()

    if not outcome_family.binary:
        if data.binary_outcome:
            logger.warning(
                f"Outcome {data.outcome_name!r} only contains 0 and 1 but is fitted "
                "with the linear family; pass family='logit' or 'probit' for a "
                "binary outcome"
            )
        fit = fit_ols(design, data.y)
        alpha3, beta3, gamma, xi3 = _split_outcome(fit.coefficients, data.n_mediators)
        return OutcomeFit(
            alpha3=alpha3,
            beta3=beta3,
            gamma=gamma,
            xi3=xi3,
            family=outcome_family.name,
            sigma3=float(np.sqrt(fit.residual_variance)),
            coef_cov=fit.coef_cov,
        )

    data.require_binary_outcome()
    coefficients, converged, n_iter = _irls(
        outcome_family, design, data.y, tol, max_iter
    )

    eta = design @ coefficients
    fitted = outcome_family.mean(eta)
    extreme = (fitted < SEPARATION_PROBABILITY) | (fitted > 1 - SEPARATION_PROBABILITY)
    if np.mean(extreme) >= SEPARATION_SHARE:
        raise SeparationDetected(
            f"{np.mean(extreme):.1%} of fitted probabilities are numerically 0 or 1"
        )

    if not converged:
        message = (
            f"IRLS for the {outcome_family.name} outcome model did not converge "
            f"within {max_iter} iterations"
        )
        logger.warning(message)
        warnings.warn(message, NotConverged)

    weights = outcome_family.observed_weights(eta, data.y)
    information = design.T @ (weights[:, np.newaxis] * design)
    coef_cov = np.linalg.inv(information)
    coef_cov = (coef_cov + coef_cov.T) / 2

    alpha3, beta3, gamma, xi3 = _split_outcome(coefficients, data.n_mediators)
    return OutcomeFit(
        alpha3=alpha3,
        beta3=beta3,
        gamma=gamma,
        xi3=xi3,
        family=outcome_family.name,
        sigma3=outcome_family.sigma3,
        coef_cov=coef_cov,
        converged=converged,
        n_iter=n_iter,
    )


def _irls(outcome_family, design, y, tol, max_iter):
    coefficients = np.zeros(design.shape[1])
    log_likelihood = outcome_family.log_likelihood(design @ coefficients, y)

    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = design @ coefficients
        weights, response = outcome_family.working_response(eta, y)
        root_weights = np.sqrt(weights)
        candidate, _ = _qr_solve(
            design * root_weights[:, np.newaxis], response * root_weights
        )

        step = candidate - coefficients
        candidate_ll = outcome_family.log_likelihood(design @ candidate, y)
        halvings = 0
        # step-halving on likelihood decrease
        while not candidate_ll >= log_likelihood - 1e-9 * (1 + abs(log_likelihood)):
            if halvings == MAX_STEP_HALVINGS:
                break
            step = step / 2
            candidate = coefficients + step
            candidate_ll = outcome_family.log_likelihood(design @ candidate, y)
            halvings += 1

        change = np.max(np.abs(candidate - coefficients))
        coefficients, log_likelihood = candidate, candidate_ll
        if change < tol:
            return coefficients, True, n_iter

    return coefficients, False, n_iter


def sample_parameters(
    med_fit, out_fit, n_draws, rng_seed, max_jitter=CHOLESKY_MAX_JITTER
):
    """
    Draw ``n_draws`` parameter sets from the asymptotic normal sampling
    distributions of the two fits. Mediator and outcome coefficients are drawn
    independently; sigma2 and sigma3 stay at their estimates.
    """
    if n_draws < 1:
        raise ValueError(f"n_draws must be at least 1, got {n_draws}")

    med_factor = cholesky_factor(med_fit.coef_cov, max_jitter)
    out_factor = cholesky_factor(out_fit.coef_cov, max_jitter)
    sigma2_factor = cholesky_factor(med_fit.sigma2, max_jitter)

    med_noise = rngs.substream(rng_seed, rngs.PARAMETERS, 0).standard_normal(
        (n_draws, med_factor.shape[0])
    )
    out_noise = rngs.substream(rng_seed, rngs.PARAMETERS, 1).standard_normal(
        (n_draws, out_factor.shape[0])
    )
    med_draws = med_fit.stacked + med_noise @ med_factor.T
    out_draws = out_fit.coefficients + out_noise @ out_factor.T

    n_mediators = med_fit.n_mediators
    draws = []
    for index in range(n_draws):
        # stacked mediator-major: each row is one equation (alpha, beta, xi...)
        equations = med_draws[index].reshape(n_mediators, -1)
        alpha3, beta3, gamma, xi3 = _split_outcome(out_draws[index], n_mediators)
        draws.append(
            ParameterDraw(
                alpha2=equations[:, 0],
                beta2=equations[:, 1],
                xi2=equations[:, 2:],
                sigma2=med_fit.sigma2,
                alpha3=alpha3,
                beta3=beta3,
                gamma=gamma,
                xi3=xi3,
                sigma3=out_fit.sigma3,
                family=out_fit.family,
                index=index,
                sigma2_factor=sigma2_factor,
            )
        )
    return draws
