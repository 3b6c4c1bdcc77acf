"""
Analytic effects for the linear structural equation model and for binary
outcomes with probit or logit links. Used as cross-checks of the simulation
engine and of the counterfactual truth oracle.

For a binary outcome every effect is an average over covariate rows of
differences of F_U, the CDF of the composite latent noise gamma' U2 + e3,
evaluated at linear predictors built from

    a = alpha3 + sum_k gamma_k alpha2_k
    b = sum_k gamma_k beta2_k
    c(x) = (xi3 + sum_k gamma_k xi2_k)' x
"""
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

from medimux.exceptions import NonPositiveScale, QuadratureNotConverged

QUAD_EPSABS = 1e-9
QUAD_LIMIT = 2000
FAMILIES = ("linear", "logit", "probit")


@dataclass
class ClosedFormInputs:
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
    covariate_rows: np.ndarray = None

    def __post_init__(self):
        self.alpha2 = np.atleast_1d(np.asarray(self.alpha2, dtype=float))
        self.beta2 = np.atleast_1d(np.asarray(self.beta2, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        n_mediators = self.alpha2.shape[0]
        self.sigma2 = np.asarray(self.sigma2, dtype=float).reshape(
            n_mediators, n_mediators
        )
        self.xi2 = np.asarray(self.xi2, dtype=float).reshape(n_mediators, -1)
        self.xi3 = np.asarray(self.xi3, dtype=float).ravel()
        n_covariates = self.xi3.shape[0]
        if self.covariate_rows is None:
            self.covariate_rows = np.zeros((0, n_covariates))
        self.covariate_rows = np.asarray(self.covariate_rows, dtype=float)

        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.beta2.shape[0] != n_mediators or self.gamma.shape[0] != n_mediators:
            raise ValueError("alpha2, beta2 and gamma must have one entry per mediator")
        if self.xi2.shape[1] != n_covariates:
            raise ValueError("xi2 and xi3 disagree on the number of covariates")
        rows = self.covariate_rows
        if rows.ndim != 2 or rows.shape[1] != n_covariates:
            raise ValueError(f"covariate_rows must have {n_covariates} columns")

    @classmethod
    def from_fits(cls, med_fit, out_fit, covariate_rows=None):
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
            covariate_rows=covariate_rows,
        )

    @classmethod
    def from_spec(cls, spec, covariate_rows=None):
        """True coefficients of a simulation_lab SimulationModelSpec."""
        return spec.closed_form_inputs(covariate_rows)

    @property
    def latent_variance(self):
        """gamma' sigma2 gamma, variance of the mediator part of the latent noise."""
        return float(self.gamma @ self.sigma2 @ self.gamma)

    def covariate_terms(self):
        """c(x) for every covariate row, or a single 0 when there are no rows."""
        if self.covariate_rows.shape[0] == 0:
            return np.zeros(1)
        combined = self.xi3 + self.gamma @ self.xi2
        return self.covariate_rows @ combined


def lsem_effects(inputs):
    """delta_k = gamma_k beta2_k, deltaZ = sum of those, zeta = beta3, for both t."""
    if inputs.family != "linear":
        raise ValueError(f"lsem_effects needs the linear family, got {inputs.family!r}")

    products = inputs.gamma * inputs.beta2
    delta_z = float(np.sum(products))
    zeta = float(inputs.beta3)

    effects = {}
    for k, product in enumerate(products):
        effects[f"delta{k + 1}"] = float(product)
        for t in (0, 1):
            effects[f"delta{k + 1}({t})"] = float(product)
    for t in (0, 1):
        effects[f"deltaZ({t})"] = delta_z
        effects[f"zeta({t})"] = zeta
    effects["deltaZ"] = delta_z
    effects["zeta"] = zeta
    effects["tau"] = delta_z + zeta
    return effects


def f_u_probit(z, gamma, sigma2, sigma3):
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    sigma2 = np.asarray(sigma2, dtype=float).reshape(gamma.shape[0], gamma.shape[0])
    variance = sigma3**2 + float(gamma @ sigma2 @ gamma)
    if not variance > 0:
        raise NonPositiveScale(f"Latent variance {variance!r} is not positive")
    return stats.norm.cdf(np.asarray(z, dtype=float) / np.sqrt(variance))


def _logistic_normal_cdf(z, scale, epsabs, limit):
    # substituting u = F_L(y) turns the logistic weight into du on (0, 1)
    def integrand(u):
        return stats.norm.cdf((z - special.logit(u)) / scale)

    value, error, info = integrate.quad(
        integrand, 0.0, 1.0, epsabs=epsabs, epsrel=0.0, limit=limit, full_output=1
    )[:3]
    if error > epsabs:
        raise QuadratureNotConverged(
            f"F_U quadrature at z={z:g}, s={scale:g} reached error {error:g} "
            f"after {info['last']} subintervals"
        )
    return value


def f_u_logit(z, gamma, sigma2, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT):
    """
    CDF of L + N(0, s^2), L standard logistic and s^2 = gamma' sigma2 gamma,
    by adaptive quadrature. Vectorized over ``z``.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    sigma2 = np.asarray(sigma2, dtype=float).reshape(gamma.shape[0], gamma.shape[0])
    variance = float(gamma @ sigma2 @ gamma)
    if variance < 0:
        raise NonPositiveScale(f"Latent variance {variance!r} is negative")

    z = np.asarray(z, dtype=float)
    if variance == 0:
        return special.expit(z)

    scale = np.sqrt(variance)
    values = [_logistic_normal_cdf(float(v), scale, epsabs, limit) for v in z.ravel()]
    result = np.asarray(values).reshape(z.shape)
    return result if result.ndim else float(result)


def f_u(inputs, z):
    """F_U for the family of ``inputs``; each distinct z is integrated once."""
    z = np.asarray(z, dtype=float)
    if inputs.family == "probit":
        return f_u_probit(z, inputs.gamma, inputs.sigma2, inputs.sigma3)
    if inputs.family == "logit":
        unique, inverse = np.unique(z, return_inverse=True)
        values = np.atleast_1d(f_u_logit(unique, inputs.gamma, inputs.sigma2))
        return values[inverse].reshape(z.shape)
    raise ValueError(f"F_U is only defined for binary families, got {inputs.family!r}")


def binary_effects(inputs, t):
    """
    delta_k(t), deltaZ(t) and zeta(t) for a binary outcome, averaged over the
    empirical covariate distribution.
    """
    if inputs.family not in ("logit", "probit"):
        raise ValueError(
            f"binary_effects needs a logit or probit family, got {inputs.family!r}"
        )

    products = inputs.gamma * inputs.beta2
    a = inputs.alpha3 + float(inputs.gamma @ inputs.alpha2)
    b = float(np.sum(products))
    base = a + inputs.covariate_terms()

    def contrast(on, off):
        return float(np.mean(f_u(inputs, base + on) - f_u(inputs, base + off)))

    effects = {}
    for k, product in enumerate(products):
        held = (inputs.beta3 + b - product) * t
        effects[f"delta{k + 1}({t})"] = contrast(held + product, held)
    # joint indirect effect switches every mediator, treatment held at t
    effects[f"deltaZ({t})"] = contrast(inputs.beta3 * t + b, inputs.beta3 * t)
    effects[f"zeta({t})"] = contrast(inputs.beta3 + b * t, b * t)
    return effects


def closed_form_effects(inputs):
    """Every analytic effect of ``inputs``, with averages over t and tau."""
    if inputs.family == "linear":
        return lsem_effects(inputs)

    effects = {}
    for t in (0, 1):
        effects.update(binary_effects(inputs, t))
    for k in range(inputs.gamma.shape[0]):
        name = f"delta{k + 1}"
        effects[name] = (effects[f"{name}(0)"] + effects[f"{name}(1)"]) / 2
    effects["deltaZ"] = (effects["deltaZ(0)"] + effects["deltaZ(1)"]) / 2
    effects["zeta"] = (effects["zeta(0)"] + effects["zeta(1)"]) / 2
    effects["tau"] = effects["deltaZ(1)"] + effects["zeta(0)"]
    return effects
