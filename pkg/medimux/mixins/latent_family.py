# Mixins for binary outcome families
import numpy as np

# Fitted probabilities are kept this far from 0 and 1 inside IRLS
PROBABILITY_FLOOR = 1e-15


class LatentFamilyMixinMeta(type):
    """
    Metaclass that enforces the implementation of required static
    variables in child classes that inherit from LatentFamilyMixin.
    """

    def __init__(cls, name, bases, dct):
        required_static_vars = ["name", "latent", "pdf_slope"]
        missing_vars = [var for var in required_static_vars if var not in dct]

        if missing_vars:
            missing_vars_str = ", ".join(missing_vars)
            raise NotImplementedError(
                f"{name} must define the following static variable(s): "
                f"{missing_vars_str}."
            )

        super().__init__(name, bases, dct)


class LatentFamilyMixin(metaclass=LatentFamilyMixinMeta):
    """
    Binary outcome family written as a threshold on a latent variable:
    Y = 1 exactly when the linear predictor plus a latent error exceeds zero,
    so P(Y=1) = F(eta) where F is the CDF of the latent law.

    To use this mixin, create a child class that defines the required static
    variables: name, latent (a frozen scipy.stats distribution with cdf, pdf,
    logcdf and logsf) and pdf_slope (the derivative of the latent density).
    """

    name = None
    latent = None
    pdf_slope = None

    binary = True
    # Probit and logit latent errors have unit scale
    sigma3 = 1.0

    def mean(self, eta):
        return self.latent.cdf(eta)

    def log_likelihood(self, eta, y):
        return float(
            np.sum(y * self.latent.logcdf(eta) + (1 - y) * self.latent.logsf(eta))
        )

    def working_response(self, eta, y):
        """
        Weights and adjusted response of one IRLS step (Fisher scoring):
        w = f(eta)^2 / (F(1-F)) and z = eta + (y - F) / f(eta).
        """
        mu = np.clip(self.latent.cdf(eta), PROBABILITY_FLOOR, 1 - PROBABILITY_FLOOR)
        density = np.maximum(self.latent.pdf(eta), PROBABILITY_FLOOR)
        weights = density**2 / (mu * (1 - mu))
        response = eta + (y - mu) / density
        return weights, response

    def observed_weights(self, eta, y):
        """
        Row weights of the negative Hessian of the log-likelihood, so that
        the observed information is D' diag(weights) D.
        """
        cdf = np.clip(self.latent.cdf(eta), PROBABILITY_FLOOR, 1 - PROBABILITY_FLOOR)
        density = self.latent.pdf(eta)
        slope = self.pdf_slope(eta)
        curvature_cases = (slope * cdf - density**2) / cdf**2
        curvature_controls = (-slope * (1 - cdf) - density**2) / (1 - cdf) ** 2
        return -(y * curvature_cases + (1 - y) * curvature_controls)
