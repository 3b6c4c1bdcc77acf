"""
Quasi-Bayesian estimation of direct, joint-indirect and per-mediator
indirect effects.

For each parameter draw r the engine resamples I covariate rows, simulates
the potential mediators Z(0) and Z(1) of each simulated individual from one
shared residual vector, evaluates the model-implied expected outcomes under
every treatment/mediator combination the effects need, and averages the
contrasts. Because all contrasts of a draw reuse the same residuals and
covariate rows, the decompositions

    tau = deltaZ(1) + zeta(0) = deltaZ(0) + zeta(1)
    deltaZ(t) = mean_k(delta_k(t) + eta_k(t))

hold exactly within every draw.
"""
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from medimux import rng as rngs
from medimux.exceptions import DegenerateTotalEffect
from medimux.families import get_family
from medimux.regression_core import fit_mediator_system, fit_outcome, sample_parameters

logger = logging.getLogger(__name__)

TREATMENTS = (0, 1)


@dataclass
class MediatorBlock:
    """Potential mediators of I simulated individuals under both arms."""

    z0: np.ndarray
    z1: np.ndarray

    def under(self, t):
        return self.z1 if t == 1 else self.z0

    def mixed(self, k, t_k, t_rest):
        """Z^k(t_k, t_rest): mediator k under t_k, every other mediator under t_rest."""
        block = self.under(t_rest).copy()
        block[:, k] = self.under(t_k)[:, k]
        return block


@dataclass
class DrawEffects:
    """
    Per-draw effect values, each an array of length R. Keys of the per-mediator
    dicts are 0-based mediator positions.
    """

    delta: dict
    eta: dict
    delta_z: dict
    zeta: dict
    tau: np.ndarray
    mediator_names: tuple = ()

    @property
    def n_draws(self):
        return self.tau.shape[0]

    @property
    def n_mediators(self):
        return len(self.delta[0])

    def columns(self):
        """Ordered mapping of effect name to draw array."""
        columns = {}
        for k in range(self.n_mediators):
            for t in TREATMENTS:
                columns[f"delta{k + 1}({t})"] = self.delta[t][k]
            for t in TREATMENTS:
                columns[f"eta{k + 1}({t})"] = self.eta[t][k]
        for t in TREATMENTS:
            columns[f"deltaZ({t})"] = self.delta_z[t]
        for t in TREATMENTS:
            columns[f"zeta({t})"] = self.zeta[t]
        columns["tau"] = self.tau
        return columns

    def to_frame(self):
        frame = pd.DataFrame(self.columns())
        frame.index.name = "draw"
        return frame


@dataclass
class EffectSummary:
    point: float
    ci_low: float
    ci_high: float
    p_value: float

    def as_dict(self):
        return {
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
        }


@dataclass
class EffectEstimates:
    effects: dict
    n_draws: int
    n_sim: int
    ci_level: float
    seed: int = None
    degenerate_total_effect: bool = False
    mediator_names: tuple = ()
    extras: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.effects[name]

    def as_dict(self):
        return {
            "effects": {
                name: summary.as_dict() for name, summary in self.effects.items()
            },
            "n_draws": self.n_draws,
            "n_sim": self.n_sim,
            "ci_level": self.ci_level,
            "seed": self.seed,
            "degenerate_total_effect": self.degenerate_total_effect,
            "mediator_names": list(self.mediator_names),
        }


def simulate_potential_mediators(draw, covariate_rows, rng_stream):
    """
    Z_i(t) = alpha2 + beta2 t + xi2 x_i + u_i with one residual u_i ~ N(0, sigma2)
    per simulated individual, shared by both arms.
    """
    covariate_rows = np.asarray(covariate_rows, dtype=float)
    n_sim = covariate_rows.shape[0]
    factor = draw.residual_factor()

    residuals = rng_stream.standard_normal((n_sim, factor.shape[0])) @ factor.T
    alpha2, beta2, xi2 = draw.mediator_params
    baseline = alpha2 + covariate_rows @ xi2.T + residuals
    return MediatorBlock(z0=baseline, z1=baseline + beta2)


def simulate_potential_outcomes(draw, t, mediator_block, covariate_rows):
    """Model-implied expected outcome of each simulated individual."""
    mediator_block = np.asarray(mediator_block, dtype=float)
    covariate_rows = np.asarray(covariate_rows, dtype=float)
    if mediator_block.shape != (covariate_rows.shape[0], draw.gamma.shape[0]):
        raise ValueError(
            f"Mediator block of shape {mediator_block.shape} does not match "
            f"{covariate_rows.shape[0]} rows and {draw.gamma.shape[0]} mediators"
        )

    alpha3, beta3, gamma, xi3 = draw.outcome_params
    eta = alpha3 + beta3 * t + mediator_block @ gamma + covariate_rows @ xi3
    return get_family(draw.family).mean(eta)


def draw_effects(draw, covariates, n_sim, seed):
    """
    Effects of one parameter draw: returns (delta, eta, delta_z, zeta, tau)
    where delta and eta are (2, K) arrays indexed [t, k] and delta_z, zeta
    have length 2.
    """
    stream = rngs.substream(seed, rngs.SIMULATION, draw.index)
    rows = stream.integers(0, covariates.shape[0], size=n_sim)
    covariate_rows = covariates[rows]
    block = simulate_potential_mediators(draw, covariate_rows, stream)

    def outcome(t, mediators):
        return simulate_potential_outcomes(draw, t, mediators, covariate_rows)

    n_mediators = draw.gamma.shape[0]
    delta = np.empty((2, n_mediators))
    eta = np.empty((2, n_mediators))
    delta_z = np.empty(2)
    zeta = np.empty(2)

    for t in TREATMENTS:
        y_z1 = outcome(t, block.z1)
        y_z0 = outcome(t, block.z0)
        delta_z[t] = np.mean(y_z1 - y_z0)
        zeta[t] = np.mean(outcome(1, block.under(t)) - outcome(0, block.under(t)))

        for k in range(n_mediators):
            delta[t, k] = np.mean(
                outcome(t, block.mixed(k, 1, t)) - outcome(t, block.mixed(k, 0, t))
            )
            # mediator k frozen at its (1 - t) value, the others switched
            frozen_one = block.mixed(k, 1 - t, 1)
            frozen_zero = block.mixed(k, 1 - t, 0)
            eta[t, k] = np.mean(outcome(t, frozen_one) - outcome(t, frozen_zero))

    tau = np.mean(outcome(1, block.z1) - outcome(0, block.z0))
    return delta, eta, delta_z, zeta, tau


def _percentile_interval(values, ci_level):
    tail = (1 - ci_level) / 2
    low, high = np.quantile(values, [tail, 1 - tail], method="linear")
    return float(low), float(high)


def _p_value(values):
    n_draws = values.shape[0]
    extreme = min(np.sum(values <= 0), np.sum(values >= 0))
    return float(min(1.0, max(2 * extreme / n_draws, 2 / n_draws)))


def _summary(values, ci_level):
    low, high = _percentile_interval(values, ci_level)
    return EffectSummary(
        point=float(np.mean(values)),
        ci_low=low,
        ci_high=high,
        p_value=_p_value(values),
    )


def summarize(draws, ci_level=0.95, seed=None, n_sim=None):
    """
    Point estimates (mean over draws), percentile intervals and two-sided
    empirical p-values for every effect, the averages over t and the
    proportions mediated.
    """
    if draws.n_draws < 2:
        raise ValueError(f"At least 2 draws are needed, got {draws.n_draws}")

    effects = {}
    averages = {}
    for k in range(draws.n_mediators):
        for t in TREATMENTS:
            effects[f"delta{k + 1}({t})"] = _summary(draws.delta[t][k], ci_level)
        averages[f"delta{k + 1}"] = (draws.delta[0][k] + draws.delta[1][k]) / 2
    for t in TREATMENTS:
        effects[f"deltaZ({t})"] = _summary(draws.delta_z[t], ci_level)
    for t in TREATMENTS:
        effects[f"zeta({t})"] = _summary(draws.zeta[t], ci_level)
    effects["tau"] = _summary(draws.tau, ci_level)

    averages["deltaZ"] = (draws.delta_z[0] + draws.delta_z[1]) / 2
    averages["zeta"] = (draws.zeta[0] + draws.zeta[1]) / 2
    for name, values in averages.items():
        effects[name] = _summary(values, ci_level)

    tau = draws.tau
    degenerate = not (np.all(tau > 0) or np.all(tau < 0))
    if degenerate:
        message = (
            "Total effect draws cross zero; proportions mediated are reported "
            "as ratios of means without intervals"
        )
        logger.warning(message)
        warnings.warn(message, DegenerateTotalEffect)

    proportions = [(f"PM{k + 1}", f"delta{k + 1}") for k in range(draws.n_mediators)]
    proportions.append(("PMZ", "deltaZ"))
    for name, source in proportions:
        if degenerate:
            mean_tau = float(np.mean(tau))
            point = float(np.mean(averages[source])) / mean_tau if mean_tau else np.nan
            effects[name] = EffectSummary(point, np.nan, np.nan, np.nan)
        else:
            effects[name] = _summary(averages[source] / tau, ci_level)

    return EffectEstimates(
        effects=effects,
        n_draws=draws.n_draws,
        n_sim=n_sim,
        ci_level=ci_level,
        seed=seed,
        degenerate_total_effect=degenerate,
        mediator_names=draws.mediator_names,
    )


def _collect(results, mediator_names):
    delta = np.stack([r[0] for r in results])
    eta = np.stack([r[1] for r in results])
    delta_z = np.stack([r[2] for r in results])
    zeta = np.stack([r[3] for r in results])
    tau = np.array([r[4] for r in results])

    n_mediators = delta.shape[2]
    return DrawEffects(
        delta={t: [delta[:, t, k] for k in range(n_mediators)] for t in TREATMENTS},
        eta={t: [eta[:, t, k] for k in range(n_mediators)] for t in TREATMENTS},
        delta_z={t: delta_z[:, t] for t in TREATMENTS},
        zeta={t: zeta[:, t] for t in TREATMENTS},
        tau=tau,
        mediator_names=tuple(mediator_names),
    )


def estimate_effects(
    data, family="linear", n_draws=1000, n_sim=1000, ci_level=0.95, seed=0, threads=None
):
    """
    Run the full algorithm: fit both models, draw ``n_draws`` parameter sets,
    simulate ``n_sim`` individuals per draw and summarize. Returns the
    EffectEstimates and the raw DrawEffects. Output depends only on
    (data, family, n_draws, n_sim, seed), never on ``threads``.
    """
    if n_draws < 2:
        raise ValueError(f"n_draws must be at least 2, got {n_draws}")
    if n_sim < 1:
        raise ValueError(f"n_sim must be at least 1, got {n_sim}")

    med_fit = fit_mediator_system(data)
    out_fit = fit_outcome(data, family)
    draws = sample_parameters(med_fit, out_fit, n_draws, seed)
    logger.info(
        f"Simulating {n_draws} draws x {n_sim} individuals "
        f"({data.n_mediators} mediators, {family} outcome)"
    )

    def run(draw):
        return draw_effects(draw, data.x, n_sim, seed)

    if threads == 1:
        results = [run(draw) for draw in draws]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = list(executor.map(run, draws))

    draw_set = _collect(results, data.mediator_names)
    estimates = summarize(draw_set, ci_level, seed=seed, n_sim=n_sim)
    estimates.extras["mediator_fit"] = med_fit
    estimates.extras["outcome_fit"] = out_fit
    return estimates, draw_set
