"""
Repeated-run simulation studies comparing the multiple-mediator analysis
with one single-mediator ("simple") analysis per mediator.
"""
import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from medimux import rng as rngs
from medimux.counterfactual_engine import EffectEstimates, estimate_effects
from medimux.exceptions import MedimuxError
from medimux.simulation_lab.cache import load_or_generate
from medimux.simulation_lab.table import extract_observed, monte_carlo_truth

logger = logging.getLogger(__name__)

MULTIPLE = "multiple"
METRICS = ("truth", "mean_estimate", "bias", "coverage", "variance", "mse")


def simple_estimator(k):
    return f"simple{k}"


def simple_analysis(
    data,
    mediator_index,
    family="linear",
    n_draws=1000,
    n_sim=1000,
    seed=0,
    ci_level=0.95,
    threads=None,
):
    """
    Single-mediator analysis through mediator ``mediator_index`` (1-based):
    every other mediator is dropped from both models. Effects are reported
    under the mediator's own number, e.g. delta2 and PM2 for k = 2.
    """
    if not 1 <= mediator_index <= data.n_mediators:
        raise ValueError(
            f"Mediator index must lie in 1..{data.n_mediators}, got {mediator_index}"
        )

    reduced = data.select_mediators([mediator_index - 1])
    estimates, _ = estimate_effects(
        reduced,
        family=family,
        n_draws=n_draws,
        n_sim=n_sim,
        ci_level=ci_level,
        seed=seed,
        threads=threads,
    )

    effects = {}
    for name, summary in estimates.effects.items():
        if name.startswith("delta1"):
            effects[f"delta{mediator_index}" + name[len("delta1") :]] = summary
        elif name == "PM1":
            effects[f"PM{mediator_index}"] = summary
        elif name.startswith("zeta") or name == "tau":
            effects[name] = summary

    return EffectEstimates(
        effects=effects,
        n_draws=estimates.n_draws,
        n_sim=estimates.n_sim,
        ci_level=estimates.ci_level,
        seed=estimates.seed,
        degenerate_total_effect=estimates.degenerate_total_effect,
        mediator_names=reduced.mediator_names,
        extras=estimates.extras,
    )


@dataclass
class StudyMetrics:
    estimator: str
    effect: str
    sample_size: int
    correlation: float
    truth: float
    mean_estimate: float
    bias: float
    coverage: float
    variance: float
    mse: float
    runs: int
    failures: int

    @classmethod
    def from_runs(cls, estimator, effect, sample_size, correlation, truth, runs):
        """
        Aggregate (estimate, covered) pairs. Bias is truth minus the mean
        estimate; variance uses ddof=0 so mse = bias^2 + variance.
        """
        n_runs = len(runs)
        if n_runs:
            estimates = np.array([estimate for estimate, _ in runs])
            hits = np.array([covered for _, covered in runs], dtype=float)
            mean_estimate = float(np.mean(estimates))
            coverage = float(np.mean(hits))
            variance = float(np.var(estimates))
            mse = float(np.mean((estimates - truth) ** 2))
        else:
            mean_estimate = coverage = variance = mse = np.nan
        return cls(
            estimator=estimator,
            effect=effect,
            sample_size=sample_size,
            correlation=correlation,
            truth=truth,
            mean_estimate=mean_estimate,
            bias=truth - mean_estimate,
            coverage=coverage,
            variance=variance,
            mse=mse,
            runs=n_runs,
            failures=0,
        )


@dataclass
class StudyResult:
    metrics: list
    truths: list

    def lookup(self, estimator, effect, sample_size=None, correlation=None):
        for metric in self.metrics:
            if (
                metric.estimator == estimator
                and metric.effect == effect
                and sample_size in (None, metric.sample_size)
                and correlation in (None, metric.correlation)
            ):
                return metric
        raise KeyError((estimator, effect, sample_size, correlation))

    def to_frame(self):
        """Long format: estimator, effect, metric, sample_size, correlation, value."""
        records = [
            {
                "estimator": metric.estimator,
                "effect": metric.effect,
                "metric": name,
                "sample_size": metric.sample_size,
                "correlation": metric.correlation,
                "value": getattr(metric, name),
                "runs": metric.runs,
                "failures": metric.failures,
            }
            for metric in self.metrics
            for name in METRICS
        ]
        return pd.DataFrame.from_records(
            records,
            columns=[
                "estimator",
                "effect",
                "metric",
                "sample_size",
                "correlation",
                "value",
                "runs",
                "failures",
            ],
        )

    def as_dict(self):
        return {
            "metrics": [asdict(metric) for metric in self.metrics],
            "truths": self.truths,
        }


def _tracked_effects(n_mediators):
    multiple = [f"delta{k + 1}" for k in range(n_mediators)]
    multiple += ["deltaZ", "zeta", "tau"]
    simple = {k: [f"delta{k}", "zeta", "tau"] for k in range(1, n_mediators + 1)}
    return multiple, simple


def _record(runs, estimates, effects, truth):
    for effect in effects:
        summary = estimates[effect]
        covered = summary.ci_low <= truth[effect] <= summary.ci_high
        runs.setdefault(effect, []).append((summary.point, covered))


def run_study(
    spec,
    sample_sizes,
    correlations,
    runs_per_cell=200,
    n_draws=1000,
    n_sim=1000,
    master_seed=0,
    truth_rows=1_000_000,
    ci_level=0.95,
    threads=None,
    cache_dir=None,
):
    """
    Bias, coverage, variance and MSE of the multiple and simple analyses over
    every (sample size, correlation) cell. Run r of a cell uses the seed
    derive_seed(master_seed, "run", n, correlation, r); failed runs are
    counted, not fatal.
    """
    if runs_per_cell < 2:
        raise ValueError(f"runs_per_cell must be at least 2, got {runs_per_cell}")

    multiple_effects, simple_effects = _tracked_effects(spec.n_mediators)
    metrics = []
    truths = []
    cell_specs = [spec.with_correlation(correlation) for correlation in correlations]
    for correlation, cell_spec in zip(correlations, cell_specs):
        table_seed = rngs.derive_seed(master_seed, "truth", cell_spec.digest())
        table = load_or_generate(cell_spec, truth_rows, table_seed, cache_dir)
        truth = monte_carlo_truth(table)
        truths.append(
            {"correlation": correlation, "effects": truth.effects, "seed": table_seed}
        )

        for sample_size in sample_sizes:
            logger.info(
                f"Study cell n={sample_size}, correlation={correlation}: "
                f"{runs_per_cell} runs"
            )
            runs = {MULTIPLE: {}}
            runs.update({simple_estimator(k): {} for k in simple_effects})
            failures = dict.fromkeys(runs, 0)

            for run in range(runs_per_cell):
                run_seed = rngs.derive_seed(
                    master_seed, "run", sample_size, correlation, run
                )
                try:
                    data = extract_observed(table, sample_size, run_seed)
                except MedimuxError as e:
                    logger.warning(f"Run {run} could not extract data: {e}")
                    for estimator in failures:
                        failures[estimator] += 1
                    continue

                analyses = [(MULTIPLE, None, multiple_effects)]
                analyses += [
                    (simple_estimator(k), k, effects)
                    for k, effects in simple_effects.items()
                ]
                for estimator, k, effects in analyses:
                    try:
                        if k is None:
                            estimates, _ = estimate_effects(
                                data,
                                family=cell_spec.family,
                                n_draws=n_draws,
                                n_sim=n_sim,
                                ci_level=ci_level,
                                seed=run_seed,
                                threads=threads,
                            )
                        else:
                            estimates = simple_analysis(
                                data,
                                k,
                                family=cell_spec.family,
                                n_draws=n_draws,
                                n_sim=n_sim,
                                seed=run_seed,
                                ci_level=ci_level,
                                threads=threads,
                            )
                    except MedimuxError as e:
                        logger.warning(f"Run {run} failed for {estimator}: {e}")
                        failures[estimator] += 1
                        continue
                    _record(runs[estimator], estimates, effects, truth)

            for estimator, effects in [(MULTIPLE, multiple_effects)] + [
                (simple_estimator(k), effects) for k, effects in simple_effects.items()
            ]:
                for effect in effects:
                    metric = StudyMetrics.from_runs(
                        estimator,
                        effect,
                        sample_size,
                        correlation,
                        truth[effect],
                        runs[estimator].get(effect, []),
                    )
                    metric.failures = failures[estimator]
                    metrics.append(metric)

    return StudyResult(metrics=metrics, truths=truths)
