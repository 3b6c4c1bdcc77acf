import numpy as np
import pytest

from medimux.closed_form import binary_effects, lsem_effects
from medimux.exceptions import (
    ConfigError,
    EmptyAfterFiltering,
    InvalidModelSpec,
    SampleTooLarge,
)
from medimux.regression_core import fit_mediator_system
from medimux.settings import get_settings
from medimux.simulation_lab import (
    CovariateSpec,
    SimulationModelSpec,
    extract_observed,
    generate_counterfactual_table,
    latent_confounder,
    load_or_generate,
    model_1,
    model_2,
    monte_carlo_truth,
    preset,
    run_study,
    simple_analysis,
)
from medimux.simulation_lab.cache import MAGIC, cache_path, read_table, write_table

smoke = get_settings("medimux.settings.smoke")

model_1_table = generate_counterfactual_table(model_1(), 1_000_000, seed=1)
model_1_truth = monte_carlo_truth(model_1_table)

latent_table = generate_counterfactual_table(latent_confounder(), 200_000, seed=2)
latent_data = extract_observed(latent_table, 1000, seed=3)

observed_latent_table = generate_counterfactual_table(
    latent_confounder(observed=True), 200_000, seed=2
)
observed_latent_data = extract_observed(observed_latent_table, 1000, seed=3)

small_table = generate_counterfactual_table(model_2(0.4), 1000, seed=4)


def test_presets():
    spec = model_1(0.4)
    assert spec.family == "linear"
    assert spec.mediator_cov[0, 1] == 0.4
    assert model_2().family == "logit"
    assert latent_confounder().has_latent
    with pytest.raises(InvalidModelSpec):
        preset("model_3")


@pytest.mark.parametrize(
    "overrides",
    [
        {"p_treatment": 1.0},
        {"family": "probit"},
        {"mediator_cov": [[1.0, 2.0], [2.0, 1.0]]},
        {"outcome_mediators": (1.0, 2.0, 3.0)},
    ],
)
def test_spec_validation(overrides):
    with pytest.raises(InvalidModelSpec):
        preset("model_1", **overrides)


def test_with_correlation_validates():
    with pytest.raises(ConfigError):
        model_1().with_correlation(-1.2)


def test_with_correlation_changes_digest():
    spec = model_1(0.0)
    moved = spec.with_correlation(0.7)
    assert moved.mediator_cov[1, 0] == pytest.approx(0.7)
    assert np.allclose(np.diag(moved.mediator_cov), 1)
    assert moved.digest() != spec.digest()
    assert model_1(0.7).digest() == moved.digest()


def test_spec_from_dict_round_trip():
    spec = SimulationModelSpec.from_dict(model_2(0.4).as_dict())
    assert spec.digest() == model_2(0.4).digest()


def test_shift_between_arms_is_constant_per_row():
    shift = model_1_table.m1 - model_1_table.m0
    assert np.allclose(shift, [4.0, 6.0])


def test_treatment_share():
    assert np.mean(model_1_table.t) == pytest.approx(0.3, abs=0.005)


def test_outcome_accessor_is_consistent():
    first = small_table.outcome(1, [0, 1])
    second = small_table.outcome(1, [0, 1])
    assert np.array_equal(first, second)
    assert set(np.unique(first)) <= {0.0, 1.0}


def test_zero_noise_model_has_constant_total_effect():
    spec = preset("model_1", mediator_cov=np.zeros((2, 2)), outcome_sd=0.0)
    table = generate_counterfactual_table(spec, 100, seed=5)
    tau = table.outcome(1) - table.outcome(0)
    assert np.allclose(tau, 54)


def test_latent_mediator_correlation():
    spec = latent_confounder()
    cov = spec.conditional_mediator_cov()
    assert cov[0, 1] / np.sqrt(cov[0, 0] * cov[1, 1]) == pytest.approx(
        6 / np.sqrt(50)
    )
    untreated = latent_table.t == 0
    m0 = latent_table.m0[untreated]
    assert np.corrcoef(m0.T)[0, 1] == pytest.approx(6 / np.sqrt(50), abs=0.01)


def test_model_1_truth():
    expected = {"deltaZ": 44, "delta1": 20, "delta2": 24, "zeta": 10, "tau": 54}
    for name, value in expected.items():
        assert model_1_truth[name] == pytest.approx(value, abs=0.3)


def test_truth_matches_lsem():
    closed = lsem_effects(model_1().closed_form_inputs())
    for name in ("delta1(0)", "delta2(1)", "deltaZ(0)", "zeta(1)", "tau"):
        error = model_1_truth.standard_errors[name]
        assert abs(model_1_truth[name] - closed[name]) <= 4 * error + 1e-9


def test_truth_total_effect_identity():
    effects = model_1_truth.effects
    assert abs(effects["tau"] - effects["deltaZ(1)"] - effects["zeta(0)"]) < 1e-10
    assert abs(effects["tau"] - effects["deltaZ(0)"] - effects["zeta(1)"]) < 1e-10


@pytest.mark.parametrize("table", [model_1_table, small_table, latent_table])
def test_truth_joint_indirect_identity(table):
    effects = monte_carlo_truth(table).effects
    for t in (0, 1):
        average = np.mean(
            [
                effects[f"delta{k + 1}({t})"] + effects[f"eta{k + 1}({t})"]
                for k in range(table.n_mediators)
            ]
        )
        assert abs(effects[f"deltaZ({t})"] - average) < 1e-10


def test_truth_proportions_mediated():
    assert model_1_truth["PM1"] == pytest.approx(20 / 54, abs=0.01)
    assert model_1_truth["PMZ"] == pytest.approx(44 / 54, abs=0.01)


def test_truth_document():
    document = model_1_truth.as_dict()
    assert document["n_rows"] == 1_000_000
    assert document["spec"] == "model_1"
    assert document["spec_digest"] == model_1().digest()


@pytest.mark.parametrize("correlation", [0.0, 0.4, 0.7])
def test_binary_truth_matches_closed_form(correlation):
    spec = model_2(correlation)
    truth = monte_carlo_truth(generate_counterfactual_table(spec, 1_000_000, seed=6))
    inputs = spec.closed_form_inputs()
    for t in (0, 1):
        closed = binary_effects(inputs, t)
        for name in (f"delta1({t})", f"delta2({t})", f"deltaZ({t})", f"zeta({t})"):
            error = truth.standard_errors[name]
            assert abs(truth[name] - closed[name]) <= 4 * error + 1e-8


def test_model_2_case_share():
    assert 0.15 < np.mean(small_table.observed_outcome()) < 0.4


def test_extract_keeps_observed_arm():
    data = extract_observed(model_1_table, 1000, seed=7)
    assert data.n_rows == 1000
    assert data.mediator_names == ("M1", "M2")
    assert data.n_covariates == 0


def test_full_extraction_reproduces_arms():
    data = extract_observed(small_table, small_table.n_rows, seed=8)
    untreated = small_table.t == 0
    assert np.array_equal(data.m[untreated], small_table.m0[untreated])
    assert np.array_equal(data.m[~untreated], small_table.m1[~untreated])
    for t, rows in ((0, untreated), (1, ~untreated)):
        assert np.mean(data.y[data.t == t]) == np.mean(small_table.outcome(t)[rows])


def test_extraction_seeds_change_rows_not_schema():
    first = extract_observed(model_1_table, 200, seed=1)
    second = extract_observed(model_1_table, 200, seed=2)
    assert not np.array_equal(first.y, second.y)
    assert first.mediator_names == second.mediator_names
    assert first.covariate_names == second.covariate_names


def test_extraction_size_limits():
    with pytest.raises(EmptyAfterFiltering):
        extract_observed(small_table, 0, seed=1)
    with pytest.raises(SampleTooLarge):
        extract_observed(small_table, 1001, seed=1)


def test_latent_variable_only_exported_when_observed():
    assert latent_data.covariate_names == ()
    assert observed_latent_data.covariate_names == ("U",)


def test_extraction_recovers_coefficients():
    spec = model_1(0.6)
    table = generate_counterfactual_table(spec, 100_000, seed=9)
    fit = fit_mediator_system(extract_observed(table, 100_000, seed=10))
    se = np.sqrt(np.diag(fit.coef_cov)).reshape(2, -1)
    assert np.all(np.abs(fit.alpha2 - spec.mediator_intercepts) < 4 * se[:, 0])
    assert np.all(np.abs(fit.beta2 - spec.mediator_slopes) < 4 * se[:, 1])


def test_simulated_covariates():
    spec = preset(
        "model_1",
        covariates=[
            CovariateSpec("age", mediator_loadings=(0.5, 0.2), outcome_loading=1.0),
            {"name": "sex", "kind": "bernoulli", "probability": 0.4},
        ],
    )
    table = generate_counterfactual_table(spec, 20_000, seed=11)
    data = extract_observed(table, 5000, seed=12)
    assert data.covariate_names == ("age", "sex")
    assert set(np.unique(data.x[:, 1])) == {0.0, 1.0}
    fit = fit_mediator_system(data)
    assert fit.xi2[0, 0] == pytest.approx(0.5, abs=0.1)


def test_simple_analysis_renames_effects():
    estimates = simple_analysis(latent_data, 2, n_draws=50, n_sim=50, seed=1)
    assert set(estimates.effects) == {
        "delta2(0)",
        "delta2(1)",
        "delta2",
        "zeta(0)",
        "zeta(1)",
        "zeta",
        "tau",
        "PM2",
    }
    assert estimates.mediator_names == ("M2",)


def test_simple_analysis_rejects_bad_index():
    with pytest.raises(ValueError):
        simple_analysis(latent_data, 3, n_draws=10, n_sim=10)


def test_simple_analysis_is_biased_without_common_cause():
    estimates = simple_analysis(latent_data, 1, n_draws=1000, n_sim=1000, seed=13)
    # reference values 38.45 and 14.75
    assert estimates["delta1"].point > 30
    assert estimates["zeta"].point > 12


def test_simple_analysis_adjusting_for_common_cause():
    estimates = simple_analysis(
        observed_latent_data, 1, n_draws=1000, n_sim=1000, seed=13
    )
    assert estimates["delta1"].point == pytest.approx(20, abs=2.5)


def test_cache_round_trip(tmp_path):
    path = tmp_path / "table.mdxt"
    write_table(path, small_table)
    with open(path, "rb") as f:
        assert f.read(len(MAGIC)) == MAGIC
    loaded = read_table(path, small_table.spec)
    assert np.array_equal(loaded.m0, small_table.m0)
    assert np.array_equal(loaded.noise, small_table.noise)
    assert loaded.u is None
    assert loaded.seed == small_table.seed


def test_cache_rejects_other_spec(tmp_path):
    path = tmp_path / "table.mdxt"
    write_table(path, small_table)
    with pytest.raises(ConfigError):
        read_table(path, model_2(0.7))


def test_cache_rejects_foreign_file(tmp_path):
    path = tmp_path / "table.mdxt"
    path.write_bytes(b"not a table")
    with pytest.raises(ConfigError):
        read_table(path, small_table.spec)


def test_load_or_generate_uses_cache(tmp_path):
    spec = latent_confounder()
    first = load_or_generate(spec, 500, 21, cache_dir=tmp_path)
    assert cache_path(tmp_path, spec, 500, 21).exists()
    second = load_or_generate(spec, 500, 21, cache_dir=tmp_path)
    assert np.array_equal(first.u, second.u)
    assert np.array_equal(first.m1, second.m1)


def test_study_needs_two_runs():
    with pytest.raises(ValueError):
        run_study(model_1(), [100], [0.0], runs_per_cell=1)


def test_study_frame_layout():
    result = run_study(
        model_1(),
        [200],
        [0.2],
        runs_per_cell=3,
        n_draws=20,
        n_sim=20,
        master_seed=4,
        truth_rows=5000,
        threads=1,
    )
    frame = result.to_frame()
    assert list(frame.columns) == [
        "estimator",
        "effect",
        "metric",
        "sample_size",
        "correlation",
        "value",
        "runs",
        "failures",
    ]
    assert set(frame["estimator"]) == {"multiple", "simple1", "simple2"}
    assert set(frame["metric"]) == {
        "truth",
        "mean_estimate",
        "bias",
        "coverage",
        "variance",
        "mse",
    }
    assert (frame["runs"] == 3).all()
    assert (frame["failures"] == 0).all()
    for metric in result.metrics:
        assert metric.mse >= metric.variance - 1e-12
        assert 0 <= metric.coverage <= 1


def test_study_counts_failed_runs():
    result = run_study(
        model_1(),
        [6000],
        [0.0],
        runs_per_cell=2,
        n_draws=10,
        n_sim=10,
        truth_rows=5000,
    )
    metric = result.lookup("multiple", "delta1")
    assert metric.failures == 2
    assert metric.runs == 0


smoke_study = run_study(
    model_1(),
    smoke["STUDY_SAMPLE_SIZES"],
    smoke["STUDY_CORRELATIONS"],
    runs_per_cell=smoke["STUDY_RUNS"],
    n_draws=smoke["DRAWS"],
    n_sim=smoke["SIMS"],
    master_seed=smoke["SEED"],
    truth_rows=smoke["TRUTH_ROWS"],
)


@pytest.mark.parametrize("effect", ["delta1", "delta2", "zeta"])
def test_smoke_study_multiple_coverage(effect):
    metric = smoke_study.lookup("multiple", effect, 1000, 0.7)
    assert 0.86 <= metric.coverage <= 1.0
    assert abs(metric.bias) < 0.5


def test_smoke_study_simple_coverage_collapses_with_correlation():
    assert smoke_study.lookup("simple1", "delta1", 1000, 0.7).coverage < 0.5


@pytest.mark.parametrize(
    "estimator,effect", [("simple1", "delta1"), ("simple2", "delta2")]
)
def test_smoke_study_simple_coverage_without_correlation(estimator, effect):
    metric = smoke_study.lookup(estimator, effect, 1000, 0.0)
    assert 0.86 <= metric.coverage <= 1.0


@pytest.mark.parametrize("k,other", [(1, 24), (2, 20)])
def test_smoke_study_bias_sum(k, other):
    estimator = f"simple{k}"
    bias_zeta = smoke_study.lookup(estimator, "zeta", 1000, 0.7).bias
    bias_delta = smoke_study.lookup(estimator, f"delta{k}", 1000, 0.7).bias
    assert bias_zeta + bias_delta == pytest.approx(-other, abs=1.5)


@pytest.mark.slow
def test_linear_study_at_full_size():
    result = run_study(
        model_1(),
        [1000],
        [0.7],
        runs_per_cell=200,
        n_draws=1000,
        n_sim=1000,
        master_seed=20190101,
    )
    for effect in ("delta1", "delta2", "zeta"):
        metric = result.lookup("multiple", effect)
        assert 0.91 <= metric.coverage <= 0.98
        assert abs(metric.bias) < 0.5
    assert result.lookup("simple1", "delta1").coverage < 0.5
    for k, other in ((1, 24), (2, 20)):
        bias_sum = (
            result.lookup(f"simple{k}", "zeta").bias
            + result.lookup(f"simple{k}", f"delta{k}").bias
        )
        assert bias_sum == pytest.approx(-other, abs=1.5)


@pytest.mark.slow
def test_logistic_study_at_full_size():
    result = run_study(
        model_2(),
        [1000],
        [0.0, 0.4, 0.7],
        runs_per_cell=200,
        n_draws=1000,
        n_sim=1000,
        master_seed=20190101,
    )
    for correlation in (0.0, 0.4, 0.7):
        for effect in ("delta1", "delta2", "zeta"):
            metric = result.lookup("multiple", effect, 1000, correlation)
            assert abs(metric.bias) < 0.2 * abs(metric.truth)
