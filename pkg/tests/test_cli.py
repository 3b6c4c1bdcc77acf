import json
import logging
from os.path import dirname, join

import jsonschema
import numpy as np
import pandas as pd
import pytest
from freezegun import freeze_time

from medimux.cli import (
    boxcox,
    build_config,
    build_parser,
    ingest_csv,
    load_schema,
    main,
)
from medimux.exceptions import (
    ConfigError,
    MissingColumn,
    NonBinaryOutcome,
    NonBinaryTreatment,
    NonPositiveValue,
)
from medimux.settings import get_settings

TABLE2 = join(dirname(__file__), "files", "table2.csv")
TABLE2_ROLES = {"treatment": "T", "mediators": ["M", "W"], "outcome": "Y"}

settings = get_settings("medimux.settings.base")


def run(*argv):
    return main([str(arg) for arg in argv])


def read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture(scope="module")
def latent_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "latent.csv"
    status = run(
        "simulate",
        "--preset",
        "latent_confounder",
        "--rows",
        1000,
        "--truth-rows",
        1000,
        "--seed",
        3,
        "--output",
        path,
    )
    assert status == 0
    return path


@pytest.fixture(scope="module")
def latent_report(latent_csv, tmp_path_factory):
    path = tmp_path_factory.mktemp("reports") / "report.json"
    with freeze_time("2026-01-15"):
        status = run(
            "mediate",
            "--input",
            latent_csv,
            "--mediators",
            "M1,M2",
            "--draws",
            200,
            "--sims",
            200,
            "--seed",
            7,
            "--threads",
            1,
            "--output",
            path,
        )
    assert status == 0
    return read_json(path)


def test_boxcox_examples():
    assert boxcox([1.0], 0.5)[0] == pytest.approx(0.0)
    assert boxcox([4.0], 0.5)[0] == pytest.approx(2.0)
    assert boxcox([np.e], 0.0)[0] == pytest.approx(1.0)
    assert boxcox([25.0], -1.19)[0] == pytest.approx(0.8221, abs=1e-3)


def test_boxcox_rejects_non_positive_values():
    with pytest.raises(NonPositiveValue) as excinfo:
        boxcox([1.0, 2.0, 0.0], 0.5)
    assert excinfo.value.row == 2


def test_ingest_table():
    data = ingest_csv(TABLE2, TABLE2_ROLES)
    assert data.n_rows == 4
    assert data.n_mediators == 2
    assert data.mediator_names == ("M", "W")
    assert data.dropped_rows == 0
    assert np.array_equal(data.t, [0, 0, 1, 1])


def test_ingest_rejects_treatment_coded_one_two():
    path = join(dirname(__file__), "files", "table2_treatment_1_2.csv")
    with pytest.raises(NonBinaryTreatment):
        ingest_csv(path, TABLE2_ROLES)


def test_ingest_drops_unparseable_rows(caplog):
    path = join(dirname(__file__), "files", "table2_unparseable.csv")
    with caplog.at_level(logging.WARNING):
        data = ingest_csv(path, TABLE2_ROLES)
    assert data.n_rows == 4
    assert data.dropped_rows == 1
    assert "Dropped 1 of 5 rows" in caplog.text


def test_ingest_missing_column():
    with pytest.raises(MissingColumn):
        ingest_csv(TABLE2, {**TABLE2_ROLES, "covariates": ["age"]})


def test_ingest_binary_family_needs_binary_outcome():
    with pytest.raises(NonBinaryOutcome):
        ingest_csv(TABLE2, TABLE2_ROLES, family="logit")


def test_ingest_applies_boxcox():
    roles = {"treatment": "T", "mediators": ["W"], "outcome": "M"}
    data = ingest_csv(TABLE2, roles)
    transformed = ingest_csv(TABLE2, roles, boxcox_lambdas={"M": 0.0})
    assert np.allclose(transformed.y, np.log(data.y))


def test_ingest_missing_file():
    with pytest.raises(ConfigError):
        ingest_csv("does-not-exist.csv", TABLE2_ROLES)


def test_config_roles_must_be_disjoint():
    argv = ["mediate", "--mediators", "M,Y", "--outcome", "Y"]
    args = build_parser().parse_args(argv)
    with pytest.raises(ConfigError):
        build_config(args, settings)


def test_config_parses_simple_and_boxcox():
    args = build_parser().parse_args(
        ["mediate", "--mediators", "M,W", "--simple", "k=2", "--boxcox", "Y=0.5"]
    )
    config = build_config(args, settings)
    assert config.simple == 2
    assert config.boxcox == {"Y": 0.5}
    assert config.mediators == ["M", "W"]


def test_config_zero_threads_means_all_cores():
    args = build_parser().parse_args(["truth", "--threads", "0"])
    assert build_config(args, settings).threads is None


def test_yaml_config_with_flag_override():
    path = join(dirname(__file__), "files", "mediate.yaml")
    args = build_parser().parse_args(["mediate", "--config", path, "--draws", "30"])
    config = build_config(args, settings)
    assert config.mediators == ["M1", "M2"]
    assert config.n_draws == 30
    assert config.n_sim == 40
    assert config.seed == 11
    assert config.threads == 1


def test_yaml_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("estimation:\n  draws: 10\n", encoding="utf-8")
    args = build_parser().parse_args(["mediate", "--config", str(path)])
    with pytest.raises(ConfigError):
        build_config(args, settings)


def test_simulated_csv_columns(latent_csv):
    frame = pd.read_csv(latent_csv)
    assert list(frame.columns) == ["T", "M1", "M2", "Y"]
    assert len(frame) == 1000
    assert set(frame["T"].unique()) == {0, 1}


def test_latent_report_matches_schema(latent_report):
    jsonschema.validate(latent_report, load_schema("report"))


def test_latent_report_joint_indirect_effect(latent_report):
    assert 40 <= latent_report["effects"]["deltaZ"]["point"] <= 47
    assert latent_report["analysis"] == "multiple"
    assert latent_report["data"]["n_rows"] == 1000
    assert latent_report["provenance"]["generated_at"].startswith("2026-01-15")
    assert latent_report["provenance"]["seed"] == 7


@freeze_time("2026-01-15")
def test_reports_are_byte_identical(latent_csv, tmp_path):
    outputs = []
    for threads in (1, 1, 4):
        path = tmp_path / f"report-{len(outputs)}.json"
        argv = ["mediate", "--input", latent_csv, "--mediators", "M1,M2"]
        argv += ["--draws", 40, "--sims", 30, "--seed", 5, "--threads", threads]
        assert run(*argv, "--output", path) == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]


def test_mediate_writes_to_stdout(latent_csv, capsys):
    argv = ["mediate", "--input", latent_csv, "--mediators", "M1,M2"]
    assert run(*argv, "--draws", 20, "--sims", 20, "--seed", 1) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_draws"] == 20


def test_simple_analysis_report(latent_csv, tmp_path):
    path = tmp_path / "simple.json"
    argv = ["mediate", "--input", latent_csv, "--mediators", "M1,M2", "--simple", "k=1"]
    assert run(*argv, "--draws", 30, "--sims", 30, "--output", path) == 0
    report = read_json(path)
    jsonschema.validate(report, load_schema("report"))
    assert report["analysis"] == "simple"
    assert report["simple_mediator"] == 1
    assert {"delta1", "zeta", "tau", "PM1"} <= set(report["effects"])
    assert "delta2" not in report["effects"]
    assert "deltaZ" not in report["effects"]


def test_draws_csv(latent_csv, tmp_path):
    path = tmp_path / "draws.csv"
    argv = ["mediate", "--input", latent_csv, "--mediators", "M1,M2"]
    argv += ["--draws", 25, "--sims", 10, "--output", tmp_path / "report.json"]
    assert run(*argv, "--draws-csv", path) == 0
    draws = pd.read_csv(path, index_col=0)
    assert len(draws) == 25
    assert "tau" in draws.columns


def test_empty_sample_is_an_error(capsys):
    status = run("simulate", "--preset", "model_1", "--rows", 0, "--truth-rows", 100)
    assert status == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "EmptyAfterFiltering"


def test_missing_column_is_an_error(capsys):
    assert run("mediate", "--input", TABLE2, "--mediators", "M,Q") == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "MissingColumn"


def test_closed_form_model_1(tmp_path):
    path = tmp_path / "closed.json"
    assert run("closed-form", "--preset", "model_1", "--output", path) == 0
    document = read_json(path)
    jsonschema.validate(document, load_schema("closed_form"))
    assert document["effects"]["deltaZ"] == 44
    assert document["effects"]["tau"] == 54


def test_closed_form_from_data(latent_csv, tmp_path):
    path = tmp_path / "closed.json"
    argv = ["closed-form", "--input", latent_csv, "--mediators", "M1,M2"]
    assert run(*argv, "--output", path) == 0
    document = read_json(path)
    jsonschema.validate(document, load_schema("closed_form"))
    assert "input_sha256" in document
    assert 40 <= document["effects"]["deltaZ"] <= 47


def test_truth_command(tmp_path):
    path = tmp_path / "truth.json"
    argv = ["truth", "--preset", "model_1", "--truth-rows", 20_000]
    assert run(*argv, "--output", path) == 0
    document = read_json(path)
    jsonschema.validate(document, load_schema("truth"))
    assert document["effects"]["tau"] == pytest.approx(54, abs=0.3)
    assert document["n_rows"] == 20_000


def test_truth_uses_cache(tmp_path):
    argv = ["truth", "--preset", "model_2", "--truth-rows", 2000]
    argv += ["--cache-dir", tmp_path / "cache"]
    assert run(*argv, "--output", tmp_path / "first.json") == 0
    assert len(list((tmp_path / "cache").iterdir())) == 1
    assert run(*argv, "--output", tmp_path / "second.json") == 0
    assert read_json(tmp_path / "first.json") == read_json(tmp_path / "second.json")


def test_study_command(tmp_path):
    csv_path = tmp_path / "study.csv"
    json_path = tmp_path / "study.json"
    argv = ["study", "--preset", "model_1", "--sample-sizes", 200]
    argv += ["--correlations", 0.4, "--runs", 3, "--draws", 20, "--sims", 20]
    argv += ["--truth-rows", 5000, "--output", csv_path, "--study-json", json_path]
    assert run(*argv) == 0
    frame = pd.read_csv(csv_path)
    assert set(frame["estimator"]) == {"multiple", "simple1", "simple2"}
    assert set(frame["sample_size"]) == {200}
    document = read_json(json_path)
    jsonschema.validate(document, load_schema("study"))
    assert document["model"]["name"] == "model_1"


def test_simulate_then_mediate_model_1(tmp_path):
    sample = tmp_path / "model_1.csv"
    argv = ["simulate", "--preset", "model_1", "--rows", 10_000]
    assert run(*argv, "--truth-rows", 10_000, "--output", sample) == 0
    report_path = tmp_path / "model_1.json"
    argv = ["mediate", "--input", sample, "--mediators", "M1,M2"]
    assert run(*argv, "--draws", 200, "--sims", 200, "--output", report_path) == 0
    summary = read_json(report_path)["effects"]["deltaZ"]
    assert summary["ci_low"] <= 44 <= summary["ci_high"]


def test_out_of_range_correlation_is_an_error(capsys):
    argv = ["simulate", "--preset", "model_1", "--correlation", 1.5]
    assert run(*argv, "--rows", 10, "--truth-rows", 100) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "InvalidModelSpec"
    assert "positive semi-definite" in error["message"]


def test_study_rejects_out_of_range_correlation(tmp_path, capsys):
    argv = ["study", "--preset", "model_1", "--sample-sizes", 200]
    argv += ["--correlations", "0.2,1.5", "--runs", 3, "--draws", 20, "--sims", 20]
    argv += ["--truth-rows", 1000, "--output", tmp_path / "study.csv"]
    assert run(*argv) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "InvalidModelSpec"
    assert not (tmp_path / "study.csv").exists()
