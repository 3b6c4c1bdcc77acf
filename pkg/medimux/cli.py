"""
medimux command line.

    medimux mediate --input data.csv --mediators M,W
    medimux simulate --preset model_1 --correlation 0.4 --rows 1000
    medimux truth --preset model_2 --truth-rows 1000000
    medimux study --preset model_1 --sample-sizes 1000 --correlations 0.7
    medimux closed-form --preset model_1

Values come from the active settings module, then from the YAML file given
with --config, then from flags. Errors are written to standard error as one
JSON object and exit with status 2.
"""
import argparse
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from scipy import special

from medimux import __version__
from medimux import rng as rngs
from medimux.closed_form import ClosedFormInputs, closed_form_effects
from medimux.counterfactual_engine import estimate_effects
from medimux.exceptions import (
    ConfigError,
    EmptyAfterFiltering,
    MedimuxError,
    MissingColumn,
    NonBinaryOutcome,
    NonBinaryTreatment,
    NonPositiveValue,
)
from medimux.families import FAMILIES
from medimux.regression_core import Dataset, fit_mediator_system, fit_outcome
from medimux.settings import get_settings
from medimux.simulation_lab import (
    PRESETS,
    SimulationModelSpec,
    extract_observed,
    latent_confounder,
    load_or_generate,
    monte_carlo_truth,
    preset,
    run_study,
    simple_analysis,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
SCHEMA_DIR = Path(__file__).parent / "schemas"
# spec covariate rows averaged over by closed forms
CLOSED_FORM_COVARIATE_ROWS = 1000

# YAML section -> keys it may hold, each a RunConfig field name
CONFIG_SECTIONS = {
    "data": ("input", "treatment", "mediators", "outcome", "covariates", "boxcox"),
    "estimation": (
        "family",
        "n_draws",
        "n_sim",
        "ci_level",
        "seed",
        "threads",
        "simple",
    ),
    "output": ("output", "draws_csv", "study_json"),
    "simulation": (
        "preset",
        "correlation",
        "latent_observed",
        "spec",
        "rows",
        "truth_rows",
        "cache_dir",
    ),
    "study": ("sample_sizes", "correlations", "runs"),
}


@dataclass
class RunConfig:
    input: str = None
    treatment: str = "T"
    mediators: list = field(default_factory=list)
    outcome: str = "Y"
    covariates: list = field(default_factory=list)
    boxcox: dict = field(default_factory=dict)
    family: str = "linear"
    n_draws: int = 1000
    n_sim: int = 1000
    ci_level: float = 0.95
    seed: int = 0
    threads: int = None
    simple: int = None
    output: str = None
    draws_csv: str = None
    study_json: str = None
    preset: str = "model_1"
    correlation: float = 0.0
    latent_observed: bool = False
    spec: dict = None
    rows: int = 1000
    truth_rows: int = 1_000_000
    cache_dir: str = None
    sample_sizes: list = field(default_factory=list)
    correlations: list = field(default_factory=list)
    runs: int = 200

    def validate(self):
        roles = [self.treatment, *self.mediators, self.outcome, *self.covariates]
        if len(set(roles)) != len(roles):
            raise ConfigError(f"Column roles must be disjoint, got {roles}")
        if self.n_draws < 2:
            raise ConfigError(f"--draws must be at least 2, got {self.n_draws}")
        if self.n_sim < 1:
            raise ConfigError(f"--sims must be at least 1, got {self.n_sim}")
        if self.runs < 2:
            raise ConfigError(f"--runs must be at least 2, got {self.runs}")
        if self.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {self.seed}")
        if not 0.5 < self.ci_level < 1:
            raise ConfigError(f"--ci must lie in (0.5, 1), got {self.ci_level}")
        if self.family not in FAMILIES:
            raise ConfigError(
                f"--family must be one of {sorted(FAMILIES)}, got {self.family!r}"
            )
        if self.spec is None and self.preset not in PRESETS:
            raise ConfigError(
                f"Unknown preset {self.preset!r}; expected one of {sorted(PRESETS)}"
            )
        if self.simple is not None and self.mediators and not (
            1 <= self.simple <= len(self.mediators)
        ):
            raise ConfigError(
                f"--simple must name a mediator in 1..{len(self.mediators)}"
            )
        for column in self.boxcox:
            if column not in (*self.mediators, self.outcome, *self.covariates):
                raise ConfigError(
                    f"--boxcox column {column!r} is not a mediator, outcome "
                    "or covariate"
                )
        return self

    def roles(self):
        return {
            "treatment": self.treatment,
            "mediators": list(self.mediators),
            "outcome": self.outcome,
            "covariates": list(self.covariates),
        }


def _split_list(value, cast=str):
    if value is None:
        return None
    if isinstance(value, str):
        value = [item for item in value.split(",") if item.strip()]
    return [cast(item.strip() if isinstance(item, str) else item) for item in value]


def _parse_boxcox(items):
    lambdas = {}
    for item in items or []:
        column, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--boxcox expects col=lambda, got {item!r}")
        try:
            lambdas[column.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--boxcox lambda {value!r} is not a number") from None
    return lambdas


def _parse_simple(value):
    if value is None:
        return None
    text = str(value)
    if text.startswith("k="):
        text = text[2:]
    try:
        return int(text)
    except ValueError:
        raise ConfigError(
            f"--simple expects a mediator number, got {value!r}"
        ) from None


def load_yaml_config(path):
    """Flatten a sectioned YAML config into RunConfig keyword arguments."""
    try:
        with open(path, encoding="utf-8") as f:
            document = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in {path}: {e}") from None

    values = {}
    for section, entries in document.items():
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"Unknown config section {section!r}")
        for key, value in (entries or {}).items():
            if key not in CONFIG_SECTIONS[section]:
                raise ConfigError(f"Unknown key {key!r} in config section {section!r}")
            values[key] = value
    return values


def settings_defaults(settings):
    return {
        "family": settings["FAMILY"],
        "n_draws": settings["DRAWS"],
        "n_sim": settings["SIMS"],
        "ci_level": settings["CI_LEVEL"],
        "seed": settings["SEED"],
        "threads": settings["THREADS"],
        "truth_rows": settings["TRUTH_ROWS"],
        "runs": settings["STUDY_RUNS"],
        "sample_sizes": list(settings["STUDY_SAMPLE_SIZES"]),
        "correlations": list(settings["STUDY_CORRELATIONS"]),
        "cache_dir": settings["CACHE_DIR"],
    }


def flag_values(args):
    values = {
        "input": args.input,
        "treatment": args.treatment,
        "mediators": _split_list(args.mediators),
        "outcome": args.outcome,
        "covariates": _split_list(args.covariates),
        "family": args.family,
        "n_draws": args.draws,
        "n_sim": args.sims,
        "ci_level": args.ci,
        "seed": args.seed,
        "threads": args.threads,
        "simple": args.simple,
        "output": args.output,
        "draws_csv": args.draws_csv,
        "study_json": args.study_json,
        "preset": args.preset,
        "correlation": args.correlation,
        "latent_observed": args.latent_observed,
        "rows": args.rows,
        "truth_rows": args.truth_rows,
        "cache_dir": args.cache_dir,
        "sample_sizes": _split_list(args.sample_sizes, int),
        "correlations": _split_list(args.correlations, float),
        "runs": args.runs,
    }
    if args.boxcox:
        values["boxcox"] = _parse_boxcox(args.boxcox)
    return {key: value for key, value in values.items() if value is not None}


def build_config(args, settings):
    values = settings_defaults(settings)
    if args.config:
        values.update(load_yaml_config(args.config))
    values.update(flag_values(args))

    for key in ("mediators", "covariates"):
        values[key] = _split_list(values.get(key)) or []
    for key, cast in (("sample_sizes", int), ("correlations", float)):
        values[key] = _split_list(values.get(key), cast) or []
    values["simple"] = _parse_simple(values.get("simple"))
    if isinstance(values.get("boxcox"), list):
        values["boxcox"] = _parse_boxcox(values["boxcox"])
    # 0 threads means machine parallelism
    values["threads"] = values.get("threads") or None

    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"Unknown configuration keys {sorted(unknown)}")
    try:
        return RunConfig(**values).validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def boxcox(values, lmbda):
    """(v^lambda - 1) / lambda, ln(v) at lambda = 0; every value must be > 0."""
    values = np.asarray(values, dtype=float)
    non_positive = np.flatnonzero(~(values > 0))
    if non_positive.size:
        row = int(non_positive[0])
        raise NonPositiveValue(row, float(values[row]))
    return special.boxcox(values, lmbda)


def ingest_csv(path, roles, family="linear", boxcox_lambdas=None):
    """
    Read a header-first UTF-8 CSV into a Dataset. Rows with a missing or
    unparseable value in any declared column are dropped and counted.
    """
    try:
        frame = pd.read_csv(path, encoding="utf-8", dtype=str)
    except FileNotFoundError:
        raise ConfigError(f"Input file {path} does not exist") from None
    except pd.errors.EmptyDataError:
        raise EmptyAfterFiltering(f"Input file {path} has no rows") from None

    frame.columns = [column.strip() for column in frame.columns]
    columns = [
        roles["treatment"],
        *roles["mediators"],
        roles["outcome"],
        *roles.get("covariates", []),
    ]
    for column in columns:
        if column not in frame.columns:
            raise MissingColumn(column)

    values = frame[columns].apply(pd.to_numeric, errors="coerce")
    valid = np.isfinite(values.to_numpy(dtype=float)).all(axis=1)
    dropped = int(np.sum(~valid))
    if dropped:
        logger.warning(
            f"Dropped {dropped} of {len(frame)} rows with missing or unparseable values"
        )
    values = values[valid].reset_index(drop=True)
    if values.empty:
        raise EmptyAfterFiltering(f"No usable rows left in {path}")

    treatment = values[roles["treatment"]]
    if not treatment.isin([0, 1]).all():
        raise NonBinaryTreatment(
            f"Treatment {roles['treatment']!r} must only contain 0 and 1, "
            f"got {sorted(treatment.unique().tolist())}"
        )
    if FAMILIES[family].binary and not values[roles["outcome"]].isin([0, 1]).all():
        raise NonBinaryOutcome(
            f"Outcome {roles['outcome']!r} must only contain 0 and 1 "
            f"for the {family} family"
        )

    for column, lmbda in (boxcox_lambdas or {}).items():
        values[column] = boxcox(values[column].to_numpy(), lmbda)
        logger.info(f"Box-Cox transformed {column} with lambda {lmbda:g}")

    return Dataset(
        t=values[roles["treatment"]].to_numpy(),
        m=values[roles["mediators"]].to_numpy(),
        y=values[roles["outcome"]].to_numpy(),
        x=values[roles.get("covariates", [])].to_numpy(),
        treatment_name=roles["treatment"],
        mediator_names=tuple(roles["mediators"]),
        outcome_name=roles["outcome"],
        covariate_names=tuple(roles.get("covariates", [])),
        dropped_rows=dropped,
    )


def file_digest(path):
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            sha.update(chunk)
    return sha.hexdigest()


def jsonable(value):
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    return value


def write_atomic(path, text):
    """Write next to ``path`` and rename, so ``path`` is either complete or absent."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, partial = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(partial, path)
    except BaseException:
        if os.path.exists(partial):
            os.remove(partial)
        raise


def emit(text, path=None):
    if path:
        write_atomic(path, text)
        logger.info(f"Wrote {path}")
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def dump_json(document):
    return json.dumps(jsonable(document), indent=2, sort_keys=False) + "\n"


def load_schema(name):
    with open(SCHEMA_DIR / f"{name}.schema.json", encoding="utf-8") as f:
        return json.load(f)


def load_data(config):
    if not config.input:
        raise ConfigError("--input is required")
    if not config.mediators:
        raise ConfigError("--mediators is required")
    return ingest_csv(config.input, config.roles(), config.family, config.boxcox)


def build_spec(config):
    if config.spec is not None:
        try:
            return SimulationModelSpec.from_dict(config.spec)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid simulation spec: {e}") from None
    if config.preset == "latent_confounder":
        return latent_confounder(config.latent_observed)
    return preset(config.preset, config.correlation)


def table_seed(config, spec):
    """Seed of the counterfactual population shared by simulate and truth."""
    return rngs.derive_seed(config.seed, "table", spec.digest())


def _fit_block(med_fit, out_fit):
    return {
        "mediators": {
            "alpha2": med_fit.alpha2,
            "beta2": med_fit.beta2,
            "xi2": med_fit.xi2,
            "sigma2": med_fit.sigma2,
            "n_used": med_fit.n_used,
        },
        "outcome": {
            "alpha3": out_fit.alpha3,
            "beta3": out_fit.beta3,
            "gamma": out_fit.gamma,
            "xi3": out_fit.xi3,
            "sigma3": out_fit.sigma3,
            "converged": out_fit.converged,
        },
    }


def cmd_mediate(config):
    data = load_data(config)
    if config.simple is not None:
        estimates = simple_analysis(
            data,
            config.simple,
            family=config.family,
            n_draws=config.n_draws,
            n_sim=config.n_sim,
            seed=config.seed,
            ci_level=config.ci_level,
            threads=config.threads,
        )
        draws = None
    else:
        estimates, draws = estimate_effects(
            data,
            family=config.family,
            n_draws=config.n_draws,
            n_sim=config.n_sim,
            ci_level=config.ci_level,
            seed=config.seed,
            threads=config.threads,
        )

    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "mediation",
        "analysis": "simple" if config.simple is not None else "multiple",
        "simple_mediator": config.simple,
        "family": config.family,
        "data": {
            "n_rows": data.n_rows,
            "dropped_rows": data.dropped_rows,
            "treatment": data.treatment_name,
            "mediators": list(data.mediator_names),
            "outcome": data.outcome_name,
            "covariates": list(data.covariate_names),
            "boxcox": config.boxcox,
        },
        **estimates.as_dict(),
        "fit": _fit_block(
            estimates.extras["mediator_fit"], estimates.extras["outcome_fit"]
        ),
        "provenance": {
            "software": "medimux",
            "version": __version__,
            "seed": config.seed,
            "n_draws": config.n_draws,
            "n_sim": config.n_sim,
            "input_sha256": file_digest(config.input),
            "generated_at": datetime.now(timezone.utc).isoformat(),
        },
    }
    emit(dump_json(report), config.output)

    if config.draws_csv:
        if draws is None:
            logger.warning("Raw draws are only exported for the multiple analysis")
        else:
            write_atomic(config.draws_csv, draws.to_frame().to_csv())
            logger.info(f"Wrote {draws.n_draws} draws to {config.draws_csv}")


def cmd_simulate(config):
    spec = build_spec(config)
    n_rows = max(config.truth_rows, config.rows)
    table = load_or_generate(
        spec, n_rows, table_seed(config, spec), config.cache_dir
    )
    data = extract_observed(table, config.rows, config.seed)

    frame = pd.DataFrame({data.treatment_name: data.t})
    for k, name in enumerate(data.mediator_names):
        frame[name] = data.m[:, k]
    frame[data.outcome_name] = data.y
    for p, name in enumerate(data.covariate_names):
        frame[name] = data.x[:, p]
    emit(frame.to_csv(index=False), config.output)


def cmd_truth(config):
    spec = build_spec(config)
    seed = table_seed(config, spec)
    table = load_or_generate(spec, config.truth_rows, seed, config.cache_dir)
    truth = monte_carlo_truth(table)
    document = {
        "schema_version": SCHEMA_VERSION,
        "kind": "truth",
        **truth.as_dict(),
        "model": spec.as_dict(),
    }
    emit(dump_json(document), config.output)


def cmd_study(config):
    spec = build_spec(config)
    result = run_study(
        spec,
        config.sample_sizes,
        config.correlations or [config.correlation],
        runs_per_cell=config.runs,
        n_draws=config.n_draws,
        n_sim=config.n_sim,
        master_seed=config.seed,
        truth_rows=config.truth_rows,
        ci_level=config.ci_level,
        threads=config.threads,
        cache_dir=config.cache_dir,
    )
    emit(result.to_frame().to_csv(index=False), config.output)
    if config.study_json:
        document = {
            "schema_version": SCHEMA_VERSION,
            "kind": "study",
            "model": spec.as_dict(),
            "master_seed": config.seed,
            **result.as_dict(),
        }
        write_atomic(config.study_json, dump_json(document))


def cmd_closed_form(config):
    if config.input:
        data = load_data(config)
        inputs = ClosedFormInputs.from_fits(
            fit_mediator_system(data), fit_outcome(data, config.family), data.x
        )
        source = {"input_sha256": file_digest(config.input)}
    else:
        spec = build_spec(config)
        covariate_rows = None
        if spec.covariates:
            stream = rngs.substream(config.seed, rngs.COVARIATES)
            covariate_rows = np.column_stack(
                [c.sample(stream, CLOSED_FORM_COVARIATE_ROWS) for c in spec.covariates]
            )
        inputs = ClosedFormInputs.from_spec(spec, covariate_rows)
        source = {"model": spec.as_dict()}

    document = {
        "schema_version": SCHEMA_VERSION,
        "kind": "closed_form",
        "family": inputs.family,
        "effects": closed_form_effects(inputs),
        **source,
    }
    emit(dump_json(document), config.output)


COMMANDS = {
    "mediate": cmd_mediate,
    "simulate": cmd_simulate,
    "truth": cmd_truth,
    "study": cmd_study,
    "closed-form": cmd_closed_form,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--settings", help="Settings module, e.g. medimux.settings.smoke"
    )
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--input", help="Observed data CSV")
    common.add_argument("--output", help="Output file (default: standard output)")
    common.add_argument("--treatment")
    common.add_argument("--mediators", help="Comma separated mediator columns")
    common.add_argument("--outcome")
    common.add_argument("--covariates", help="Comma separated covariate columns")
    common.add_argument("--family", choices=sorted(FAMILIES))
    common.add_argument("--draws", type=int, help="Parameter draws R")
    common.add_argument("--sims", type=int, help="Simulated individuals I per draw")
    common.add_argument("--ci", type=float, help="Interval level, e.g. 0.95")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="Worker threads, 0 for all cores")
    common.add_argument("--simple", help="Single-mediator analysis of mediator k")
    common.add_argument(
        "--boxcox", action="append", metavar="COL=LAMBDA", help="Repeatable"
    )
    common.add_argument("--draws-csv", help="Write the raw per-draw effects here")
    common.add_argument("--preset", help=f"One of {', '.join(sorted(PRESETS))}")
    common.add_argument("--correlation", type=float)
    common.add_argument(
        "--latent-observed", action="store_const", const=True, default=None
    )
    common.add_argument("--rows", type=int, help="Observed sample size")
    common.add_argument("--truth-rows", type=int)
    common.add_argument("--cache-dir")
    common.add_argument("--sample-sizes", help="Comma separated, e.g. 50,200,1000")
    common.add_argument("--correlations", help="Comma separated, e.g. 0,0.4,0.7")
    common.add_argument("--runs", type=int, help="Runs per study cell")
    common.add_argument("--study-json", help="Also write the study as JSON here")

    parser = argparse.ArgumentParser(
        prog="medimux", description="Causal mediation analysis with several mediators"
    )
    parser.add_argument("--version", action="version", version=__version__)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        subparsers.add_parser(name, parents=[common])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings(args.settings)
        logging.basicConfig(
            level=settings["LOG_LEVEL"],
            format=settings["LOG_FORMAT"],
            stream=sys.stderr,
        )
        config = build_config(args, settings)
        COMMANDS[args.command](config)
    except (MedimuxError, ModuleNotFoundError) as e:
        logger.debug("Command failed", exc_info=True)
        error = {"error": type(e).__name__, "message": str(e)}
        sys.stderr.write(json.dumps(error) + "\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
