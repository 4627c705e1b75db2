"""Experiment presets: the benchmark scenarios and their trial runners.

Each preset fixes one calibration scenario on the wealth model (evaluation
baseline, single-component calibrations per update rule, or the combined
framework) and is run for a number of independent trials.  Per-trial metric
rows and mean/sd aggregates are written as CSV; trails and reports land in
per-trial subdirectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataio
from .acquisition import SearchStrategy
from .errors import ParameterRangeError
from .framework import FrameworkConfig, run_framework
from .metrics import mape
from .rng import child_seed
from .wealth import (
    ValidationData,
    WealthModelConfig,
    generate_validation,
    mean_summary,
    synthetic_assignment,
    synthetic_schedule,
)

_TAG_VALIDATION, _TAG_TRIAL = 53, 59

TRUE_HET_VALUES = np.array([[0.9], [0.1]])
VALIDATION_REPLICATIONS = 300


@dataclass
class ExperimentPreset:
    name: str
    description: str
    overrides: dict = field(default_factory=dict)
    evaluation_only: bool = False
    default_trials: int = 30


def _always_random_strategy() -> SearchStrategy:
    return SearchStrategy(c0=0, xi_rand=1.0, xi_pv=0.0, xi_pm=0.0)


PRESETS: dict[str, ExperimentPreset] = {
    "synthetic-baseline": ExperimentPreset(
        "synthetic-baseline",
        "evaluate the true synthetic parameters, no calibration",
        evaluation_only=True,
    ),
    "random-search": ExperimentPreset(
        "random-search",
        "all-random baseline: random dynamic rule and random proposals",
        overrides=dict(
            total_iterations=200, dyn_iterations=20, het_iterations=30,
            rule="random", strategy=_always_random_strategy(),
        ),
    ),
    "dynamic-by-time": ExperimentPreset(
        "dynamic-by-time",
        "dynamic calibration only, sampling-by-time rule, true consumption given",
        overrides=dict(
            total_iterations=100, dyn_iterations=1, het_iterations=0,
            rule="by-time", fixed_het=True,
        ),
    ),
    "dynamic-by-regime": ExperimentPreset(
        "dynamic-by-regime",
        "dynamic calibration only, sampling-by-regime rule, true consumption given",
        overrides=dict(
            total_iterations=100, dyn_iterations=1, het_iterations=0,
            rule="by-regime", fixed_het=True,
        ),
    ),
    "dynamic-mode-selection": ExperimentPreset(
        "dynamic-mode-selection",
        "dynamic calibration only, mode-selection rule, true consumption given",
        overrides=dict(
            total_iterations=100, dyn_iterations=1, het_iterations=0,
            rule="mode-selection", fixed_het=True,
        ),
    ),
    "heterogeneous-bo": ExperimentPreset(
        "heterogeneous-bo",
        "surrogate calibration of consumption only, true income schedule given",
        overrides=dict(
            total_iterations=100, dyn_iterations=0, het_iterations=1,
            n_candidates=1, fixed_schedule=True,
        ),
    ),
    "framework-a": ExperimentPreset(
        "framework-a",
        "combined calibration, 2 dynamic / 3 heterogeneous iterations per block",
        overrides=dict(total_iterations=200, dyn_iterations=2, het_iterations=3),
    ),
    "framework-b": ExperimentPreset(
        "framework-b",
        "combined calibration, 20 dynamic / 30 heterogeneous iterations per block",
        overrides=dict(total_iterations=200, dyn_iterations=20, het_iterations=30),
    ),
}

METRIC_COLUMNS = (
    "mape_high_class_wealth_avg",
    "mape_middle_class_wealth_avg",
    "mape_low_class_wealth_avg",
    "mape_gini_index",
    "total_mape",
    "dynamic_parameter_mae",
    "heterogeneous_parameter_euclidean",
)


def get_preset(name: str) -> ExperimentPreset:
    if name not in PRESETS:
        raise ParameterRangeError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]


def make_validation(model: WealthModelConfig, seed: int,
                    replications: int = VALIDATION_REPLICATIONS) -> ValidationData:
    """The shared calibration target: replication-averaged true-parameter run."""
    return generate_validation(
        model, synthetic_schedule(model.horizon), synthetic_assignment(),
        replications, child_seed(seed, _TAG_VALIDATION),
    )


def build_trial_config(preset: ExperimentPreset, base: FrameworkConfig | None,
                       trial_seed: int) -> FrameworkConfig:
    """Framework configuration for one trial of the preset."""
    config = base if base is not None else FrameworkConfig()
    overrides = dict(preset.overrides)
    if overrides.pop("fixed_het", False):
        overrides["initial_het_values"] = TRUE_HET_VALUES
    if overrides.pop("fixed_schedule", False):
        overrides["initial_schedule_values"] = synthetic_schedule(
            config.model.horizon).values
    return replace(config, **overrides, master_seed=trial_seed)


def run_trial(preset: ExperimentPreset, config: FrameworkConfig,
              validation: ValidationData, trial_seed: int,
              out_dir: Path | None = None) -> dict:
    """One independent calibration (or evaluation) trial; returns a metric row."""
    model = config.model
    true_schedule = synthetic_schedule(model.horizon)
    true_het = TRUE_HET_VALUES

    if preset.evaluation_only:
        trace = mean_summary(model, true_schedule, synthetic_assignment(),
                             config.n_replications, trial_seed)
        per_stat, total = mape(trace, validation.stats)
        return _metric_row(per_stat, total, 0.0, 0.0)

    result = run_framework(config, validation, reference_schedule=true_schedule,
                           reference_het_values=true_het)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        dataio.write_report_csv(out_dir / "report.csv", result.report)
        dataio.write_trail_csv(out_dir / "trail.csv", result.state.trail)
        dataio.write_best_params_csv(out_dir / "best_params.csv", result.best, config)
        if result.state.dynamic_records:
            dataio.write_dynamic_records_csv(
                out_dir / "dynamic_records.csv", result.state.dynamic_records)
        if result.state.het_records:
            dataio.write_het_records_csv(
                out_dir / "het_records.csv", result.state.het_records,
                dim=result.state.het_records[0].vector.size)
    return _metric_row(result.report.per_stat_mape, result.report.total_mape,
                       result.report.dynamic_mae, result.report.heterogeneous_euclidean)


def _metric_row(per_stat, total, dyn_mae, het_euc) -> dict:
    row = dict(zip(METRIC_COLUMNS[:4], (float(v) for v in per_stat)))
    row["total_mape"] = float(total)
    row["dynamic_parameter_mae"] = float(dyn_mae) if dyn_mae is not None else np.nan
    row["heterogeneous_parameter_euclidean"] = (
        float(het_euc) if het_euc is not None else np.nan)
    return row


def run_preset(name: str, trials: int, seed: int, out_dir: str | Path | None = None,
               base_config: FrameworkConfig | None = None,
               write_details: bool = True) -> dict:
    """Run `trials` independent trials of a preset and aggregate the metrics."""
    preset = get_preset(name)
    base_model = (base_config or FrameworkConfig()).model
    validation = make_validation(base_model, seed)

    rows = []
    out_path = Path(out_dir) if out_dir is not None else None
    for k in range(trials):
        trial_seed = child_seed(seed, _TAG_TRIAL, k)
        config = build_trial_config(preset, base_config, trial_seed)
        trial_dir = (out_path / name / f"trial_{k:03d}"
                     if (out_path and write_details and not preset.evaluation_only)
                     else None)
        row = run_trial(preset, config, validation, trial_seed, trial_dir)
        row["trial"] = k
        row["seed"] = trial_seed
        rows.append(row)

    aggregate = summarize_rows(rows)
    if out_path is not None:
        write_preset_outputs(out_path, name, rows, aggregate)
    return {"preset": name, "trials": rows, "aggregate": aggregate}


def summarize_rows(rows: list[dict]) -> dict:
    out = {}
    for col in METRIC_COLUMNS:
        values = np.array([r[col] for r in rows], dtype=float)
        out[col] = {"mean": float(np.nanmean(values)), "sd": float(np.nanstd(values))}
    return out


def write_preset_outputs(out_path: Path, name: str, rows, aggregate) -> None:
    out_path.mkdir(parents=True, exist_ok=True)
    header = ["trial", "seed", *METRIC_COLUMNS]
    dataio._write_rows(out_path / f"{name}_trials.csv", header,
                       ([r["trial"], r["seed"], *(r[c] for c in METRIC_COLUMNS)]
                        for r in rows))
    dataio._write_rows(out_path / f"{name}_aggregate.csv",
                       ["metric", "mean", "sd"],
                       ([c, aggregate[c]["mean"], aggregate[c]["sd"]]
                        for c in METRIC_COLUMNS))
