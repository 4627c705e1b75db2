"""Command-line interface: validation synthesis, calibration runs, presets,
and significance reports.

Every command is deterministic given ``--seed``: re-running writes
byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .errors import CalibrationError
from .framework import FrameworkConfig, run_framework
from .metrics import welch_one_tailed
from .presets import PRESETS, get_preset, make_validation, run_preset
from .regimes import GENERATION_RULES
from .wealth import generate_validation, synthetic_assignment, synthetic_schedule


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON run configuration (see README for the schema)")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", type=Path, default=Path("runs"),
                        help="output directory")


def _load_config(args) -> FrameworkConfig:
    if args.config is not None:
        return dataio.load_config(args.config)
    return FrameworkConfig()


def cmd_generate_validation(args) -> int:
    config = _load_config(args)
    validation = generate_validation(
        config.model,
        synthetic_schedule(config.model.horizon),
        synthetic_assignment(),
        replications=args.replications,
        master_seed=args.seed,
    )
    out_file = args.out / "validation.csv"
    dataio.write_validation(out_file, validation)
    print(f"wrote {out_file} ({validation.stats.shape[0]}x{validation.stats.shape[1]}, "
          f"{args.replications} replications)")
    return 0


def cmd_calibrate(args) -> int:
    config = _load_config(args)
    config.master_seed = args.seed
    if args.rule is not None:
        config.rule = args.rule
    validation = dataio.read_validation(args.validation)
    reference = synthetic_schedule(config.model.horizon) if args.synthetic_reference else None
    reference_het = np.array([[0.9], [0.1]]) if args.synthetic_reference else None

    result = run_framework(
        config, validation, reference_schedule=reference,
        reference_het_values=reference_het,
        snapshot_path=args.out / "abort_snapshot.json",
    )
    args.out.mkdir(parents=True, exist_ok=True)
    dataio.write_report_csv(args.out / "report.csv", result.report)
    dataio.write_trail_csv(args.out / "trail.csv", result.state.trail)
    dataio.write_best_params_csv(args.out / "best_params.csv", result.best, config)
    if result.state.dynamic_records:
        dataio.write_dynamic_records_csv(args.out / "dynamic_records.csv",
                                         result.state.dynamic_records)
    if result.state.het_records:
        dataio.write_het_records_csv(args.out / "het_records.csv",
                                     result.state.het_records,
                                     dim=result.state.het_records[0].vector.size)
    artifacts = result.state.clustering_artifacts
    if artifacts is not None:
        dataio.write_codes_csv(args.out / "agent_codes.csv", artifacts.codes)
        dataio.write_assignment_csv(args.out / "agent_clusters.csv",
                                    artifacts.assignment.cluster_of_agent)
        dataio.write_vae_weights_csv(args.out / "autoencoder_weights.csv",
                                     artifacts.autoencoder.params_)
    print(f"best total MAPE {result.report.total_mape:.6f} "
          f"(iteration {result.report.best_iteration}, {result.report.best_phase})")
    return 0


def cmd_run_preset(args) -> int:
    preset = get_preset(args.name)
    trials = args.trials if args.trials is not None else preset.default_trials
    base = _load_config(args)
    out = run_preset(args.name, trials=trials, seed=args.seed,
                     out_dir=args.out, base_config=base,
                     write_details=not args.no_details)
    agg = out["aggregate"]
    print(f"{args.name}: {trials} trials")
    for metric, stats in agg.items():
        print(f"  {metric}: {stats['mean']:.4f} (+-{stats['sd']:.4f})")
    return 0


def _best_so_far_series(trail_rows) -> np.ndarray:
    iters = [r["iter"] for r in trail_rows]
    horizon = max(iters) + 1
    series = np.full(horizon, np.inf)
    best = np.inf
    for row in trail_rows:
        best = min(best, row["total_mape"])
        series[row["iter"]] = best
    # iterations can be skipped in mixed schedules; forward-fill
    for c in range(1, horizon):
        series[c] = min(series[c], series[c - 1]) if np.isfinite(series[c]) else series[c - 1]
    return series


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    trial_files = sorted(run_dir.glob("*_trials.csv"))
    if not trial_files:
        raise CalibrationError(f"{run_dir}: no *_trials.csv preset outputs found")

    samples: dict[str, np.ndarray] = {}
    for path in trial_files:
        name = path.name[: -len("_trials.csv")]
        rows = dataio.read_records_csv(path)
        samples[name] = np.array([float(r["total_mape"]) for r in rows])

    baseline_name = next((n for n in samples if "random" in n), None)
    lines = []
    test_rows = []
    for name, values in sorted(samples.items()):
        mean, sd = values.mean(), values.std()
        if baseline_name is None or name == baseline_name:
            lines.append(f"{name}: total MAPE {mean:.4f} (+-{sd:.4f})")
            continue
        test = welch_one_tailed(values, samples[baseline_name])
        marker = "*" if test.p_value < 0.05 else " "
        lines.append(f"{name}: total MAPE {mean:.4f} (+-{sd:.4f}) "
                     f"vs {baseline_name} p={test.p_value:.4f}{marker}")
        test_rows.append([name, baseline_name, mean, sd, test.statistic,
                          test.dof, test.p_value])
    print("\n".join(lines))

    out_dir = args.out if args.out != Path("runs") else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    if test_rows:
        dataio._write_rows(out_dir / "welch_tests.csv",
                           ["method", "baseline", "mean", "sd", "t", "dof", "p_value"],
                           test_rows)

    series_by_name = {}
    for name in samples:
        trails = sorted(run_dir.glob(f"{name}/trial_*/trail.csv"))
        if not trails:
            continue
        per_trial = [_best_so_far_series(dataio.read_trail_csv(p)) for p in trails]
        horizon = max(s.size for s in per_trial)
        padded = np.vstack([
            np.concatenate([s, np.full(horizon - s.size, s[-1])]) for s in per_trial
        ])
        series = padded.mean(axis=0)
        series_by_name[name] = series
        dataio._write_rows(out_dir / f"{name}_error_series.csv",
                           ["iter", "best_so_far_mean"],
                           ((c, series[c]) for c in range(horizon)))

    if args.plots and series_by_name:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            print("matplotlib not installed; skipping plots", file=sys.stderr)
        else:
            fig, ax = plt.subplots(figsize=(7, 4))
            for name, series in sorted(series_by_name.items()):
                ax.plot(np.arange(series.size), series, label=name)
            ax.set_xlabel("iteration")
            ax.set_ylabel("best-so-far total MAPE")
            ax.legend()
            fig.tight_layout()
            fig.savefig(out_dir / "error_series.png", dpi=120)
            plt.close(fig)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abmcalib",
        description="Calibrate dynamic and cluster-specific simulation parameters",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-validation",
                       help="synthesize the replication-averaged validation trace")
    _common_flags(p)
    p.add_argument("--replications", type=int, default=300)
    p.set_defaults(func=cmd_generate_validation)

    p = sub.add_parser("calibrate", help="run one full calibration")
    _common_flags(p)
    p.add_argument("--validation", type=Path, required=True,
                   help="validation CSV (from generate-validation)")
    p.add_argument("--rule", choices=GENERATION_RULES, default=None,
                   help="dynamic parameter generation rule override")
    p.add_argument("--synthetic-reference", action="store_true",
                   help="report parameter errors against the synthetic truth")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run-preset", help="run a benchmark preset")
    _common_flags(p)
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--trials", type=int, default=None,
                   help="independent trials (default: preset-specific)")
    p.add_argument("--no-details", action="store_true",
                   help="skip per-trial trail/report files")
    p.set_defaults(func=cmd_run_preset)

    p = sub.add_parser("report", help="aggregate preset runs and test vs baseline")
    _common_flags(p)
    p.add_argument("run_dir", type=Path)
    p.add_argument("--plots", action="store_true", help="emit line-plot PNGs")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
