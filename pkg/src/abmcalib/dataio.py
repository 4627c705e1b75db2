"""File interfaces: CSV emission/reading and the JSON run configuration.

All floats are written with ``repr`` (shortest round-trip form), so re-running
with the same seed produces byte-identical files.  Every writer here has a
matching reader and the pair round-trips exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .acquisition import SearchStrategy
from .errors import DimensionError
from .framework import FrameworkConfig, MetricsReport, ParameterSpec, TrailEntry
from .wealth import (
    AgentTrace,
    SummaryTrace,
    ValidationData,
    WealthModelConfig,
)


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# --- summary / validation traces -------------------------------------------

def write_trace_csv(path, stats: np.ndarray, names) -> None:
    """Header ``stat,t1,...,tT``; one row per summary statistic."""
    stats = np.asarray(stats, dtype=float)
    header = ["stat"] + [f"t{t + 1}" for t in range(stats.shape[1])]
    _write_rows(Path(path), header,
                ([name, *stats[i]] for i, name in enumerate(names)))


def read_trace_csv(path) -> tuple[np.ndarray, tuple[str, ...]]:
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows or rows[0][0] != "stat":
        raise DimensionError(f"{path}: not a trace CSV")
    names = tuple(r[0] for r in rows[1:])
    stats = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return stats, names


def write_validation(path, validation: ValidationData) -> None:
    """Validation CSV plus a provenance sidecar JSON."""
    path = Path(path)
    write_trace_csv(path, validation.stats, validation.names)
    sidecar = path.with_suffix(path.suffix + ".provenance.json")
    sidecar.write_text(json.dumps({
        "replications": validation.replications,
        "master_seed": validation.master_seed,
        "provenance": validation.provenance,
    }, indent=2, sort_keys=True) + "\n")


def read_validation(path) -> ValidationData:
    path = Path(path)
    stats, names = read_trace_csv(path)
    sidecar = path.with_suffix(path.suffix + ".provenance.json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return ValidationData(
        stats=stats, names=names,
        replications=meta.get("replications", 1),
        master_seed=meta.get("master_seed", 0),
        provenance=meta.get("provenance", {}),
    )


# --- agent traces, codes, assignments ---------------------------------------

def write_agent_trace_csv(path, trace: AgentTrace) -> None:
    """Header ``agent_id,attr,t1,...,tT``; one row per (agent, attribute)."""
    values = trace.values
    header = ["agent_id", "attr"] + [f"t{t + 1}" for t in range(values.shape[2])]

    def rows():
        for a in range(values.shape[0]):
            for att in range(values.shape[1]):
                yield [a, att, *values[a, att]]

    _write_rows(Path(path), header, rows())


def read_agent_trace_csv(path) -> AgentTrace:
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    body = rows[1:]
    agents = max(int(r[0]) for r in body) + 1
    attrs = max(int(r[1]) for r in body) + 1
    horizon = len(rows[0]) - 2
    values = np.empty((agents, attrs, horizon))
    for r in body:
        values[int(r[0]), int(r[1])] = [float(v) for v in r[2:]]
    return AgentTrace(values)


def write_codes_csv(path, codes: np.ndarray) -> None:
    """Header ``agent_id,h1..hH``."""
    codes = np.asarray(codes, dtype=float)
    header = ["agent_id"] + [f"h{j + 1}" for j in range(codes.shape[1])]
    _write_rows(Path(path), header, ([a, *codes[a]] for a in range(codes.shape[0])))


def read_codes_csv(path) -> np.ndarray:
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def write_assignment_csv(path, labels: np.ndarray) -> None:
    """Header ``agent_id,cluster``."""
    labels = np.asarray(labels, dtype=int)
    _write_rows(Path(path), ["agent_id", "cluster"], enumerate(labels))


def read_assignment_csv(path) -> np.ndarray:
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    return np.array([int(r[1]) for r in rows[1:]], dtype=int)


# --- autoencoder weights ------------------------------------------------------

def write_vae_weights_csv(path, params: dict[str, np.ndarray]) -> None:
    """Long-format dump: ``parameter,row,col,value`` (vectors use col=0)."""

    def rows():
        for name in sorted(params):
            arr = np.atleast_2d(np.asarray(params[name], dtype=float))
            for i in range(arr.shape[0]):
                for j in range(arr.shape[1]):
                    yield [name, i, j, arr[i, j]]

    _write_rows(Path(path), ["parameter", "row", "col", "value"], rows())


def read_vae_weights_csv(path) -> dict[str, np.ndarray]:
    cells: dict[str, dict[tuple[int, int], float]] = {}
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        next(reader)
        for name, i, j, value in reader:
            cells.setdefault(name, {})[(int(i), int(j))] = float(value)
    out = {}
    for name, entries in cells.items():
        n_rows = max(i for i, _ in entries) + 1
        n_cols = max(j for _, j in entries) + 1
        arr = np.empty((n_rows, n_cols))
        for (i, j), value in entries.items():
            arr[i, j] = value
        out[name] = arr[0] if n_rows == 1 else arr
    return out


# --- audit trails and reports -------------------------------------------------

def write_trail_csv(path, trail: list[TrailEntry]) -> None:
    header = ["iter", "phase", "label", "total_mape", "neg_log_lik"]
    _write_rows(Path(path), header,
                ([e.iteration, e.phase, e.label, e.total_mape, e.neg_log_lik]
                 for e in trail))


def read_trail_csv(path) -> list[dict]:
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        row["iter"] = int(row["iter"])
        row["total_mape"] = float(row["total_mape"])
        row["neg_log_lik"] = float(row["neg_log_lik"])
    return rows


def write_dynamic_records_csv(path, records: list[dict]) -> None:
    header = ["iter", "candidate", "neg_log_lik", "regime_signature",
              "param", "block", "alpha", "beta"]
    _write_rows(Path(path), header, ([r[k] for k in header] for r in records))


def write_het_records_csv(path, records, dim: int) -> None:
    header = (["iter", "branch"] + [f"param_{j + 1}" for j in range(dim)]
              + ["error", "best_so_far", "gp_loglik"])
    _write_rows(Path(path), header,
                ([r.iteration, r.branch, *r.vector, r.error, r.best_so_far,
                  r.gp_loglik] for r in records))


def read_records_csv(path) -> list[dict]:
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def write_report_csv(path, report: MetricsReport) -> None:
    rows = [(f"mape_{name}", value)
            for name, value in zip(report.stat_names, report.per_stat_mape)]
    rows.append(("total_mape", report.total_mape))
    if report.dynamic_mae is not None:
        rows.append(("dynamic_parameter_mae", report.dynamic_mae))
    if report.heterogeneous_euclidean is not None:
        rows.append(("heterogeneous_parameter_euclidean", report.heterogeneous_euclidean))
    rows.append(("best_iteration", report.best_iteration))
    rows.append(("best_phase", report.best_phase))
    _write_rows(Path(path), ["metric", "value"], rows)


def write_best_params_csv(path, best: TrailEntry, config: FrameworkConfig) -> None:
    """Long format: ``kind,name,index,value`` (index = timestep or cluster)."""
    rows = []
    for n, spec in enumerate(config.dynamic_specs()):
        for t in range(best.schedule.shape[1]):
            rows.append(("dynamic", spec.name, t + 1, best.schedule[n, t]))
    het = best.het_vector.reshape(-1, len(config.heterogeneous_specs()))
    for k in range(het.shape[0]):
        for n, spec in enumerate(config.heterogeneous_specs()):
            rows.append(("heterogeneous", spec.name, k, het[k, n]))
    _write_rows(Path(path), ["kind", "name", "index", "value"], rows)


def read_best_params_csv(path) -> list[dict]:
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        row["index"] = int(row["index"])
        row["value"] = float(row["value"])
    return rows


# --- run configuration ----------------------------------------------------------

def config_to_dict(config: FrameworkConfig) -> dict:
    return {
        "model": {
            "grid_width": config.model.grid_width,
            "grid_height": config.model.grid_height,
            "num_agents": config.model.num_agents,
            "horizon": config.model.horizon,
            "vision": config.model.vision,
            "base_metabolism": config.model.base_metabolism,
            "base_regrowth": config.model.base_regrowth,
            "wealth_decay": config.model.wealth_decay,
            "max_cell_wealth": config.model.max_cell_wealth,
            "initial_wealth_range": list(config.model.initial_wealth_range),
            "rng_seed": config.model.rng_seed,
        },
        "parameters": [
            {"name": p.name, "low": p.low, "high": p.high, "kind": p.kind}
            for p in config.parameters
        ],
        "calibration": {
            "total_iterations": config.total_iterations,
            "dyn_iterations": config.dyn_iterations,
            "het_iterations": config.het_iterations,
            "n_replications": config.n_replications,
            "n_candidates": config.n_candidates,
            "n_regimes": config.n_regimes,
            "clustering_mode": config.clustering_mode,
            "n_clusters": config.n_clusters,
            "latent_dim": config.latent_dim,
            "vae_epochs": config.vae_epochs,
            "concentration": config.concentration,
            "gibbs_sweeps": config.gibbs_sweeps,
            "rule": config.rule,
            "candidate_init": config.candidate_init,
        },
        "search": {
            "c0": config.strategy.c0,
            "xi_rand": config.strategy.xi_rand,
            "xi_pv": config.strategy.xi_pv,
            "xi_pm": config.strategy.xi_pm,
            "cooling_base": config.strategy.cooling_base,
            "r0": config.strategy.exploration_radius,
        },
        "seed": config.master_seed,
    }


def config_from_dict(data: dict) -> FrameworkConfig:
    model_data = dict(data.get("model", {}))
    if "initial_wealth_range" in model_data:
        model_data["initial_wealth_range"] = tuple(model_data["initial_wealth_range"])
    model = WealthModelConfig(**model_data)
    parameters = [ParameterSpec(**p) for p in data.get("parameters", [])] or None
    search = data.get("search", {})
    strategy = SearchStrategy(
        c0=search.get("c0", 10),
        xi_rand=search.get("xi_rand", 0.10),
        xi_pv=search.get("xi_pv", 0.20),
        xi_pm=search.get("xi_pm", 0.20),
        cooling_base=search.get("cooling_base", 0.99),
        exploration_radius=search.get("r0", 0.0),
    )
    kwargs = dict(data.get("calibration", {}))
    config = FrameworkConfig(
        model=model, strategy=strategy, master_seed=data.get("seed", 0), **kwargs)
    if parameters:
        config.parameters = parameters
    return config


def save_config(path, config: FrameworkConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")


def load_config(path) -> FrameworkConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DimensionError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(data)
