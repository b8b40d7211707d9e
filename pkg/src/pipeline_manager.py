"""
Experiment pipelines behind the CLI commands
generate: simulated dataset file
run:      Monte Carlo learner sweep, per-run JSONL logs and summary.csv
analyze:  learning curves, scaling slopes, query advantage, decoherence fits
"""
import glob
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src import console, settings
from src.config import RunConfig, config_digest, parse_config, resolve, with_defaults
from src.dataset import load_dataset, save_dataset
from src.errors import AnalysisError, BudgetExhaustedError, HalError, RangeError
from src.estimate import baseline_estimate
from src.fisher import coordinate_scale, cramer_rao_rmse, distribution_fisher, reduced_fisher, to_j_coordinates
from src.hal import RunRecord, Scenario, run_learner
from src.metrics import (
    decoherence_fit_report,
    fit_decoherence,
    fit_scaling_slope,
    query_advantage,
    rmse,
    testing_error,
)
from src.models import LAMBDA_NAMES, LambdaParams
from src.oracle import ReplayOracle, SimulatorOracle, draw_test_set, generate_dataset
from src.presets import DECOHERENCE_VARIANTS
from src.query_space import QueryDistribution
from src.rng import STREAM_IDS, RngStream
from src.run_log import RunLogTracker

DATASET_FILE = "dataset.jsonl"
SUMMARY_FILE = "summary.csv"
META_FILE = "run_meta.json"
LOG_DIR = "logs"
SUMMARY_COLUMNS = ["scenario", "run_id", "round", "n_tot", "rmse", "testing_error", "t_max", "wall_ms", "partial"]


def _write_csv(df: pd.DataFrame, path: str, cfg: RunConfig):
    """CSV with provenance comment lines ahead of the header row"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# software_version={settings.software_version()}\n")
        f.write(f"# config={config_digest(cfg)}\n")
        df.to_csv(f, index=False, lineterminator="\n")


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


# ---------------------------------------------------------------- generate

def run_generate(cfg: RunConfig) -> str:
    """Simulate shots_per_query shots for every query of the initial space"""
    cfg = with_defaults(cfg)
    experiment = resolve(cfg)
    rng = RngStream(cfg.seed, (STREAM_IDS["dataset"],))
    console.step(f"Generating {cfg.dataset.shots_per_query} shots per query on {experiment.space}")
    d = generate_dataset(experiment.theta_star, experiment.noise, experiment.space,
                         cfg.dataset.shots_per_query, rng)
    path = os.path.join(cfg.out, DATASET_FILE)
    save_dataset(d, path, extra_header={
        "config": json.loads(config_digest(cfg)),
        "software_version": settings.software_version(),
    })
    summary = d.summary()
    console.success(f"Dataset written: {path}")
    console.stats(f"{summary['total_shots']} shots over {summary['n_queries']} queries "
                  f"({summary['min_shots']}–{summary['max_shots']} per query, {summary['readout_kind']})")
    return path


# ---------------------------------------------------------------- run

def _log_path(out: str, scenario: Scenario, run_id: int) -> str:
    return os.path.join(out, LOG_DIR, f"{scenario.value}_{run_id:04d}.jsonl")


def _run_task(task: Tuple[str, int, str]) -> List[Dict[str, Any]]:
    """One learner trajectory; module-level so it pickles into worker processes"""
    scenario_value, run_id, cfg_json = task
    cfg = parse_config(json.loads(cfg_json))
    scenario = Scenario(scenario_value)
    replay = cfg.dataset.path is not None
    experiment = resolve(cfg, require_truth=not replay)
    learner = cfg.learner.for_scenario(scenario)
    mask = learner.mask()

    scenario_index = list(Scenario).index(scenario)
    rng = RngStream(cfg.seed, (scenario_index, run_id))
    if replay:
        oracle = ReplayOracle(load_dataset(cfg.dataset.path), rng.child("oracle"))
    else:
        oracle = SimulatorOracle(experiment.theta_star, experiment.noise, rng.child("oracle"))

    heldout = None
    if cfg.test_size > 0 and experiment.theta_star is not None:
        heldout = draw_test_set(experiment.theta_star, experiment.noise,
                                QueryDistribution.uniform(experiment.space), cfg.test_size, rng.child("test"))

    path = _log_path(cfg.out, scenario, run_id)
    if os.path.exists(path):
        os.remove(path)
    tracker = RunLogTracker(path, header={"scenario": scenario.value, "run_id": run_id,
                                          "config": json.loads(config_digest(cfg)),
                                          "software_version": settings.software_version()})
    try:
        record = run_learner(oracle, experiment.theta_config, experiment.noise, experiment.space,
                             learner, rng, run_id=run_id, tracker=tracker)
    except BudgetExhaustedError as e:
        record = e.record if isinstance(e.record, RunRecord) else RunRecord(scenario=scenario, run_id=run_id)
        tracker.mark_partial()

    rows = []
    for entry, theta in zip(record.rounds, record.thetas()):
        error = math.nan
        test = math.nan
        if experiment.theta_star is not None:
            error = rmse([theta], experiment.theta_star, xi=experiment.theta_config.xi,
                         coords=cfg.rmse_coords, mask=mask)
            if heldout is not None:
                test = testing_error(theta, experiment.theta_star, experiment.noise, heldout)
        row = {
            "scenario": scenario.value,
            "run_id": run_id,
            "round": entry.round,
            "n_tot": entry.n_tot,
            "rmse": error,
            "testing_error": test,
            "t_max": entry.t_max,
            "wall_ms": entry.wall_ms,
            "partial": record.partial,
        }
        row.update(dict(zip(LAMBDA_NAMES, entry.theta_hat)))
        rows.append(row)
    return rows


def run_sweep(cfg: RunConfig) -> pd.DataFrame:
    """n_runs trajectories per scenario; output order does not depend on the worker count"""
    cfg = with_defaults(cfg)
    cfg_json = cfg.model_dump_json()
    tasks = [(s.value, run_id, cfg_json) for s in cfg.scenarios for run_id in range(cfg.n_runs)]
    workers = min(cfg.jobs, settings.max_workers_cap(), len(tasks))
    console.step(f"Starting {len(tasks)} runs ({', '.join(s.value for s in cfg.scenarios)}) on {workers} worker(s)")
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(task) for task in tasks]
    rows = [row for rows in results for row in rows]
    df = pd.DataFrame(rows, columns=SUMMARY_COLUMNS + list(LAMBDA_NAMES))
    df = df.sort_values(["scenario", "run_id", "round"], kind="mergesort").reset_index(drop=True)

    _write_csv(df, os.path.join(cfg.out, SUMMARY_FILE), cfg)
    partial = sorted({(r["scenario"], r["run_id"]) for r in rows if r["partial"]})
    meta = {
        "software_version": settings.software_version(),
        "config": json.loads(config_digest(cfg)),
        "n_rows": int(len(df)),
        "partial_runs": [list(p) for p in partial],
        "wall_s": round(time.perf_counter() - start, 3),
    }
    with open(os.path.join(cfg.out, META_FILE), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    if partial:
        console.warn(f"{len(partial)} run(s) ended early on oracle exhaustion")
    console.success(f"Summary written: {os.path.join(cfg.out, SUMMARY_FILE)} ({len(df)} rows)")
    return df


# ---------------------------------------------------------------- analyze

def load_run_logs(run_dir: str) -> Dict[str, List[RunLogTracker]]:
    """Run logs grouped by scenario, ordered by run id"""
    grouped: Dict[str, List[RunLogTracker]] = {}
    for path in sorted(glob.glob(os.path.join(run_dir, LOG_DIR, "*.jsonl"))):
        tracker = RunLogTracker(path)
        grouped.setdefault(tracker.header.get("scenario", "unknown"), []).append(tracker)
    for trackers in grouped.values():
        trackers.sort(key=lambda t: t.header.get("run_id", 0))
    return grouped


def learning_curve(trackers: List[RunLogTracker], theta_star: Optional[LambdaParams], cfg: RunConfig,
                   mask=None) -> pd.DataFrame:
    """Per round: median N_tot over runs and the RMSE of the runs' estimates"""
    by_round: Dict[int, List[Dict[str, Any]]] = {}
    for tracker in trackers:
        for entry in tracker.get_rounds():
            by_round.setdefault(entry["round"], []).append(entry)
    rows = []
    for round_index in sorted(by_round):
        entries = by_round[round_index]
        estimates = [LambdaParams(**dict(zip(LAMBDA_NAMES, e["theta_hat"]))) for e in entries]
        if theta_star is None and len(estimates) < 2:
            continue
        rows.append({
            "round": round_index,
            "n_tot": float(np.median([e["n_tot"] for e in entries])),
            "rmse": rmse(estimates, theta_star, coords=cfg.rmse_coords, mask=mask),
            "runs": len(entries),
        })
    return pd.DataFrame(rows, columns=["round", "n_tot", "rmse", "runs"])


def _epsilon_grid(curve: pd.DataFrame, baseline: pd.DataFrame, cfg: RunConfig) -> List[float]:
    if cfg.analysis.epsilons:
        return list(cfg.analysis.epsilons)
    lo = max(curve["rmse"].min(), baseline["rmse"].min())
    hi = min(curve["rmse"].max(), baseline["rmse"].max())
    if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo <= hi):
        return []
    return [float(e) for e in np.geomspace(lo, hi, cfg.analysis.n_epsilons)]


def _cramer_rao_floor(theta_star: LambdaParams, cfg: RunConfig, curve: pd.DataFrame, mask) -> List[Dict[str, float]]:
    """Uniform-design Cramér–Rao floor at the baseline's budgets"""
    experiment = resolve(cfg)
    f = distribution_fisher(QueryDistribution.uniform(experiment.space), theta_star, experiment.noise)
    scale = coordinate_scale(xi=experiment.theta_config.xi)
    if cfg.rmse_coords == "j" and mask is None:
        f = to_j_coordinates(f, theta_star)
        scale = experiment.theta_config.xi
    elif mask is not None:
        f = reduced_fisher(f, mask)
        scale = scale[list(mask.indices)]
    return [{"n_tot": float(n), "rmse_floor": cramer_rao_rmse(f, int(n), scale)} for n in curve["n_tot"]]


def _decoherence_table(run_dir: str, cfg: RunConfig) -> Optional[pd.DataFrame]:
    path = cfg.dataset.path or os.path.join(run_dir, DATASET_FILE)
    if not os.path.exists(path):
        return None
    d = load_dataset(path)
    experiment = resolve(cfg, require_truth=False)
    theta = experiment.theta_star or baseline_estimate(d, noise=experiment.noise)
    t0 = d.space.t_min
    models = [m.model_copy(update={"t0": t0}) if hasattr(m, "t0") else m for m in DECOHERENCE_VARIANTS.values()]
    for kind in ("single_param", "two_param"):
        models.append(fit_decoherence(d, theta, kind, experiment.noise, t0=t0))
    table = decoherence_fit_report(d, theta, models, experiment.noise)
    table.insert(1, "fitted", [False] * (len(models) - 2) + [True, True])
    return table


def run_analysis(run_dir: str, cfg: Optional[RunConfig] = None) -> Dict[str, Any]:
    """Slopes, query advantage against the baseline and the decoherence model comparison"""
    if cfg is None:
        meta_path = os.path.join(run_dir, META_FILE)
        if not os.path.exists(meta_path):
            raise AnalysisError(f"no {META_FILE} in {run_dir}")
        with open(meta_path, "r", encoding="utf-8") as f:
            cfg = parse_config(json.load(f)["config"])
    logs = load_run_logs(run_dir)
    if Scenario.BASELINE.value not in logs:
        raise AnalysisError(f"no baseline runs in {run_dir}; query advantage needs a baseline curve")

    experiment = resolve(cfg, require_truth=False)
    theta_star = experiment.theta_star
    mask = cfg.learner.mask()
    curves = {s: learning_curve(trackers, theta_star, cfg, mask) for s, trackers in logs.items()}
    baseline = curves[Scenario.BASELINE.value]
    if baseline.empty:
        raise AnalysisError("baseline learning curve is empty")

    slope_rows, qa_rows = [], []
    for scenario, curve in sorted(curves.items()):
        if curve.empty:
            continue
        windows = cfg.analysis.windows or [(float(curve["n_tot"].min()), float(curve["n_tot"].max()))]
        for window in windows:
            try:
                fit = fit_scaling_slope((curve["n_tot"], curve["rmse"]), tuple(window))
            except RangeError as e:
                console.warn(f"{scenario}: no slope for window {window}: {e.message}")
                continue
            slope_rows.append({"scenario": scenario, "window": f"{window[0]:g}-{window[1]:g}",
                               "slope": fit.slope, "stderr": fit.stderr, "n_points": fit.n_points})
        for epsilon in _epsilon_grid(curve, baseline, cfg):
            try:
                qa = query_advantage((curve["n_tot"], curve["rmse"]), (baseline["n_tot"], baseline["rmse"]), epsilon)
            except RangeError:
                continue
            qa_rows.append({"scenario": scenario, "epsilon": epsilon, "qa": qa})

    slopes = pd.DataFrame(slope_rows, columns=["scenario", "window", "slope", "stderr", "n_points"])
    qa_table = pd.DataFrame(qa_rows, columns=["scenario", "epsilon", "qa"])
    _write_csv(slopes, os.path.join(run_dir, "slopes.csv"), cfg)
    _write_csv(qa_table, os.path.join(run_dir, "query_advantage.csv"), cfg)

    analysis: Dict[str, Any] = {
        "software_version": settings.software_version(),
        "config": json.loads(config_digest(cfg)),
        "slopes": slopes.to_dict(orient="records"),
        "query_advantage": qa_table.to_dict(orient="records"),
        "curves": {s: c.to_dict(orient="records") for s, c in curves.items()},
    }
    if theta_star is not None:
        try:
            analysis["cramer_rao_floor"] = _cramer_rao_floor(theta_star, cfg, baseline, mask)
        except HalError as e:
            console.warn(f"Cramér–Rao floor skipped: {e.message}")

    try:
        table = _decoherence_table(run_dir, cfg)
    except HalError as e:
        console.warn(f"decoherence fit skipped: {e.message}")
        table = None
    if table is not None:
        _write_csv(table, os.path.join(run_dir, "decoherence_fit.csv"), cfg)
        analysis["decoherence_fit"] = table.to_dict(orient="records")

    with open(os.path.join(run_dir, "analysis.json"), "w", encoding="utf-8") as f:
        json.dump(analysis, f, indent=2, default=float)
    console.success(f"Analysis written to {run_dir}: {len(slopes)} slopes, {len(qa_table)} QA points")
    return analysis
