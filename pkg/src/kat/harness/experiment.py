"""Experiment matrix runner: (scenario x seed) cells, aggregation, sensitivity.

Every cell is deterministic given the experiment config, and cells are
shared-nothing (each seed regenerates its simulator data), so serial and
parallel executions produce byte-identical report bundles.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import diagnostics as dg
from .. import neural as nn
from .. import training as tr
from ..dataset import Dataset, NormStats
from ..errors import DimensionMismatch
from .scenarios import (
    Case2Library,
    DatasetKind,
    ScenarioSpec,
    Task,
    apply_target_noise,
    build_case1_artifacts,
    build_case2_artifacts,
    network_spec_for,
    scenario_dataset,
)
from .simulators import SimulatorConfig, simulate_case1, simulate_case2


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "user-model"                   # "user-model" | "price-forecast"
    scenarios: tuple = ("KAT-LM", "O-LM")
    seeds: tuple = tuple(range(10))
    iterations: int = 4000
    batch_size: int = 32
    step_size: float = 1e-3
    eta_min: float = 0.5
    eta_max: float = 0.95
    schedule_updates: int = 600
    augment_count: int | None = None           # default: 1500 UM, 10000 PPF
    alpha: float = 0.0
    beta: float = 100.0
    quantiles: tuple = (0.25, 0.5, 0.75)
    grad_noise: bool = True
    manifold: bool = True
    kkt_diagnostic: bool = True
    noise_level: float = 0.0                   # synthetic-target noise
    noise_levels: tuple = (0.01, 0.02, 0.03, 0.04, 0.05, 0.06)
    sim: dict = field(default_factory=dict)    # SimulatorConfig overrides
    library: dict = field(default_factory=dict)  # Case2Library overrides
    workers: int = 0

    @property
    def task_enum(self) -> Task:
        return Task.UM if self.task == "user-model" else Task.PPF

    @property
    def count(self) -> int:
        if self.augment_count is not None:
            return self.augment_count
        return 1500 if self.task_enum is Task.UM else 10000

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        for key in ("scenarios", "seeds", "quantiles", "noise_levels"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in ("scenarios", "seeds", "quantiles", "noise_levels"):
            doc[key] = list(doc[key])
        return doc


def _sim_config(cfg: ExperimentConfig, seed: int) -> SimulatorConfig:
    overrides = dict(cfg.sim)
    consumer = overrides.pop("consumer", None)
    market = overrides.pop("market", None)
    sim = SimulatorConfig(task=cfg.task, seed=seed, **overrides)
    if consumer:
        sim = replace(sim, consumer=replace(sim.consumer, **consumer))
    if market:
        sim = replace(sim, market=replace(sim.market, **market))
    return sim


def _simulate(cfg: ExperimentConfig, seed: int):
    sim = _sim_config(cfg, seed)
    if cfg.task_enum is Task.UM:
        return simulate_case1(sim)
    return simulate_case2(sim)


def _train_config(cfg: ExperimentConfig, dynamic: bool, seed: int) -> tr.TrainConfig:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # the 0.95 ceiling warning is expected here
        return tr.TrainConfig(
            batch_size=cfg.batch_size,
            step_size=cfg.step_size,
            iterations=cfg.iterations,
            eta_min=cfg.eta_min if dynamic else None,
            eta_max=cfg.eta_max if dynamic else None,
            schedule_updates=cfg.schedule_updates,
            seed=seed,
        )


def _evaluate_um(spec, params, train_hist: Dataset, test: Dataset, stats: NormStats) -> dg.MetricsReport:
    pred_train = nn.forward(spec, params, stats.transform_features(train_hist.features))
    pred_test = nn.forward(spec, params, stats.transform_features(test.features))
    train_loss = nn.loss(nn.MSE(), pred_train, train_hist.targets)
    test_loss = nn.loss(nn.MSE(), pred_test, test.targets)
    rmse, mape, smape = dg.point_metrics(pred_test, test.targets)
    eps = float(np.percentile(np.abs(test.targets), 10.0))
    _, mape_unguarded, _ = dg.point_metrics(pred_test, test.targets, epsilon_y=0.0)
    return dg.MetricsReport(
        rmse=rmse, mape=mape, smape=smape,
        train_loss=train_loss, test_loss=test_loss, overfit_gap=test_loss - train_loss,
        mape_unguarded=mape_unguarded, epsilon_y=eps,
    )


def _run_um_cell(cfg: ExperimentConfig, scenario: ScenarioSpec, seed: int, bundle) -> dict:
    train_hd, test, oracle, stats, sd_noisy = bundle
    data = scenario_dataset(scenario.dataset_kind, train_hd, sd_noisy, cfg.count, seed)
    spec = network_spec_for(Task.UM, scenario.model_kind)
    dynamic = scenario.dataset_kind is DatasetKind.KAT
    trace = tr.train(spec, stats.apply(data), _train_config(cfg, dynamic, seed),
                     tr.DiagnosticsFlags(grad_noise=cfg.grad_noise))
    report = _evaluate_um(spec, trace.params, train_hd, test, stats)
    cell = {"metrics": report.to_dict(), "final_batch_loss": float(trace.loss[-1])}
    if cfg.grad_noise:
        cell["grad_noise_mean"] = float(np.nanmean(trace.grad_noise_norm))
        cell["grad_noise_max"] = float(np.nanmax(trace.grad_noise_norm))
    if cfg.manifold and sd_noisy is not None:
        me = dg.manifold_errors(spec, trace.params, sd_noisy, oracle,
                                to_model_space=stats.transform_features)
        pred_syn, pred_real, syn_real = me.mean_abs()
        cell["manifold"] = {
            "mean_abs_pred_minus_syn": pred_syn,
            "mean_abs_pred_minus_real": pred_real,
            "mean_abs_syn_minus_real": syn_real,
        }
    return cell


def _run_ppf_cell(cfg: ExperimentConfig, scenario: ScenarioSpec, seed: int, bundle) -> dict:
    train_hd, test, oracle, stats, sd_noisy = bundle
    data = scenario_dataset(scenario.dataset_kind, train_hd, sd_noisy, cfg.count, seed)
    dynamic = scenario.dataset_kind is DatasetKind.KAT
    data_n = stats.apply(data)
    test_feats = stats.transform_features(test.features)
    train_feats = stats.transform_features(train_hd.features)
    preds_test, preds_train, train_pb, test_pb = {}, {}, {}, {}
    gn_means = {}
    for q in cfg.quantiles:
        spec = network_spec_for(Task.PPF, scenario.model_kind, quantile=q)
        trace = tr.train(spec, data_n, _train_config(cfg, dynamic, seed),
                         tr.DiagnosticsFlags(grad_noise=cfg.grad_noise))
        preds_test[q] = nn.forward(spec, trace.params, test_feats)[:, 0]
        preds_train[q] = nn.forward(spec, trace.params, train_feats)[:, 0]
        train_pb[q] = dg.pinball(preds_train[q], train_hd.targets[:, 0], q)
        test_pb[q] = dg.pinball(preds_test[q], test.targets[:, 0], q)
        if cfg.grad_noise:
            gn_means[q] = float(np.nanmean(trace.grad_noise_norm))
    train_loss = float(np.mean(list(train_pb.values())))
    test_loss = float(np.mean(list(test_pb.values())))
    median_q = 0.5 if 0.5 in preds_test else cfg.quantiles[len(cfg.quantiles) // 2]
    rmse, mape, smape = dg.point_metrics(preds_test[median_q], test.targets[:, 0])
    pb = winkler = crps = None
    if {0.25, 0.5, 0.75} <= set(cfg.quantiles):
        pm = dg.prob_metrics(preds_test[0.25], preds_test[0.5], preds_test[0.75], test.targets[:, 0])
        pb, winkler, crps = pm.pinball, pm.winkler, pm.crps
    report = dg.MetricsReport(
        rmse=rmse, mape=mape, smape=smape,
        train_loss=train_loss, test_loss=test_loss, overfit_gap=test_loss - train_loss,
        pinball=pb, winkler=winkler, crps=crps, crpss=None,
    )
    cell = {"metrics": report.to_dict(), "pinball_train": {str(q): v for q, v in train_pb.items()}}
    if cfg.grad_noise:
        cell["grad_noise_mean"] = float(np.mean(list(gn_means.values())))
    return cell


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """All requested scenarios for one seed, on that seed's simulated data."""
    task = cfg.task_enum
    train_hd, test, oracle = _simulate(cfg, seed)
    stats = NormStats.fit(train_hd)
    scenarios = [ScenarioSpec.parse(name, task) for name in cfg.scenarios]
    needs_kat = cfg.manifold or any(s.dataset_kind is DatasetKind.KAT for s in scenarios)
    seed_info: dict = {}
    sd_noisy = None
    if needs_kat:
        if task is Task.UM:
            art = build_case1_artifacts(train_hd, seed, cfg.count, cfg.alpha, cfg.beta,
                                        with_kkt=cfg.kkt_diagnostic)
            seed_info["classical_e_star"] = float(art.model.error)
            if art.kkt_report is not None:
                seed_info["kkt"] = art.kkt_report
        else:
            art = build_case2_artifacts(train_hd, seed, cfg.count, cfg.alpha, cfg.beta,
                                        Case2Library(**cfg.library))
            seed_info["library_errors"] = [float(e) for e in art.errors]
            seed_info["eligible_models"] = int(art.weights.eligible.sum())
        sd_noisy = apply_target_noise(art.synthetic, cfg.noise_level, seed)
    bundle = (train_hd, test, oracle, stats, sd_noisy)
    cells = {}
    for scenario in scenarios:
        runner = _run_um_cell if task is Task.UM else _run_ppf_cell
        cells[scenario.name] = runner(cfg, scenario, seed, bundle)
    return {"cells": cells, "info": seed_info}


# ---------------------------------------------------------------------------
# aggregation and bundle assembly
# ---------------------------------------------------------------------------

def _median_iqr(values) -> dict:
    arr = np.asarray(sorted(values), dtype=float)
    return {
        "median": float(np.median(arr)),
        "iqr": float(np.percentile(arr, 75) - np.percentile(arr, 25)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


_AGG_KEYS = ("rmse", "mape", "smape", "train_loss", "test_loss", "overfit_gap",
             "winkler", "crps")


def _aggregate(cfg: ExperimentConfig, per_seed: dict) -> dict:
    aggregates: dict = {}
    for name in cfg.scenarios:
        agg: dict = {}
        metric_rows = [per_seed[s]["cells"][name]["metrics"] for s in cfg.seeds]
        for key in _AGG_KEYS:
            vals = [row[key] for row in metric_rows if row.get(key) is not None]
            if vals:
                agg[key] = _median_iqr(vals)
        gn = [per_seed[s]["cells"][name].get("grad_noise_mean") for s in cfg.seeds]
        gn = [v for v in gn if v is not None]
        if gn:
            agg["grad_noise_mean"] = _median_iqr(gn)
        aggregates[name] = agg
    # CRPS skill against the O-LM baseline when both sides exist
    if cfg.task_enum is Task.PPF and "O-LM" in cfg.scenarios:
        for name in cfg.scenarios:
            skills = []
            for s in cfg.seeds:
                crps = per_seed[s]["cells"][name]["metrics"].get("crps")
                base = per_seed[s]["cells"]["O-LM"]["metrics"].get("crps")
                if crps is not None and base:
                    skills.append(100.0 * (1.0 - crps / base))
            if skills:
                aggregates[name]["crpss_vs_O-LM"] = _median_iqr(skills)
    return aggregates


def run_matrix(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run every (scenario, seed) cell and assemble the report bundle."""
    for name in cfg.scenarios:
        ScenarioSpec.parse(name, cfg.task_enum)  # validate early
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
        per_seed = dict(zip(cfg.seeds, results))
    else:
        per_seed = {seed: run_seed(cfg, seed) for seed in cfg.seeds}
    bundle = {
        "config": cfg.to_dict(),
        "cells": {
            name: {str(seed): per_seed[seed]["cells"][name] for seed in cfg.seeds}
            for name in cfg.scenarios
        },
        "seed_info": {str(seed): per_seed[seed]["info"] for seed in cfg.seeds},
        "aggregates": _aggregate(cfg, per_seed),
    }
    if out_dir is not None:
        write_bundle(bundle, out_dir)
    return bundle


def bundle_json(bundle: dict) -> str:
    return json.dumps(bundle, indent=2, sort_keys=True)


def write_bundle(bundle: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bundle.json"
    path.write_text(bundle_json(bundle), encoding="utf-8")
    summary = out / "summary.csv"
    with summary.open("w", encoding="utf-8", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(["scenario", "metric", "median", "iqr", "min", "max"])
        for name in sorted(bundle["aggregates"]):
            for metric in sorted(bundle["aggregates"][name]):
                row = bundle["aggregates"][name][metric]
                writer.writerow([name, metric, row["median"], row["iqr"], row["min"], row["max"]])
    return path


# ---------------------------------------------------------------------------
# sensitivity protocol
# ---------------------------------------------------------------------------

def _sensitivity_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """KAT runs at every noise level plus the O baseline, one seed."""
    task = cfg.task_enum
    if task is not Task.UM:
        raise DimensionMismatch("the sensitivity protocol runs on the user-model task")
    train_hd, test, oracle = _simulate(cfg, seed)
    stats = NormStats.fit(train_hd)
    art = build_case1_artifacts(train_hd, seed, cfg.count, cfg.alpha, cfg.beta, with_kkt=False)
    out = {"kat_rmse": {}, "o_rmse": None}
    kat = ScenarioSpec.parse("KAT-LM", task)
    o_lm = ScenarioSpec.parse("O-LM", task)
    quiet = replace(cfg, grad_noise=False, manifold=False)
    for level in (0.0, *cfg.noise_levels):
        sd = apply_target_noise(art.synthetic, level, seed)
        bundle = (train_hd, test, oracle, stats, sd)
        cell = _run_um_cell(quiet, kat, seed, bundle)
        out["kat_rmse"][f"{level:.4f}"] = cell["metrics"]["rmse"]
    cell = _run_um_cell(quiet, o_lm, seed, (train_hd, test, oracle, stats, None))
    out["o_rmse"] = cell["metrics"]["rmse"]
    return out


def sensitivity_noise(cfg: ExperimentConfig, out_dir=None) -> dict:
    """RMSE of the knowledge route as synthetic-target noise grows.

    Levels share random draws per seed (one unit-noise array scaled by the
    level), so the zero level reproduces the base run bit-exactly and the
    trend is not confounded by resampling.
    """
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sensitivity_seed, [cfg] * len(cfg.seeds), cfg.seeds))
        per_seed = dict(zip(cfg.seeds, results))
    else:
        per_seed = {seed: _sensitivity_seed(cfg, seed) for seed in cfg.seeds}
    levels = [0.0, *cfg.noise_levels]
    table = {
        "levels": levels,
        "kat_rmse_median": [
            float(np.median([per_seed[s]["kat_rmse"][f"{lv:.4f}"] for s in cfg.seeds]))
            for lv in levels
        ],
        "o_rmse_median": float(np.median([per_seed[s]["o_rmse"] for s in cfg.seeds])),
        "per_seed": {str(s): per_seed[s] for s in cfg.seeds},
        "config": cfg.to_dict(),
    }
    table["rmse_gap_to_o"] = [table["o_rmse_median"] - v for v in table["kat_rmse_median"]]
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sensitivity.json").write_text(json.dumps(table, indent=2, sort_keys=True),
                                              encoding="utf-8")
        with (out / "sensitivity.csv").open("w", encoding="utf-8", newline="") as fh:
            import csv as _csv

            writer = _csv.writer(fh)
            writer.writerow(["noise_level", "kat_rmse_median", "rmse_gap_to_o"])
            for lv, rm, gap in zip(levels, table["kat_rmse_median"], table["rmse_gap_to_o"]):
                writer.writerow([lv, rm, gap])
    return table
