# src/core/scenarios.py
"""
src/core/scenarios.py

Named scenarios run by the CLI. A scenario maps a RunConfig to a list of
ExperimentReports, one background at a time; run_scenario adds the
bookkeeping: resolved defaults, per-scenario error capture, the run
summary and the output files.
"""

import logging
import time
from dataclasses import dataclass
from importlib import metadata
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.core.backgrounds import christoffel_fd, metric_jet, ricci_flow_residual, sample_chart_points
from src.core.convergence_lab import (
    MCParams,
    cylinder_convergence_experiment,
    default_cylinder_battery,
    default_gradient_battery,
    default_heat_observables,
    frame_concentration_experiment,
    frame_decomposition_experiment,
    gradient_bound_experiment,
    gradient_estimate_experiment,
    heat_flow_experiment,
    limit_identity_experiment,
    martingale_residual_experiment,
    scalar_defect_experiment,
    small_n_oracle_experiment,
    time_marginal_experiment,
    transport_orthogonality_experiment,
    weak_order_check,
)
from src.core.errors import LabError
from src.core.perelman_geometry import christoffel_table_check, full_chart_metric, ricci_scaling_table
from src.core.sde_engine import EngineOptions
from src.schemas.flow_models import FlowConfig
from src.schemas.report_models import ErrorInfo, ExperimentReport, ResultRow, RunSummary, ScenarioSummary
from src.storage.results_writer import write_outputs
from src.utils.config_manager import ConfigManager
from src.utils.run_config import RunConfig, render_config

logger = logging.getLogger("ricci_lab")

RESIDUAL_TOLERANCE = 1e-6
CONTROL_RESIDUAL = 1e-2
CHRISTOFFEL_FD_TOLERANCE = 1e-6
TABLE_TOLERANCE = 1e-5
SCALING_RATIO = 2.0
# finite-difference floor of the torus Ricci sup (the exact value is zero)
TORUS_RICCI_FLOOR = 1e-3
VALIDATION_POINTS = 100
CURVATURE_POINTS = 20
TABLE_POINTS = 3
SMALL_N_ORACLE_MAX = 4
TIME_GRID = (0.1, 0.2, 0.3)
HEAT_DURATION = 0.2


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    runner: Callable[[RunConfig, FlowConfig, MCParams], List[ExperimentReport]]
    default_N_list: Sequence[int] = ()


def _row(scenario: str, config: FlowConfig, observable: str, estimate: float, threshold: Optional[float] = None,
         below: bool = True, **fields) -> ResultRow:
    passed = None
    if threshold is not None:
        passed = estimate <= threshold if below else estimate > threshold
    return ResultRow(scenario=scenario, background=config.label, observable=observable, estimate=estimate,
                     passed=passed, **fields)


def _report(name: str, experiment: str, config: FlowConfig, **thresholds) -> ExperimentReport:
    return ExperimentReport(scenario=name, experiment=experiment, background=config.label, thresholds=thresholds)


# ============================================================================
# Runners
# ============================================================================

def run_ricci_validate(cfg: RunConfig, config: FlowConfig, mc: MCParams) -> List[ExperimentReport]:
    name = "ricci-validate"
    started = time.perf_counter()
    report = _report(name, "flow_residual", config, residual=RESIDUAL_TOLERANCE, control=CONTROL_RESIDUAL,
                     christoffel_fd=CHRISTOFFEL_FD_TOLERANCE)
    samples = sample_chart_points(config, VALIDATION_POINTS, seed=mc.seed)
    residual = ricci_flow_residual(config, samples)
    report.rows.append(_row(name, config, "ricci_flow_residual", residual, RESIDUAL_TOLERANCE).with_oracle(0.0))
    report.check("flow_equation", residual <= RESIDUAL_TOLERANCE, residual, RESIDUAL_TOLERANCE)

    if config.is_sphere:
        control = ricci_flow_residual(config, samples, ricci_sign=-1.0)
        report.rows.append(_row(name, config, "ricci_flow_residual sign-flipped", control, CONTROL_RESIDUAL,
                                below=False))
        report.check("sign_flipped_control_detected", control > CONTROL_RESIDUAL, control, CONTROL_RESIDUAL)
    else:
        report.notes.append("flat background: the sign-flipped control coincides with the flow equation")

    worst = 0.0
    for p in samples[:CURVATURE_POINTS]:
        gamma = metric_jet(config, p).gamma
        worst = max(worst, float(np.max(np.abs(christoffel_fd(config, p) - gamma))
                                 / max(1.0, float(np.max(np.abs(gamma))))))
    report.rows.append(_row(name, config, "max|Gamma_fd - Gamma|", worst, CHRISTOFFEL_FD_TOLERANCE))
    report.check("christoffel_fd_matches_jet", worst <= CHRISTOFFEL_FD_TOLERANCE, worst, CHRISTOFFEL_FD_TOLERANCE)
    report.runtime_s = time.perf_counter() - started
    return [report]


def _scaling_points(config: FlowConfig, seed: int, sphere_dim: int) -> List[Dict[str, np.ndarray]]:
    rng = np.random.default_rng(seed)
    if config.is_sphere:
        taus = rng.uniform(0.5 * config.T, 0.95 * config.T, CURVATURE_POINTS)
        xs = rng.uniform(-1.0, 1.0, (CURVATURE_POINTS, config.n))
    else:
        taus = rng.uniform(config.delta + 0.1 * (config.T - config.delta), config.T, CURVATURE_POINTS)
        xs = rng.uniform(0.0, config.background.L, (CURVATURE_POINTS, config.n))
    ys = rng.uniform(-0.3, 0.3, (CURVATURE_POINTS, sphere_dim))
    return [{"x": x, "y": y, "tau": tau} for x, y, tau in zip(xs, ys, taus)]


def run_curvature_check(cfg: RunConfig, config: FlowConfig, mc: MCParams) -> List[ExperimentReport]:
    name = "curvature-check"
    started = time.perf_counter()
    table = _report(name, "christoffel_table", config, relative=TABLE_TOLERANCE)
    points = _scaling_points(config, mc.seed, max(cfg.N_small_list))
    for N_small in cfg.N_small_list:
        worst: Dict[str, float] = {}
        for p in points[:TABLE_POINTS]:
            y = np.zeros(N_small)
            y[:min(N_small, p["y"].shape[0])] = p["y"][:N_small]
            point = full_chart_metric(config, N_small).point(p["x"], y, p["tau"])
            for key, value in christoffel_table_check(config, N_small, point).items():
                worst[key] = max(worst.get(key, 0.0), value)
        for key, value in worst.items():
            table.rows.append(_row(name, config, key, value, TABLE_TOLERANCE, N=N_small))
        table.check(f"table_N{N_small}", all(v <= TABLE_TOLERANCE for v in worst.values()),
                    max(worst.values()), TABLE_TOLERANCE)
    table.runtime_s = time.perf_counter() - started

    started = time.perf_counter()
    scaling = _report(name, "ricci_scaling", config, ratio=SCALING_RATIO, torus_floor=TORUS_RICCI_FLOOR)
    rows = ricci_scaling_table(config, cfg.N_small_list, points)
    for r in rows:
        scaling.rows.append(_row(name, config, f"point {r['point']} N*sup|Ric_G|", r["scaled"], N=r["N_small"]))
    if config.is_sphere:
        ratios = []
        for idx in range(len(points)):
            scaled = [r["scaled"] for r in rows if r["point"] == idx]
            ratios.append(max(scaled) / min(scaled) if min(scaled) > 0 else np.inf)
        worst_ratio = float(max(ratios))
        scaling.check("N_times_ricci_bounded", worst_ratio < SCALING_RATIO, worst_ratio, SCALING_RATIO)
    else:
        worst_sup = max(r["sup_ric_frame"] for r in rows)
        scaling.notes.append("the full metric is flat on the static torus")
        scaling.check("ricci_vanishes", worst_sup <= TORUS_RICCI_FLOOR, worst_sup, TORUS_RICCI_FLOOR)
    scaling.runtime_s = time.perf_counter() - started
    return [table, scaling]


def run_operator_check(cfg: RunConfig, config: FlowConfig, mc: MCParams) -> List[ExperimentReport]:
    N_grid = cfg.N_list
    small = [N for N in cfg.N_small_list if N <= SMALL_N_ORACLE_MAX] or [2]
    return [
        scalar_defect_experiment(config, N_grid, seed=mc.seed),
        frame_decomposition_experiment(config, N_grid, seed=mc.seed),
        limit_identity_experiment(config, seed=mc.seed),
        small_n_oracle_experiment(config, small, seed=mc.seed),
    ]


def run_scalar_convergence(cfg: RunConfig, config: FlowConfig, mc: MCParams) -> List[ExperimentReport]:
    N_grid = cfg.N_list
    reports = [
        time_marginal_experiment(config, TIME_GRID, N_grid, mc, start_lag=cfg.start_lag),
        martingale_residual_experiment(config, N_grid, mc, start_lag=cfg.start_lag, save_every=cfg.save_every),
        martingale_residual_experiment(config, [min(N_grid)], mc, start_lag=cfg.start_lag, omit_defect=True,
                                       save_every=cfg.save_every),
    ]
    if not config.is_sphere:
        reports.append(weak_order_check(config, min(N_grid), mc, start_lag=cfg.start_lag))
    return reports


def run_frame_convergence(cfg: RunConfig, config: FlowConfig, mc: MCParams) -> List[ExperimentReport]:
    return [
        frame_concentration_experiment(config, cfg.N_list, mc, start_lag=cfg.start_lag),
        transport_orthogonality_experiment(config, mc),
    ]


def run_cylinder_convergence(cfg: RunConfig, config: FlowConfig, mc: MCParams) -> List[ExperimentReport]:
    reports = [cylinder_convergence_experiment(config, cylinder, cfg.N_list, mc, start_lag=cfg.start_lag)
               for cylinder in default_cylinder_battery(config)]
    reports.append(heat_flow_experiment(config, default_heat_observables(config), HEAT_DURATION, mc))
    return reports


def run_gradient_estimate(cfg: RunConfig, config: FlowConfig, mc: MCParams) -> List[ExperimentReport]:
    reports = [gradient_estimate_experiment(config, cylinder, mc) for cylinder in default_gradient_battery(config)]
    pointwise = MCParams(paths=max(4, mc.paths // 10), step=mc.step, seed=mc.seed, options=mc.options)
    reports.append(gradient_bound_experiment(config, pointwise, duration=HEAT_DURATION))
    return reports


SCENARIOS: Dict[str, Scenario] = {s.name: s for s in (
    Scenario("ricci-validate", "Flow equation residual, sign-flipped control, FD Christoffels",
             run_ricci_validate),
    Scenario("curvature-check", "Full-chart Christoffel table and N * |Ric_G| scaling at small N",
             run_curvature_check),
    Scenario("operator-check", "Scalar defect identity and decay, frame operator split, small-N oracle",
             run_operator_check, (1000, 2000, 4000, 8000)),
    Scenario("scalar-convergence", "Time marginal, martingale residuals and their controls",
             run_scalar_convergence, (100, 1000, 10000)),
    Scenario("frame-convergence", "Orthogonality defect of block frames and parabolic transport",
             run_frame_convergence, (1000, 4000)),
    Scenario("cylinder-convergence", "Cylinder expectations against the parabolic law, heat flow",
             run_cylinder_convergence, (100, 1000, 10000)),
    Scenario("gradient-estimate", "Gradient estimate for cylinder functions and its pointwise form",
             run_gradient_estimate),
)}


# ============================================================================
# Orchestration
# ============================================================================

def scenario_order(name: str) -> List[str]:
    return list(SCENARIOS) if name == "all" else [name]


def resolve_config(cfg: RunConfig) -> RunConfig:
    """Fill settings defaults; a single scenario also gets its default N grid."""
    settings = ConfigManager.get_settings()
    update = {}
    if cfg.paths is None:
        update["paths"] = settings.simulation.default_paths
    if cfg.step is None:
        update["step"] = settings.simulation.default_step
    if cfg.out_dir is None:
        update["out_dir"] = settings.output.default_out_dir
    if cfg.N_list is None and cfg.scenario != "all" and SCENARIOS[cfg.scenario].default_N_list:
        update["N_list"] = list(SCENARIOS[cfg.scenario].default_N_list)
    return cfg.model_copy(update=update)


def library_versions() -> Dict[str, str]:
    versions = {}
    for package in ("numpy", "scipy", "pydantic"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def run_single(scenario: Scenario, cfg: RunConfig, options: Optional[EngineOptions] = None) -> List[ExperimentReport]:
    """Every background of cfg through one scenario."""
    if scenario.default_N_list and cfg.N_list is None:
        cfg = cfg.model_copy(update={"N_list": list(scenario.default_N_list)})
    mc = MCParams(paths=cfg.paths, step=cfg.step, seed=cfg.seed, options=options or EngineOptions.from_settings())
    reports: List[ExperimentReport] = []
    for config in cfg.flow_configs():
        logger.info("Scenario started", extra={"scenario": scenario.name, "background": config.label,
                                               "seed": cfg.seed, "paths": mc.paths, "step": mc.step})
        reports.extend(scenario.runner(cfg, config, mc))
    return reports


def run_scenario(cfg: RunConfig, options: Optional[EngineOptions] = None, write: bool = True):
    """
    Run cfg.scenario (every scenario for 'all'), capture LabErrors per
    scenario and write the artifacts. Returns (RunSummary, reports).
    """
    cfg = resolve_config(cfg)
    all_reports: List[ExperimentReport] = []
    summaries: List[ScenarioSummary] = []
    for name in scenario_order(cfg.scenario):
        started = time.perf_counter()
        try:
            reports = run_single(SCENARIOS[name], cfg, options)
            error = None
        except LabError as e:
            logger.error("Scenario failed", extra={"scenario": name, "error": str(e)}, exc_info=True)
            reports, error = [], ErrorInfo(type=type(e).__name__, message=str(e))
        all_reports.extend(reports)
        summaries.append(ScenarioSummary(
            scenario=name,
            passed=error is None and all(r.passed for r in reports),
            runtime_s=time.perf_counter() - started,
            experiments=[r.summary() for r in reports],
            error=error,
        ))
    summary = RunSummary(passed=all(s.passed for s in summaries), seed=cfg.seed, versions=library_versions(),
                         scenarios=summaries)
    if write:
        write_outputs(all_reports, cfg.out_dir, summary, render_config(cfg))
    logger.info("Run finished", extra={"scenario": cfg.scenario, "passed": summary.passed,
                                       "out_dir": cfg.out_dir})
    return summary, all_reports


# src/core/scenarios.py
