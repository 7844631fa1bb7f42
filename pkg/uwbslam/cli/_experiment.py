import configparser
import logging
import math
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..concurrently import MultiProcess
from ..config import (BasicConfig, DpgoConfig, EstimatorConfig, NetConfig, NoiseConfig, ParameterError, PcmConfig,
                      PipelineConfig, ScenarioConfig, SearchConfig)
from ..config._constants import (COMM_REPORT_CSV, COMM_REPORT_FILE, CONFIG_FILE, COST_TRACE_FILE, DATASET_FILE,
                                 DEAD_RECKONING_FILE, INLIER_CLOSURES_FILE, METRICS_FILE, METRICS_TEXT_FILE,
                                 PRESETS, RAW_CLOSURES_FILE, TRAJECTORY_FILE)
from ..config.conf import _choice, _positive
from ..estimation import (RangingWindow, count_local_minima, estimate_relative_pose, near_collinear_window,
                          residual_grid)
from ..file import (optional_path, read_closures, read_dataset, read_json, read_trajectories, write_closures,
                    write_dataset, write_json, write_rows, write_text, write_trajectories)
from ..geometry import between, wrap_angle
from ..metrics import STAGES, MetricsReport, compute_metrics
from ..node import SimulationResult, run_simulation
from ..scenario import (Dataset, dead_reckoning, generate_trajectories, max_pairwise_distance,
                        simulate_dataset)
from ..utils import Timer

__all__ = [
    "ExperimentConfig",
    "SECTIONS",
    "load_experiment",
    "parse_overrides",
    "experiment_to_ini",
    "load_dataset",
    "generate",
    "run_experiment",
    "run_sweep",
    "sweep_file",
    "landscape_file",
    "recompute_metrics",
    "SWEEP_COLUMNS",
]

logger = logging.getLogger(__name__)

SECTIONS = ("scenario", "noise", "search", "estimator", "pcm", "dpgo", "network", "pipeline", "experiment")

_METRIC_COLUMNS = tuple(f"{stage}_{field}" for stage in STAGES
                        for field in ("trans_mean", "trans_std", "trans_mse", "rot_mean", "rot_std", "rot_mse"))
SWEEP_COLUMNS = (("preset", "key", "value", "seed", "raw_closures", "inlier_closures", "dpgo_rounds",
                  "final_cost", "bytes_total", "node_tick_ms", "dpgo_round_ms", "estimation_ms", "pcm_ms")
                 + _METRIC_COLUMNS)


class ExperimentConfig(BasicConfig):
    """
    Everything one invocation needs: the scenario (or a dataset path), noise,
    pipeline and network settings plus the sweep grids.

    Stored as an INI file with one section per nested config; ``experiment``
    holds the fields of this class.
    """
    output_dir = "results"
    seeds = (42,)
    preset = ""
    taus = (10, 25, 50, 100, 200)
    deltas = (0.05, 0.1, 0.2)
    epsilons = (0.01, 0.05, 0.1, 0.2, 0.5, 0.8)
    range_fractions = (0.2, 0.4, 0.6, 0.8)
    odom_noise_scales = (0.5, 1.0, 2.0, 4.0)
    dpgo_rates = (10.0, 1.0)
    modes = ("coarse", "combined", "nls")
    windows_per_seed = 20
    max_threads = 1
    scenario = None
    noise = None
    pipeline = None
    net = None

    def __init__(self, hook=None, **kwargs):
        kwargs["scenario"] = kwargs.get("scenario") or ScenarioConfig()
        kwargs["noise"] = kwargs.get("noise") or NoiseConfig()
        kwargs["pipeline"] = kwargs.get("pipeline") or PipelineConfig()
        kwargs["net"] = kwargs.get("net") or NetConfig()
        super().__init__(hook=hook, **kwargs)

    def _before(self, new_config: dict):
        super()._before(new_config)
        cfg = self._merged(new_config)
        if not cfg["seeds"]:
            raise ParameterError("seeds", cfg["seeds"], "at least one seed")
        if cfg["preset"]:
            _choice("preset", cfg["preset"], tuple(PRESETS))
            field = PRESETS[cfg["preset"]]["values_field"]
            if not cfg[field]:
                raise ParameterError(field, cfg[field], f"a non-empty list for preset {cfg['preset']!r}")
        for mode in cfg["modes"]:
            _choice("modes", mode, ("combined", "coarse", "nls"))
        _positive("windows_per_seed", cfg["windows_per_seed"])
        _positive("max_threads", cfg["max_threads"])
        for name, kind in (("scenario", ScenarioConfig), ("noise", NoiseConfig),
                           ("pipeline", PipelineConfig), ("net", NetConfig)):
            if cfg[name] is not None and not isinstance(cfg[name], kind):
                raise ParameterError(name, cfg[name], f"a {kind.__name__}")

    def section(self, name: str) -> BasicConfig:
        if name == "scenario":
            return self.scenario
        if name == "noise":
            return self.noise
        if name in ("search", "estimator", "pcm", "dpgo"):
            return getattr(self.pipeline, name)
        if name == "network":
            return self.net
        if name == "pipeline":
            return self.pipeline
        if name == "experiment":
            return self
        raise KeyError(f"unknown config section [{name}], expected one of {SECTIONS}")

    def sections(self) -> Dict[str, Dict[str, str]]:
        return {name: self.section(name).to_strings() for name in SECTIONS}

    @classmethod
    def from_sections(cls, sections: Mapping[str, Mapping[str, str]]) -> "ExperimentConfig":
        """Builds a config from INI-style sections; missing sections and keys keep their defaults."""
        unknown = set(sections) - set(SECTIONS)
        if unknown:
            raise ParameterError("section", sorted(unknown)[0], f"one of {SECTIONS}")

        def build(kind, name):
            return kind.from_strings(dict(sections.get(name, {})))

        pipeline = PipelineConfig.from_strings(dict(sections.get("pipeline", {})),
                                               base=PipelineConfig(search=build(SearchConfig, "search"),
                                                                   estimator=build(EstimatorConfig, "estimator"),
                                                                   pcm=build(PcmConfig, "pcm"),
                                                                   dpgo=build(DpgoConfig, "dpgo")))
        base = cls(scenario=build(ScenarioConfig, "scenario"), noise=build(NoiseConfig, "noise"),
                   pipeline=pipeline, net=build(NetConfig, "network"))
        return cls.from_strings(dict(sections.get("experiment", {})), base=base)

    def with_setting(self, key: str, value: Any) -> "ExperimentConfig":
        """Copy with ``section.key`` set to ``value``."""
        return self.with_settings({key: value})

    def with_settings(self, settings: Mapping[str, Any]) -> "ExperimentConfig":
        sections = self.sections()
        for key, value in settings.items():
            section, _, name = key.partition(".")
            if not name or section not in SECTIONS:
                raise ParameterError("setting", key, "a <section>.<key> name")
            if isinstance(value, float):
                text = repr(value)
            elif isinstance(value, (tuple, list)):
                text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            else:
                text = str(value)
            sections[section][name] = text
        return ExperimentConfig.from_sections(sections)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.with_settings({"scenario.seed": seed, "noise.rng_seed": seed, "network.seed": seed})


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """``["pcm.epsilon=0.5", ...]`` to ``{"pcm.epsilon": "0.5"}``."""
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ParameterError("--set", item, "<section>.<key>=<value>")
        out[key.strip()] = value.strip()
    return out


def load_experiment(path: Optional[str] = None, overrides: Mapping[str, str] = None) -> ExperimentConfig:
    """Defaults, then the INI file at ``path``, then ``section.key`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"config file {path} not found")
        parser.read(path, encoding="utf-8")
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        sections.setdefault(section, {})[name] = value
    return ExperimentConfig.from_sections(sections)


def experiment_to_ini(cfg: ExperimentConfig) -> str:
    lines = []
    for name, values in cfg.sections().items():
        lines.append(f"[{name}]")
        lines.extend(f"{key} = {value}" for key, value in values.items())
        lines.append("")
    return "\n".join(lines)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.scenario.dataset:
        return read_dataset(cfg.scenario.dataset)
    return simulate_dataset(cfg.scenario, cfg.noise)


def generate(cfg: ExperimentConfig, path: Optional[str] = None) -> str:
    """Simulates the configured scenario and writes it as a dataset file."""
    path = path or os.path.join(cfg.output_dir, DATASET_FILE)
    write_dataset(path, simulate_dataset(cfg.scenario, cfg.noise))
    logger.info(f"dataset written to {path}")
    return path


def _cost_rows(result: SimulationResult) -> List[Dict[str, Any]]:
    rows = []
    for status in result.cost_trace:
        finite = [s for s in status.step_norms.values() if math.isfinite(s)]
        rows.append({"round": status.round, "cost": float(status.cost), "complete": int(status.complete),
                     "converged": int(status.converged), "max_step": float(max(finite)) if finite else math.nan,
                     "skipped": len(status.skipped), "resent": status.resent})
    return rows


def _report(result: SimulationResult, dataset: Dataset) -> MetricsReport:
    if not dataset.truth:
        report = MetricsReport(raw_closures=len(result.raw_closures), inlier_closures=len(result.inlier_closures),
                               timings_ms=dict(result.timings), bytes_total=result.comm.total_bytes,
                               dpgo_rounds=result.rounds, final_cost=result.final_cost)
        report.bytes_by_kind = {str(k): s.bytes for k, s in result.comm.kinds.items()}
        return report
    return compute_metrics(dataset.truth, result.raw_closures, result.inlier_closures, result.trajectories,
                           dead_reckoning(dataset.odometry, dataset.truth), result.anchored,
                           result.timings, result.comm, result.cost_trace)


def run_experiment(cfg: ExperimentConfig, output_dir: Optional[str] = None,
                   dataset: Optional[Dataset] = None) -> Tuple[MetricsReport, SimulationResult]:
    """
    One pipeline run with every output file written to ``output_dir``:
    dataset, trajectories, dead reckoning, raw and consistent closures, the
    DPGO cost trace, the communication report and the metrics.
    """
    output_dir = output_dir or cfg.output_dir
    dataset = dataset or load_dataset(cfg)
    result = run_simulation(dataset, cfg.pipeline, cfg.noise, cfg.net)
    report = _report(result, dataset)

    def out(name):
        return os.path.join(output_dir, name)

    write_text(out(CONFIG_FILE), experiment_to_ini(cfg))
    write_dataset(out(DATASET_FILE), dataset)
    write_trajectories(out(TRAJECTORY_FILE), result.trajectories)
    if dataset.truth:
        write_trajectories(out(DEAD_RECKONING_FILE), dead_reckoning(dataset.odometry, dataset.truth))
    write_closures(out(RAW_CLOSURES_FILE), result.raw_closures)
    write_closures(out(INLIER_CLOSURES_FILE), result.inlier_closures)
    write_rows(out(COST_TRACE_FILE), _cost_rows(result),
               ("round", "cost", "complete", "converged", "max_step", "skipped", "resent"))
    write_text(out(COMM_REPORT_FILE), result.comm.to_text())
    write_rows(out(COMM_REPORT_CSV), result.comm.rows(), ("kind", "sent", "delivered", "dropped", "expired", "bytes"))
    metrics = report.to_dict()
    metrics["anchored"] = list(result.anchored)
    write_json(out(METRICS_FILE), metrics)
    write_text(out(METRICS_TEXT_FILE), report.to_text())
    logger.info(f"run written to {output_dir}")
    return report, result


def sweep_file(output_dir: str, preset: str) -> str:
    return os.path.join(output_dir, f"sweep_{preset}.csv")


def landscape_file(output_dir: str, delta: float, seed: int) -> str:
    return os.path.join(output_dir, f"landscape_delta{delta:g}_seed{seed}.csv")


def _apply(cfg: ExperimentConfig, key: str, value: Any) -> ExperimentConfig:
    """Sets a swept value; ``range_fraction`` and ``odom_noise_scale`` are derived settings."""
    if key == "range_fraction":
        truth = generate_trajectories(cfg.scenario.n_robots, cfg.scenario.duration, cfg.scenario.speed_limit,
                                      (cfg.scenario.arena_width, cfg.scenario.arena_height), cfg.scenario.seed,
                                      rate=cfg.noise.uwb_rate)
        limit = max(float(value) * max_pairwise_distance(truth), 1e-3)
        return cfg.with_settings({"noise.max_range": limit, "network.comm_range": limit})
    if key == "odom_noise_scale":
        return cfg.with_settings({"noise.odom_trans_sigma": cfg.noise.odom_trans_sigma * float(value),
                                  "noise.odom_rot_sigma": cfg.noise.odom_rot_sigma * float(value)})
    return cfg.with_setting(key, value)


def _metric_row(report: MetricsReport) -> Dict[str, Any]:
    row = {}
    for stage in STAGES:
        errors = report.stage(stage)
        for field in ("trans_mean", "trans_std", "trans_mse", "rot_mean", "rot_std", "rot_mse"):
            row[f"{stage}_{field}"] = float(getattr(errors, field))
    return row


def _pipeline_cell(cell: Tuple[str, str, Any, int, ExperimentConfig]) -> Dict[str, Any]:
    preset, key, value, seed, cfg = cell
    dataset = load_dataset(cfg)
    result = run_simulation(dataset, cfg.pipeline, cfg.noise, cfg.net)
    report = _report(result, dataset)
    row = {"preset": preset, "key": key, "value": value, "seed": seed,
           "raw_closures": report.raw_closures, "inlier_closures": report.inlier_closures,
           "dpgo_rounds": report.dpgo_rounds, "final_cost": float(report.final_cost),
           "bytes_total": report.bytes_total}
    for name in ("node_tick", "dpgo_round", "estimation", "pcm"):
        row[f"{name}_ms"] = float(result.timings.get(name, math.nan))
    row.update(_metric_row(report))
    return row


def _benchmark_windows(dataset: Dataset, tau: int, count: int, uwb_rate: float,
                       source: int = 0, target: int = 1) -> List[RangingWindow]:
    """Up to ``count`` evenly spaced windows of ``tau`` contiguous rangings from ``source`` to ``target``."""
    rangings = [m for m in dataset.ranging if m.source == source and m.target == target]
    if len(rangings) < tau:
        return []
    odom_a, odom_b = dataset.odometry[source], dataset.odometry[target]
    gap = 1.5 / uwb_rate
    ends = np.unique(np.linspace(tau - 1, len(rangings) - 1, count).astype(int))
    windows = []
    for end in ends:
        chunk = rangings[end - tau + 1:end + 1]
        if chunk[-1].t - chunk[0].t > (tau - 1) * gap:
            continue
        if chunk[0].t < max(odom_a.start_time, odom_b.start_time) or chunk[-1].t > min(odom_a.end_time,
                                                                                        odom_b.end_time):
            continue
        windows.append(RangingWindow.from_streams(odom_a, odom_b, chunk))
    return windows


def _window_errors(window: RangingWindow, truth, pose) -> Tuple[float, float]:
    true = between(truth[window.source].interpolate(window.t), truth[window.target].interpolate(window.t))
    return (math.hypot(pose.x - true.x, pose.y - true.y),
            math.degrees(abs(wrap_angle(pose.theta - true.theta))))


def _estimation_cell(cell: Tuple[str, str, Any, int, ExperimentConfig]) -> Dict[str, Any]:
    """
    Scores every estimator mode on the same benchmark windows. Windows the
    estimator rejects for lack of excitation are left out of every mode;
    ``ambiguous`` counts the kept windows the combined estimator flags.
    """
    preset, key, value, seed, cfg = cell
    dataset = load_dataset(cfg)
    search, estimator = cfg.pipeline.search, cfg.pipeline.estimator
    tau = estimator.window_samples(cfg.noise.uwb_rate)
    windows = _benchmark_windows(dataset, tau, cfg.windows_per_seed, cfg.noise.uwb_rate)
    usable = [w for w in windows if len(w) >= estimator.min_window
              and min(w.path_lengths()) >= estimator.min_excitation]
    row = {"preset": preset, "key": key, "value": value, "seed": seed, "windows": len(usable), "ambiguous": 0}
    for mode in cfg.modes:
        trans, rot, times = [], [], []
        for window in usable:
            with Timer() as timer:
                lc = estimate_relative_pose(window, search, estimator, mode=mode)
            times.append(timer.elapsed)
            t_err, r_err = _window_errors(window, dataset.truth, lc.pose)
            trans.append(t_err)
            rot.append(r_err)
            if mode == "combined" and lc.degenerate:
                row["ambiguous"] += 1
        row[f"{mode}_trans_mean"] = float(np.mean(trans)) if trans else math.nan
        row[f"{mode}_trans_std"] = float(np.std(trans)) if trans else math.nan
        row[f"{mode}_rot_mean"] = float(np.mean(rot)) if rot else math.nan
        row[f"{mode}_rot_std"] = float(np.std(rot)) if rot else math.nan
        row[f"{mode}_ms"] = 1e3 * float(np.median(times)) if times else math.nan
    return row


def _landscape_cell(cell: Tuple[str, str, Any, int, ExperimentConfig]) -> Dict[str, Any]:
    preset, key, value, seed, cfg = cell
    tau = cfg.pipeline.estimator.window_samples(cfg.noise.uwb_rate)
    window = near_collinear_window(tau, cfg.noise.uwb_rate)
    phis, thetas, grid = residual_grid(window, cfg.pipeline.search)
    rows = [{"phi": float(phi), "theta": float(theta), "residual": float(grid[i, j])}
            for i, phi in enumerate(phis) for j, theta in enumerate(thetas)]
    write_rows(landscape_file(cfg.output_dir, float(value), seed), rows, ("phi", "theta", "residual"))
    return {"preset": preset, "key": key, "value": value, "seed": seed, "window_t": window.t,
            "local_minima": count_local_minima(grid), "min_residual": float(grid.min())}


_CELL_RUNNERS = {"pipeline": _pipeline_cell, "estimation": _estimation_cell, "landscape": _landscape_cell}


def run_sweep(cfg: ExperimentConfig, preset: Optional[str] = None) -> str:
    """
    Runs every (value, seed) cell of a preset and writes one CSV row per cell.
    Cells run on ``max_threads`` threads. Each cell keeps its own timings, but
    concurrent cells share the CPU, so timing columns read best single-threaded.

    Returns:
        path of the sweep CSV.
    """
    preset = preset or cfg.preset
    if preset not in PRESETS:
        raise ParameterError("preset", preset, f"one of {tuple(PRESETS)}")
    entry = PRESETS[preset]
    base = cfg.with_settings(entry["fixed"]) if entry["fixed"] else cfg
    values = getattr(cfg, entry["values_field"])
    if not values:
        raise ParameterError(entry["values_field"], values, "a non-empty sweep list")
    cells = []
    for value in values:
        for seed in cfg.seeds:
            cells.append((preset, entry["key"], value, seed, _apply(base.with_seed(seed), entry["key"], value)))
    logger.info(f"sweep {preset}: {entry['description']} over {len(values)} values x {len(cfg.seeds)} seeds")
    runner = _CELL_RUNNERS[entry["kind"]]
    if cfg.max_threads > 1:
        rows = MultiProcess(cfg.max_threads).map(runner, cells)
    else:
        rows = [runner(cell) for cell in cells]
    columns = _columns(entry["kind"], cfg.modes)
    path = sweep_file(cfg.output_dir, preset)
    write_rows(path, rows, columns)
    logger.info(f"sweep {preset}: {len(rows)} rows written to {path}")
    return path


def _columns(kind: str, modes: Sequence[str]) -> Tuple[str, ...]:
    if kind == "pipeline":
        return SWEEP_COLUMNS
    head = ("preset", "key", "value", "seed")
    if kind == "landscape":
        return head + ("window_t", "local_minima", "min_residual")
    per_mode = tuple(f"{mode}_{field}" for mode in modes
                     for field in ("trans_mean", "trans_std", "rot_mean", "rot_std", "ms"))
    return head + ("windows", "ambiguous") + per_mode


def recompute_metrics(run_dir: str) -> MetricsReport:
    """
    Scores the outputs of an earlier run again from its files. Timings, bytes
    and the anchored set come from the previous metrics file when present.

    Raises:
        MetricsError: the run's dataset carries no ground truth.
    """
    missing = [name for name in (DATASET_FILE, TRAJECTORY_FILE, RAW_CLOSURES_FILE, INLIER_CLOSURES_FILE)
               if not os.path.isfile(os.path.join(run_dir, name))]
    if missing:
        raise FileNotFoundError(f"{run_dir} lacks {', '.join(missing)}")
    dataset = read_dataset(os.path.join(run_dir, DATASET_FILE))
    previous = {}
    if optional_path(run_dir, METRICS_FILE):
        previous = read_json(os.path.join(run_dir, METRICS_FILE))
    dr_path = optional_path(run_dir, DEAD_RECKONING_FILE)
    report = compute_metrics(dataset.truth,
                             read_closures(os.path.join(run_dir, RAW_CLOSURES_FILE)),
                             read_closures(os.path.join(run_dir, INLIER_CLOSURES_FILE)),
                             read_trajectories(os.path.join(run_dir, TRAJECTORY_FILE)),
                             read_trajectories(dr_path) if dr_path else None,
                             previous.get("anchored"))
    old = MetricsReport.from_dict(previous) if previous else MetricsReport()
    report.timings_ms = old.timings_ms
    report.bytes_total = old.bytes_total
    report.bytes_by_kind = old.bytes_by_kind
    report.dpgo_rounds = old.dpgo_rounds
    report.final_cost = old.final_cost
    metrics = report.to_dict()
    metrics["anchored"] = previous.get("anchored")
    write_json(os.path.join(run_dir, METRICS_FILE), metrics)
    write_text(os.path.join(run_dir, METRICS_TEXT_FILE), report.to_text())
    return report
