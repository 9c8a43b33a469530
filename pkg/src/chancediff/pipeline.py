"""Batch orchestration of the three-stage pipeline and report computation.

Stages communicate only through on-disk artifacts (dataset CSV, checkpoint,
samples CSV, report JSON/CSV), so any stage can be re-run in isolation.
Report CSV columns follow the conventional benchmark table headers
(FvalMean, FvalStd, FvalMedian, FvalQuan25, FvalQuan75, Probability,
Runtime) for easy diffing.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import empirical_mean_baseline, socp_solve
from .datagen import FeasibleDataset, RestrictionGrid, generate_dataset
from .guidance import GuidanceConfig
from .network import load_checkpoint, save_checkpoint
from .problems import CCPInstance, draw_uncertainty, load_instance
from .sampler import SamplerConfig, Trajectory, feasibility_repair, sample
from .schedule import NoiseSchedule
from .training import TrainConfig, train

REPORT_COLUMNS = ("Method", "Repeat", "FvalMean", "FvalStd", "FvalMedian",
                  "FvalQuan25", "FvalQuan75", "Probability", "Runtime")

ALL_STAGES = ("generate", "train", "sample", "evaluate")


@dataclass(frozen=True)
class ExperimentConfig:
    instance_path: str | None = None
    output_dir: str = "runs/default"
    seed: int = 0
    stages: tuple = ALL_STAGES

    # stage 1
    grid_low: float = 0.0
    grid_high: float = 0.5
    grid_count: int = 1000
    sample_count: int = 100           # L: draws behind hbar and the risk labels

    # stage 2
    schedule_steps: int = 1000
    train_steps: int = 6000
    batch_size: int = 64
    learning_rate: float = 1e-3
    p_uncond: float = 0.1
    width: int = 256
    depth: int = 4
    embed_dim: int = 32

    # stage 3
    sampler_steps: int = 100
    sampler_mode: str = "deterministic"
    guidance_order: str = "first"      # "first" | "second" | "none"
    beta: float = 30.0
    sigma2: float = 0.1
    w: float = 0.0
    rho: float | None = None           # None: take the instance's risk level
    repeats: int = 100
    record_trajectories: bool = False

    # evaluation
    eval_draws: int = 100_000

    dataset_path: str | None = None
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeat count must be >= 1")
        unknown = set(self.stages) - set(ALL_STAGES)
        if unknown:
            raise ValueError(f"unknown stages: {sorted(unknown)}")

    def resolve_dataset_path(self) -> Path:
        return Path(self.dataset_path) if self.dataset_path else Path(self.output_dir) / "dataset.csv"

    def resolve_checkpoint_path(self) -> Path:
        return Path(self.checkpoint_path) if self.checkpoint_path else Path(self.output_dir) / "checkpoint.bin"


@dataclass(frozen=True)
class SampleReport:
    fval_mean: float
    fval_std: float
    fval_median: float
    fval_q25: float
    fval_q75: float
    empirical_feasibility: float
    runtime_seconds: float
    repeats: int
    method: str = "guided-diffusion"

    def __post_init__(self):
        if not (self.fval_q25 <= self.fval_median <= self.fval_q75):
            raise ValueError("quantiles must be ordered q25 <= median <= q75")
        if not 0.0 <= self.empirical_feasibility <= 1.0:
            raise ValueError("feasibility must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    def csv_row(self) -> str:
        return ",".join([self.method, str(self.repeats)] +
                        [f"{v:.6g}" for v in (self.fval_mean, self.fval_std, self.fval_median,
                                              self.fval_q25, self.fval_q75,
                                              self.empirical_feasibility, self.runtime_seconds)])

    def write(self, stem: Path) -> None:
        stem = Path(stem)
        stem.with_suffix(".json").write_text(self.to_json())
        stem.with_suffix(".csv").write_text(
            ",".join(REPORT_COLUMNS) + "\n" + self.csv_row() + "\n")


def compute_report(samples, instance: CCPInstance, eval_draws: int, seed: int,
                   runtime_seconds: float = 0.0, method: str = "guided-diffusion") -> SampleReport:
    """Repair each sample, evaluate the objective, and summarize.

    The median uses the sorted-order convention (mean of the two central
    values for an even count); quartiles interpolate linearly between order
    statistics. Feasibility is the average over samples of the satisfaction
    frequency on one shared batch of fresh draws.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 1:
        raise ValueError("need at least one sample")
    repaired = feasibility_repair(instance, samples)
    fvals = np.atleast_1d(instance.objective.value(repaired))
    draws = draw_uncertainty(instance.uncertainty, eval_draws, seed=seed)
    sat = instance.constraint.g(repaired, draws) >= 0.0   # (eval_draws, R)
    feasibility = float(np.mean(sat))
    return SampleReport(
        fval_mean=float(np.mean(fvals)),
        fval_std=float(np.std(fvals)),
        fval_median=float(np.median(fvals)),
        fval_q25=float(np.quantile(fvals, 0.25)),
        fval_q75=float(np.quantile(fvals, 0.75)),
        empirical_feasibility=feasibility,
        runtime_seconds=runtime_seconds,
        repeats=int(fvals.shape[0]),
        method=method,
    )


def emit_plot_data(trajectories: list[Trajectory], output_dir) -> list[Path]:
    """Write objective-trace summaries (and 2D paths when n = 2).

    The summary CSV has exactly steps+1 rows: per visited step the median
    and quartiles of f(posterior mean) across trajectories. An empty
    trajectory list writes nothing and succeeds.
    """
    if not trajectories:
        return []
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []

    traces = np.stack([t.objective_trace for t in trajectories])   # (R, steps+1)
    times = trajectories[0].times
    summary = output_dir / "objective_trace.csv"
    with open(summary, "w") as fh:
        fh.write("step,t,median,q25,q75\n")
        for k in range(traces.shape[1]):
            col = traces[:, k]
            fh.write(f"{k},{times[k]},{np.median(col):.10g},"
                     f"{np.quantile(col, 0.25):.10g},{np.quantile(col, 0.75):.10g}\n")
    written.append(summary)

    if trajectories[0].states.shape[1] == 2:
        paths = output_dir / "paths_2d.csv"
        with open(paths, "w") as fh:
            fh.write("sample,step,t,x_1,x_2\n")
            for i, tr in enumerate(trajectories):
                for k in range(tr.states.shape[0]):
                    fh.write(f"{i},{k},{tr.times[k]},"
                             f"{tr.states[k, 0]:.10g},{tr.states[k, 1]:.10g}\n")
        written.append(paths)
    return written


def _write_trajectories(trajectories: list[Trajectory], output_dir) -> None:
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    n = trajectories[0].states.shape[1] if trajectories else 0
    header = ",".join(["step", "t"] + [f"x_{i + 1}" for i in range(n)] + ["f_of_mu"])
    for i, tr in enumerate(trajectories):
        with open(output_dir / f"trajectory_{i:04d}.csv", "w") as fh:
            fh.write(header + "\n")
            for k in range(tr.states.shape[0]):
                coords = ",".join(f"{v:.10g}" for v in tr.states[k])
                fh.write(f"{k},{tr.times[k]},{coords},{tr.objective_trace[k]:.10g}\n")


def _write_samples(path: Path, points: np.ndarray, rho: float, flags: np.ndarray) -> None:
    n = points.shape[1]
    header = ",".join([f"x_{i + 1}" for i in range(n)] + ["rho", "repaired"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row, flag in zip(points, flags):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{rho:.17g},{int(flag)}\n")


def _read_samples(path: Path) -> np.ndarray:
    body = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return body[:, :-2]


def _load_config_instance(config: ExperimentConfig) -> CCPInstance:
    if config.instance_path is None:
        raise ValueError("this stage needs an instance definition file")
    return load_instance(config.instance_path)


def stage_generate(config: ExperimentConfig, instance: CCPInstance | None = None) -> FeasibleDataset:
    instance = instance or _load_config_instance(config)
    grid = RestrictionGrid.linspace(config.grid_low, config.grid_high, config.grid_count)
    dataset = generate_dataset(instance, grid, config.sample_count, seed=config.seed)
    path = config.resolve_dataset_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.save(path)
    return dataset


def stage_train(config: ExperimentConfig):
    dataset = FeasibleDataset.load(config.resolve_dataset_path())
    schedule = NoiseSchedule.linear(config.schedule_steps)
    tconf = TrainConfig(steps=config.train_steps, batch_size=config.batch_size,
                        learning_rate=config.learning_rate, p_uncond=config.p_uncond,
                        seed=config.seed, width=config.width, depth=config.depth,
                        embed_dim=config.embed_dim)
    log_rows = []
    net = train(dataset, tconf, schedule,
                callback=lambda step, loss, nulls: log_rows.append((step, loss)))
    path = config.resolve_checkpoint_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, schedule, path)
    with open(Path(config.output_dir) / "training_log.csv", "w") as fh:
        fh.write("step,loss\n")
        for step, loss in log_rows:
            fh.write(f"{step},{loss:.10g}\n")
    return net


def _sampler_config(config: ExperimentConfig, instance: CCPInstance) -> SamplerConfig:
    guidance = None
    if config.guidance_order != "none":
        guidance = GuidanceConfig(beta=config.beta, order=config.guidance_order,
                                  sigma2=config.sigma2, w=config.w)
    rho = config.rho if config.rho is not None else instance.constraint.rho
    return SamplerConfig(steps=config.sampler_steps, mode=config.sampler_mode,
                         guidance=guidance, rho=rho, batch=config.repeats,
                         seed=config.seed, record_trajectories=config.record_trajectories)


def stage_sample(config: ExperimentConfig, instance: CCPInstance | None = None):
    instance = instance or _load_config_instance(config)
    net, schedule = load_checkpoint(config.resolve_checkpoint_path())
    sconf = _sampler_config(config, instance)
    start = time.perf_counter()
    raw, trajectories = sample(net, schedule, sconf, objective=instance.objective)
    elapsed = time.perf_counter() - start
    runtime_per_repeat = elapsed / config.repeats

    repaired = feasibility_repair(instance, raw)
    flags = np.any(repaired != raw, axis=1)
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_samples(outdir / "samples_raw.csv", raw, sconf.rho, np.zeros(len(raw), dtype=bool))
    _write_samples(outdir / "samples.csv", repaired, sconf.rho, flags)
    (outdir / "sample_runtime.json").write_text(
        json.dumps({"runtime_per_repeat_seconds": runtime_per_repeat,
                    "total_seconds": elapsed, "repeats": config.repeats}))
    if trajectories:
        _write_trajectories(trajectories, outdir / "trajectories")
        emit_plot_data(trajectories, outdir / "trajectories")
    return repaired, trajectories, runtime_per_repeat


def stage_evaluate(config: ExperimentConfig, instance: CCPInstance | None = None,
                   method: str = "guided-diffusion") -> SampleReport:
    instance = instance or _load_config_instance(config)
    samples = _read_samples(Path(config.output_dir) / "samples.csv")
    runtime = 0.0
    runtime_file = Path(config.output_dir) / "sample_runtime.json"
    if runtime_file.exists():
        runtime = json.loads(runtime_file.read_text())["runtime_per_repeat_seconds"]
    report = compute_report(samples, instance, config.eval_draws, seed=config.seed,
                            runtime_seconds=runtime, method=method)
    report.write(Path(config.output_dir) / "report")
    return report


def run_pipeline(config: ExperimentConfig, instance: CCPInstance | None = None) -> SampleReport | None:
    """Execute the enabled stages in order; artifacts land in output_dir.

    Returns the report when the evaluate stage is enabled. Stage failures
    propagate with the failing stage named; artifacts written by earlier
    stages stay on disk.
    """
    instance = instance or _load_config_instance(config)
    report = None
    for stage in ALL_STAGES:
        if stage not in config.stages:
            continue
        try:
            if stage == "generate":
                stage_generate(config, instance)
            elif stage == "train":
                stage_train(config)
            elif stage == "sample":
                stage_sample(config, instance)
            elif stage == "evaluate":
                report = stage_evaluate(config, instance)
        except Exception as exc:
            exc.args = (f"[stage {stage}] {exc}",)
            raise
    return report


def baseline_reports(instance: CCPInstance, eval_draws: int = 100_000,
                     seed: int = 0, draws_for_mean: int = 100) -> list[SampleReport]:
    """Exact conic solution and the empirical-mean restricted solution, as
    single-repeat reports in the shared CSV schema."""
    start = time.perf_counter()
    sol = socp_solve(instance)
    socp_runtime = time.perf_counter() - start
    socp_report = compute_report(sol.x_star[None, :], instance, eval_draws, seed,
                                 runtime_seconds=socp_runtime, method="cone-exact")

    draws = draw_uncertainty(instance.uncertainty, draws_for_mean, seed=seed)
    start = time.perf_counter()
    x_mean, _ = empirical_mean_baseline(instance, draws)
    mean_runtime = time.perf_counter() - start
    mean_report = compute_report(x_mean[None, :], instance, eval_draws, seed,
                                 runtime_seconds=mean_runtime, method="empirical-mean")
    return [socp_report, mean_report]


def write_report_table(reports: list[SampleReport], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(REPORT_COLUMNS) + "\n")
        for rep in reports:
            fh.write(rep.csv_row() + "\n")
