"""Seeded experiment runs, update-cost benchmarks and model comparisons."""

from __future__ import annotations

import csv
import gc
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import sim
from .baselines import make_model
from .config import ModelDef, RunConfig, TaskDef
from .controller import PHASES, ControlConfig, Task, TrajectoryLog, run_servo_loop, warm_start
from .errors import ConfigError, FogprError, InputError
from .fo_gpr import OnlineGP, add_observation, empty_state
from .features import FeatureSpec
from .gp_core import Hyperparams

log = logging.getLogger(__name__)

TIMING_WARMUP = 10


@dataclass
class ResolvedTask:
    name: str
    world: sim.World
    task: Task
    control: ControlConfig
    warm_n: int
    warm_amplitude: float

    @property
    def in_dim(self) -> int:
        return len(self.task.x_d)

    @property
    def out_dim(self) -> int:
        return self.world.n_controls


def resolve_task(td: TaskDef, explore: bool | None = None) -> ResolvedTask:
    """Build the world, feature map and goal of a task; errors name the bad field."""
    try:
        spec = FeatureSpec.from_dicts(td.features)
    except InputError as exc:
        raise ConfigError(f"task.features: {exc}") from None
    try:
        world = sim.build_world(td.world.template, td.world.params)
    except ConfigError as exc:
        raise ConfigError(f"task.world: {exc}") from None
    except (InputError, ValueError, IndexError) as exc:
        raise ConfigError(f"task.world.params: {exc}") from None
    try:
        x0 = world.features(spec)
    except InputError as exc:
        raise ConfigError(f"task.features: {exc}") from None
    if td.target.offset is not None:
        if len(td.target.offset) != world.n_controls:
            raise ConfigError(
                f"task.target.offset: {len(td.target.offset)} values for {world.n_controls} actuated coordinates"
            )
        try:
            goal = sim.solve_equilibrium(world, sim.move_actuated(world, td.target.offset))
        except FogprError as exc:
            raise ConfigError(f"task.target.offset: target configuration cannot be solved: {exc}") from None
        x_d = goal.features(spec)
    else:
        x_d = np.asarray(td.target.x_d, dtype=float)
        if x_d.shape != x0.shape:
            raise ConfigError(f"task.target.x_d: has {len(x_d)} values, features have {len(x0)}")
    overrides = td.control.overrides()
    if explore is not None:
        overrides["explore"] = explore
    try:
        control = ControlConfig(**overrides)
    except InputError as exc:
        raise ConfigError(f"task.control: {exc}") from None
    return ResolvedTask(td.name, world, Task(spec, x_d), control, td.warm_start.n, td.warm_start.amplitude)


def build_model(md: ModelDef, rt: ResolvedTask):
    hp = Hyperparams(md.sigma_rbf, md.sigma_n, md.max_size, rt.control.eta)
    return make_model(md.kind, rt.in_dim, rt.out_dim, hp, md.freeze_at, md.learning_rate)


# -- single runs ------------------------------------------------------------


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": float("nan"), "p95": float("nan"), "max": float("nan")}
    return {"mean": float(v.mean()), "p95": float(np.percentile(v, 95)), "max": float(v.max())}


@dataclass
class SeedResult:
    seed: int
    success: bool
    steps_to_success: int | None
    final_error: float
    n_steps: int
    update_us: dict = field(default_factory=dict)
    cycle_us: dict = field(default_factory=dict)
    error: str | None = None


def summarize(seed: int, tlog: TrajectoryLog, error: str | None = None) -> SeedResult:
    done = [r for r in tlog.records if "update" in r.timings][TIMING_WARMUP:]
    return SeedResult(
        seed=seed,
        success=tlog.success,
        steps_to_success=tlog.steps_to_success,
        final_error=tlog.final_error,
        n_steps=len(tlog.records),
        update_us=_stats([r.timings["update"] for r in done]),
        cycle_us=_stats([sum(r.timings[p] for p in PHASES) for r in done]),
        error=error,
    )


def run_seed(rt: ResolvedTask, md: ModelDef, seed: int) -> tuple[SeedResult, TrajectoryLog]:
    """Warm start then servo; a run error is recorded in the result, not raised."""
    rng = np.random.default_rng(seed)
    model = build_model(md, rt)
    control = replace(rt.control, rng_seed=seed)
    tlog = TrajectoryLog()
    try:
        world = warm_start(rt.world, model, rt.task.spec, rt.warm_n, rt.warm_amplitude, rng,
                           control.length_unit)
        tlog, _ = run_servo_loop(world, rt.task, model, control, rng)
    except FogprError as exc:
        log.error("seed %d failed: %s", seed, exc)
        return summarize(seed, tlog, f"{type(exc).__name__}: {exc}"), tlog
    return summarize(seed, tlog), tlog


def csv_header(x_dim: int, u_dim: int) -> list[str]:
    return (
        ["step", "err_norm", "posterior_var"]
        + [f"t_{p}_us" for p in PHASES]
        + [f"x_{i}" for i in range(x_dim)]
        + [f"cmd_{i}" for i in range(u_dim)]
    )


def write_log_csv(tlog: TrajectoryLog, path, x_dim: int, u_dim: int, record_timings: bool = True):
    """Columns: step, err_norm, posterior_var, per-phase timings (us), x_*, cmd_* (m)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(x_dim, u_dim))
        for r in tlog.records:
            times = [f"{r.timings.get(p, 0.0):.3f}" if record_timings else "0" for p in PHASES]
            w.writerow(
                [r.step, repr(r.err_norm), repr(float(r.posterior_var))]
                + times
                + [repr(float(v)) for v in r.x]
                + [repr(float(v)) for v in r.command]
            )


@dataclass
class Report:
    task: str
    model: str
    results: list = field(default_factory=list)

    @property
    def errored(self) -> bool:
        return any(r.error for r in self.results)

    @property
    def success_rate(self) -> float:
        return sum(r.success for r in self.results) / len(self.results) if self.results else 0.0

    def to_dict(self) -> dict:
        return {"task": self.task, "model": self.model, "success_rate": self.success_rate,
                "results": [asdict(r) for r in self.results]}

    def to_markdown(self) -> str:
        lines = [
            f"# {self.task} / {self.model}",
            "",
            f"success rate: {self.success_rate:.2f}",
            "",
            "| seed | success | steps | final err | update mean us | update p95 us | update max us | cycle mean us | error |",
            "|---|---|---|---|---|---|---|---|---|",
        ]
        for r in self.results:
            lines.append(
                f"| {r.seed} | {r.success} | {r.steps_to_success if r.steps_to_success is not None else '-'} "
                f"| {r.final_error:.3e} | {r.update_us['mean']:.1f} | {r.update_us['p95']:.1f} "
                f"| {r.update_us['max']:.1f} | {r.cycle_us['mean']:.1f} | {r.error or ''} |"
            )
        return "\n".join(lines) + "\n"


def run(cfg: RunConfig, out_dir=None, explore: bool | None = None, seeds=None) -> Report:
    """Run every seed of ``cfg``; per-seed CSV logs and a report go to ``out_dir``."""
    rt = resolve_task(cfg.task, explore)
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = Report(rt.name, cfg.model.label)
    for seed in seeds if seeds is not None else cfg.seeds:
        res, tlog = run_seed(rt, cfg.model, seed)
        write_log_csv(tlog, out / f"seed_{seed}.csv", rt.in_dim, rt.out_dim, cfg.record_timings)
        log.info("seed %d: success=%s steps=%s final=%.3e", seed, res.success,
                 res.steps_to_success, res.final_error)
        report.results.append(res)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "report.md").write_text(report.to_markdown())
    return report


# -- update-cost benchmark --------------------------------------------------


@dataclass
class BenchTable:
    steps: np.ndarray
    series: dict  # label -> per-update time (us) at each step

    def summary(self, after: int = 0) -> dict:
        return {k: _stats(v[after:]) for k, v in self.series.items()}

    def write_csv(self, path):
        labels = list(self.series)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step"] + [f"{k}_us" for k in labels])
            for i, s in enumerate(self.steps):
                w.writerow([int(s)] + [f"{self.series[k][i]:.3f}" for k in labels])


def synthetic_stream(n: int, in_dim: int = 4, out_dim: int = 3, seed: int = 0):
    """Gaussian inputs with a smooth nonlinear response."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, in_dim))
    B = rng.standard_normal((in_dim, out_dim)) / np.sqrt(in_dim)
    Y = np.tanh(X @ B) + 0.1 * np.sin(X[:, :1])
    return X, Y


def time_updates(model, X, Y) -> np.ndarray:
    clock = time.perf_counter_ns
    out = np.empty(len(X))
    # collector pauses land on arbitrary steps, so keep them out like timeit does
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for t in range(len(X)):
            t0 = clock()
            model.observe(X[t], Y[t])
            out[t] = (clock() - t0) / 1e3
    finally:
        if was_enabled:
            gc.enable()
    return out


def bench_update_cost(M_values, N_stream: int, in_dim: int = 4, out_dim: int = 3, seed: int = 0,
                      hp: Hyperparams | None = None, repeats: int = 1) -> BenchTable:
    """Per-update times of FO-GPR at each capacity and of unbounded GPR on one stream.

    With ``repeats`` > 1 the stream is replayed that many times and each step
    keeps its median time, which filters out scheduler hiccups.
    """
    M_values = [int(m) for m in M_values]
    if not M_values or N_stream <= max(M_values):
        raise InputError("N_stream must exceed every capacity in M_values")
    if repeats < 1:
        raise InputError("repeats must be at least 1")
    hp = hp or Hyperparams()
    X, Y = synthetic_stream(N_stream, in_dim, out_dim, seed)
    # a few throwaway updates so first-call overheads don't land in the series
    time_updates(OnlineGP(in_dim, out_dim, hp), X[:TIMING_WARMUP], Y[:TIMING_WARMUP])
    makers = {f"fo_gpr_M{m}": (lambda m=m: OnlineGP(in_dim, out_dim, replace(hp, max_size=m))) for m in M_values}
    makers["standard_gpr"] = lambda: OnlineGP(in_dim, out_dim, hp, bounded=False)
    runs = {k: [] for k in makers}
    for _ in range(repeats):
        for label, make in makers.items():
            runs[label].append(time_updates(make(), X, Y))
    series = {k: np.median(v, axis=0) for k, v in runs.items()}
    return BenchTable(np.arange(1, N_stream + 1), series)


def shuffled_update_profile(hp: Hyperparams, X, Y, every: int = 10, repeats: int = 5, seed: int = 0):
    """Cost of the update at every ``every``-th step, timed in random order.

    A single pass ties step index to wall-clock time, so slow machine drift
    reads as a trend. States are immutable, so the ones before each sampled
    step are kept and their single updates replayed ``repeats`` times in
    shuffled order; each step keeps its median. Returns (steps, times_us).
    """
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    state = empty_state(X.shape[1], Y.shape[1], hp)
    kept = {}
    for t in range(len(X)):
        if t % every == 0:
            kept[t] = state
        state = add_observation(state, X[t], Y[t])
    steps = np.array(sorted(kept))
    order = np.repeat(steps, repeats)
    np.random.default_rng(seed).shuffle(order)
    samples = {t: [] for t in steps}
    clock = time.perf_counter_ns
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for t in order:
            t0 = clock()
            add_observation(kept[t], X[t], Y[t])
            samples[t].append((clock() - t0) / 1e3)
    finally:
        if was_enabled:
            gc.enable()
    return steps + 1, np.array([np.median(samples[t]) for t in steps])


# -- comparisons ------------------------------------------------------------


@dataclass
class Comparison:
    task: str
    reports: list

    def rows(self):
        for rep in self.reports:
            for r in rep.results:
                yield rep.model, r

    def to_markdown(self) -> str:
        lines = [f"# Model comparison: {self.task}", "",
                 "| model | success rate | median steps | mean final err | errors |", "|---|---|---|---|---|"]
        for rep in self.reports:
            steps = [r.steps_to_success for r in rep.results if r.steps_to_success is not None]
            med = f"{np.median(steps):.0f}" if steps else "-"
            fin = np.mean([r.final_error for r in rep.results])
            errs = sum(bool(r.error) for r in rep.results)
            lines.append(f"| {rep.model} | {rep.success_rate:.2f} | {med} | {fin:.3e} | {errs} |")
        lines += ["", "| model | seed | success | steps | final err |", "|---|---|---|---|---|"]
        for model, r in self.rows():
            steps = r.steps_to_success if r.steps_to_success is not None else "-"
            lines.append(f"| {model} | {r.seed} | {r.success} | {steps} | {r.final_error:.3e} |")
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "seed", "success", "steps_to_success", "final_error", "error"])
            for model, r in self.rows():
                w.writerow([model, r.seed, int(r.success),
                            "" if r.steps_to_success is None else r.steps_to_success,
                            repr(r.final_error), r.error or ""])


def compare_models(configs, out_dir=None, explore: bool | None = None) -> Comparison:
    """Run each config on the shared task and seeds and tabulate the outcomes."""
    configs = list(configs)
    if not configs:
        raise ConfigError("compare needs at least one config")
    task0, seeds0 = configs[0].task.model_dump(), configs[0].seeds
    for n, c in enumerate(configs[1:], start=1):
        if c.task.model_dump() != task0:
            raise ConfigError(f"config {n}: task differs from config 0 ({c.task.name} vs {configs[0].task.name})")
        if c.seeds != seeds0:
            raise ConfigError(f"config {n}: seeds differ from config 0")
    out = Path(out_dir) if out_dir is not None else None
    reports = []
    for n, c in enumerate(configs):
        sub = out / f"{n}_{c.model.kind}" if out is not None else Path(c.out)
        reports.append(run(c, sub, explore))
    comp = Comparison(configs[0].task.name, reports)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.md").write_text(comp.to_markdown())
        comp.write_csv(out / "comparison.csv")
    return comp
