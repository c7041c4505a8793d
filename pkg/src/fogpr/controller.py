"""Closed-loop servo control driven by an online regression model of the
deformation function (feature velocity -> manipulated-point velocity)."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EquilibriumError, InputError, NumericalHealthError
from .features import FeatureSpec
from .gp_core import Posterior
from . import sim

log = logging.getLogger(__name__)

MIN_RESPONSE = 1e-9
PHASES = ("feature", "predict", "simulate", "update")


@dataclass(frozen=True)
class ControlConfig:
    """Controller settings.

    Commands are exchanged with the model in units of ``length_unit`` meters,
    so with the defaults one model unit equals the per-step velocity cap.
    """

    eta: float = 0.5
    max_steps: int = 500
    success_tol: float = 1e-3
    explore: bool = True
    rng_seed: int = 0
    velocity_cap: float = 0.01
    length_unit: float = 0.01

    def __post_init__(self):
        if not self.eta > 0:
            raise InputError("eta must be positive")
        if not self.success_tol > 0:
            raise InputError("success_tol must be positive")
        if not self.velocity_cap > 0:
            raise InputError("velocity_cap must be positive")
        if not self.length_unit > 0:
            raise InputError("length_unit must be positive")
        if self.max_steps < 0:
            raise InputError("max_steps must be non-negative")


@dataclass
class StepRecord:
    step: int
    x: np.ndarray
    delta_x: np.ndarray
    command: np.ndarray  # meters, as applied
    posterior_var: float
    timings: dict = field(default_factory=dict)  # microseconds per phase

    @property
    def err_norm(self) -> float:
        return float(np.linalg.norm(self.delta_x))


@dataclass
class TrajectoryLog:
    records: list = field(default_factory=list)
    success: bool = False
    steps_to_success: int | None = None

    def __len__(self):
        return len(self.records)

    @property
    def err_norms(self) -> np.ndarray:
        return np.array([r.err_norm for r in self.records])

    @property
    def commands(self) -> np.ndarray:
        return np.array([r.command for r in self.records])

    @property
    def final_error(self) -> float:
        return self.records[-1].err_norm if self.records else float("nan")


@dataclass(frozen=True)
class Task:
    """What the loop needs to know about a task: its feature map and goal."""

    spec: FeatureSpec
    x_d: np.ndarray


def gp_query(x_d, x, eta: float) -> np.ndarray:
    return eta * (np.asarray(x_d, dtype=float) - np.asarray(x, dtype=float))


def clamp(command: np.ndarray, cap: float) -> np.ndarray:
    norm = float(np.linalg.norm(command))
    return command * (cap / norm) if norm > cap else command


def control_step(model, x_d, x, cfg: ControlConfig, rng) -> tuple[np.ndarray, Posterior]:
    """One command in meters, sampled around the posterior mean when exploring."""
    post = model.predict(gp_query(x_d, x, cfg.eta))
    cmd = np.array(post.mu, dtype=float)
    if cfg.explore:
        cmd = cmd + post.std * rng.standard_normal(cmd.shape)
    if not np.all(np.isfinite(cmd)):
        raise NumericalHealthError("controller produced a non-finite command")
    return clamp(cmd * cfg.length_unit, cfg.velocity_cap), post


def warm_start(world: sim.World, model, spec: FeatureSpec, n: int, amplitude: float, rng,
               length_unit: float = 0.01):
    """Random excitation: ``n`` commands of norm ``amplitude`` (m), each observed.

    Returns the moved world; the model is updated in place.
    """
    for _ in range(n):
        d = rng.standard_normal(world.n_controls)
        d *= amplitude / np.linalg.norm(d)
        world, dx = sim.apply_control(world, d, spec)
        if np.linalg.norm(dx) >= MIN_RESPONSE:
            model.observe(dx, d / length_unit)
    return world


def run_servo_loop(world: sim.World, task: Task, model, cfg: ControlConfig, rng=None,
                   stop_on_success: bool = True):
    """Drive ``world`` toward ``task.x_d``. Returns (log, final world)."""
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    log_ = TrajectoryLog()
    clock = time.perf_counter_ns
    x = world.features(task.spec)
    for step in range(cfg.max_steps + 1):
        t0 = clock()
        x = world.features(task.spec)
        delta = task.x_d - x
        t1 = clock()
        if np.linalg.norm(delta) <= cfg.success_tol and not log_.success:
            log_.success, log_.steps_to_success = True, step
            if stop_on_success:
                log_.records.append(StepRecord(step, x, delta, np.zeros(world.n_controls), 0.0,
                                               {"feature": (t1 - t0) / 1e3}))
                break
        if step == cfg.max_steps:
            break
        cmd, post = control_step(model, task.x_d, x, cfg, rng)
        t2 = clock()
        try:
            world, dx_obs = sim.apply_control(world, cmd, task.spec)
        except EquilibriumError as exc:
            exc.step = step
            raise
        t3 = clock()
        if np.linalg.norm(dx_obs) >= MIN_RESPONSE:
            model.observe(dx_obs, cmd / cfg.length_unit)
        t4 = clock()
        timings = {
            "feature": (t1 - t0) / 1e3,
            "predict": (t2 - t1) / 1e3,
            "simulate": (t3 - t2) / 1e3,
            "update": (t4 - t3) / 1e3,
        }
        log_.records.append(StepRecord(step, x, delta, cmd, post.var, timings))
    return log_, world
