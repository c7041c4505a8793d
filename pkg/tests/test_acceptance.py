"""End-to-end acceptance checks. Each test records one PASS/FAIL line."""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.transform import Rotation

from fogpr import experiments, sim
from fogpr.baselines import freeze
from fogpr.config import parse_config
from fogpr.controller import run_servo_loop, warm_start
from fogpr.features import (
    FeatureSpec,
    FpfhHistogram,
    PointCloud,
    Positions,
    centroid,
    extended_fpfh,
    pairwise_distance,
    stacked_positions,
    surface_variation,
)
from fogpr.fo_gpr import OnlineGP, add_observation, consistency_residual, empty_state, predict
from fogpr.gp_core import Hyperparams

from conftest import dense_gp, record_criterion

pytestmark = pytest.mark.acceptance

RESULTS = Path(__file__).resolve().parent.parent / "results" / "acceptance"


def test_1_inverse_consistency_every_step():
    t0 = time.perf_counter()
    worst = 0.0
    for M in (10, 50, 300):
        for d in range(1, 7):
            r = np.random.default_rng(1000 * d + M)
            s = empty_state(d, 2, Hyperparams(max_size=M))
            for x, y in zip(r.normal(size=(5 * M, d)), r.normal(size=(5 * M, 2))):
                s = add_observation(s, x, y)
                worst = max(worst, consistency_residual(s))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60
    record_criterion(1, ok, f"worst |A_inv A - I| = {worst:.2e}, {elapsed:.1f} s")
    assert worst <= 1e-6
    assert elapsed < 60


def test_2_oracle_equivalence():
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(150, 3)), rng.normal(size=(150, 2))
    grow = empty_state(3, 2, Hyperparams(max_size=300))
    for x, y in zip(X, Y):
        grow = add_observation(grow, x, y)
    swap = empty_state(3, 2, Hyperparams(max_size=50))
    for x, y in zip(X, Y):
        swap = add_observation(swap, x, y)
    assert grow.size == 150 and swap.size == 50
    below = swapped = 0.0
    for q in rng.normal(size=(100, 3)):
        mu, var = dense_gp(X, Y, q)
        p = predict(grow, q)
        below = max(below, np.max(np.abs(p.mu - mu)), abs(p.raw_var - var))
        mu, var = dense_gp(swap.data.inputs, swap.data.outputs, q)
        p = predict(swap, q)
        swapped = max(swapped, np.max(np.abs(p.mu - mu)), abs(p.raw_var - var))
    ok = below <= 1e-8 and swapped <= 1e-6
    record_criterion(2, ok, f"below capacity {below:.1e}, after swaps {swapped:.1e}")
    assert below <= 1e-8
    assert swapped <= 1e-6


def test_3_update_cost():
    X, Y = experiments.synthetic_stream(1000, seed=0)
    # timed in shuffled step order so slow machine drift cannot pose as a trend
    steps, fo = experiments.shuffled_update_profile(Hyperparams(max_size=300), X, Y, every=5, repeats=5)
    after = steps > 300
    fit = stats.linregress(steps[after], fo[after])
    mean_us = fo[after].mean()
    flat = fit.pvalue > 0.05 or abs(fit.slope) * 100 < 0.01 * mean_us
    std = experiments.bench_update_cost([300], 1000, seed=0).series["standard_gpr"]
    # medians over 20-step windows ending at steps 310 and 1000 damp scheduler noise
    early, late = np.median(std[290:310]), np.median(std[980:1000])
    mean_ms = mean_us / 1e3
    ok = flat and late >= 3 * early and mean_ms < 5
    record_criterion(3, ok, f"FO-GPR slope {fit.slope * 100:+.1f} us/100 steps (p={fit.pvalue:.2f}), "
                            f"mean {mean_ms:.2f} ms; standard GPR x{late / early:.1f} from step 300 to 1000")
    assert flat
    assert late >= 3 * early
    assert mean_ms < 5


def test_4_rod_servo_convergence():
    cfg = parse_config("schema_version: 1\ntask: rod_bending\nmodel: {kind: fo_gpr}\n")
    rt = experiments.resolve_task(cfg.task)
    assert rt.control.success_tol == 1e-3 and rt.control.max_steps == 500
    wins, slowest = 0, 0.0
    for seed in range(10):
        t0 = time.perf_counter()
        res, _ = experiments.run_seed(rt, cfg.model, seed)
        slowest = max(slowest, time.perf_counter() - t0)
        wins += res.success
    ok = wins >= 8 and slowest < 120
    record_criterion(4, ok, f"{wins}/10 seeds reached |dx| <= 1e-3, slowest seed {slowest:.1f} s")
    assert wins >= 8
    assert slowest < 120


def test_5_forgetting_vs_frozen_model():
    cfg = parse_config("schema_version: 1\ntask: rod_bending\n")
    rt = experiments.resolve_task(cfg.task, explore=False)
    control = replace(rt.control, max_steps=250)
    rows = []
    for seed in range(4):
        model = OnlineGP(rt.in_dim, rt.out_dim, Hyperparams(max_size=300))
        world = warm_start(rt.world, model, rt.task.spec, 450, 0.005, np.random.default_rng(seed))
        start = float(np.linalg.norm(rt.task.x_d - world.features(rt.task.spec)))
        offline = freeze(model)
        out = []
        for m in (model, offline):
            tlog, _ = run_servo_loop(world, rt.task, m, control, stop_on_success=False)
            out.append((tlog.final_error / start, float(np.linalg.norm(tlog.commands[-1]))))
        rows.append(out)
    # "reached" means the commands died out; the error guard rules out stalling where it started
    fo_ok = all(fo[1] <= 1e-4 and fo[0] <= 0.01 for fo, _ in rows)
    gap_ok = all(off[1] > 10 * fo[1] for fo, off in rows)
    record_criterion(5, fo_ok and gap_ok,
                     f"FO-GPR terminal |u| <= {max(fo[1] for fo, _ in rows):.1e} m with error cut to "
                     f"<= {max(fo[0] for fo, _ in rows):.1e} of its start; frozen model "
                     f"|u| >= {min(off[1] for _, off in rows):.1e} m")
    assert fo_ok
    assert gap_ok


def test_6_stiffening_baseline_comparison():
    rates = {}
    for beta in (0.0, 1000.0, 5000.0):
        base = ("schema_version: 1\n"
                "task:\n  base: stiffening_rod\n  world:\n    template: rod\n"
                f"    params: {{actuated: [[19, 0], [19, 1], [19, 2]], k_stretch: 50.0, stiffening: {beta}}}\n"
                "seeds: [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]\n")
        configs = [parse_config(base + "model: {kind: fo_gpr}\n"),
                   parse_config(base + "model: {kind: linear, learning_rate: 2.0}\n")]
        comp = experiments.compare_models(configs, RESULTS / f"stiffening_{beta:g}")
        rates[beta] = tuple(r.success_rate for r in comp.reports)
    never_worse = all(fo >= lin for fo, lin in rates.values())
    better_once = any(fo > lin for fo, lin in rates.values())
    text = ", ".join(f"beta {b:g}: {fo:.1f} vs {lin:.1f}" for b, (fo, lin) in rates.items())
    record_criterion(6, never_worse and better_once, f"FO-GPR vs linear success, {text}")
    assert never_worse
    assert better_once


def test_7_feature_invariance():
    rng = np.random.default_rng(7)
    worst = 0.0
    for k in range(1000):
        pts = rng.normal(size=(25, 3))
        nrm = rng.normal(size=(25, 3))
        cloud = PointCloud(pts, nrm / np.linalg.norm(nrm, axis=1, keepdims=True))
        R = Rotation.random(random_state=rng).as_matrix()
        t = rng.uniform(-10, 10, size=3)
        moved = cloud.transformed(R, t)
        errs = [
            np.max(np.abs(centroid(moved) - (R @ centroid(cloud) + t))),
            np.max(np.abs(stacked_positions(moved) - ((cloud.points @ R.T) + t).ravel())),
            abs(pairwise_distance(*moved.points[:2]) - pairwise_distance(*cloud.points[:2])),
            abs(surface_variation(moved) - surface_variation(cloud)),
            np.max(np.abs(extended_fpfh(moved) - extended_fpfh(cloud))),
        ]
        worst = max(worst, *errs)
    world = sim.build_world("cloth_grid", {})
    dim = len(world.features(FeatureSpec((FpfhHistogram(bins=45),))))
    ok = worst < 1e-9 and dim == 135
    record_criterion(7, ok, f"worst deviation {worst:.1e} over 1000 motions, FPFH dim {dim}")
    assert worst < 1e-9
    assert dim == 135


def test_8_simulator_oracle(monkeypatch):
    solved = []
    real = sim.solve_equilibrium

    def tracked(*args, **kwargs):
        w = real(*args, **kwargs)
        solved.append(sim.residual(w))
        return w

    monkeypatch.setattr(sim, "solve_equilibrium", tracked)
    spec = FeatureSpec((Positions(),))
    ratios = {}
    rng = np.random.default_rng(8)
    for template in ("rod", "sheet", "cloth_grid"):
        w = sim.build_world(template, {})
        J = [sim.ground_truth_jacobian(w, spec, h=h) for h in (4e-3, 2e-3, 1e-3)]
        # central differences: halving h should cut the change by about 4
        ratios[template] = np.max(np.abs(J[0] - J[1])) / np.max(np.abs(J[1] - J[2]))
        for _ in range(20):
            d = rng.normal(size=w.n_controls)
            w, _ = sim.apply_control(w, 0.005 * d / np.linalg.norm(d), spec)
    worst = max(solved)
    ok = all(3.0 < r < 5.0 for r in ratios.values()) and worst <= 1e-8
    text = ", ".join(f"{k} {v:.2f}" for k, v in ratios.items())
    record_criterion(8, ok, f"step-halving ratios {text}; worst residual {worst:.1e} N over {len(solved)} solves")
    assert all(3.0 < r < 5.0 for r in ratios.values()), ratios
    assert worst <= 1e-8
