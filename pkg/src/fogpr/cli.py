"""fogpr command line: run, bench, compare, validate-config.

Exit status is 0 on success, 1 if any run errored and 2 for configuration
problems. Task failure (target not reached) is reported, not an error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from scipy import stats

from . import experiments
from .config import load_config
from .errors import ConfigError, FogprError, InputError
from .gp_core import Hyperparams

EXIT_OK, EXIT_RUN_ERROR, EXIT_CONFIG_ERROR = 0, 1, 2

log = logging.getLogger("fogpr")


def setup_logging():
    raw = os.environ.get("FOGPR_LOG", "WARNING").strip()
    level = int(raw) if raw.isdigit() else logging.getLevelName(raw.upper())
    bad = not isinstance(level, int)
    logging.basicConfig(level=logging.WARNING if bad else level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if bad:
        log.warning("ignoring unknown FOGPR_LOG level %r", raw)


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,2,5"`` or ``"0-9"`` (inclusive)."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                seeds += range(int(lo), int(hi) + 1)
            else:
                seeds.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fogpr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run one experiment config over its seeds")
    r.add_argument("--config", required=True, type=Path)
    r.add_argument("--seed", type=parse_seeds, help="override the config's seeds, e.g. 0-9 or 1,4")
    r.add_argument("--out", type=Path, help="output directory (default: the config's 'out')")
    r.add_argument("--no-explore", action="store_true", help="disable posterior-variance exploration")

    b = sub.add_parser("bench", help="per-update cost of FO-GPR vs unbounded GPR")
    b.add_argument("--capacities", type=_int_list, default=[50, 100, 300])
    b.add_argument("--stream", type=int, default=1000, help="number of observations")
    b.add_argument("--dim", type=int, default=4, help="input dimension of the synthetic stream")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=3, help="replays of the stream; each step keeps its median")
    b.add_argument("--out", type=Path, default=Path("results/bench"))

    c = sub.add_parser("compare", help="run several model configs on one task")
    c.add_argument("--config", required=True, type=Path, action="append",
                   help="repeat once per model; all must share task and seeds")
    c.add_argument("--seed", type=parse_seeds)
    c.add_argument("--out", type=Path, default=Path("results/compare"))
    c.add_argument("--no-explore", action="store_true")

    v = sub.add_parser("validate-config", help="check a config file without running it")
    v.add_argument("--config", required=True, type=Path)
    return p


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seeds": args.seed})
    out = args.out if args.out is not None else Path(cfg.out)
    report = experiments.run(cfg, out, explore=False if args.no_explore else None)
    for r in report.results:
        status = "error" if r.error else ("success" if r.success else "not reached")
        steps = r.steps_to_success if r.steps_to_success is not None else "-"
        print(f"seed {r.seed}: {status}, steps {steps}, final |dx| {r.final_error:.3e}")
    print(f"success rate {report.success_rate:.2f}; logs in {out}")
    return EXIT_RUN_ERROR if report.errored else EXIT_OK


def cmd_bench(args) -> int:
    try:
        table = experiments.bench_update_cost(args.capacities, args.stream, in_dim=args.dim, seed=args.seed,
                                                 repeats=args.repeats)
    except InputError as exc:
        raise ConfigError(str(exc)) from None
    args.out.mkdir(parents=True, exist_ok=True)
    table.write_csv(args.out / "update_cost.csv")
    cap = max(args.capacities)
    print(f"per-update time after step {cap} (us)")
    for label, s in table.summary(after=cap).items():
        print(f"  {label:>14}: mean {s['mean']:9.1f}  p95 {s['p95']:9.1f}  max {s['max']:9.1f}")
    X, Y = experiments.synthetic_stream(args.stream, args.dim, seed=args.seed)
    steps, times = experiments.shuffled_update_profile(Hyperparams(max_size=cap), X, Y, seed=args.seed)
    after = steps > cap
    if after.sum() >= 3:
        fit = stats.linregress(steps[after], times[after])
        print(f"fo_gpr_M{cap} after capacity, shuffled timing: slope {fit.slope * 100:+.2f} us per 100 steps "
              f"(p={fit.pvalue:.2f}) on a mean of {times[after].mean():.1f} us")
    print(f"series written to {args.out / 'update_cost.csv'}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfgs = [load_config(p) for p in args.config]
    if args.seed is not None:
        cfgs = [c.model_copy(update={"seeds": args.seed}) for c in cfgs]
    comp = experiments.compare_models(cfgs, args.out, explore=False if args.no_explore else None)
    print(comp.to_markdown())
    return EXIT_RUN_ERROR if any(r.errored for r in comp.reports) else EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    rt = experiments.resolve_task(cfg.task)
    print(f"{args.config}: ok (task {rt.name}, {rt.in_dim} features, {rt.out_dim} controls, "
          f"model {cfg.model.label}, seeds {cfg.seeds})")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "compare": cmd_compare, "validate-config": cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (FogprError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
