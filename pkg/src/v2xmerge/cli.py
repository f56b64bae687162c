"""Command line: simulate, train, evaluate, gen-scenario.

Exit codes: 0 success, 1 configuration error, 2 run failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .experiment import run_experiment_matrix
from .metrics import METRICS_HEADER
from .prediction.modelio import ModelFormatError, load_default_model, load_model, save_model
from .prediction.training import SampleSet, build_samples, train_models
from .resources import resolve_sensor_suite
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    load_config,
    load_layout,
    load_scenario,
    parse_trajectory_csv,
    save_layout,
    write_trajectory_csv,
)
from .sim import run_metrics, simulate, write_csv, write_logs
from .synth import ScenarioSpec, generate_synthetic_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("v2xmerge")


class RunFailure(RuntimeError):
    pass


def _load_run_inputs(args):
    scenario = load_scenario(args.scenario)
    config = load_config(args.config)
    suite = resolve_sensor_suite(config.sensor_suite, Path(args.config).parent)
    return scenario, config, suite


def _load_model(path: Optional[str], config: ScenarioConfig):
    if config.predictor == "vlk":
        return None
    return load_model(path) if path else load_default_model()


def cmd_simulate(args) -> int:
    scenario, config, suite = _load_run_inputs(args)
    config = config.replace(rng_seed=args.seed)
    model = _load_model(args.model, config)
    out = simulate(scenario, config, model, suite)
    write_logs(out, args.out)
    record = run_metrics(out, scenario.layout)
    write_csv(Path(args.out) / "metrics.csv", METRICS_HEADER, [record.row()], config.config_hash())
    if record.error:
        raise RunFailure(record.error)
    log.info("merged at t=%.2f s, logs in %s", out.crossing_time, args.out)
    return EXIT_OK


def _parse_rates(text: str) -> List[float]:
    try:
        rates = [float(r) for r in text.split(",") if r.strip()]
    except ValueError:
        raise ScenarioError(f"bad rate list {text!r}") from None
    if not rates or any(not 0.0 <= r <= 1.0 for r in rates):
        raise ScenarioError("rates must be a comma-separated list in [0, 1]")
    return rates


def cmd_evaluate(args) -> int:
    scenario, config, suite = _load_run_inputs(args)
    rates = _parse_rates(args.rates)
    if args.seeds < 1:
        raise ScenarioError("--seeds must be >= 1")
    model = _load_model(args.model, config)
    cells = run_experiment_matrix(scenario, config, rates, range(args.seeds), args.out, model, suite)
    failed = [c for c in cells if c.failed]
    for c in failed:
        log.warning("rate %g seed %d failed: %s", c.config.penetration_rate, c.config.rng_seed, c.record.error)
    log.info("%d runs, %d failed, results in %s", len(cells), len(failed), args.out)
    return EXIT_RUN if failed else EXIT_OK


def cmd_train(args) -> int:
    layout = load_layout(args.layout)
    rng = np.random.default_rng(args.seed)
    sets = [build_samples(parse_trajectory_csv(p), layout, rng, frame_period=args.frame_period, stride=args.stride)
            for p in args.data]
    samples = SampleSet.concat(sets)
    log.info("training on %d samples", len(samples))
    model = train_models(samples, seed=args.seed)
    save_model(args.out, model)
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        try:
            spec = ScenarioSpec.from_dict(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{args.spec}: {exc}") from None
    records, layout = generate_synthetic_scenario(spec, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out, records)
    # layout and manifest next to the csv so the result can be simulated directly
    layout_path = out.with_name(out.stem + "_layout.json")
    save_layout(layout_path, layout)
    manifest = {"name": out.stem, "trajectories": out.name, "layout": layout_path.name}
    out.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="v2xmerge", description="V2X-aided on-ramp merge simulation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="single closed-loop run")
    s.add_argument("--scenario", required=True, help="scenario manifest JSON")
    s.add_argument("--config", required=True, help="run config JSON")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--model", help="prediction model file (default: bundled)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train the maneuver classifier and position experts")
    t.add_argument("--data", nargs="+", required=True, help="trajectory CSV files")
    t.add_argument("--layout", required=True, help="road layout JSON")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--stride", type=int, default=2, help="use every n-th frame")
    t.add_argument("--frame-period", type=float, default=0.04)
    t.add_argument("--out", required=True, help="model file to write")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="penetration-rate by seed matrix")
    e.add_argument("--scenario", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--rates", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    e.add_argument("--seeds", type=int, default=20, help="number of seeds, 0..n-1")
    e.add_argument("--model")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("gen-scenario", help="generate a synthetic scenario")
    g.add_argument("--spec", required=True, help="scenario spec JSON")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="trajectory CSV to write")
    g.set_defaults(func=cmd_gen_scenario)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ModelFormatError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except RunFailure as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUN
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
