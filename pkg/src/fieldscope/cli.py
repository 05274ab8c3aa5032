"""Command-line front end.

Exit codes: 0 success, 1 invalid input (config, arguments, missing files),
2 failure while running.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, ScenarioConfig, parse_config
from .core import RngHandle
from .learn import Dataset, evaluate_on_grid, lm_train
from .localize import GridField
from .pipeline import (
    _SIM_STREAM,
    _TRAIN_STREAM,
    filter_trajectories,
    format_table,
    localize_field,
    run_experiment,
)
from .sim import active_set, assign_destination, run_stage

log = logging.getLogger("fieldscope")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser, stage: bool = False, stage_required: bool = False):
    p.add_argument("--config", default="default", help="scenario JSON file, or 'default'")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", default=None, help="output directory (default: config 'out')")
    if stage:
        p.add_argument("--stage", type=int, required=stage_required, default=None, help="1-based stage number")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fieldscope", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write trajectory CSVs")
    _common(p, stage=True)

    p = sub.add_parser("filter", help="write innovation CSVs for one stage")
    _common(p, stage=True, stage_required=True)
    p.add_argument("--models", default=None, help="directory with stage<j>_model.txt (default: --out)")

    p = sub.add_parser("train", help="fit one stage's regressor from its innovation CSV")
    _common(p, stage=True, stage_required=True)

    p = sub.add_parser("localize", help="locate an object from a model or a field CSV")
    _common(p, stage=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model file")
    src.add_argument("--field", help="field CSV (x,y,vx,vy)")
    p.add_argument("--innovations", help="innovation CSV whose positions define the coverage mask")
    p.add_argument("--no-mask", action="store_true", help="plain argmax over the whole grid")

    p = sub.add_parser("pipeline", help="run every stage and write the report")
    _common(p)
    p.add_argument("--no-mask", action="store_true", help="plain argmax over the whole grid")

    p = sub.add_parser("dump-field", help="grid CSV of an analytic or learned field")
    _common(p, stage=True)
    p.add_argument("--model", help="model file; without it the stage's analytic field is dumped")
    return parser


def load_config(args) -> ScenarioConfig:
    if args.config == "default":
        text = "{}"
    else:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"<root>: cannot read {args.config}: {exc.strerror}"]) from exc
    cfg = parse_config(text)
    updates = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError([f"seed: must fit in 64 unsigned bits, got {args.seed}"])
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out"] = args.out
    if getattr(args, "no_mask", False):
        updates["mask"] = cfg.mask.model_copy(update={"enabled": False})
    return cfg.model_copy(update=updates)


def _stage_index(cfg: ScenarioConfig, stage: int | None) -> int:
    if stage is None:
        raise UsageError("--stage is required")
    if not 1 <= stage <= len(cfg.stages):
        raise UsageError(f"--stage must be between 1 and {len(cfg.stages)}")
    return stage - 1


def _need(path: Path) -> Path:
    if not path.is_file():
        raise UsageError(f"missing input file {path}")
    return path


def cmd_simulate(cfg: ScenarioConfig, args) -> None:
    out = Path(cfg.out)
    specs = cfg.specs()
    stages = cfg.scenario_stages(specs)
    wanted = range(len(stages)) if args.stage is None else [_stage_index(cfg, args.stage)]
    root = RngHandle(cfg.seed)
    for i in wanted:
        trajs = run_stage(stages[i], specs[: i + 1], cfg.bounds, cfg.dk, cfg.noise_params(), cfg.limits(),
                          root.child(_SIM_STREAM))
        path = io.write_trajectories(out / f"stage{i + 1}_trajectories.csv", trajs)
        print(path)


def cmd_filter(cfg: ScenarioConfig, args) -> None:
    out = Path(cfg.out)
    idx = _stage_index(cfg, args.stage)
    models_dir = Path(args.models) if args.models else out
    specs = cfg.specs()[: idx + 1]
    rule = cfg.stages[idx].destinations
    trajs = io.read_trajectories(_need(out / f"stage{idx + 1}_trajectories.csv"))
    learned = {}
    for t in trajs:
        t.destination = assign_destination(specs, rule, t.agent_id)
        t.active = active_set(specs, t.destination)
        for j in t.active:
            if j != idx and j not in learned:
                learned[j] = io.read_model(_need(models_dir / f"stage{j + 1}_model.txt"))
    records = filter_trajectories(
        cfg, trajs, lambda t: cfg.kalman_model([learned[j] for j in t.active if j != idx])
    )
    print(io.write_innovations(out / f"stage{idx + 1}_innovations.csv", records))


def _training_set(path: Path) -> Dataset:
    agents, ks, xs, vs = io.read_innovations(path)
    keep = np.ones(len(agents), dtype=bool)
    for a in np.unique(agents):
        sel = np.flatnonzero(agents == a)
        keep[sel[np.argmin(ks[sel])]] = False
    return Dataset(xs[keep], vs[keep])


def cmd_train(cfg: ScenarioConfig, args) -> None:
    out = Path(cfg.out)
    idx = _stage_index(cfg, args.stage)
    data = _training_set(_need(out / f"stage{idx + 1}_innovations.csv"))
    model, history = lm_train(
        data, cfg.train_config(cfg.seed), RngHandle(cfg.seed).child(_TRAIN_STREAM, idx + 1), cfg.normalizer()
    )
    print(io.write_model(out / f"stage{idx + 1}_model.txt", model))
    log.info("%d samples, final SSE %.6g after %d accepted steps", len(data), history[-1], len(history) - 1)


def cmd_localize(cfg: ScenarioConfig, args) -> None:
    out = Path(cfg.out)
    if args.field:
        f: GridField = io.read_field(_need(Path(args.field)))
    else:
        f = evaluate_on_grid(io.read_model(_need(Path(args.model))), cfg.make_grid())
    inputs = None
    if args.innovations and not args.no_mask:
        inputs = io.read_innovations(_need(Path(args.innovations)))[2]
    radius = cfg.mask.radius if cfg.mask.enabled else None
    est, _ = localize_field(f, inputs, radius)
    truth = None
    if args.stage is not None:
        truth = [cfg.specs()[_stage_index(cfg, args.stage)].center]
    print(io.write_objects(out / "objects.csv", [est], truth))


def cmd_pipeline(cfg: ScenarioConfig, args) -> None:
    report = run_experiment(cfg, out_dir=cfg.out)
    sys.stdout.write(format_table(report))


def cmd_dump_field(cfg: ScenarioConfig, args) -> None:
    out = Path(cfg.out)
    grid = cfg.make_grid()
    if args.model:
        field = evaluate_on_grid(io.read_model(_need(Path(args.model))), grid)
        name = f"{Path(args.model).stem}_field.csv"
    else:
        idx = _stage_index(cfg, args.stage)
        field = evaluate_on_grid(cfg.specs()[idx], grid)
        name = f"stage{idx + 1}_analytic_field.csv"
    print(io.write_field(out / name, field))


COMMANDS = {
    "simulate": cmd_simulate,
    "filter": cmd_filter,
    "train": cmd_train,
    "localize": cmd_localize,
    "pipeline": cmd_pipeline,
    "dump-field": cmd_dump_field,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = load_config(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"fieldscope: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"fieldscope: failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
