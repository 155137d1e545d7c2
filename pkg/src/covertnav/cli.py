"""Command-line entry points: world, maps, dataset, train, eval, export-viz."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .atave import ThreatBelief, threat_field
from .config import ConfigError, RunConfig, load_config, save_config
from .maps import GoalMap, GridError, GridMap, GridSpec, load_map, project_point, save_map
from .rl.cql import cql_train, load_qfunction, save_qfunction
from .rl.dataset import build_dataset, load_dataset, save_dataset
from .sim.episode import plan, read_trace, write_trace
from .sim.planning import NoPath
from .sim.scenario import InfeasibleScenario, perceive
from .sim.suite import (
    ABLATION,
    SUMMARY_HEADER,
    TRIAL_HEADER,
    SuiteSettings,
    compare,
    nan_to_none,
    run_suite,
    write_rows,
)
from .worldgen import SCENARIOS, WorldSizeError, generate_world, load_cloud, load_world, sample_point_cloud, save_cloud, save_world

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INFEASIBLE = 0, 2, 3, 4
log = logging.getLogger("covertnav")


class UsageError(ValueError):
    pass


# --- helpers ---------------------------------------------------------------------

def _config(args, overrides: dict | None = None) -> RunConfig:
    return load_config(args.config, overrides or {})


def _set(d: dict, path: str, value) -> None:
    """Store ``value`` at dotted ``path`` unless it is None."""
    if value is None:
        return
    *head, last = path.split(".")
    for p in head:
        d = d.setdefault(p, {})
    d[last] = value


def _training_worlds(cfg: RunConfig):
    ds = cfg.dataset
    worlds = []
    for k in range(ds.worlds_per_scenario):
        for i, kind in enumerate(SCENARIOS):
            seed = ds.world_seed + k * len(SCENARIOS) + i
            worlds.append(generate_world(kind, cfg.world.extent, seed))
    return worlds


def _settings(cfg: RunConfig) -> SuiteSettings:
    return SuiteSettings(cfg.sim, cfg.atave, cfg.rewards, cfg.perception, cfg.placement, cfg.world.extent)


def _float(v: float) -> str:
    return "nan" if isinstance(v, float) and math.isnan(v) else repr(float(v))


# --- commands --------------------------------------------------------------------

def cmd_world(args) -> int:
    o = {}
    _set(o, "world.scenario", args.scenario)
    _set(o, "world.extent", args.extent)
    _set(o, "world.seed", args.seed)
    cfg = _config(args, o)
    try:
        world = generate_world(cfg.world.scenario, cfg.world.extent, cfg.world.seed)
    except WorldSizeError as exc:
        raise ConfigError(str(exc)) from exc
    cloud = sample_point_cloud(world, cfg.perception.noise_sigma, cfg.world.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_world(out / "world.json", world)
    save_cloud(out / "cloud.txt", cloud)
    print(f"wrote {out / 'world.json'} ({len(world.objects)} objects) and {out / 'cloud.txt'} ({len(cloud.points)} points)")
    return EXIT_OK


def cmd_maps(args) -> int:
    cfg = _config(args)
    world = load_world(args.world)
    cloud = load_cloud(args.cloud)
    spec = GridSpec.covering(world.extent_x, world.extent_y, cfg.perception.cell_size)
    goal = tuple(args.goal) if args.goal else spec.center((spec.width - 1, spec.height - 1))
    try:
        stack = perceive(cloud, spec, goal, cfg.perception)
    except GridError as exc:
        raise ConfigError(str(exc)) from exc
    if args.start:
        s_cell, g_cell = project_point(spec, tuple(args.start)), project_point(spec, goal)
        if s_cell is None:
            raise ConfigError(f"start {args.start} lies outside the grid")
        try:
            path = plan("greedy_cover", stack, s_cell, g_cell, cfg.sim)
        except NoPath as exc:
            raise InfeasibleScenario(str(exc)) from exc
        belief = ThreatBelief.uniform(spec)
        stack = stack.with_threat(threat_field(path, belief, stack.height, stack.cover, stack.goal, cfg.atave))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, m in (
        ("cover", stack.cover),
        ("cover_area", GridMap(spec, stack.cover_area.values, "cover_area")),
        ("height", stack.height),
        ("goal", stack.goal),
        ("threat", stack.threat),
    ):
        save_map(out / f"{name}.map", m)
    print(f"wrote cover, cover_area, height, goal and threat maps to {out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    o = {}
    _set(o, "dataset.seed", args.seed)
    _set(o, "dataset.episodes", args.episodes)
    _set(o, "dataset.augmentations", args.augmentations)
    cfg = _config(args, o)
    ds = cfg.dataset
    worlds = _training_worlds(cfg) if ds.episodes else []
    data = build_dataset(
        worlds, ds.episodes, ds.augmentations, ds.seed, ds.behaviour, cfg.sim, cfg.atave,
        cfg.perception, cfg.placement, cfg.rewards,
    )
    save_dataset(args.out, data)
    print(f"wrote {len(data)} transitions ({data.skipped} episodes skipped) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    o = {}
    _set(o, "cql.seed", args.seed)
    _set(o, "cql.epochs", args.epochs)
    _set(o, "cql.alpha", args.alpha)
    cfg = _config(args, o)
    data = load_dataset(args.dataset)
    if len(data) == 0:
        raise UsageError(f"{args.dataset}: dataset is empty")
    losses: list[tuple[int, float, float]] = []
    q = cql_train(data.transitions, cfg.cql, log=lambda e, td, c: losses.append((e, td, c)))
    save_qfunction(args.out, q)
    loss_path = Path(args.loss_log) if args.loss_log else Path(args.out).with_suffix(".loss.csv")
    with open(loss_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "td", "cql"))
        for e, td, c in losses:
            w.writerow((e, _float(td), _float(c)))
    print(f"trained {len(losses)} epochs on {len(data)} transitions; wrote {args.out} and {loss_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    o = {}
    _set(o, "eval.seed", args.seed)
    _set(o, "eval.trials", args.trials)
    _set(o, "eval.workers", args.workers)
    if args.scenarios:
        _set(o, "eval.scenarios", args.scenarios)
    cfg = _config(args, o)
    q = load_qfunction(args.q)
    ev = cfg.eval
    policies = ["cql", "shortest_path", "greedy_cover"] + ([ABLATION] if ev.ablation else [])
    result = run_suite(ev.scenarios, policies, ev.trials, ev.seed, q, _settings(cfg), ev.workers, keep_traces=True)
    out = Path(args.out)
    traces = out / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    for (policy, scenario, trial), rows in sorted(result.traces.items()):
        write_trace(traces / f"{policy}_{scenario}_{trial:03d}.jsonl", rows)
    summary = result.summary()
    write_rows(out / "trials.csv", TRIAL_HEADER, result.rows)
    write_rows(out / "summary.csv", SUMMARY_HEADER, summary)
    (out / "comparison.json").write_text(json.dumps(nan_to_none(compare(summary)), indent=2, sort_keys=True) + "\n")
    save_config(out / "config.json", cfg)
    print(f"ran {len(result.rows)} episodes; wrote trials.csv, summary.csv, comparison.json and traces to {out}")
    return EXIT_OK


def export_trajectories(traces: Sequence[Path], out: Path) -> None:
    polylines = {}
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("trace", "step", "x", "y", "heading", "detected", "in_cover"))
        for path in traces:
            rows = read_trace(path)
            name = path.stem
            pts = []
            for r in rows:
                x, y, h = r["pose"]
                w.writerow((name, r["step"], _float(x), _float(y), _float(h), int(r["detected"]), int(r["in_cover"])))
                pts.append([x, y])
            polylines[name] = pts
    (out / "trajectories.json").write_text(json.dumps(polylines, sort_keys=True) + "\n")


def export_heatmap(map_path: Path, out: Path) -> None:
    m = load_map(map_path)
    values = m.distance if isinstance(m, GoalMap) else m.values
    spec = m.spec
    xc, yc = spec.centers()
    stem = map_path.stem
    with open(out / f"{stem}_heatmap.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("i", "j", "x", "y", "value"))
        for j in range(spec.height):
            for i in range(spec.width):
                w.writerow((i, j, _float(xc[j, i]), _float(yc[j, i]), _float(values[j, i])))
    doc = {
        "width": spec.width,
        "height": spec.height,
        "cell_size": spec.cell_size,
        "origin": [spec.x_min, spec.y_min],
        "values": np.asarray(values).tolist(),
    }
    (out / f"{stem}_heatmap.json").write_text(json.dumps(doc) + "\n")


def cmd_export_viz(args) -> int:
    if not args.trace and not args.map:
        raise UsageError("give at least one --trace or --map")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.trace is not None:
        export_trajectories([Path(p) for p in args.trace], out)
    for p in args.map or ():
        export_heatmap(Path(p), out)
    print(f"wrote plot data to {out}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="covertnav", description="Covert navigation simulation pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config (defaults apply to missing keys)")

    sp = sub.add_parser("world", help="generate a world and its point cloud")
    common(sp)
    sp.add_argument("--scenario", choices=SCENARIOS)
    sp.add_argument("--extent", type=float, nargs=2, metavar=("X", "Y"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_world)

    sp = sub.add_parser("maps", help="build cover, height, goal and threat maps from a world's cloud")
    common(sp)
    sp.add_argument("--world", required=True)
    sp.add_argument("--cloud", required=True)
    sp.add_argument("--goal", type=float, nargs=2, metavar=("X", "Y"))
    sp.add_argument("--start", type=float, nargs=2, metavar=("X", "Y"), help="also compute the threat field")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_maps)

    sp = sub.add_parser("dataset", help="roll out behaviour policies into an offline dataset")
    common(sp)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--augmentations", type=int)
    sp.add_argument("--out", required=True, help="dataset file")
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("train", help="train a tabular CQL Q function")
    common(sp)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--out", required=True, help="Q table JSON file")
    sp.add_argument("--loss-log", help="loss CSV (default: next to --out)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate the learned policy against the baselines")
    common(sp)
    sp.add_argument("--q", required=True, help="Q table JSON file")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--workers", type=int, help="parallel worker processes")
    sp.add_argument("--scenarios", nargs="+", choices=SCENARIOS)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("export-viz", help="plot-ready CSV/JSON from traces and maps")
    sp.add_argument("--trace", nargs="*", help="trace JSONL files")
    sp.add_argument("--map", nargs="*", help="map files (e.g. threat.map)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_export_viz)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleScenario as exc:
        print(f"infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
