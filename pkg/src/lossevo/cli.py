"""Command-line entry point: ``lossevo {evolve,validate,test,inspect,export,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import controller as ctl
from .envs import build_env_set
from .errors import ConfigError, LossEvoError
from .graph import LossGraph, from_document, load, topological_order, validate
from .hashing import functional_hash
from .presets import preset_graphs
from .render import render_losses

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("lossevo")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lossevo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("evolve", help="run meta-training")
    ev.add_argument("--config", required=True)
    ev.add_argument("--seed", type=int, help="override the master seed")
    ev.add_argument("--workers", type=int, help="override the worker count")
    ev.add_argument("--out", help="override the output directory")
    ev.add_argument("--fresh", action="store_true", help="ignore any resumable state")

    va = sub.add_parser("validate", help="re-score the archive on S_valid")
    va.add_argument("--config", required=True)
    va.add_argument("--archive", help="run directory (defaults to the config's output_dir)")
    va.add_argument("--top", type=int, help="only the best N individuals by training front")
    va.add_argument("--out", help="output JSON path")

    te = sub.add_parser("test", help="meta-test named graphs on S_test")
    te.add_argument("--config", required=True)
    te.add_argument("--graphs", help="comma-separated preset names, graph files or digests")
    te.add_argument("--archive", help="run directory used to resolve digests")
    te.add_argument("--env", choices=["pendulum", "pointmass"],
                    help="evaluate on another family (cross-environment transfer)")
    te.add_argument("--out", help="output CSV path")

    ins = sub.add_parser("inspect", help="print nodes, shapes, expressions and digest")
    ins.add_argument("graph", nargs="?", help="graph file")
    ins.add_argument("--archive", help="graph file, or run directory with --graphs")
    ins.add_argument("--graphs", help="preset names or digest prefixes")
    ins.add_argument("--dims", default="3,1", help="state_dim,action_dim for shape inference")

    ex = sub.add_parser("export", help="write the Pareto-front dataset")
    ex.add_argument("--archive", required=True)
    ex.add_argument("--out", required=True)

    pl = sub.add_parser("plot", help="emit CSV + SVG artifacts")
    pl.add_argument("--archive", required=True)
    pl.add_argument("--kind", choices=["pareto", "sweep", "diagnostics"], required=True)
    pl.add_argument("--graphs", help="names or digest prefixes (sweep, diagnostics)")
    pl.add_argument("--out", required=True, help="output path stem")
    return p


def _names(text: str | None) -> list[str]:
    return [n.strip() for n in text.split(",") if n.strip()] if text else []


def _resolve_graphs(names: list[str], archive: ctl.Archive | None) -> dict[str, LossGraph]:
    presets = preset_graphs()
    found: dict[str, LossGraph] = {}
    for name in names:
        if name in presets:
            found[name] = presets[name]
            continue
        if Path(name).is_file():
            found[name] = load(name)
            continue
        matches = [e for d, e in (archive.entries.items() if archive else []) if d.startswith(name)]
        if len(matches) == 1:
            found[name] = from_document(matches[0]["graph"])
        else:
            log.warning("unknown graph %r skipped (known presets: %s)", name, ", ".join(presets))
    return found


def _run_dir(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"archive path {p} does not exist")
    return p


def _load_archive(path: str) -> ctl.Archive:
    p = _run_dir(path)
    target = p / "archive.json" if p.is_dir() else p
    if not target.exists():
        raise FileNotFoundError(f"no archive.json under {p}")
    return ctl.Archive.load(target)


def cmd_evolve(args) -> int:
    cfg = ctl.load_run_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.out:
        changes["output_dir"] = args.out
    cfg = replace(cfg, **changes) if changes else cfg
    result = ctl.run_meta_training(cfg, resume=not args.fresh)
    print(f"archive: {result.output_dir} ({len(result.archive)} individuals, "
          f"{result.evaluations} evaluations, {result.cache_hits} cache hits)")
    for ind in result.front():
        print(f"front {ind.digest.short}  f_perf={ind.fitness[0]:.4f}  f_gen={ind.fitness[1]:.4f}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = ctl.load_run_config(args.config)
    run_dir = Path(args.archive or cfg.output_dir)
    archive = _load_archive(str(run_dir))
    inds = ctl.meta_validate(archive, cfg, args.top)
    front = {str(i.digest) for i in ctl.validation_front(inds)}
    rows = [{"digest": str(i.digest), "fitness": list(i.fitness),
             "seed_scores": i.seed_scores.to_dict(), "front": str(i.digest) in front,
             "training_fitness": i.lineage.get("training_fitness")} for i in inds]
    out = Path(args.out) if args.out else run_dir / "meta_validation.json"
    out.write_text(json.dumps({"individuals": rows}, indent=1, sort_keys=True) + "\n")
    for r in rows:
        if r["front"]:
            print(f"front {r['digest'][:12]}  f_perf={r['fitness'][0]:.4f}  "
                  f"f_gen={r['fitness'][1]:.4f}")
    return EXIT_OK


def cmd_test(args) -> int:
    cfg = ctl.load_run_config(args.config)
    archive = _load_archive(args.archive) if args.archive else None
    names = _names(args.graphs)
    if names:
        graphs = _resolve_graphs(names, archive)
    elif archive is not None:
        graphs = {e["digest"][:12]: from_document(e["graph"]) for e in archive.front()}
    else:
        graphs = {"warm_start_sac": preset_graphs()["warm_start_sac"]}
    env_set = cfg.env_set()
    if args.env and args.env != env_set.family:
        env_set = build_env_set(args.env)
    rows = ctl.meta_test(graphs, env_set, cfg)
    from .plots import write_csv
    table = [[r["name"], *(r["fitness"] or ["", ""]), r["error"] or ""] for r in rows]
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "meta_test.csv"
    write_csv(out, ["graph", "f_perf", "f_gen", "error"], table)
    for r in rows:
        if r["error"]:
            print(f"{r['name']}: invalid for {env_set.family}: {r['error']}")
        else:
            print(f"{r['name']}: f_perf={r['fitness'][0]:.4f}  f_gen={r['fitness'][1]:.4f}")
    return EXIT_OK


def inspect_report(graph: LossGraph, dims=(3, 1), batch: int = 16) -> str:
    lines = []
    report = validate(graph, dims, batch)
    nodes = graph.node_map()
    try:
        order = topological_order(graph)
    except LossEvoError:
        order = [n.id for n in graph.nodes]
    lines.append(f"nodes: {len(graph.nodes)} (max {graph.max_nodes}), live: {len(report.live)}")
    for i in order:
        n = nodes[i]
        info = report.info.get(i)
        shape = "" if info is None else f"{info.category.value}" + (
            f" {list(info.shape)}" if info.shape is not None else "")
        const = f" c={n.const:g}" if n.const is not None else ""
        dead = "" if i in report.live else "  (dead)"
        lines.append(f"  {i:3d} {n.kind.value}{const} <- {list(n.inputs)}  {shape}{dead}")
    if report.valid:
        losses = render_losses(graph)
        lines.append(f"L_pi  = {losses['policy_loss']}")
        lines.append(f"L_Q_i = {losses['critic_loss']}")
    else:
        lines.append(f"INVALID: {report.first_error}")
        for node, msg in report.errors[1:]:
            lines.append(f"  node {node}: {msg}")
    lines.append(f"digest: {functional_hash(graph)}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    dims = tuple(int(x) for x in args.dims.split(","))
    path = args.graph or args.archive
    targets: dict[str, LossGraph] = {}
    names = _names(args.graphs)
    if path and Path(path).is_dir():
        targets = _resolve_graphs(names, _load_archive(path))
    elif path:
        if not Path(path).exists():
            raise FileNotFoundError(f"graph file {path} does not exist")
        targets = {path: load(path)}
    else:
        targets = _resolve_graphs(names, None)
    if not targets:
        print("nothing to inspect", file=sys.stderr)
        return EXIT_DATA
    invalid = False
    for name, graph in targets.items():
        print(f"== {name}")
        text = inspect_report(graph, dims)
        invalid |= "INVALID:" in text
        print(text)
    return EXIT_DATA if invalid else EXIT_OK


def cmd_export(args) -> int:
    archive = _load_archive(args.archive)
    written = ctl.export_dataset(archive, args.out)
    print(f"exported {len(written)} graphs to {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from . import plots

    run_dir = _run_dir(args.archive)
    archive = _load_archive(args.archive)
    out = Path(args.out)
    if not len(archive):
        log.warning("archive is empty; emitting an empty table")
    if args.kind == "pareto":
        rows = plots.pareto_plot(archive, out)
    elif args.kind == "diagnostics":
        rows = plots.diagnostics_rows(run_dir if run_dir.is_dir() else run_dir.parent,
                                      _names(args.graphs))
        plots.diagnostics_plot(rows, out)
    else:
        cfg_path = (run_dir if run_dir.is_dir() else run_dir.parent) / "config.json"
        cfg = ctl.run_config_from_dict(json.loads(cfg_path.read_text()))
        graphs = _resolve_graphs(_names(args.graphs) or ["warm_start_sac"], archive)
        rows = plots.sweep_table(graphs, cfg.env_set(), cfg, cfg.seeds_test)
        plots.sweep_plot(rows, out)
    print(f"wrote {out.with_suffix('.csv')} ({len(rows)} rows) and {out.with_suffix('.svg')}")
    return EXIT_OK


COMMANDS = {"evolve": cmd_evolve, "validate": cmd_validate, "test": cmd_test,
            "inspect": cmd_inspect, "export": cmd_export, "plot": cmd_plot}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LossEvoError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
