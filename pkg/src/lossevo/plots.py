"""Static artifacts: a CSV table (the contract) plus an SVG figure per plot kind."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .controller import Archive, RunConfig  # noqa: E402
from .envs import EnvSet  # noqa: E402
from .graph import LossGraph  # noqa: E402
from .trainer import evaluate_policy_many, train  # noqa: E402

log = logging.getLogger(__name__)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def pareto_plot(archive: Archive, out: Path) -> list[list]:
    front = {e["digest"] for e in archive.front()}
    rows = [[e["digest"], e["fitness"][0], e["fitness"][1], str(e["digest"] in front).lower(),
             e["status"]]
            for e in archive.entries.values() if e["fitness"] is not None]
    write_csv(out.with_suffix(".csv"), ["digest", "f_perf", "f_gen", "front", "status"], rows)
    fig, ax = plt.subplots(figsize=(5, 4))
    if rows:
        pts = np.array([[r[1], r[2]] for r in rows], dtype=float)
        mask = np.array([r[3] == "true" for r in rows])
        ax.scatter(pts[~mask, 0], pts[~mask, 1], s=14, c="0.6", label="archive")
        ax.scatter(pts[mask, 0], pts[mask, 1], s=30, c="C3", label="Pareto front")
        ax.legend(loc="lower left")
    ax.set_xlabel("stability-adjusted performance")
    ax.set_ylabel("stability-adjusted generalizability")
    fig.tight_layout()
    fig.savefig(out.with_suffix(".svg"))
    plt.close(fig)
    return rows


def sweep_table(graphs: Mapping[str, LossGraph], env_set: EnvSet, cfg: RunConfig,
                seeds: Sequence[int]) -> list[list]:
    """Rows of (graph, axis, value, mean return, std across seeds)."""
    rows = []
    cfgs = env_set.all_configs()
    for name, graph in graphs.items():
        per_seed = []
        for seed in seeds:
            result = train(graph, cfg.trainer, env_set.train, seed)
            if not result:
                log.warning("%s failed to train on seed %s: %s", name, seed, result.reason)
                continue
            returns = evaluate_policy_many(result, cfgs, cfg.fitness.eval_episodes, seed)
            per_seed.append(returns.mean(axis=1))
        if not per_seed:
            continue
        stats = np.array(per_seed)
        i = 0
        for axis, configs in (env_set.axes or {"train": (env_set.train,)}).items():
            for c in configs:
                value = getattr(c, axis) if axis != "train" else 0.0
                rows.append([name, axis, value, float(stats[:, i].mean()), float(stats[:, i].std())])
                i += 1
    return rows


def sweep_plot(rows: Sequence[Sequence], out: Path) -> None:
    write_csv(out.with_suffix(".csv"), ["graph", "axis", "value", "mean_return", "std_return"], rows)
    axes = sorted({r[1] for r in rows})
    fig, plots = plt.subplots(1, max(1, len(axes)), figsize=(5 * max(1, len(axes)), 4),
                              squeeze=False)
    for ax, axis in zip(plots[0], axes):
        for name in dict.fromkeys(r[0] for r in rows):
            sel = [r for r in rows if r[0] == name and r[1] == axis]
            x = np.array([r[2] for r in sel])
            m = np.array([r[3] for r in sel])
            s = np.array([r[4] for r in sel])
            ax.plot(x, m, marker="o", label=name)
            ax.fill_between(x, m - s, m + s, alpha=0.2)
        ax.set_xscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel("return")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out.with_suffix(".svg"))
    plt.close(fig)


def diagnostics_rows(run_dir: Path, names: Sequence[str] | None = None) -> list[list]:
    path = run_dir / "diagnostics.jsonl"
    if not path.exists():
        return []
    rows = []
    for line in path.read_text().splitlines():
        d = json.loads(line)
        if names and not any(d["digest"].startswith(n) for n in names):
            continue
        rows.append([d["digest"], d["seed"], d["episode"], d["episode_return"], d["entropy"],
                     d["actor_grad_norm"] if d["actor_grad_norm"] is not None else ""])
    return rows


def diagnostics_plot(rows: Sequence[Sequence], out: Path) -> None:
    write_csv(out.with_suffix(".csv"),
              ["digest", "seed", "episode", "return", "entropy", "actor_grad_norm"], rows)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for digest in dict.fromkeys(r[0] for r in rows):
        sel = [r for r in rows if r[0] == digest]
        eps = sorted({r[2] for r in sel})
        ent = [np.mean([r[4] for r in sel if r[2] == e]) for e in eps]
        norms = [np.mean([r[5] for r in sel if r[2] == e and r[5] != ""] or [np.nan]) for e in eps]
        ax1.plot(eps, ent, label=digest[:10])
        ax2.plot(eps, norms, label=digest[:10])
    ax1.set_xlabel("episode")
    ax1.set_ylabel("policy entropy estimate")
    ax2.set_xlabel("episode")
    ax2.set_ylabel("actor gradient norm")
    if rows:
        ax1.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out.with_suffix(".svg"))
    plt.close(fig)
