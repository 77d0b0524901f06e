"""Evolution driver: hurdle-gated evaluation, caching, NSGA-II loop and phases.

Run directory layout::

    config.json            resolved run configuration
    state.json             last completed generation (for resuming)
    cache.json             digest -> fitness entry
    archive.json           every evaluated individual, once per digest
    events.jsonl           one record per evaluation request
    diagnostics.jsonl      per-episode training diagnostics
    generations/NNN/population.json
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .envs import EnvConfig, EnvSet, build_env_set
from .errors import ConfigError, ContractError, LossEvoError
from .fitness import FitnessConfig, SeedScores, fitness_tuple, raw_scores
from .graph import LossGraph, from_document, serialize, to_document, validate
from .hashing import HashDigest, functional_hash_with_signature, gradient_signature
from .mutation import MutationConfig, pad_to_max
from .nsga2 import non_dominated_sort, offspring_with_info, rank_and_select
from .presets import warm_start_sac
from .trainer import TrainerConfig, evaluate_policy, train

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class EnvSpec:
    family: str = "pendulum"
    params: Mapping[str, Any] = field(default_factory=dict)
    sweep: Mapping[str, Sequence[float]] = field(default_factory=dict)

    def build(self) -> EnvSet:
        return build_env_set(self.family, self.sweep, **self.params)


@dataclass(frozen=True)
class HurdleConfig:
    enabled: bool = True
    env: EnvSpec = field(default_factory=lambda: EnvSpec("pointmass"))
    seeds: tuple[int, ...] = (1000, 1001)
    threshold: float = 0.2
    trainer: Mapping[str, Any] = field(
        default_factory=lambda: {"min_samples": 200, "episodes": 20})
    eval_episodes: int = 20


@dataclass(frozen=True)
class RunConfig:
    population_size: int = 16
    generations: int = 3
    max_nodes: int = 60
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "runs/desk"
    seeds_train: tuple[int, ...] = (0, 1)
    seeds_valid: tuple[int, ...] = (100, 101)
    seeds_test: tuple[int, ...] = (200, 201)
    fitness: FitnessConfig = field(default_factory=FitnessConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    env: EnvSpec = field(default_factory=EnvSpec)
    hurdle: HurdleConfig = field(default_factory=HurdleConfig)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    meta_validation_top: int | None = None
    debug_hash_check: bool = False

    def __post_init__(self):
        if self.population_size < 1:
            raise ConfigError("population_size must be positive", "population_size")
        if self.generations < 0:
            raise ConfigError("generations must be nonnegative", "generations")
        if self.workers < 1:
            raise ConfigError("workers must be positive", "workers")
        if not self.seeds_train:
            raise ConfigError("S_train must not be empty", "seeds.train")
        named = {"S_train": self.seeds_train, "S_valid": self.seeds_valid,
                 "S_test": self.seeds_test, "S_hurdle": self.hurdle.seeds}
        keys = {"S_train": "seeds.train", "S_valid": "seeds.valid", "S_test": "seeds.test",
                "S_hurdle": "hurdle.seeds"}
        names = list(named)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                overlap = set(named[a]) & set(named[b])
                if overlap:
                    raise ConfigError(f"{b} overlaps {a} (shared seeds {sorted(overlap)}); "
                                      "seed sets must be pairwise disjoint", keys[b])

    def env_set(self) -> EnvSet:
        return self.env.build()

    def hurdle_env(self) -> EnvConfig:
        return self.hurdle.env.build().train

    def hurdle_trainer(self) -> TrainerConfig:
        return replace(self.trainer, **dict(self.hurdle.trainer))

    def fitness_config(self, seeds: Sequence[int]) -> FitnessConfig:
        return replace(self.fitness, num_seeds=len(seeds))

    def mutation_config(self) -> MutationConfig:
        return replace(self.mutation, env_dims=self.env_set().train.dims,
                       batch=self.trainer.batch_size)

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size, "generations": self.generations,
            "max_nodes": self.max_nodes, "master_seed": self.master_seed,
            "workers": self.workers, "output_dir": self.output_dir,
            "seeds": {"train": list(self.seeds_train), "valid": list(self.seeds_valid),
                      "test": list(self.seeds_test)},
            "fitness": {"kappa": self.fitness.kappa, "eval_episodes": self.fitness.eval_episodes},
            "trainer": self.trainer.to_dict(),
            "env": _env_spec_dict(self.env),
            "hurdle": {"enabled": self.hurdle.enabled, "env": _env_spec_dict(self.hurdle.env),
                       "seeds": list(self.hurdle.seeds), "threshold": self.hurdle.threshold,
                       "trainer": dict(self.hurdle.trainer),
                       "eval_episodes": self.hurdle.eval_episodes},
            "mutation": {"p_node_mutation": self.mutation.p_node_mutation,
                         "count_distribution": {str(k): v for k, v in
                                                self.mutation.count_distribution.items()},
                         "max_attempts": self.mutation.max_attempts},
            "meta_validation_top": self.meta_validation_top,
            "debug_hash_check": self.debug_hash_check,
        }


def _env_spec_dict(spec: EnvSpec) -> dict:
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in spec.params.items()}
    return {"family": spec.family, "params": params,
            "sweep": {k: list(v) for k, v in spec.sweep.items()}}


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be a mapping", where)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown field {where}.{key}", f"{where}.{key}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}", where) from None


def _env_spec(data, where: str, default_family: str) -> EnvSpec:
    data = dict(data or {})
    unknown = set(data) - {"family", "params", "sweep"}
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown field {where}.{key}", f"{where}.{key}")
    spec = EnvSpec(data.get("family", default_family), dict(data.get("params") or {}),
                   {k: tuple(v) for k, v in (data.get("sweep") or {}).items()})
    try:
        spec.build()
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}", f"{where}.{exc.field or 'family'}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}", f"{where}.params") from None
    return spec


def run_config_from_dict(data: Mapping, base_dir: str | Path | None = None) -> RunConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("run config must be a mapping", "<root>")
    data = dict(data)
    top = {"population_size", "generations", "max_nodes", "master_seed", "workers",
           "output_dir", "seeds", "fitness", "trainer", "env", "hurdle", "mutation",
           "meta_validation_top", "debug_hash_check"}
    for key in data:
        if key not in top:
            raise ConfigError(f"unknown field {key}", key)
    seeds = dict(data.pop("seeds", None) or {})
    for key in seeds:
        if key not in ("train", "valid", "test"):
            raise ConfigError(f"unknown field seeds.{key}", f"seeds.{key}")
    kw: dict[str, Any] = {}
    for name in ("train", "valid", "test"):
        if name in seeds:
            try:
                kw[f"seeds_{name}"] = tuple(int(s) for s in seeds[name])
            except (TypeError, ValueError):
                raise ConfigError(f"seeds.{name} must be a list of integers",
                                  f"seeds.{name}") from None
    fit = dict(data.pop("fitness", None) or {})
    fit.setdefault("num_seeds", len(kw.get("seeds_train", RunConfig.seeds_train)))
    kw["fitness"] = _build(FitnessConfig, fit, "fitness")
    kw["trainer"] = _build(TrainerConfig, data.pop("trainer", None), "trainer")
    kw["env"] = _env_spec(data.pop("env", None), "env", "pendulum")
    hurdle = dict(data.pop("hurdle", None) or {})
    hurdle_env = _env_spec(hurdle.pop("env", None), "hurdle.env", "pointmass")
    if "seeds" in hurdle:
        hurdle["seeds"] = tuple(int(s) for s in hurdle["seeds"])
    hcfg = _build(HurdleConfig, hurdle, "hurdle")
    try:
        replace(kw["trainer"], **dict(hcfg.trainer))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"hurdle.trainer: {exc}", "hurdle.trainer") from None
    kw["hurdle"] = replace(hcfg, env=hurdle_env)
    mut = dict(data.pop("mutation", None) or {})
    if "count_distribution" in mut:
        mut["count_distribution"] = {int(k): float(v) for k, v in mut["count_distribution"].items()}
    kw["mutation"] = _build(MutationConfig, mut, "mutation")
    if "output_dir" in data and base_dir is not None:
        out = Path(data["output_dir"])
        data["output_dir"] = str(out if out.is_absolute() else Path(base_dir) / out)
    for key in ("population_size", "generations", "max_nodes", "master_seed", "workers"):
        if key in data and not isinstance(data[key], int):
            raise ConfigError(f"{key} must be an integer", key)
    return RunConfig(**data, **kw)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}", "<file>") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}", "<file>") from None
    return run_config_from_dict(data or {}, base_dir=path.parent)


# ---------------------------------------------------------------------------
# individuals, cache, archive


@dataclass
class Individual:
    graph: LossGraph
    digest: HashDigest
    fitness: tuple[float, float] | None = None
    seed_scores: SeedScores | None = None
    lineage: dict = field(default_factory=dict)
    status: str = "unevaluated"

    @classmethod
    def of(cls, graph: LossGraph, **lineage) -> "Individual":
        digest, _ = functional_hash_with_signature(graph)
        return cls(graph, digest, lineage=dict(lineage))


@dataclass(frozen=True)
class CacheEntry:
    fitness: tuple[float, float]
    seed_scores: SeedScores
    status: str
    signature: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        d = {"fitness": list(self.fitness), "seed_scores": self.seed_scores.to_dict(),
             "status": self.status}
        if self.signature is not None:
            d["signature"] = list(self.signature)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CacheEntry":
        sig = d.get("signature")
        return cls(tuple(d["fitness"]), SeedScores.from_dict(d["seed_scores"]), d["status"],
                   tuple(sig) if sig is not None else None)


class CacheMismatchError(LossEvoError):
    """A cached digest was hit by a graph with a different gradient signature."""


class FitnessCache:
    """Digest -> fitness; entries are write-once."""

    def __init__(self, debug: bool = False):
        self.entries: dict[str, CacheEntry] = {}
        self.debug = debug
        self.hits = 0

    def __contains__(self, digest) -> bool:
        return str(digest) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, digest, graph: LossGraph | None = None) -> CacheEntry | None:
        entry = self.entries.get(str(digest))
        if entry is None:
            return None
        if self.debug and graph is not None and entry.signature is not None:
            sig = gradient_signature(graph)
            if sig is None or tuple(int(x) for x in sig) != entry.signature:
                raise CacheMismatchError(f"signature mismatch for digest {digest}")
        self.hits += 1
        return entry

    def put(self, digest, entry: CacheEntry) -> None:
        key = str(digest)
        if key in self.entries:
            if self.entries[key].fitness != entry.fitness:
                raise LossEvoError(f"cache entry for {key} is immutable")
            return
        self.entries[key] = entry

    def save(self, path: Path) -> None:
        _write_json(path, {k: self.entries[k].to_dict() for k in sorted(self.entries)})

    @classmethod
    def load(cls, path: Path, debug: bool = False) -> "FitnessCache":
        cache = cls(debug)
        if path.exists():
            cache.entries = {k: CacheEntry.from_dict(v) for k, v in json.loads(path.read_text()).items()}
        return cache


@dataclass
class Archive:
    """Every evaluated individual, once per digest, in first-evaluation order."""

    entries: dict[str, dict] = field(default_factory=dict)

    def add(self, ind: Individual, phase: str = "meta_training") -> None:
        key = str(ind.digest)
        if key in self.entries:
            return
        self.entries[key] = {
            "digest": key,
            "graph": to_document(ind.graph),
            "fitness": list(ind.fitness) if ind.fitness is not None else None,
            "seed_scores": ind.seed_scores.to_dict() if ind.seed_scores else None,
            "lineage": ind.lineage,
            "status": ind.status,
            "phase": phase,
        }

    def __len__(self) -> int:
        return len(self.entries)

    def digests(self) -> list[str]:
        return list(self.entries)

    def individuals(self) -> list[Individual]:
        out = []
        for e in self.entries.values():
            out.append(Individual(
                from_document(e["graph"]), HashDigest(e["digest"]),
                tuple(e["fitness"]) if e["fitness"] is not None else None,
                SeedScores.from_dict(e["seed_scores"]) if e["seed_scores"] else None,
                dict(e["lineage"]), e["status"]))
        return out

    def front(self) -> list[dict]:
        """Entries on the first non-dominated front of archive fitness."""
        scored = [e for e in self.entries.values() if e["fitness"] is not None]
        if not scored:
            return []
        fronts = non_dominated_sort([tuple(e["fitness"]) for e in scored])
        return [scored[i] for i in fronts[0]]

    def save(self, path: Path) -> None:
        _write_json(path, {"individuals": list(self.entries.values())})

    @classmethod
    def load(cls, path: str | Path) -> "Archive":
        path = Path(path)
        if path.is_dir():
            path = path / "archive.json"
        data = json.loads(path.read_text())
        return cls({e["digest"]: e for e in data["individuals"]})


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, indent=1, sort_keys=True, ensure_ascii=False) + "\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    fitness: tuple[float, float]
    seed_scores: SeedScores
    status: str
    updates: int
    hurdle_score: float | None
    wall: float
    diagnostics: list = field(default_factory=list)


def _zero_scores(seeds: Sequence[int]) -> SeedScores:
    return SeedScores.build([(s, None, None) for s in seeds])


def evaluate_graph(graph: LossGraph, cfg: RunConfig, seeds: Sequence[int],
                   use_hurdle: bool = True, env_set: EnvSet | None = None) -> EvalResult:
    """Validate, hurdle-gate, then train and score ``graph`` on every seed in turn."""
    start = time.perf_counter()
    env_set = env_set or cfg.env_set()
    fcfg = cfg.fitness_config(seeds)
    updates = 0
    diagnostics: list = []

    def done(status, scores, hurdle=None):
        return EvalResult(fitness_tuple(scores, fcfg), scores, status, updates, hurdle,
                          time.perf_counter() - start, diagnostics)

    if not validate(graph, env_set.train.dims, cfg.trainer.batch_size).valid:
        return done("invalid", _zero_scores(seeds))
    hurdle_score = None
    if use_hurdle and cfg.hurdle.enabled:
        henv = cfg.hurdle_env()
        htrainer = cfg.hurdle_trainer()
        if not validate(graph, henv.dims, htrainer.batch_size).valid:
            return done("hurdle_failed", _zero_scores(seeds), 0.0)
        scores = []
        for seed in cfg.hurdle.seeds:
            try:
                result = train(graph, htrainer, henv, seed)
            except LossEvoError:
                result = None
            if result:
                updates += result.updates
                scores.append(evaluate_policy(result, henv, cfg.hurdle.eval_episodes, seed))
            else:
                updates += getattr(result, "updates", 0)
                scores.append(0.0)
        hurdle_score = float(np.mean(scores)) if scores else 0.0
        if hurdle_score < cfg.hurdle.threshold:
            return done("hurdle_failed", _zero_scores(seeds), hurdle_score)
    rows = []
    for seed in seeds:
        try:
            result = train(graph, cfg.trainer, env_set.train, seed)
            if not result:
                updates += result.updates
                rows.append((seed, None, None))
                continue
            updates += result.updates
            diagnostics.extend({"seed": seed, **asdict(d)} for d in result.diagnostics)
            perf, gen = raw_scores(result, env_set, cfg.fitness.eval_episodes, seed)
            rows.append((seed, perf, gen))
        except Exception as exc:  # a crashed seed counts as failed
            log.warning("seed %s failed: %s", seed, exc)
            rows.append((seed, None, None))
    return done("evaluated", SeedScores.build(rows), hurdle_score)


def _evaluate_job(job):
    graph, cfg, seeds, use_hurdle = job
    return evaluate_graph(graph, cfg, seeds, use_hurdle)


def evaluate_individual(ind: Individual, cfg: RunConfig, phase_seeds: Sequence[int],
                        cache: FitnessCache | None = None,
                        use_hurdle: bool = True) -> tuple[tuple[float, float], SeedScores]:
    if cache is not None:
        hit = cache.get(ind.digest, ind.graph)
        if hit is not None:
            ind.fitness, ind.seed_scores, ind.status = hit.fitness, hit.seed_scores, hit.status
            return hit.fitness, hit.seed_scores
    res = evaluate_graph(ind.graph, cfg, phase_seeds, use_hurdle)
    ind.fitness, ind.seed_scores, ind.status = res.fitness, res.seed_scores, res.status
    if cache is not None:
        cache.put(ind.digest, CacheEntry(res.fitness, res.seed_scores, res.status))
    return res.fitness, res.seed_scores


# ---------------------------------------------------------------------------
# meta-training


@dataclass
class RunResult:
    population: list[Individual]
    offspring: list[Individual]
    archive: Archive
    cache: FitnessCache
    train_steps: int
    evaluations: int
    output_dir: Path

    @property
    def cache_hits(self) -> int:
        return self.cache.hits

    def front(self) -> list[Individual]:
        pop = [i for i in self.population if i.fitness is not None]
        fronts = non_dominated_sort([i.fitness for i in pop])
        return [pop[i] for i in fronts[0]] if fronts else []


class MetaTrainer:
    def __init__(self, cfg: RunConfig, output_dir: str | Path | None = None):
        self.cfg = cfg
        self.out = Path(output_dir or cfg.output_dir)
        self.cache = FitnessCache(cfg.debug_hash_check)
        self.archive = Archive()
        self.train_steps = 0
        self.evaluations = 0
        self.env_set = cfg.env_set()

    def _rng(self, t: int, stream: int) -> np.random.Generator:
        """Generation ``t`` stream: 0 pads the warm start, 1 breeds offspring."""
        return np.random.default_rng([self.cfg.master_seed, t, stream])

    def _event(self, record: dict) -> None:
        with open(self.out / "events.jsonl", "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def evaluate(self, inds: Sequence[Individual], generation: int) -> None:
        """Evaluate uncached digests (once each, in order) and fill in every individual."""
        pending: dict[str, Individual] = {}
        for ind in inds:
            key = str(ind.digest)
            if key not in self.cache and key not in pending:
                pending[key] = ind
        jobs = [(ind.graph, self.cfg, self.cfg.seeds_train, True) for ind in pending.values()]
        if self.cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(self.cfg.workers) as pool:
                results = list(pool.map(_evaluate_job, jobs))
        else:
            results = [_evaluate_job(j) for j in jobs]
        fresh = set()
        for (key, ind), res in zip(pending.items(), results):
            sig = None
            if self.cfg.debug_hash_check:
                s = gradient_signature(ind.graph)
                sig = tuple(int(x) for x in s) if s is not None else None
            self.cache.put(key, CacheEntry(res.fitness, res.seed_scores, res.status, sig))
            self.train_steps += res.updates
            self.evaluations += 1
            fresh.add(key)
            self._event({"digest": key, "phase": "meta_training", "generation": generation,
                         "seeds": list(self.cfg.seeds_train), "fitness": list(res.fitness),
                         "status": res.status, "hurdle": res.hurdle_score,
                         "wall": round(res.wall, 3), "cache_hit": False})
            if res.diagnostics:
                with open(self.out / "diagnostics.jsonl", "a") as fh:
                    for d in res.diagnostics:
                        fh.write(json.dumps({"digest": key, "phase": "meta_training", **d}) + "\n")
        for ind in inds:
            key = str(ind.digest)
            if key in fresh:
                entry = self.cache.entries[key]
                fresh.discard(key)
            else:
                entry = self.cache.get(ind.digest, ind.graph)
                self._event({"digest": key, "phase": "meta_training", "generation": generation,
                             "seeds": list(self.cfg.seeds_train), "fitness": list(entry.fitness),
                             "status": entry.status, "cache_hit": True})
            ind.fitness, ind.seed_scores, ind.status = entry.fitness, entry.seed_scores, entry.status
            self.archive.add(ind)

    def _offspring(self, parents: list[Individual], t: int, initial: bool) -> list[Individual]:
        rng = self._rng(t, 1)
        children = offspring_with_info(parents, self.cfg.population_size,
                                       self.cfg.mutation_config(), rng,
                                       key=None if initial else (lambda i: i.fitness))
        out = []
        for graph, idx, info in children:
            out.append(Individual.of(graph, parent=str(parents[idx].digest), generation=t,
                                     mutation=info.kind, count=info.count, valid=info.valid))
        return out

    def _snapshot(self, t: int, pop: list[Individual], kids: list[Individual]) -> None:
        def rows(inds):
            return [{"digest": str(i.digest), "graph": to_document(i.graph),
                     "fitness": list(i.fitness) if i.fitness else None, "lineage": i.lineage}
                    for i in inds]
        _write_json(self.out / "generations" / f"{t:03d}" / "population.json",
                    {"generation": t, "population": rows(pop), "offspring": rows(kids)})
        self.cache.save(self.out / "cache.json")
        self.archive.save(self.out / "archive.json")
        _write_json(self.out / "state.json", {"completed_generation": t,
                                              "train_steps": self.train_steps,
                                              "evaluations": self.evaluations,
                                              "cache_hits": self.cache.hits})

    def _restore(self) -> tuple[int, list[Individual], list[Individual]] | None:
        state_path = self.out / "state.json"
        if not state_path.exists():
            return None
        saved = json.loads((self.out / "config.json").read_text())
        if saved != self.cfg.to_dict():
            raise ConfigError("output directory holds a run with a different config",
                              "output_dir")
        state = json.loads(state_path.read_text())
        t = state["completed_generation"]
        self.cache = FitnessCache.load(self.out / "cache.json", self.cfg.debug_hash_check)
        self.cache.hits = state["cache_hits"]
        self.archive = Archive.load(self.out / "archive.json")
        self.train_steps = state["train_steps"]
        self.evaluations = state["evaluations"]
        snap = json.loads((self.out / "generations" / f"{t:03d}" / "population.json").read_text())

        def inds(rows):
            out = []
            for r in rows:
                entry = self.cache.entries[r["digest"]]
                out.append(Individual(from_document(r["graph"]), HashDigest(r["digest"]),
                                      entry.fitness, entry.seed_scores, r["lineage"], entry.status))
            return out
        return t, inds(snap["population"]), inds(snap["offspring"])

    def run(self, resume: bool = True) -> RunResult:
        cfg = self.cfg
        self.out.mkdir(parents=True, exist_ok=True)
        restored = self._restore() if resume else None
        if restored is None:
            for name in ("events.jsonl", "diagnostics.jsonl", "state.json"):
                (self.out / name).unlink(missing_ok=True)
            _write_json(self.out / "config.json", cfg.to_dict())
            rng = self._rng(0, 0)
            base = warm_start_sac(cfg.max_nodes)
            pop = [Individual.of(pad_to_max(base, cfg.max_nodes, rng), generation=0,
                                 mutation="warm_start") for _ in range(cfg.population_size)]
            self.evaluate(pop, 0)
            kids = self._offspring(pop, 0, initial=True)
            self.evaluate(kids, 0)
            self._snapshot(0, pop, kids)
            start = 1
        else:
            t, pop, kids = restored
            start = t + 1
        for t in range(start, cfg.generations + 1):
            union, seen = [], set()
            for ind in [*pop, *kids]:
                if str(ind.digest) not in seen:
                    seen.add(str(ind.digest))
                    union.append(ind)
            pop = rank_and_select(union, min(cfg.population_size, len(union)))
            kids = self._offspring(pop, t, initial=False)
            self.evaluate(kids, t)
            self._snapshot(t, pop, kids)
        return RunResult(pop, kids, self.archive, self.cache, self.train_steps,
                         self.evaluations, self.out)


def run_meta_training(cfg: RunConfig, output_dir: str | Path | None = None,
                      resume: bool = True) -> RunResult:
    return MetaTrainer(cfg, output_dir).run(resume)


# ---------------------------------------------------------------------------
# meta-validation and meta-testing


def _check_phase_seeds(cfg: RunConfig, seeds: Sequence[int], field_name: str) -> None:
    overlap = set(seeds) & set(cfg.seeds_train)
    if overlap:
        raise ConfigError(f"{field_name} shares seeds {sorted(overlap)} with S_train",
                          field_name)


def meta_validate(archive: Archive, cfg: RunConfig, top: int | None = None) -> list[Individual]:
    """Re-score archived individuals on S_valid without the hurdle or the training cache."""
    _check_phase_seeds(cfg, cfg.seeds_valid, "S_valid")
    if not len(archive):
        raise ContractError("meta-validation needs a nonempty archive")
    inds = archive.individuals()
    top = top if top is not None else cfg.meta_validation_top
    if top is not None and top < len(inds):
        keyed = [i.fitness or (0.0, 0.0) for i in inds]
        order = []
        for front in non_dominated_sort(keyed):
            order.extend(front)
        inds = [inds[i] for i in sorted(order[:top])]
    env_set = cfg.env_set()
    out = []
    for ind in inds:
        res = evaluate_graph(ind.graph, cfg, cfg.seeds_valid, use_hurdle=False, env_set=env_set)
        out.append(Individual(ind.graph, ind.digest, res.fitness, res.seed_scores,
                              {**ind.lineage, "training_fitness": ind.fitness}, res.status))
    return out


def meta_test(graphs: Mapping[str, LossGraph], env_set: EnvSet, cfg: RunConfig) -> list[dict]:
    """Score each named graph on ``env_set`` with S_test; incompatible graphs get an error row."""
    _check_phase_seeds(cfg, cfg.seeds_test, "S_test")
    rows = []
    for name, graph in graphs.items():
        report = validate(graph, env_set.train.dims, cfg.trainer.batch_size)
        if not report.valid:
            rows.append({"name": name, "error": report.first_error, "fitness": None,
                         "seed_scores": None})
            continue
        res = evaluate_graph(graph, cfg, cfg.seeds_test, use_hurdle=False, env_set=env_set)
        rows.append({"name": name, "error": None, "fitness": list(res.fitness),
                     "seed_scores": res.seed_scores.to_dict(), "status": res.status})
    return rows


def validation_front(inds: Sequence[Individual]) -> list[Individual]:
    scored = [i for i in inds if i.fitness is not None]
    if not scored:
        return []
    return [scored[i] for i in non_dominated_sort([i.fitness for i in scored])[0]]


# ---------------------------------------------------------------------------
# dataset export


def export_dataset(archive: Archive, path: str | Path) -> list[Path]:
    """Write each Pareto-front graph to ``graphs/<digest>.json`` plus ``index.json``."""
    root = Path(path)
    try:
        (root / "graphs").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create export directory {root}: {exc}") from exc
    front = sorted(archive.front(), key=lambda e: e["digest"])
    written = []
    index = []
    for e in front:
        graph = from_document(e["graph"])
        target = root / "graphs" / f"{e['digest'][:16]}.json"
        target.write_text(serialize(graph))
        written.append(target)
        index.append({"digest": e["digest"], "file": f"graphs/{target.name}",
                      "fitness": e["fitness"], "seed_scores": e["seed_scores"],
                      "lineage": e["lineage"], "phase": e["phase"]})
    _write_json(root / "index.json", {"individuals": index})
    return written


__all__ = ["RunConfig", "EnvSpec", "HurdleConfig", "Individual", "FitnessCache", "CacheEntry",
           "Archive", "EvalResult", "evaluate_graph", "evaluate_individual",
           "run_meta_training", "MetaTrainer", "meta_validate", "meta_test",
           "export_dataset", "load_run_config", "run_config_from_dict", "validation_front"]
