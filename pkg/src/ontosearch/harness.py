"""Seeded experiment runner: personalization episodes and the four search studies."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import mean

import numpy as np

from .envmodel import (Environment, LocationTuple, WorldState, episode_rng, load_environment,
                       load_reference_environment, reference_environment_path, sample_placements)
from .ontology import (DISCOUNT, HORIZON, JEFFREYS_LAMBDA, LEARNING_RATE, BeliefMatrix,
                       EpisodeHistory, aggregate_history, check_termination, empirical_prior,
                       insitu_prior, kl_divergence, load_empirical_counts, observe_update,
                       uniform_prior)
from .planner import (DEFAULT_ALPHA, LTOS_ALPHA, LTOS_TOP_K, PLANNERS, SearchResult, SearchTask,
                      run_search)

log = logging.getLogger(__name__)

PRIORS = ("uniform", "insitu", "empirical")
TOUR_EPSILON = 0.1
INSITU_EPISODES = 5

# independent random streams per seed
STREAM_PLACEMENT = 0
STREAM_TOUR = 1
STREAM_INSITU = 2
STREAM_SCENARIO = 3

ABLATION_TASKS = (("phone", "laptop"), ("cup", "remote"), ("phone", "book"),
                  ("laptop", "bottle"), ("cup", "book"))
COMPARE_OBJECTS = ("cup", "book", "teddy", "bottle", "phone")

DISTANCE_NOTE = "distances in meters along shortest grid paths; travel time is not modeled"


@dataclass(frozen=True)
class ExperimentConfig:
    env_path: str | None = None
    seeds: tuple[int, ...] = tuple(range(20))
    priors: tuple[str, ...] = PRIORS
    planners: tuple[str, ...] = PLANNERS
    alpha: float = DEFAULT_ALPHA
    ltos_alpha: float = LTOS_ALPHA
    ltos_k: int = LTOS_TOP_K
    max_episodes: int = 200
    snapshots: tuple[int, ...] = (15, 30)
    counts_path: str | None = None
    lam: float = JEFFREYS_LAMBDA
    beta: float = LEARNING_RATE
    gamma: float = DISCOUNT
    horizon: int = HORIZON
    tour_epsilon: float = TOUR_EPSILON
    insitu_episodes: int = INSITU_EPISODES
    tasks: tuple[tuple[str, ...], ...] = ABLATION_TASKS
    compare_objects: tuple[str, ...] = COMPARE_OBJECTS
    placements: int = 3
    jobs: int = 1

    def __post_init__(self):
        for name in ("seeds", "priors", "planners", "snapshots", "compare_objects"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "tasks", tuple(tuple(t) for t in self.tasks))
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.max_episodes < 1:
            raise ValueError("max_episodes must be >= 1")
        bad = set(self.priors) - set(PRIORS)
        if bad:
            raise ValueError(f"unknown prior kinds {sorted(bad)}")
        bad = set(self.planners) - set(PLANNERS)
        if bad:
            raise ValueError(f"unknown planners {sorted(bad)}")
        if any(s < 1 for s in self.snapshots):
            raise ValueError("snapshot episodes must be >= 1")
        if self.insitu_episodes < 1:
            raise ValueError("in-situ episode count must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("jobs")  # parallelism never changes results
        return d

    def config_hash(self) -> str:
        payload = self.to_dict()
        env_file = Path(self.env_path) if self.env_path else reference_environment_path()
        payload["env_sha256"] = hashlib.sha256(env_file.read_bytes()).hexdigest()
        text = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def environment(self) -> Environment:
        return load_environment(self.env_path) if self.env_path else load_reference_environment()

    def counts(self):
        return load_empirical_counts(self.counts_path)


@dataclass
class ExperimentReport:
    name: str
    tables: dict[str, list[dict]] = field(default_factory=dict)
    series: dict[str, list[dict]] = field(default_factory=dict)
    heatmaps: dict[str, dict] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)


@dataclass
class PersonalizationRun:
    seed: int
    prior_kind: str
    prior: BeliefMatrix
    beliefs: list[BeliefMatrix]  # aggregated belief after episode 1, 2, ...
    kl: np.ndarray  # (episodes, objects)
    max_halfwidth: np.ndarray  # (episodes, objects)
    object_threshold: dict[str, int | None]
    termination_episode: int | None
    tour_distances: list[float]

    @property
    def episodes(self) -> int:
        return len(self.beliefs)

    @property
    def final(self) -> BeliefMatrix:
        return self.beliefs[-1]

    def snapshot(self, episode: int) -> BeliefMatrix:
        """Aggregated belief after ``episode``; runs that stopped earlier return their last belief."""
        return self.beliefs[min(episode, self.episodes) - 1]


def build_prior(env: Environment, kind: str, seed: int = 0, counts=None,
                lam: float = JEFFREYS_LAMBDA, insitu_episodes: int = INSITU_EPISODES) -> BeliefMatrix:
    if kind == "uniform":
        return uniform_prior(env.objects, env.tuples)
    if kind == "empirical":
        return empirical_prior(env.objects, env.tuples,
                               load_empirical_counts() if counts is None else counts, lam)
    if kind == "insitu":
        log_ = []
        for ep in range(1, insitu_episodes + 1):
            world = sample_placements(env, ep, episode_rng(seed, STREAM_INSITU, ep))
            log_.extend(sorted(world.placements.items()))
        return insitu_prior(env.objects, env.tuples, log_, lam)
    raise ValueError(f"unknown prior kind {kind!r}; expected one of {PRIORS}")


def tour_order(env: Environment, belief: BeliefMatrix, rng: np.random.Generator,
               epsilon: float = TOUR_EPSILON) -> list[LocationTuple]:
    """Epsilon-greedy full tour, ranking tuples by the summed probability of all objects."""
    score = dict(zip(belief.tuples, belief.p.sum(axis=0)))
    remaining = sorted(env.tuples, key=lambda t: (-score[t], str(t)))
    order = []
    while remaining:
        if rng.random() < epsilon:
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            pick = remaining[0]
        remaining.remove(pick)
        order.append(pick)
    return order


def personalize(env: Environment, prior: str | BeliefMatrix = "uniform", seed: int = 0,
                max_episodes: int = 200, *, counts=None, lam: float = JEFFREYS_LAMBDA,
                beta: float = LEARNING_RATE, gamma: float = DISCOUNT, horizon: int = HORIZON,
                tour_epsilon: float = TOUR_EPSILON,
                insitu_episodes: int = INSITU_EPISODES) -> PersonalizationRun:
    """Run learning episodes until every room posterior's Wilson half-width is within bounds.

    Each episode samples fresh placements, tours every landmark, applies one
    P-learning update per object, then aggregates the discounted history. The
    aggregated belief is what gets checked, scored and returned.
    """
    if max_episodes < 1:
        raise ValueError("max_episodes must be >= 1")
    if isinstance(prior, BeliefMatrix):
        kind, start = "custom", prior
    else:
        kind = prior
        start = build_prior(env, prior, seed, counts, lam, insitu_episodes)
    running = start
    history = EpisodeHistory((start,), horizon, gamma)
    true = env.true_distribution
    beliefs, kl, hw, tours = [], [], [], []
    threshold: dict[str, int | None] = {o: None for o in env.objects}
    terminated = None
    for n in range(1, max_episodes + 1):
        world = sample_placements(env, n, episode_rng(seed, STREAM_PLACEMENT, n))
        order = tour_order(env, history.snapshots[0], episode_rng(seed, STREAM_TOUR, n), tour_epsilon)
        tours.append(_tour_length(env, order))
        for obj in env.objects:
            running = observe_update(running, obj, world.placements[obj], beta, n)
        history = history.push(running)
        agg = aggregate_history(history)
        report = check_termination(agg, n)
        beliefs.append(agg)
        kl.append([kl_divergence(agg.p[i], true[i]) for i in range(len(env.objects))])
        hw.append(report.halfwidth.max(axis=1))
        for obj, ok in report.object_converged.items():
            if ok and threshold[obj] is None:
                threshold[obj] = n
        if report.terminated:
            terminated = n
            break
    return PersonalizationRun(seed, kind, start, beliefs, np.array(kl), np.array(hw),
                              threshold, terminated, tours)


def _tour_length(env: Environment, order) -> float:
    cell, total = env.start, 0.0
    for t in order:
        total += env.distance_to_tuple(cell, t)
        cell = env.access_cell(t)
    return total


def _personalize_job(args):
    env_path, kind, seed, cfg = args
    env = load_environment(env_path) if env_path else load_reference_environment()
    return personalize(env, kind, seed, cfg.max_episodes, counts=cfg.counts(), lam=cfg.lam,
                       beta=cfg.beta, gamma=cfg.gamma, horizon=cfg.horizon,
                       tour_epsilon=cfg.tour_epsilon, insitu_episodes=cfg.insitu_episodes)


def personalize_many(cfg: ExperimentConfig, kind: str, env: Environment | None = None):
    """One personalization run per seed, in seed order (optionally across worker processes)."""
    log.info("personalizing %d seeds from the %s prior", len(cfg.seeds), kind)
    if cfg.jobs > 1:
        jobs = [(cfg.env_path, kind, s, cfg) for s in cfg.seeds]
        with ProcessPoolExecutor(cfg.jobs) as pool:
            return list(pool.map(_personalize_job, jobs))
    env = env or cfg.environment()
    counts = cfg.counts()
    return [personalize(env, kind, s, cfg.max_episodes, counts=counts, lam=cfg.lam, beta=cfg.beta,
                        gamma=cfg.gamma, horizon=cfg.horizon, tour_epsilon=cfg.tour_epsilon,
                        insitu_episodes=cfg.insitu_episodes)
            for s in cfg.seeds]


def _provenance(cfg: ExperimentConfig, env: Environment, study: str) -> dict:
    return {"study": study, "environment": env.name, "config": cfg.to_dict(),
            "config_hash": cfg.config_hash(), "seeds": list(cfg.seeds), "note": DISTANCE_NOTE}


def _stats(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return {"min": None, "max": None, "avg": None}
    return {"min": min(vals), "max": max(vals), "avg": round(mean(vals), 6)}


def _heatmap(belief: BeliefMatrix, episode) -> dict:
    return belief.to_dict(episode)


def study_initial_estimates(cfg: ExperimentConfig) -> ExperimentReport:
    """Episodes to per-object convergence and KL curves for each initial estimate."""
    env = cfg.environment()
    report = ExperimentReport("initial_estimates", provenance=_provenance(cfg, env, "initial-estimates"))
    runs_rows, summary, kl_rows = [], [], []
    for kind in cfg.priors:
        runs = personalize_many(cfg, kind, env)
        for run in runs:
            for obj in env.objects:
                runs_rows.append({"prior": kind, "seed": run.seed, "object": obj,
                                  "threshold_episode": run.object_threshold[obj],
                                  "termination_episode": run.termination_episode})
            for n in range(run.episodes):
                for i, obj in enumerate(env.objects):
                    kl_rows.append({"prior": kind, "seed": run.seed, "episode": n + 1,
                                    "object": obj, "kl": float(run.kl[n, i])})
        for obj in env.objects:
            eps = [r.object_threshold[obj] for r in runs]
            summary.append({"prior": kind, "object": obj, **_stats(eps),
                            "runs": len(runs), "converged": sum(e is not None for e in eps)})
        first = runs[0]
        marks = sorted({1, *[s for s in cfg.snapshots if s <= first.episodes], first.episodes})
        for ep in marks:
            report.heatmaps[f"{kind}/seed{first.seed}/episode{ep}"] = _heatmap(first.snapshot(ep), ep)
    report.heatmaps["true"] = BeliefMatrix(env.objects, env.tuples, env.true_distribution).to_dict()
    report.tables["termination"] = summary
    report.tables["runs"] = runs_rows
    report.series["kl"] = kl_rows
    return report


def scenario_world(env: Environment, seed: int, scenario: int, targets=(), placements: int = 3,
                   fixed: dict | None = None) -> WorldState:
    """Placements for one search scenario.

    Non-target objects follow the true distribution. Each target goes to one of its
    ``placements`` most likely true tuples, chosen at random unless ``fixed`` pins it.
    """
    rng = episode_rng(seed, STREAM_SCENARIO, scenario)
    world = sample_placements(env, 1, rng)
    placed = dict(world.placements)
    for obj in targets:
        top = most_likely_tuples(env, obj, placements)
        placed[obj] = top[int(rng.integers(len(top)))]
    if fixed:
        placed.update(fixed)
    return WorldState(scenario, placed, world.tuples)


def most_likely_tuples(env: Environment, obj: str, k: int = 3) -> list[LocationTuple]:
    row = env.true_row(obj)
    order = sorted(range(len(env.tuples)), key=lambda j: (-row[j], str(env.tuples[j])))
    return [env.tuples[j] for j in order[:k]]


def _search_row(res: SearchResult, **keys) -> dict:
    return {**keys, "d1": res.first_distance, "dt": res.cumulative_distance,
            "visits": res.total_visits, "found": all(res.found),
            "sequence": " ".join(str(t) for _, t in res.sequence)}


def study_ablation(cfg: ExperimentConfig) -> ExperimentReport:
    """Two-object searches under empirical prior (A), personalized prior (A+B) and +DBU (A+B+C)."""
    env = cfg.environment()
    report = ExperimentReport("ablation", provenance=_provenance(cfg, env, "ablation"))
    emp = build_prior(env, "empirical", counts=cfg.counts(), lam=cfg.lam)
    personal = {r.seed: r.final for r in personalize_many(cfg, "uniform", env)}
    conditions = (("A", False, False), ("A+B", True, False), ("A+B+C", True, True))
    rows = []
    for seed in cfg.seeds:
        for ti, targets in enumerate(cfg.tasks):
            world = scenario_world(env, seed, ti + 1, targets, cfg.placements)
            task = SearchTask(targets)
            for label, personalized, use_dbu in conditions:
                belief = personal[seed] if personalized else emp
                res = run_search(env, world, "adaptive", task, belief, cfg.alpha, use_dbu,
                                 cfg.ltos_alpha, cfg.ltos_k)
                rows.append(_search_row(res, condition=label, seed=seed, scenario=ti + 1,
                                        task="+".join(targets)))
    report.tables["runs"] = rows
    summary = []
    for label, _, _ in conditions:
        for task in ["+".join(t) for t in cfg.tasks] + ["mean"]:
            sel = [r for r in rows if r["condition"] == label and (task == "mean" or r["task"] == task)]
            summary.append({"condition": label, "task": task,
                            "d1": mean(r["d1"] for r in sel), "dt": mean(r["dt"] for r in sel),
                            "visits": mean(r["visits"] for r in sel), "n": len(sel)})
    report.tables["summary"] = summary
    return report


def _single_search(env, seed, scenario, obj, placement, planner, belief, cfg) -> SearchResult:
    world = scenario_world(env, seed, scenario, fixed={obj: placement})
    return run_search(env, world, planner, SearchTask((obj,)), belief, cfg.alpha, True,
                      cfg.ltos_alpha, cfg.ltos_k)


def _placement_scenarios(env: Environment, cfg: ExperimentConfig):
    """(scenario id, object, placement) triples in a fixed order."""
    out = []
    for oi, obj in enumerate(cfg.compare_objects):
        for pi, t in enumerate(most_likely_tuples(env, obj, cfg.placements)):
            out.append((100 * (oi + 1) + pi, obj, t))
    return out


def _summarize_by(rows, key: str, objects) -> list[dict]:
    out = []
    for label in dict.fromkeys(r[key] for r in rows):
        sel = [r for r in rows if r[key] == label]
        row = {key: label, "distance": mean(r["distance"] for r in sel),
               "visits": mean(r["visits"] for r in sel), "n": len(sel)}
        for obj in objects:
            per = [r["distance"] for r in sel if r["object"] == obj]
            row[f"distance_{obj}"] = mean(per) if per else None
        out.append(row)
    return out


def study_compare(cfg: ExperimentConfig) -> ExperimentReport:
    """Single-object searches: baselines on the empirical prior vs adaptive on personalized snapshots."""
    env = cfg.environment()
    report = ExperimentReport("compare", provenance=_provenance(cfg, env, "compare"))
    emp = build_prior(env, "empirical", counts=cfg.counts(), lam=cfg.lam)
    runs = {r.seed: r for r in personalize_many(cfg, "uniform", env)}
    scenarios = _placement_scenarios(env, cfg)
    rows = []
    for seed in cfg.seeds:
        run = runs[seed]
        labelled = [(p, f"{p} (empirical)", emp) for p in cfg.planners if p != "adaptive"]
        if "adaptive" in cfg.planners:
            for ep in cfg.snapshots:
                labelled.append(("adaptive", f"adaptive (episode {ep})", run.snapshot(ep)))
            labelled.append(("adaptive", "adaptive (termination)", run.final))
        for sid, obj, placement in scenarios:
            for planner, label, belief in labelled:
                res = _single_search(env, seed, sid, obj, placement, planner, belief, cfg)
                rows.append({"method": label, "planner": planner, "seed": seed, "scenario": sid,
                             "object": obj, "placement": str(placement),
                             "distance": res.cumulative_distance, "visits": res.total_visits,
                             "found": all(res.found),
                             "personalized_episodes": run.episodes if planner == "adaptive" else 0})
    report.tables["runs"] = rows
    report.tables["summary"] = _summarize_by(rows, "method", cfg.compare_objects)
    return report


def study_enhancement(cfg: ExperimentConfig, personal: dict | None = None) -> ExperimentReport:
    """LTOS and HSKOS on empirical vs personalized priors over identical scenarios.

    ``personal`` maps seed to a belief and replaces the personalization runs.
    """
    env = cfg.environment()
    report = ExperimentReport("enhancement", provenance=_provenance(cfg, env, "enhancement"))
    emp = build_prior(env, "empirical", counts=cfg.counts(), lam=cfg.lam)
    if personal is None:
        personal = {r.seed: r.final for r in personalize_many(cfg, "uniform", env)}
    scenarios = _placement_scenarios(env, cfg)
    planners = [p for p in ("ltos", "hskos") if p in cfg.planners] or ["ltos", "hskos"]
    rows = []
    for seed in cfg.seeds:
        for sid, obj, placement in scenarios:
            for planner in planners:
                a = _single_search(env, seed, sid, obj, placement, planner, emp, cfg)
                b = _single_search(env, seed, sid, obj, placement, planner, personal[seed], cfg)
                rows.append({"planner": planner, "seed": seed, "scenario": sid, "object": obj,
                             "placement": str(placement),
                             "distance_empirical": a.cumulative_distance,
                             "distance_personalized": b.cumulative_distance,
                             "distance_delta": b.cumulative_distance - a.cumulative_distance,
                             "visits_empirical": a.total_visits,
                             "visits_personalized": b.total_visits,
                             "visits_delta": b.total_visits - a.total_visits})
    report.tables["pairs"] = rows
    summary = []
    for planner in planners:
        sel = [r for r in rows if r["planner"] == planner]
        de = mean(r["distance_empirical"] for r in sel)
        dp = mean(r["distance_personalized"] for r in sel)
        summary.append({"planner": planner, "distance_empirical": de, "distance_personalized": dp,
                        "distance_improvement": (de - dp) / de if de else 0.0,
                        "visits_empirical": mean(r["visits_empirical"] for r in sel),
                        "visits_personalized": mean(r["visits_personalized"] for r in sel),
                        "n": len(sel)})
    report.tables["summary"] = summary
    return report


def personalize_report(cfg: ExperimentConfig, prior: str = "uniform") -> ExperimentReport:
    """Belief timelines, KL curves and termination episodes for one prior across seeds."""
    env = cfg.environment()
    report = ExperimentReport("personalize", provenance=_provenance(cfg, env, "personalize"))
    rows, kl_rows = [], []
    for run in personalize_many(cfg, prior, env):
        for i, obj in enumerate(env.objects):
            t = env.true_row(obj)
            rows.append({"prior": prior, "seed": run.seed, "object": obj,
                         "threshold_episode": run.object_threshold[obj],
                         "termination_episode": run.termination_episode,
                         "episodes": run.episodes,
                         "l1_to_true": float(np.abs(run.final.p[i] - t).sum()),
                         "kl_first": float(run.kl[0, i]), "kl_final": float(run.kl[-1, i])})
            for n in range(run.episodes):
                kl_rows.append({"seed": run.seed, "episode": n + 1, "object": obj,
                                "kl": float(run.kl[n, i])})
        marks = sorted({1, *[s for s in cfg.snapshots if s <= run.episodes], run.episodes})
        for ep in marks:
            report.heatmaps[f"seed{run.seed}/episode{ep}"] = _heatmap(run.snapshot(ep), ep)
    report.heatmaps["true"] = BeliefMatrix(env.objects, env.tuples, env.true_distribution).to_dict()
    report.tables["runs"] = rows
    report.series["kl"] = kl_rows
    return report


STUDIES = {
    "initial-estimates": study_initial_estimates,
    "ablation": study_ablation,
    "compare": study_compare,
    "enhancement": study_enhancement,
}


FORMATS = ("csv", "json")


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def _columns(rows) -> list[str]:
    cols: dict[str, None] = {}
    for row in rows:
        cols.update(dict.fromkeys(row))
    return list(cols)


def table_to_csv(rows) -> str:
    """CSV text with columns in first-seen order; None becomes an empty field."""
    buf = io.StringIO()
    cols = _columns(rows)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else _plain(row.get(c)) for c in cols])
    return buf.getvalue()


def _dump_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, allow_nan=False) + "\n"


def emit(report: ExperimentReport, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    """Write a report to ``out_dir`` and return the written paths.

    ``csv`` writes one file per table and series plus a provenance JSON; ``json``
    writes everything into one document. Heatmaps always go to their own JSON file.
    Output depends only on the report, so identical reports give identical bytes.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    if fmt == "csv":
        for kind, group in (("table", report.tables), ("series", report.series)):
            for key, rows in group.items():
                files[f"{report.name}.{key}.csv"] = table_to_csv(rows)
        files[f"{report.name}.provenance.json"] = _dump_json(report.provenance)
    else:
        files[f"{report.name}.json"] = _dump_json({"name": report.name,
                                                   "provenance": report.provenance,
                                                   "tables": report.tables,
                                                   "series": report.series})
    if report.heatmaps:
        files[f"{report.name}.heatmaps.json"] = _dump_json(report.heatmaps)
    written = []
    for fname, text in files.items():
        path = out / fname
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written
