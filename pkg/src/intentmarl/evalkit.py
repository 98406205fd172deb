"""Scenario evaluation: the goal-distance metric, per-seed runs and setup tables."""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .config import SERVICES, ScenarioConfig
from .envapi import Group, IntentEnv, satisfied
from .qmix import QmixParams
from .supervisor import orchestrate

SETUP_GROUP = {"only-priority": Group.PRIORITY, "only-mbr": Group.MBR, "supervised": None}
PROTOCOL = ("metric M = mean |o_t - g_t| over all evaluation control steps; "
            "satisfaction = share of those steps meeting the directional intent test; "
            "aggregate = median over seeds with interquartile range")


def metric_m(trajectory: Sequence[tuple[float, float]]) -> float:
    """Mean absolute distance between observed KPI and goal over a trajectory."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    return sum(abs(o - g) for o, g in trajectory) / len(trajectory)


@dataclass
class MetricReport:
    seed: int
    setup: str
    m: dict[str, float]
    satisfaction: dict[str, float]
    trajectory: dict[str, list[tuple[float, float]]]
    active_groups: list[str]
    rows: list[dict] = field(default_factory=list)


@dataclass
class ScenarioResult:
    scenario: str
    setup: str
    reports: list[MetricReport]

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.reports]

    def median_m(self, service: str) -> float:
        return statistics.median(r.m[service] for r in self.reports)

    def iqr_m(self, service: str) -> tuple[float, float]:
        vals = [r.m[service] for r in self.reports]
        return float(np.percentile(vals, 25)), float(np.percentile(vals, 75))

    def median_satisfaction(self, service: str) -> float:
        return statistics.median(r.satisfaction[service] for r in self.reports)

    def summary(self) -> dict:
        return {
            "scenario": self.scenario,
            "setup": self.setup,
            "seeds": self.seeds,
            "protocol": PROTOCOL,
            "services": {
                s: {"median_m": self.median_m(s), "iqr_m": list(self.iqr_m(s)),
                    "median_satisfaction": self.median_satisfaction(s),
                    "per_seed_m": [r.m[s] for r in self.reports],
                    "per_seed_satisfaction": [r.satisfaction[s] for r in self.reports]}
                for s in SERVICES
            },
        }


def _goal_schedule(cfg: ScenarioConfig):
    changes = {e.step: e for e in cfg.schedule[1:]}

    def before_step(k: int, env: IntentEnv) -> None:
        entry = changes.get(k)
        if entry is None:
            return
        for intent_id in entry.intents:
            it = cfg.intent(intent_id)
            env.set_goal(it.service, it.target)

    return before_step


def run_seed(cfg: ScenarioConfig, setup: str, seed: int, checkpoints: Mapping[str, QmixParams],
             horizon: int | None = None) -> MetricReport:
    if setup not in SETUP_GROUP:
        raise ValueError(f"unknown setup {setup!r}")
    H = cfg.evaluation.horizon if horizon is None else horizon
    env = IntentEnv(cfg, seed, horizon=H, terminate_on_goals=False)
    env.reset(goals={it.service: it.target for it in cfg.intents_at(0)})
    trace = orchestrate(checkpoints.get("priority"), checkpoints.get("mbr"), env, H,
                        cadence=cfg.supervisor.cadence,
                        tolerance=cfg.supervisor.throughput_tolerance,
                        fixed_group=SETUP_GROUP[setup], before_step=_goal_schedule(cfg),
                        rng=np.random.default_rng(seed))
    traj = {s: [(r[f"{s}_o"], r[f"{s}_g"]) for r in trace.rows] for s in SERVICES}
    direction = {it.service: it.direction for it in cfg.intents}
    return MetricReport(
        seed=seed,
        setup=setup,
        m={s: metric_m(traj[s]) for s in SERVICES},
        satisfaction={s: float(np.mean([satisfied(o, g, direction[s]) for o, g in traj[s]]))
                      for s in SERVICES},
        trajectory=traj,
        active_groups=trace.groups,
        rows=trace.rows,
    )


def run_scenario(cfg: ScenarioConfig, setup: str, checkpoints: Mapping[str, QmixParams],
                 seeds: Sequence[int] | None = None, horizon: int | None = None,
                 jobs: int = 1) -> ScenarioResult:
    """Evaluate one setup greedily on every seed, applying scheduled goal changes.

    Seeds are independent, so ``jobs > 1`` fans them out to worker processes;
    the result does not depend on the worker count.
    """
    need = {"only-priority": ["priority"], "only-mbr": ["mbr"],
            "supervised": ["priority", "mbr"]}[setup]
    missing = [g for g in need if checkpoints.get(g) is None]
    if missing:
        raise ValueError(f"setup {setup} needs checkpoints for {missing}")
    seeds = list(cfg.evaluation.seeds if seeds is None else seeds)
    if jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(seeds))) as pool:
            futures = [pool.submit(run_seed, cfg, setup, s, dict(checkpoints), horizon) for s in seeds]
            reports = [f.result() for f in futures]
    else:
        reports = [run_seed(cfg, setup, s, checkpoints, horizon) for s in seeds]
    return ScenarioResult(cfg.name, setup, reports)


def _compare(cells_by_service: dict[str, dict[str, dict]], setups: list[str], seeds: list[int]) -> dict:
    table = {}
    for s, cells in cells_by_service.items():
        vals = [c["median_m"] for c in cells.values()]
        best = min(vals)
        winners = [k for k, c in cells.items() if c["median_m"] == best]
        row = {"cells": cells,
               "winner": winners[0] if len(setups) > 1 and len(winners) == 1 else None,
               "lowest": winners if len(set(vals)) > 1 else []}
        if "supervised" in cells and len(setups) > 1:
            row["supervised_lowest"] = cells["supervised"]["median_m"] <= best
        table[s] = row
    return {"setups": setups, "seeds": seeds, "services": table}


def compare_setups(results: Mapping[str, ScenarioResult]) -> dict:
    """Service x setup table of median M, spread, and who wins each service."""
    setups = list(results)
    seeds = {tuple(r.seeds) for r in results.values()}
    if len(seeds) > 1:
        raise ValueError("setups were evaluated on different seeds")
    cells = {s: {k: {"median_m": results[k].median_m(s), "iqr_m": list(results[k].iqr_m(s)),
                     "median_satisfaction": results[k].median_satisfaction(s)}
                 for k in setups}
             for s in SERVICES}
    return _compare(cells, setups, list(sorted(seeds)[0]) if seeds else [])


def compare_summaries(summaries: Sequence[dict]) -> dict:
    """Same table as ``compare_setups`` but built from saved run summaries."""
    if not summaries:
        raise ValueError("no summaries to compare")
    scenarios = {d["scenario"] for d in summaries}
    if len(scenarios) > 1:
        raise ValueError(f"runs come from different scenarios: {sorted(scenarios)}")
    seeds = {tuple(d["seeds"]) for d in summaries}
    if len(seeds) > 1:
        raise ValueError("setups were evaluated on different seeds")
    setups = [d["setup"] for d in summaries]
    if len(set(setups)) != len(setups):
        raise ValueError("more than one run for the same setup")
    cells = {s: {d["setup"]: {k: d["services"][s][k] for k in ("median_m", "iqr_m", "median_satisfaction")}
                 for d in summaries}
             for s in SERVICES}
    return _compare(cells, setups, list(sorted(seeds)[0]))


def format_table(comparison: dict) -> str:
    setups = comparison["setups"]
    lines = ["| Service | " + " | ".join(setups) + " |",
             "|---|" + "---|" * len(setups)]
    for s, row in comparison["services"].items():
        cells = []
        for k in setups:
            c = row["cells"][k]
            mark = "*" if k in row.get("lowest", []) else ""
            cells.append(f"{c['median_m']:.3f}{mark} [{c['iqr_m'][0]:.3f}, {c['iqr_m'][1]:.3f}]")
        lines.append(f"| {s} | " + " | ".join(cells) + " |")
    return "\n".join(lines)
