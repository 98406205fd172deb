"""Command-line entry point: train agent groups, evaluate setups, build reports.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Relative output paths resolve against ``$INTENTMARL_OUT`` (default ``runs``).
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from . import __version__
from .config import SERVICES, SETUPS, ConfigError, ScenarioConfig, config_hash, load_config, to_dict
from .envapi import Group, trace_to_csv
from .evalkit import PROTOCOL, compare_summaries, format_table, run_scenario
from .qmix import QmixParams, train

log = logging.getLogger("intentmarl")

OUT_ENV = "INTENTMARL_OUT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
BUILTIN_SCENARIOS = ("scenario1", "scenario2", "scenario2-penalties")


class UsageError(Exception):
    """Bad flags or inputs; maps to exit code 1."""


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seeds: list[int]
    hyperparameters: dict
    checkpoints: dict[str, dict] = field(default_factory=dict)
    tool: str = "intentmarl"
    version: str = __version__
    started_at: str = ""
    finished_at: str = ""

    def to_document(self) -> dict:
        return dict(vars(self))

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_document(), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def resolve_out(path: str | None, default: str) -> Path:
    p = Path(path if path is not None else default)
    return p if p.is_absolute() else output_root() / p


def file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def builtin_scenario_path(name: str) -> Path:
    return Path(str(resources.files("intentmarl") / "scenarios" / f"{name}.json"))


def read_scenario(arg: str | None) -> ScenarioConfig:
    """Load a scenario from a path or one of the shipped scenario names."""
    arg = arg or "scenario1"
    path = builtin_scenario_path(arg) if arg in BUILTIN_SCENARIOS else Path(arg)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    path.write_text(buf.getvalue())


# -- train ------------------------------------------------------------------

def cmd_train(args: argparse.Namespace) -> int:
    cfg = read_scenario(args.config)
    group = Group.parse(args.group)
    episodes = cfg.training.episodes if args.episodes is None else args.episodes
    if episodes < 0:
        raise UsageError("--episodes must be >= 0")
    if episodes == 0:
        log.warning("--episodes 0: writing the initial weights without training")
    out = resolve_out(args.out, f"{cfg.name}/{group.value.lower()}-seed{args.seed}.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    started = _now()

    def progress(row: dict) -> None:
        if row["episode"] % 100 == 0:
            log.info("episode %d return %.3f loss %.4f eps %.3f",
                     row["episode"], row["return"], row["loss"], row["epsilon"])

    result = train(cfg, group, args.seed, episodes=episodes, progress=progress)
    result.params.meta["config_hash"] = config_hash(cfg)
    result.params.save(out)
    stem = out.with_suffix("")
    _write_csv(stem.with_name(stem.name + ".log.csv"), result.log,
               ["episode", "return", "mean_reward", "length", "loss", "epsilon"])
    manifest = RunManifest(
        command="train", config_hash=config_hash(cfg), seeds=[args.seed],
        hyperparameters={**vars(cfg.training), "episodes": episodes, "group": group.value},
        checkpoints={group.value.lower(): {"path": str(out), "sha256": file_sha256(out)}},
        started_at=started, finished_at=_now())
    manifest.write(stem.with_name(stem.name + ".manifest.json"))
    print(out)
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------

def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--seeds: expected comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise UsageError("--seeds: no seeds given")
    return seeds


def parse_checkpoints(items: list[str]) -> dict[str, Path]:
    """``group=path`` pairs; a bare path is assigned by the group stored in it."""
    out: dict[str, Path] = {}
    for item in items:
        if "=" in item:
            group, path = item.split("=", 1)
            group = group.strip().lower()
            if group not in ("priority", "mbr"):
                raise UsageError(f"--checkpoints: unknown group {group!r}")
            path = Path(path)
            if not path.is_file():
                raise UsageError(f"checkpoint not found: {path}")
        else:
            path = Path(item)
            if not path.is_file():
                raise UsageError(f"checkpoint not found: {path}")
            group = str(json.loads(path.read_text()).get("meta", {}).get("group", "")).lower()
            if group not in ("priority", "mbr"):
                raise UsageError(f"{path}: checkpoint does not record its group; use group=path")
        if group in out:
            raise UsageError(f"--checkpoints: {group} given twice")
        out[group] = path
    return out


def long_rows(result, scenario: str) -> list[dict]:
    rows = []
    for rep in result.reports:
        for r in rep.rows:
            for s in SERVICES:
                rows.append({"scenario": scenario, "setup": rep.setup, "seed": rep.seed,
                             "step": r["step"], "service": s, "o": r[f"{s}_o"], "g": r[f"{s}_g"],
                             "priority": r[f"{s}_priority"], "mbr": r[f"{s}_mbr"],
                             "active_group": r["active_group"]})
    return rows


LONG_COLUMNS = ["scenario", "setup", "seed", "step", "service", "o", "g", "priority", "mbr",
                "active_group"]


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = read_scenario(args.scenario)
    setup = args.setup or cfg.evaluation.setup
    seeds = parse_seeds(args.seeds) if args.seeds else list(cfg.evaluation.seeds)
    paths = parse_checkpoints(args.checkpoints or [])
    if not paths:
        paths = {g: Path(p) for g, p in cfg.evaluation.checkpoints.items()}
        for p in paths.values():
            if not p.is_file():
                raise UsageError(f"checkpoint not found: {p}")
    need = {"only-priority": ["priority"], "only-mbr": ["mbr"], "supervised": ["priority", "mbr"]}[setup]
    missing = [g for g in need if g not in paths]
    if missing:
        raise UsageError(f"setup {setup} needs checkpoints for {missing}")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    checkpoints = {g: QmixParams.load(p) for g, p in paths.items() if g in need}
    out = resolve_out(args.out, f"{cfg.name}/{setup}")
    out.mkdir(parents=True, exist_ok=True)
    started = _now()

    result = run_scenario(cfg, setup, checkpoints, seeds=seeds, horizon=args.horizon, jobs=args.jobs)
    for rep in result.reports:
        (out / f"trace_seed{rep.seed}.csv").write_text(trace_to_csv(rep.rows))
    _write_csv(out / "long.csv", long_rows(result, cfg.name), LONG_COLUMNS)
    ck_ids = {g: {"path": str(paths[g]), "sha256": file_sha256(paths[g])} for g in need}
    summary = result.summary()
    summary["config_hash"] = config_hash(cfg)
    summary["horizon"] = args.horizon or cfg.evaluation.horizon
    summary["checkpoints"] = {g: v["sha256"] for g, v in ck_ids.items()}
    summary["active_groups"] = {str(r.seed): "".join(g[0] for g in r.active_groups)
                                for r in result.reports}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    RunManifest(command="evaluate", config_hash=config_hash(cfg), seeds=seeds,
                hyperparameters={"setup": setup, "horizon": summary["horizon"],
                                 "cadence": cfg.supervisor.cadence,
                                 "throughput_tolerance": cfg.supervisor.throughput_tolerance,
                                 "config": to_dict(cfg)},
                checkpoints=ck_ids, started_at=started, finished_at=_now()).write(out / "manifest.json")
    for s in SERVICES:
        print(f"{s}: median M {result.median_m(s):.4f}  "
              f"median satisfaction {result.median_satisfaction(s):.3f}")
    print(out)
    return EXIT_OK


# -- report -----------------------------------------------------------------

def _load_summaries(dirs: list[str]) -> list[dict]:
    paths = []
    for d in dirs:
        p = Path(d)
        if (p / "summary.json").is_file():
            paths.append(p / "summary.json")
        elif p.is_dir():
            paths.extend(sorted(p.glob("*/summary.json")))
        else:
            raise UsageError(f"not a run directory: {p}")
    if not paths:
        raise UsageError("no run summaries found")
    return [json.loads(p.read_text()) for p in paths]


def qualitative_checks(comparison: dict, summaries: list[dict], threshold: float = 0.8) -> list[tuple[str, bool]]:
    """Ordering and satisfaction checks; empty when there is nothing to compare."""
    checks = []
    services = comparison["services"]
    if len(comparison["setups"]) > 1 and "supervised" in comparison["setups"]:
        cv = services["CV"]["cells"]
        others = [k for k in cv if k != "supervised"]
        checks.append(("supervised has the strictly lowest CV median M",
                       all(cv["supervised"]["median_m"] < cv[k]["median_m"] for k in others)))
        n = sum(bool(services[s].get("supervised_lowest")) for s in SERVICES)
        checks.append((f"supervised attains the lowest median M for {n}/3 services (need 2)", n >= 2))
    for d in summaries:
        if d["setup"] == "supervised":
            sat = {s: d["services"][s]["median_satisfaction"] for s in SERVICES}
            checks.append((f"every intent satisfied in >= {threshold:.0%} of steps under supervised "
                           f"({', '.join(f'{s} {v:.2f}' for s, v in sat.items())})",
                           all(v >= threshold for v in sat.values())))
    return checks


def render_report(comparison: dict, summaries: list[dict]) -> str:
    scenario = summaries[0]["scenario"]
    lines = [f"# Report: {scenario}", "",
             f"Seeds: {comparison['seeds']}", f"Protocol: {PROTOCOL}", "",
             "## Median M per service and setup (interquartile range in brackets)", "",
             format_table(comparison), "",
             "## Median intent-satisfaction fraction", "",
             "| Service | " + " | ".join(comparison["setups"]) + " |",
             "|---|" + "---|" * len(comparison["setups"])]
    for s in SERVICES:
        cells = comparison["services"][s]["cells"]
        lines.append(f"| {s} | " + " | ".join(f"{cells[k]['median_satisfaction']:.3f}"
                                             for k in comparison["setups"]) + " |")
    checks = qualitative_checks(comparison, summaries)
    if checks:
        lines += ["", "## Qualitative checks", ""]
        lines += [f"- [{'PASS' if ok else 'FAIL'}] {text}" for text, ok in checks]
    return "\n".join(lines) + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    summaries = _load_summaries(args.runs)
    try:
        comparison = compare_summaries(summaries)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    text = render_report(comparison, summaries)
    if args.out:
        out = resolve_out(args.out, "report.md")
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intentmarl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one agent group")
    t.add_argument("--group", required=True, choices=["priority", "mbr"])
    t.add_argument("--config", help=f"scenario file or one of {', '.join(BUILTIN_SCENARIOS)}")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--episodes", type=int, help="override training.episodes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate one setup on a scenario")
    e.add_argument("--scenario", help=f"scenario file or one of {', '.join(BUILTIN_SCENARIOS)}")
    e.add_argument("--setup", choices=list(SETUPS))
    e.add_argument("--checkpoints", nargs="+", metavar="[GROUP=]PATH")
    e.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2,3,4")
    e.add_argument("--horizon", type=int, help="control steps per run")
    e.add_argument("--jobs", type=int, default=1, help="worker processes over seeds")
    e.add_argument("--out", help="output directory")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="compare evaluated setups")
    r.add_argument("--runs", nargs="+", required=True, help="run directories (or their parent)")
    r.add_argument("--out", help="also write the report to this file")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic for the exit code contract
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
