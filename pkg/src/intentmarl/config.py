"""Scenario configuration: loading, validation and canonical serialization.

A scenario document is a JSON object with the sections below. Unknown keys are
rejected with a message naming the offending key path, since a silently ignored
typo is the easiest way to lose reproducibility.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SERVICES = ("CV", "URLLC", "MIOT")
SETUPS = ("only-priority", "only-mbr", "supervised")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


@dataclass
class EmulatorConfig:
    n_gnbs: int = 2
    ues_per_service: dict[str, int] = field(
        default_factory=lambda: {"CV": 4, "URLLC": 4, "MIOT": 4})
    capacity_mbps: float = 20.0
    # "per_gnb": every gNB gets the full capacity; "total": split evenly.
    capacity_scope: str = "per_gnb"
    # URLLC and mIoT demand sits just above the max-min fair share of a 4 Mbps
    # cell (4/6 Mbps) so they only suffer when the scheduler is contended
    offered_mbps: dict[str, float] = field(
        default_factory=lambda: {"CV": 4.0, "URLLC": 0.7, "MIOT": 0.7})
    noise: float = 0.1
    initial_priority: int = 7
    initial_mbr: float = 1.0
    priority_delay: int = 40
    mbr_delay: int = 10
    kpi_window: int = 10


@dataclass
class IntentConfig:
    id: str
    service: str
    percent: int
    kpi: str
    direction: str
    target: float


@dataclass
class ScheduleEntry:
    step: int
    intents: list[str]


@dataclass
class EnvConfig:
    horizon: int = 30
    warmup_ticks: int = 10
    mbr_bin_mbps: float = 0.5
    terminate_on_goals: bool = False
    # extend each settle window by one KPI smoothing window so the reading
    # after a step reflects the new knob setting rather than the old one
    observe_after_effect: bool = True
    goal_domains: dict[str, list[float]] = field(
        default_factory=lambda: {"QOE": [2.0, 4.5], "PLR": [0.0, 0.10]})


@dataclass
class SupervisorConfig:
    cadence: int = 5
    throughput_tolerance: float = 0.05


@dataclass
class TrainConfig:
    episodes: int = 3000
    gamma: float = 0.99
    lr: float = 5e-3
    grad_clip: float = 10.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_anneal_frac: float = 0.6
    buffer_episodes: int = 500
    batch_episodes: int = 16
    target_sync: int = 100
    updates_per_episode: int = 1
    # subtract the running mean team reward before forming TD targets; shifts
    # every action value by the same constant, so greedy choices are unaffected
    reward_centering: bool = True
    hidden: int = 16
    mixer_hidden: int = 8


@dataclass
class EvalConfig:
    horizon: int = 40
    setup: str = "supervised"
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    checkpoints: dict[str, str] = field(default_factory=dict)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    emulator: EmulatorConfig = field(default_factory=EmulatorConfig)
    intents: list[IntentConfig] = field(default_factory=list)
    schedule: list[ScheduleEntry] = field(default_factory=list)
    penalties: dict[str, float] = field(
        default_factory=lambda: {s: 1.0 for s in SERVICES})
    env: EnvConfig = field(default_factory=EnvConfig)
    supervisor: SupervisorConfig = field(default_factory=SupervisorConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def intent(self, intent_id: str) -> IntentConfig:
        for it in self.intents:
            if it.id == intent_id:
                return it
        raise KeyError(intent_id)

    def intents_at(self, step: int) -> list[IntentConfig]:
        """Intent set in force at control step ``step`` of an evaluation run."""
        active = self.schedule[0]
        for entry in self.schedule:
            if entry.step <= step:
                active = entry
        return [self.intent(i) for i in active.intents]

    def gnb_capacity(self) -> float:
        em = self.emulator
        if em.capacity_scope == "total":
            return em.capacity_mbps / em.n_gnbs
        return em.capacity_mbps

    def validate(self) -> None:
        em = self.emulator
        if em.n_gnbs < 1:
            raise ConfigError("emulator.n_gnbs: need at least one gNB")
        if em.capacity_mbps <= 0:
            raise ConfigError("emulator.capacity_mbps: must be positive")
        if em.capacity_scope not in ("per_gnb", "total"):
            raise ConfigError("emulator.capacity_scope: expected 'per_gnb' or 'total'")
        for key in ("ues_per_service", "offered_mbps"):
            got = set(getattr(em, key))
            if got != set(SERVICES):
                raise ConfigError(f"emulator.{key}: expected services {list(SERVICES)}, got {sorted(got)}")
        for s, n in em.ues_per_service.items():
            if n < 1:
                raise ConfigError(f"emulator.ues_per_service.{s}: need at least one UE")
            if n % em.n_gnbs:
                raise ConfigError(
                    f"emulator.ues_per_service.{s}: {n} UEs cannot be spread evenly over {em.n_gnbs} gNBs")
        if set(self.penalties) != set(SERVICES):
            raise ConfigError(f"penalties: expected services {list(SERVICES)}")
        if any(p <= 0 for p in self.penalties.values()):
            raise ConfigError("penalties: must be positive")
        ids = set()
        for it in self.intents:
            if it.service not in SERVICES:
                raise ConfigError(f"intents.{it.id}.service: unknown service {it.service!r}")
            if not 0 < it.percent <= 100:
                raise ConfigError(f"intents.{it.id}.percent: must lie in (0, 100]")
            want = ("QOE", "AT_LEAST") if it.service == "CV" else ("PLR", "AT_MOST")
            if (it.kpi, it.direction) != want:
                raise ConfigError(f"intents.{it.id}: service {it.service} requires kpi/direction {want}")
            ids.add(it.id)
        if not self.schedule or self.schedule[0].step != 0:
            raise ConfigError("schedule: first entry must be at step 0")
        steps = [e.step for e in self.schedule]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ConfigError("schedule: steps must be strictly increasing")
        for e in self.schedule:
            missing = [i for i in e.intents if i not in ids]
            if missing:
                raise ConfigError(f"schedule.step {e.step}: unknown intents {missing}")
            covered = sorted(self.intent(i).service for i in e.intents)
            if covered != sorted(SERVICES):
                raise ConfigError(f"schedule.step {e.step}: need exactly one intent per service")
        if self.evaluation.setup not in SETUPS:
            raise ConfigError(f"evaluation.setup: expected one of {list(SETUPS)}")
        tc = self.training
        if tc.episodes < 0:
            raise ConfigError("training.episodes: must be >= 0")
        if tc.updates_per_episode < 1:
            raise ConfigError("training.updates_per_episode: must be >= 1")
        if not 0.0 <= tc.gamma <= 1.0:
            raise ConfigError("training.gamma: must lie in [0, 1]")
        for kind, dom in self.env.goal_domains.items():
            if kind not in ("QOE", "PLR") or len(dom) != 2 or dom[0] > dom[1]:
                raise ConfigError(f"env.goal_domains.{kind}: expected QOE/PLR with [low, high]")
        if self.supervisor.cadence < 1:
            raise ConfigError("supervisor.cadence: must be >= 1")


def _build(cls: type, data: Any, path: str) -> Any:
    hints = typing.get_type_hints(cls)
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key '{path + '.' if path else ''}{key}'")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"missing key '{path + '.' if path else ''}{f.name}'")
            continue
        kwargs[f.name] = _coerce(hints[f.name], data[f.name], f"{path + '.' if path else ''}{f.name}")
    return cls(**kwargs)


def _coerce(tp: Any, value: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        _, item = typing.get_args(tp)
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return {k: _coerce(item, v, f"{path}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def from_dict(data: dict) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "")
    cfg.validate()
    return cfg


def to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(canonical_json(to_dict(cfg)).encode()).hexdigest()


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return from_dict(data)


def dump_config(cfg: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n")


def default_intents() -> tuple[list[IntentConfig], list[ScheduleEntry]]:
    """The evaluation intents: CV QoE target raised mid-run, two PLR ceilings."""
    intents = [
        IntentConfig("1.1", "CV", 75, "QOE", "AT_LEAST", 3.0),
        IntentConfig("1.2", "CV", 75, "QOE", "AT_LEAST", 3.5),
        IntentConfig("2", "URLLC", 100, "PLR", "AT_MOST", 0.02),
        IntentConfig("3", "MIOT", 100, "PLR", "AT_MOST", 0.04),
    ]
    schedule = [ScheduleEntry(0, ["1.1", "2", "3"]), ScheduleEntry(20, ["1.2", "2", "3"])]
    return intents, schedule


def default_config(**overrides: Any) -> ScenarioConfig:
    intents, schedule = default_intents()
    cfg = ScenarioConfig(intents=intents, schedule=schedule)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    cfg.validate()
    return cfg
