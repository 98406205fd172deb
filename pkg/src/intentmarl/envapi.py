"""Goal-conditioned multi-agent environment on top of the emulator.

Six agents sit on the network: one packet-priority agent and one MBR agent per
service. Both groups observe the same per-service tuple (KPI, goal, global
reward, UE count), but only one group actuates on a given control step.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import netemu
from .config import SERVICES, IntentConfig, ScenarioConfig
from .netemu import SERVICE_TYPES, Kpi, NetworkState

ACTIONS = (-1, 1)


class Group(str, Enum):
    PRIORITY = "PRIORITY"
    MBR = "MBR"

    @classmethod
    def parse(cls, value: "str | Group") -> "Group":
        if isinstance(value, Group):
            return value
        return cls(value.upper().replace("-", "_"))


@dataclass(frozen=True)
class Intent:
    id: str
    service: str
    percent: int
    kpi: Kpi
    direction: str
    target: float

    def __post_init__(self):
        want = ("AT_LEAST" if SERVICE_TYPES[self.service].kpi_kind is Kpi.QOE else "AT_MOST")
        if self.kpi is not SERVICE_TYPES[self.service].kpi_kind or self.direction != want:
            raise ValueError(f"intent {self.id}: inconsistent kpi/direction for {self.service}")
        if not 0 < self.percent <= 100:
            raise ValueError(f"intent {self.id}: percent must lie in (0, 100]")

    @classmethod
    def from_config(cls, it: IntentConfig) -> "Intent":
        return cls(it.id, it.service, it.percent, Kpi(it.kpi), it.direction, it.target)

    def with_target(self, g: float) -> "Intent":
        return Intent(self.id, self.service, self.percent, self.kpi, self.direction, g)


def satisfied(o: float, g: float, direction: str) -> bool:
    return o >= g if direction == "AT_LEAST" else o <= g


@dataclass
class LocalObservation:
    o: float
    g: float
    G: float
    n: int

    def normalized(self, kpi_range: tuple[float, float], total_penalty: float,
                   total_ues: int) -> np.ndarray:
        lo, hi = kpi_range
        return np.array([(self.o - lo) / (hi - lo), (self.g - lo) / (hi - lo),
                         self.G / total_penalty, self.n / total_ues])


@dataclass
class JointObservation:
    agent_ids: list[str]
    locals: list[LocalObservation]
    # normalized rows, same order as ``locals``
    vector: np.ndarray

    def __len__(self) -> int:
        return len(self.locals)

    @property
    def state(self) -> np.ndarray:
        """Concatenated normalized local observations (the mixer's global state)."""
        return self.vector.reshape(-1)


@dataclass
class AgentSpec:
    id: str
    group: Group
    service: str
    ue_scope: list[int]
    penalty: float
    bin_index: int = 0
    priority: int = 7


@dataclass
class Transition:
    obs: np.ndarray          # (n_agents, 4) normalized
    state: np.ndarray        # (n_agents * 4,)
    actions: np.ndarray      # (n_agents,) in {-1, +1}
    rewards: np.ndarray      # (n_agents,) local rewards
    G: float
    next_obs: np.ndarray
    next_state: np.ndarray
    done: bool
    terminated: bool = False


def local_reward(o: float, g: float, delta: float) -> float:
    """Goal-distance reward on [0, 1]; 1 exactly when the KPI sits on its goal."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return 1.0 - abs(o - g) / delta


def global_reward(locals_: Iterable[tuple[float, float]]) -> float:
    """Penalty-weighted sum of local rewards, from (reward, penalty) pairs."""
    return sum(rho * r for r, rho in locals_)


def num_bins(alpha: float, bin_size: float = 0.5) -> int:
    return int(round((alpha - netemu.MIN_MBR) / bin_size, 9))


def bin_bounds(b: int, bin_size: float = 0.5) -> tuple[float, float]:
    return netemu.MIN_MBR + bin_size * b, netemu.MIN_MBR + bin_size * (b + 1)


def apply_mbr_action(agent: AgentSpec, a: int, alpha: float, rng: np.random.Generator,
                     state: NetworkState | None = None, bin_size: float = 0.5) -> float:
    """Move the agent one MBR bin and draw a fresh MBR inside the new bin."""
    if agent.group is not Group.MBR:
        raise ValueError(f"{agent.id} is not an MBR agent")
    top = num_bins(alpha, bin_size) - 1
    agent.bin_index = min(max(agent.bin_index + a, 0), top)
    lo, hi = bin_bounds(agent.bin_index, bin_size)
    value = float(rng.uniform(lo, hi))
    if state is not None:
        netemu.set_mbr(state, agent.ue_scope, value)
    return value


def apply_priority_action(agent: AgentSpec, a: int, state: NetworkState | None = None) -> int:
    if agent.group is not Group.PRIORITY:
        raise ValueError(f"{agent.id} is not a priority agent")
    agent.priority = min(max(agent.priority + a, netemu.PRIORITY_MIN), netemu.PRIORITY_MAX)
    if state is not None:
        netemu.set_priority(state, agent.service, agent.priority)
    return agent.priority


def make_ue_groups(ue_ids: Sequence[int], percent: int) -> tuple[list[int], list[int]]:
    """Split a service's UEs (by id) into the intent's scope and the remainder."""
    ids = sorted(ue_ids)
    k = netemu.ceil_share(percent, len(ids))
    return ids[:k], ids[k:]


class IntentEnv:
    """Gym-like environment with one priority and one MBR agent per service.

    ``reset`` rebuilds the emulator, fixes goals (sampled when none are given)
    and warms the network up. ``step`` applies the active group's actions,
    lets the emulator settle for that group's window and reports rewards.
    """

    def __init__(self, cfg: ScenarioConfig, seed: int = 0, *, horizon: int | None = None,
                 terminate_on_goals: bool | None = None):
        self.cfg = cfg
        self.seed = seed
        self.horizon = cfg.env.horizon if horizon is None else horizon
        self.terminate_on_goals = (cfg.env.terminate_on_goals if terminate_on_goals is None
                                   else terminate_on_goals)
        self.alpha = cfg.gnb_capacity()
        self.bin_size = cfg.env.mbr_bin_mbps
        extra = cfg.emulator.kpi_window if cfg.env.observe_after_effect else 0
        self.settle = {Group.PRIORITY: cfg.emulator.priority_delay + extra,
                       Group.MBR: cfg.emulator.mbr_delay + extra}
        self.penalties = dict(cfg.penalties)
        self.total_penalty = sum(self.penalties[s] for s in SERVICES)
        self.base_intents = {it.service: Intent.from_config(it) for it in cfg.intents_at(0)}
        ss = np.random.SeedSequence(seed)
        emu_seed, act_seq, goal_seq = ss.spawn(3)
        self._emu_seed = int(emu_seed.generate_state(1)[0])
        self.action_rng = np.random.default_rng(act_seq)
        self.goal_rng = np.random.default_rng(goal_seq)
        self.state: NetworkState | None = None
        self.agents: list[AgentSpec] = []
        self.goals: dict[str, float] = {}
        self.steps = 0
        self.trace: list[dict] = []
        self.episode = -1

    # -- bookkeeping -----------------------------------------------------
    def agent_ids(self, group: Group | str | None = None) -> list[str]:
        if group is None:
            return [a.id for a in self.agents]
        group = Group.parse(group)
        return [a.id for a in self.agents if a.group is group]

    def agent(self, agent_id: str) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    @property
    def total_ues(self) -> int:
        return len(self.state.ues)

    def _build_agents(self) -> list[AgentSpec]:
        agents = []
        for s in SERVICES:
            agents.append(AgentSpec(f"priority-{s}", Group.PRIORITY, s,
                                    list(self.state.services[s].ues), self.penalties[s],
                                    priority=self.cfg.emulator.initial_priority))
        for s in SERVICES:
            in_scope, _ = make_ue_groups(self.state.services[s].ues, self.base_intents[s].percent)
            agents.append(AgentSpec(f"mbr-{s}", Group.MBR, s, in_scope, self.penalties[s],
                                    bin_index=self._initial_bin()))
        return agents

    def _initial_bin(self) -> int:
        b = int((self.cfg.emulator.initial_mbr - netemu.MIN_MBR) // self.bin_size)
        return min(max(b, 0), num_bins(self.alpha, self.bin_size) - 1)

    def sample_goal(self, service: str) -> float:
        lo, hi = self.cfg.env.goal_domains[SERVICE_TYPES[service].kpi_kind.value]
        return float(self.goal_rng.uniform(lo, hi))

    # -- API -------------------------------------------------------------
    def reset(self, goals: Mapping[str, float] | None = None) -> JointObservation:
        """Start an episode; ``goals`` keys may be agent ids or service names."""
        self.episode += 1
        # each episode gets its own emulator stream so episodes are independent draws
        self.state = netemu.build_topology(self.cfg, seed=self._emu_seed + self.episode)
        self.agents = self._build_agents()
        self.goals = {}
        if goals is None:
            for s in SERVICES:
                g = self.sample_goal(s)
                for a in self.agents:
                    if a.service == s:
                        self.goals[a.id] = g
        else:
            for a in self.agents:
                self.goals[a.id] = self.base_intents[a.service].target
            for key, g in goals.items():
                self._set_goal_key(key, g)
        netemu.run_ticks(self.state, self.cfg.env.warmup_ticks)
        self.steps = 0
        self.trace = []
        return self.observe()

    def _set_goal_key(self, key: str, g: float) -> None:
        if key in SERVICES:
            for a in self.agents:
                if a.service == key:
                    self.goals[a.id] = float(g)
        else:
            self.agent(key)
            self.goals[key] = float(g)

    def set_goal(self, agent_id: str, g: float) -> None:
        """Change one agent's goal (or every agent of a service if given its name)."""
        self._set_goal_key(agent_id, g)

    def kpi(self, service: str) -> float:
        return netemu.observe_kpi(self.state, self.base_intents[service])

    def local_observation(self, agent: AgentSpec, G: float | None = None) -> LocalObservation:
        o = self.kpi(agent.service)
        return LocalObservation(o, self.goals[agent.id],
                                self.global_reward(agent.group) if G is None else G,
                                len(agent.ue_scope))

    def local_rewards(self, group: Group | str) -> dict[str, float]:
        out = {}
        for a in self.agents:
            if a.group is Group.parse(group):
                t = SERVICE_TYPES[a.service]
                out[a.id] = local_reward(self.kpi(a.service), self.goals[a.id], t.kpi_width)
        return out

    def global_reward(self, group: Group | str = Group.PRIORITY) -> float:
        rewards = self.local_rewards(group)
        return global_reward((r, self.agent(aid).penalty) for aid, r in rewards.items())

    def observe(self, group: Group | str | None = None) -> JointObservation:
        ids = self.agent_ids(group)
        G = self.global_reward(group or Group.PRIORITY)
        locs, rows = [], []
        for aid in ids:
            a = self.agent(aid)
            lo = self.local_observation(a, G)
            locs.append(lo)
            rows.append(lo.normalized(SERVICE_TYPES[a.service].kpi_range,
                                      self.total_penalty, self.total_ues))
        return JointObservation(ids, locs, np.array(rows))

    def all_satisfied(self) -> bool:
        for a in self.agents:
            if not satisfied(self.kpi(a.service), self.goals[a.id],
                             self.base_intents[a.service].direction):
                return False
        return True

    def service_satisfied(self, service: str) -> bool:
        g = self.goals[f"priority-{service}"]
        return satisfied(self.kpi(service), g, self.base_intents[service].direction)

    def step(self, actions: Mapping[str, int] | Sequence[int], group: Group | str):
        """Apply the active group's actions and advance by its settle window.

        Returns (joint observation of the group, local rewards, G, done).
        """
        group = Group.parse(group)
        ids = self.agent_ids(group)
        if not isinstance(actions, Mapping):
            actions = dict(zip(ids, actions, strict=True))
        extra = set(actions) - set(ids)
        if extra:
            raise ValueError(f"agents {sorted(extra)} are not in the active group {group.value}")
        missing = set(ids) - set(actions)
        if missing:
            raise ValueError(f"missing actions for {sorted(missing)}")
        for aid in ids:
            a = int(actions[aid])
            if a not in ACTIONS:
                raise ValueError(f"action {a} for {aid} not in {ACTIONS}")
            agent = self.agent(aid)
            if group is Group.MBR:
                apply_mbr_action(agent, a, self.alpha, self.action_rng, self.state, self.bin_size)
            else:
                apply_priority_action(agent, a, self.state)
        netemu.run_ticks(self.state, self.settle[group])
        self.steps += 1
        rewards = self.local_rewards(group)
        G = global_reward((r, self.agent(aid).penalty) for aid, r in rewards.items())
        obs = self.observe(group)
        done = self.steps >= self.horizon or (self.terminate_on_goals and self.all_satisfied())
        self.trace.append(self._trace_row(group, rewards, G))
        return obs, rewards, G, done

    def _trace_row(self, group: Group, rewards: dict[str, float], G: float) -> dict:
        row = {"step": self.steps, "tick": self.state.tick, "active_group": group.value}
        for s in SERVICES:
            mbr_agent = self.agent(f"mbr-{s}")
            row[f"{s}_o"] = self.kpi(s)
            row[f"{s}_g"] = self.goals[f"priority-{s}"]
            row[f"{s}_priority"] = self.state.services[s].priority
            row[f"{s}_mbr"] = self.state.ues[mbr_agent.ue_scope[0]].mbr
            row[f"{s}_reward"] = rewards[f"{group.value.lower()}-{s}"]
        row["G"] = G
        return row

    def render_state(self) -> dict:
        doc = netemu.snapshot(self.state)
        doc["agents"] = [
            {"id": a.id, "group": a.group.value, "service": a.service, "ue_scope": a.ue_scope,
             "penalty": a.penalty, "bin_index": a.bin_index, "priority": a.priority,
             "goal": self.goals.get(a.id)}
            for a in self.agents
        ]
        doc["step"] = self.steps
        return doc


TRACE_COLUMNS = ["step", "tick", "active_group"] + [
    f"{s}_{k}" for s in SERVICES for k in ("o", "g", "priority", "mbr", "reward")] + ["G"]


def trace_to_csv(rows: Sequence[dict], columns: Sequence[str] = TRACE_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n",
                       extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


@dataclass
class EpisodeRecord:
    """A complete episode for one agent group, as consumed by the learner."""
    obs: list[np.ndarray] = field(default_factory=list)       # T+1 entries (n, 4)
    actions: list[np.ndarray] = field(default_factory=list)   # T entries (n,) action index
    rewards: list[float] = field(default_factory=list)        # T entries, G_t
    terminated: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)
