"""Discrete-time airlink emulator for three contending service types.

One tick is one emulated second. Every tick each UE offers a noisy amount of
downlink traffic, the UE's maximum bit rate (MBR) clips it, and each gNB shares
its capacity among its attached UEs by weighted max-min fairness where the
weight comes from the service's packet priority. Knob writes are not immediate:
they are queued and land after a per-knob delay.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .config import SERVICES, ScenarioConfig

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1
PRIORITY_MIN, PRIORITY_MAX = 1, 100
MIN_MBR = 1.0
# Not modelled; reported so consumers see the same data points as a real emulator API.
LATENCY_PLACEHOLDER_MS = {"CV": 20.0, "URLLC": 1.0, "MIOT": 100.0}


class Kpi(str, Enum):
    QOE = "QOE"
    PLR = "PLR"


class Knob(str, Enum):
    PRIORITY = "PRIORITY"
    MBR = "MBR"


@dataclass(frozen=True)
class ServiceType:
    kind: str
    kpi_kind: Kpi
    kpi_range: tuple[float, float]

    @property
    def kpi_width(self) -> float:
        return self.kpi_range[1] - self.kpi_range[0]


SERVICE_TYPES = {
    "CV": ServiceType("CV", Kpi.QOE, (1.0, 5.0)),
    "URLLC": ServiceType("URLLC", Kpi.PLR, (0.0, 1.0)),
    "MIOT": ServiceType("MIOT", Kpi.PLR, (0.0, 1.0)),
}


@dataclass
class Ue:
    id: int
    service: str
    gnb: int
    offered_rate: float
    mbr: float
    offered_now: float = 0.0
    delivered_rate: float = 0.0
    plr: float = 0.0
    qoe: float = 1.0


@dataclass
class Service:
    type: ServiceType
    priority: int
    ues: list[int]


@dataclass
class Gnb:
    id: int
    capacity: float
    attached: list[int]


@dataclass
class PendingEffect:
    knob: Knob
    target: str | tuple[int, ...]
    new_value: float
    apply_at_tick: int


@dataclass
class NetworkState:
    tick: int
    services: dict[str, Service]
    ues: list[Ue]
    gnbs: list[Gnb]
    pending: list[PendingEffect]
    rng: np.random.Generator
    noise: float
    delays: dict[Knob, int]
    kpi_window: int
    events: list[dict] = field(default_factory=list)
    # Per-tick KPI history, one row per tick (ring buffer over kpi_window rows).
    plr_hist: np.ndarray = field(default=None, repr=False)
    qoe_hist: np.ndarray = field(default=None, repr=False)
    hist_len: int = 0

    @property
    def max_mbr(self) -> float:
        return min(g.capacity for g in self.gnbs)

    def smoothed_plr(self, ue_id: int) -> float:
        if self.hist_len == 0:
            return self.ues[ue_id].plr
        n = min(self.hist_len, self.kpi_window)
        return float(self.plr_hist[:n, ue_id].mean())

    def smoothed_qoe(self, ue_id: int) -> float:
        if self.hist_len == 0:
            return self.ues[ue_id].qoe
        n = min(self.hist_len, self.kpi_window)
        return float(self.qoe_hist[:n, ue_id].mean())

    def service_ues(self, service: str) -> list[Ue]:
        return [self.ues[i] for i in self.services[service].ues]


def build_topology(cfg: ScenarioConfig, seed: int = 0) -> NetworkState:
    """Create the initial network: UEs spread round-robin over gNBs per service."""
    em = cfg.emulator
    if em.n_gnbs < 1:
        raise ValueError("need at least one gNB")
    if em.capacity_mbps <= 0:
        raise ValueError(f"capacity must be positive, got {em.capacity_mbps}")
    for s in SERVICES:
        if em.ues_per_service[s] % em.n_gnbs:
            raise ValueError(
                f"{em.ues_per_service[s]} {s} UEs cannot be spread evenly over {em.n_gnbs} gNBs")

    capacity = cfg.gnb_capacity()
    gnbs = [Gnb(i, capacity, []) for i in range(em.n_gnbs)]
    ues: list[Ue] = []
    services: dict[str, Service] = {}
    for s in SERVICES:
        ids = []
        for k in range(em.ues_per_service[s]):
            ue = Ue(len(ues), s, k % em.n_gnbs, em.offered_mbps[s], em.initial_mbr)
            ues.append(ue)
            gnbs[ue.gnb].attached.append(ue.id)
            ids.append(ue.id)
        services[s] = Service(SERVICE_TYPES[s], em.initial_priority, ids)

    window = em.kpi_window
    return NetworkState(
        tick=0,
        services=services,
        ues=ues,
        gnbs=gnbs,
        pending=[],
        rng=np.random.default_rng(seed),
        noise=em.noise,
        delays={Knob.PRIORITY: em.priority_delay, Knob.MBR: em.mbr_delay},
        kpi_window=window,
        plr_hist=np.zeros((window, len(ues))),
        qoe_hist=np.ones((window, len(ues))),
    )


def priority_weight(priority: int) -> int:
    """Scheduler weight of a packet priority; 1 is the most favoured priority."""
    if not PRIORITY_MIN <= priority <= PRIORITY_MAX:
        raise ValueError(f"priority {priority} outside [{PRIORITY_MIN}, {PRIORITY_MAX}]")
    return 101 - priority


def allocate_airlink(capacity: float, demands: Sequence[float],
                     weights: Sequence[float]) -> list[float]:
    """Weighted max-min fair split of ``capacity`` by progressive filling.

    All unsaturated UEs are raised together at a rate proportional to their
    weight; a UE freezes once it reaches its demand. Stops when the capacity is
    used up or every demand is met.
    """
    n = len(demands)
    alloc = [0.0] * n
    active = [i for i in range(n) if demands[i] > 0]
    remaining = float(capacity)
    while active and remaining > 0:
        wsum = sum(weights[i] for i in active)
        # water-level increment at which the first active UE saturates
        step = min((demands[i] - alloc[i]) / weights[i] for i in active)
        if step * wsum >= remaining:
            level = remaining / wsum
            for i in active:
                alloc[i] += level * weights[i]
            remaining = 0.0
            break
        still = []
        for i in active:
            room = demands[i] - alloc[i]
            if room / weights[i] <= step * (1 + 1e-12):
                alloc[i] = float(demands[i])
            else:
                alloc[i] += step * weights[i]
                still.append(i)
        remaining = capacity - sum(alloc)
        active = still
    return [min(a, float(d)) for a, d in zip(alloc, demands)]


def qoe_model(delivered: float, offered: float) -> float:
    """Per-tick QoE on [1, 5]: linear in the delivered share of the offered load."""
    if offered <= 0:
        return 1.0
    ratio = min(max(delivered / offered, 0.0), 1.0)
    return 1.0 + 4.0 * ratio


def tick(state: NetworkState) -> NetworkState:
    """Advance the emulator by one tick (in place) and return the state."""
    state.tick += 1
    if state.pending:
        due = [p for p in state.pending if p.apply_at_tick <= state.tick]
        if due:
            state.pending = [p for p in state.pending if p.apply_at_tick > state.tick]
            for p in due:
                _apply(state, p)

    n = len(state.ues)
    if state.noise > 0:
        factors = state.rng.uniform(1.0 - state.noise, 1.0 + state.noise, size=n)
    else:
        factors = np.ones(n)
    for ue, f in zip(state.ues, factors.tolist()):
        ue.offered_now = ue.offered_rate * f

    for gnb in state.gnbs:
        members = [state.ues[i] for i in gnb.attached]
        demands = [min(u.offered_now, u.mbr) for u in members]
        weights = [priority_weight(state.services[u.service].priority) for u in members]
        for u, a in zip(members, allocate_airlink(gnb.capacity, demands, weights)):
            u.delivered_rate = a

    row = state.hist_len % state.kpi_window
    for ue in state.ues:
        if ue.offered_now > 0:
            ue.plr = min(max((ue.offered_now - ue.delivered_rate) / ue.offered_now, 0.0), 1.0)
        else:
            ue.plr = 0.0
        ue.qoe = qoe_model(ue.delivered_rate, ue.offered_now)
        state.plr_hist[row, ue.id] = ue.plr
        state.qoe_hist[row, ue.id] = ue.qoe
    state.hist_len += 1
    return state


def _apply(state: NetworkState, effect: PendingEffect) -> None:
    if effect.knob is Knob.PRIORITY:
        state.services[effect.target].priority = int(effect.new_value)
    else:
        for i in effect.target:
            state.ues[i].mbr = float(effect.new_value)


def run_ticks(state: NetworkState, n: int) -> NetworkState:
    for _ in range(n):
        tick(state)
    return state


def _kth(values: list[float], percent: int, descending: bool) -> float:
    k = ceil_share(percent, len(values))
    return sorted(values, reverse=descending)[k - 1]


def observe_kpi(state: NetworkState, intent) -> float:
    """Smoothed KPI of the worst UE inside the best ``percent`` of the service."""
    ues = state.services[intent.service].ues
    if not ues:
        raise ValueError(f"service {intent.service} has no UEs")
    if SERVICE_TYPES[intent.service].kpi_kind is Kpi.QOE:
        return _kth([state.smoothed_qoe(i) for i in ues], intent.percent, descending=True)
    return _kth([state.smoothed_plr(i) for i in ues], intent.percent, descending=False)


def _log_clamp(state: NetworkState, knob: Knob, target, asked: float, got: float) -> None:
    event = {"tick": state.tick, "event": "clamp", "knob": knob.value,
             "target": target if isinstance(target, str) else list(target),
             "requested": asked, "applied": got}
    state.events.append(event)
    log.info("clamped %s write for %s: %s -> %s", knob.value, target, asked, got)


def set_priority(state: NetworkState, service: str, value: float) -> NetworkState:
    """Queue a packet-priority change; it lands after the priority delay."""
    v = int(round(value))
    clamped = min(max(v, PRIORITY_MIN), PRIORITY_MAX)
    if clamped != value:
        _log_clamp(state, Knob.PRIORITY, service, value, clamped)
    state.pending.append(PendingEffect(
        Knob.PRIORITY, service, clamped, state.tick + state.delays[Knob.PRIORITY]))
    return state


def set_mbr(state: NetworkState, ue_group: Sequence[int], value: float) -> NetworkState:
    """Queue an MBR change for a group of UEs; it lands after the MBR delay."""
    clamped = min(max(float(value), MIN_MBR), state.max_mbr)
    target = tuple(ue_group)
    if clamped != value:
        _log_clamp(state, Knob.MBR, target, value, clamped)
    state.pending.append(PendingEffect(
        Knob.MBR, target, clamped, state.tick + state.delays[Knob.MBR]))
    return state


def snapshot(state: NetworkState) -> dict:
    """Versioned, JSON-ready view of the state for debugging."""
    return {
        "version": SNAPSHOT_VERSION,
        "tick": state.tick,
        "services": [
            {"kind": s.type.kind, "kpi_kind": s.type.kpi_kind.value,
             "kpi_range": list(s.type.kpi_range), "priority": s.priority, "ues": list(s.ues),
             "latency_ms": LATENCY_PLACEHOLDER_MS[s.type.kind]}
            for s in state.services.values()
        ],
        "ues": [
            {"id": u.id, "service": u.service, "gnb": u.gnb, "offered_rate": u.offered_rate,
             "mbr": u.mbr, "delivered_rate": u.delivered_rate, "plr": u.plr, "qoe": u.qoe,
             "smoothed_plr": state.smoothed_plr(u.id), "smoothed_qoe": state.smoothed_qoe(u.id),
             "uplink_rate": 0.0}
            for u in state.ues
        ],
        "gnbs": [{"id": g.id, "capacity": g.capacity, "attached": list(g.attached)}
                 for g in state.gnbs],
        "pending": [
            {"knob": p.knob.value,
             "target": p.target if isinstance(p.target, str) else list(p.target),
             "new_value": p.new_value, "apply_at_tick": p.apply_at_tick}
            for p in state.pending
        ],
        "events": list(state.events),
    }


def dump_snapshot(state: NetworkState) -> str:
    return json.dumps(snapshot(state), indent=2, sort_keys=True)


def gnb_load(state: NetworkState) -> dict[int, float]:
    """Delivered traffic per gNB on the last tick."""
    total: Counter = Counter()
    for u in state.ues:
        total[u.gnb] += u.delivered_rate
    return {g.id: total[g.id] for g in state.gnbs}


def kpi_of(state: NetworkState, ue_id: int) -> float:
    ue = state.ues[ue_id]
    if SERVICE_TYPES[ue.service].kpi_kind is Kpi.QOE:
        return state.smoothed_qoe(ue_id)
    return state.smoothed_plr(ue_id)


def ceil_share(percent: int, n: int) -> int:
    """Number of UEs covered by ``percent`` of ``n``, rounded up."""
    return -(-percent * n // 100)  # integer ceil, no float rounding
