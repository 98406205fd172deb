"""Rule-based supervisor that decides which agent group actuates.

Rule A: if every UE in the snapshot delivers its MBR (within a tolerance), only
raising caps can help, so the MBR agents act. Rule B: otherwise the priority
agents act. Decisions are taken every ``cadence`` control steps and the chosen
group stays active until the next decision; the idle group's knobs stay frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envapi import Group, IntentEnv
from .qmix import QmixParams
from .qmix.learner import initial_hidden, select_actions


@dataclass
class SupervisorState:
    active_group: Group = Group.PRIORITY
    steps_since_decision: int = 0
    cadence: int = 5
    throughput_tolerance: float = 0.05

    def due(self) -> bool:
        return self.steps_since_decision % self.cadence == 0


def decide(snapshot: Sequence[tuple[float, float]], tolerance: float = 0.05) -> Group:
    """Pick the group from per-UE (delivered_rate, mbr) pairs."""
    if len(snapshot) == 0:
        raise ValueError("empty snapshot")
    if all(abs(delivered - mbr) <= tolerance for delivered, mbr in snapshot):
        return Group.MBR
    return Group.PRIORITY


def decision_snapshot(env: IntentEnv) -> list[tuple[float, float]]:
    """(delivered, mbr) for the UEs of services whose intents are currently unmet.

    UEs of satisfied services are left out: the rule is meant to diagnose why
    intents fail, and a UE whose demand sits below its cap can never equal it.
    The result is empty when every intent holds.
    """
    out = []
    for s, svc in env.state.services.items():
        if env.service_satisfied(s):
            continue
        for i in svc.ues:
            u = env.state.ues[i]
            out.append((u.delivered_rate, u.mbr))
    return out


def supervise(env: IntentEnv, tolerance: float) -> Group:
    snap = decision_snapshot(env)
    if not snap:
        return Group.PRIORITY
    return decide(snap, tolerance)


@dataclass
class _GroupRunner:
    params: QmixParams
    ids: list[str]
    hidden: np.ndarray = None
    last: np.ndarray = None

    def __post_init__(self):
        n = len(self.ids)
        self.hidden = initial_hidden(self.params, n)
        self.last = -np.ones(n, dtype=np.int64)


@dataclass
class OrchestrationTrace:
    rows: list[dict] = field(default_factory=list)
    groups: list[str] = field(default_factory=list)


def orchestrate(priority_params: QmixParams | None, mbr_params: QmixParams | None,
                env: IntentEnv, horizon: int, *, cadence: int = 5, tolerance: float = 0.05,
                fixed_group: Group | str | None = None,
                before_step: Callable[[int, IntentEnv], None] | None = None,
                rng: np.random.Generator | None = None) -> OrchestrationTrace:
    """Run ``horizon`` greedy control steps on an already reset environment.

    With ``fixed_group`` set, that group acts on every step (the single-knob
    setups); otherwise the supervisor re-decides every ``cadence`` steps.
    ``before_step(k, env)`` runs before step k and is where goal changes go.
    """
    params = {Group.PRIORITY: priority_params, Group.MBR: mbr_params}
    if fixed_group is not None:
        fixed_group = Group.parse(fixed_group)
        if params[fixed_group] is None:
            raise ValueError(f"no checkpoint for the {fixed_group.value} group")
    elif priority_params is None or mbr_params is None:
        raise ValueError("supervised runs need checkpoints for both groups")
    rng = rng or np.random.default_rng(0)
    runners = {g: _GroupRunner(p, env.agent_ids(g)) for g, p in params.items() if p is not None}
    sup = SupervisorState(cadence=cadence, throughput_tolerance=tolerance)
    trace = OrchestrationTrace()
    for k in range(horizon):
        if before_step:
            before_step(k, env)
        if fixed_group is not None:
            sup.active_group = fixed_group
        elif sup.due():
            sup.active_group = supervise(env, tolerance)
        group = sup.active_group
        if params[group] is None:
            raise ValueError(f"no checkpoint for the {group.value} group")
        run = runners[group]
        obs = env.observe(group).vector
        acts, idx, run.hidden, _ = select_actions(run.params, obs, run.hidden, run.last, 0.0, rng)
        run.last = idx
        env.step(acts.tolist(), group)
        sup.steps_since_decision += 1
        trace.groups.append(group.value)
    trace.rows = list(env.trace)
    return trace
