"""Centralized training of one agent group with episodic replay and TD targets."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..config import ScenarioConfig, TrainConfig
from ..envapi import ACTIONS, EpisodeRecord, Group, IntentEnv
from . import nets
from .params import QmixParams

log = logging.getLogger(__name__)


class EpisodeBuffer:
    """Ring buffer of complete episodes; samples whole episodes only."""

    def __init__(self, capacity: int):
        self.episodes: deque[EpisodeRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.episodes)

    def add(self, episode: EpisodeRecord) -> None:
        if len(episode) == 0 or len(episode.obs) != len(episode) + 1:
            raise ValueError("only complete episodes can be stored")
        self.episodes.append(episode)

    def sample(self, k: int, rng: np.random.Generator) -> list[EpisodeRecord]:
        idx = rng.choice(len(self.episodes), size=min(k, len(self.episodes)), replace=False)
        return [self.episodes[i] for i in sorted(idx)]


def make_batch(episodes: list[EpisodeRecord]) -> dict[str, np.ndarray]:
    """Pad episodes to a common length. Shapes: obs (T+1, B, n, 4), rest (T, B, ...)."""
    if not episodes:
        raise ValueError("empty batch")
    B = len(episodes)
    T = max(len(e) for e in episodes)
    n = episodes[0].obs[0].shape[0]
    obs = np.zeros((T + 1, B, n, nets.OBS_DIM))
    actions = np.zeros((T, B, n), dtype=np.int64)
    rewards = np.zeros((T, B))
    mask = np.zeros((T, B))
    terminated = np.zeros((T, B))
    for b, e in enumerate(episodes):
        L = len(e)
        obs[:L + 1, b] = np.stack(e.obs)
        obs[L + 1:, b] = e.obs[-1]
        actions[:L, b] = np.stack(e.actions)
        rewards[:L, b] = e.rewards
        mask[:L, b] = 1.0
        terminated[:L, b] = e.terminated
    return {"obs": obs, "actions": actions, "rewards": rewards, "mask": mask,
            "terminated": terminated}


def agent_inputs(obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Stack obs, one-hot previous action and one-hot agent id: (T+1, B*n, D)."""
    T1, B, n, _ = obs.shape
    last = np.zeros((T1, B, n, nets.N_ACTIONS))
    if actions.shape[0]:
        last[1:] = np.eye(nets.N_ACTIONS)[actions]
    ids = np.broadcast_to(np.eye(n), (T1, B, n, n))
    X = np.concatenate([obs, last, ids], axis=-1)
    return X.reshape(T1, B * n, -1)


def loss_and_grads(params: QmixParams, batch: dict, gamma: float,
                   target: QmixParams | None = None, with_grads: bool = True):
    """Masked mean squared TD error of Q_tot and its gradient.

    Targets use double estimation: next actions are the online greedy ones,
    valued by the target networks. Returns (loss, grads or None, info).
    """
    target = params if target is None else target
    obs, actions = batch["obs"], batch["actions"]
    T1, B, n, _ = obs.shape
    T = T1 - 1
    X = agent_inputs(obs, actions)
    Q, caches = nets.agent_forward(params.agent, X)
    Q = Q.reshape(T1, B, n, nets.N_ACTIONS)
    states = obs.reshape(T1, B, n * nets.OBS_DIM)

    chosen = np.take_along_axis(Q[:T], actions[..., None], axis=-1)[..., 0]
    q_tot, mcache = nets.mixer_forward(params.mixer, chosen.reshape(T * B, n),
                                       states[:T].reshape(T * B, -1))
    q_tot = q_tot.reshape(T, B)

    Qt, _ = nets.agent_forward(target.agent, X)
    Qt = Qt.reshape(T1, B, n, nets.N_ACTIONS)
    # ties go to +1 (index 1), matching action selection
    greedy = (Q[1:, ..., 1] >= Q[1:, ..., 0]).astype(np.int64)
    q_next = np.take_along_axis(Qt[1:], greedy[..., None], axis=-1)[..., 0]
    q_tot_next, _ = nets.mixer_forward(target.mixer, q_next.reshape(T * B, n),
                                       states[1:].reshape(T * B, -1))
    y = batch["rewards"] + gamma * (1.0 - batch["terminated"]) * q_tot_next.reshape(T, B)

    mask = batch["mask"]
    denom = mask.sum()
    td = (q_tot - y) * mask
    loss = float((td ** 2).sum() / denom)
    info = {"q_tot": q_tot, "y": y}
    if not with_grads:
        return loss, None, info

    dq_tot = (2.0 * td / denom).reshape(-1)
    mgrads, dchosen = nets.mixer_backward(params.mixer, dq_tot, mcache)
    dQ = np.zeros((T1, B, n, nets.N_ACTIONS))
    np.put_along_axis(dQ[:T], actions[..., None], dchosen.reshape(T, B, n)[..., None], axis=-1)
    agrads = nets.agent_backward(params.agent, dQ.reshape(T1, B * n, nets.N_ACTIONS), caches)
    grads = {f"agent.{k}": v for k, v in agrads.items()}
    grads.update({f"mixer.{k}": v for k, v in mgrads.items()})
    return loss, grads, info


def td_train_step(params: QmixParams, batch: dict, gamma: float, target_params: QmixParams,
                  grad_clip: float | None = 10.0) -> tuple[QmixParams, float]:
    """One gradient update on all parameters (in place). Returns (params, loss)."""
    loss, grads, _ = loss_and_grads(params, batch, gamma, target_params)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite TD loss")
    if grad_clip:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > grad_clip:
            grads = {k: g * (grad_clip / norm) for k, g in grads.items()}
    params.optimizer.update(params.flat(), grads)
    params.steps += 1
    return params, loss


def initial_hidden(params: QmixParams, n: int) -> np.ndarray:
    return np.zeros((2, n, params.hidden))


def agent_q(params: QmixParams, obs_seq: np.ndarray, last_actions: np.ndarray | None = None):
    """Q values for one episode: obs_seq (T, n, 4), last_actions (T, n) index or -1."""
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    if obs_seq.shape[0] == 0:
        raise ValueError("empty observation sequence")
    T, n, _ = obs_seq.shape
    last = np.zeros((T, n, nets.N_ACTIONS))
    if last_actions is not None:
        la = np.asarray(last_actions)
        valid = la >= 0
        last[valid] = np.eye(nets.N_ACTIONS)[la[valid]]
    X = np.concatenate([obs_seq, last, np.broadcast_to(np.eye(n), (T, n, n))], axis=-1)
    Q, _ = nets.agent_forward(params.agent, X)
    return Q


def greedy_index(q: np.ndarray) -> np.ndarray:
    """Per-row argmax over (−1, +1) with ties going to +1."""
    return (q[..., 1] >= q[..., 0]).astype(np.int64)


def select_actions(params: QmixParams, obs: np.ndarray, hidden: np.ndarray,
                   last_actions: np.ndarray, epsilon: float, rng: np.random.Generator):
    """Decentralized ε-greedy choice; each row uses only its own observation.

    Returns (actions in {-1, +1}, action indices, new hidden state, Q values).
    """
    n = obs.shape[0]
    last = np.zeros((n, nets.N_ACTIONS))
    valid = last_actions >= 0
    last[valid] = np.eye(nets.N_ACTIONS)[last_actions[valid]]
    x = np.concatenate([obs, last, np.eye(n)], axis=1)
    q, hidden, _ = nets.agent_step(params.agent, x, hidden)
    idx = greedy_index(q)
    # draw both streams every call so the rng sequence does not depend on epsilon
    explore = rng.random(n) < epsilon
    random_idx = rng.integers(0, nets.N_ACTIONS, size=n)
    idx = np.where(explore, random_idx, idx)
    return np.array([ACTIONS[i] for i in idx]), idx, hidden, q


def epsilon_at(episode: int, tc: TrainConfig) -> float:
    anneal = max(1, int(tc.episodes * tc.eps_anneal_frac))
    frac = min(episode / anneal, 1.0)
    return tc.eps_start + frac * (tc.eps_end - tc.eps_start)


def rollout(env: IntentEnv, params: QmixParams, group: Group, epsilon: float,
            rng: np.random.Generator, goals=None) -> tuple[EpisodeRecord, float]:
    group = Group.parse(group)
    jo = env.reset(goals)
    jo = env.observe(group)
    n = len(jo)
    hidden = initial_hidden(params, n)
    last = -np.ones(n, dtype=np.int64)
    ep = EpisodeRecord(obs=[jo.vector])
    total = 0.0
    done = False
    while not done:
        acts, idx, hidden, _ = select_actions(params, jo.vector, hidden, last, epsilon, rng)
        jo, _, G, done = env.step(acts.tolist(), group)
        ep.obs.append(jo.vector)
        ep.actions.append(idx)
        ep.rewards.append(G)
        # the task is continuing: neither the horizon nor goal attainment is a true terminal
        ep.terminated.append(False)
        last = idx
        total += G
    return ep, total


@dataclass
class TrainResult:
    params: QmixParams
    log: list[dict] = field(default_factory=list)


def train(cfg: ScenarioConfig, group: Group | str, seed: int,
          env_factory: Callable[[ScenarioConfig, int], IntentEnv] | None = None,
          episodes: int | None = None, progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train one agent group (priority or MBR) from scratch.

    Each episode is an ε-greedy rollout with freshly sampled goals followed by
    ``updates_per_episode`` TD updates on batches of stored episodes. With
    ``reward_centering`` the mean team reward seen so far is subtracted from
    every target; the action values then only carry the part of the return that
    depends on the actions, which is small next to the return itself.
    """
    group = Group.parse(group)
    tc = cfg.training
    E = tc.episodes if episodes is None else episodes
    env = (env_factory or IntentEnv)(cfg, seed)
    n = len([s for s in cfg.emulator.ues_per_service])
    meta = {"group": group.value, "seed": seed, "episodes": E, "hyperparameters": vars(tc).copy(),
            "scenario": cfg.name, "penalties": dict(cfg.penalties)}
    params = QmixParams.init(n, tc.hidden, tc.mixer_hidden, seed, tc.lr, meta)
    target = params.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    buffer = EpisodeBuffer(tc.buffer_episodes)
    result = TrainResult(params)
    reward_sum, reward_count = 0.0, 0
    tc_eff = TrainConfig(**{**vars(tc), "episodes": E})
    for i in range(E):
        eps = epsilon_at(i, tc_eff)
        episode, ret = rollout(env, params, group, eps, rng)
        buffer.add(episode)
        reward_sum += sum(episode.rewards)
        reward_count += len(episode)
        baseline = reward_sum / reward_count if tc.reward_centering else 0.0
        for _ in range(tc.updates_per_episode):
            batch = make_batch(buffer.sample(tc.batch_episodes, rng))
            batch["rewards"] = batch["rewards"] - baseline
            params, loss = td_train_step(params, batch, tc.gamma, target, tc.grad_clip)
            if params.steps % tc.target_sync == 0:
                target = params.copy()
        params.meta["reward_baseline"] = baseline
        row = {"episode": i, "return": ret, "mean_reward": ret / len(episode),
               "length": len(episode), "loss": loss, "epsilon": eps}
        result.log.append(row)
        if progress:
            progress(row)
    return result
