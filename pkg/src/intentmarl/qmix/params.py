"""Learnable state of one agent group, its optimizer, and checkpoint files."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets

CHECKPOINT_VERSION = 1


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        if self.lr == 0:
            return
        self.t += 1
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1 ** self.t)
            vhat = self.v[k] / (1 - self.beta2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class QmixParams:
    agent: dict[str, np.ndarray]
    mixer: dict[str, np.ndarray]
    n_agents: int
    hidden: int
    mixer_hidden: int
    optimizer: Adam
    steps: int = 0
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, n_agents: int, hidden: int, mixer_hidden: int, seed: int,
             lr: float = 5e-3, meta: dict | None = None) -> "QmixParams":
        rng = np.random.default_rng(seed)
        return cls(nets.init_agent(rng, n_agents, hidden), nets.init_mixer(rng, n_agents, mixer_hidden),
                   n_agents, hidden, mixer_hidden, Adam(lr), meta=dict(meta or {}))

    def flat(self) -> dict[str, np.ndarray]:
        """All trainable arrays under prefixed names (views, not copies)."""
        out = {f"agent.{k}": v for k, v in self.agent.items()}
        out.update({f"mixer.{k}": v for k, v in self.mixer.items()})
        return out

    def copy(self) -> "QmixParams":
        return copy.deepcopy(self)

    def to_document(self) -> dict:
        def arrays(d):
            return {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                    for k, v in sorted(d.items())}
        opt = self.optimizer
        return {
            "version": CHECKPOINT_VERSION,
            "n_agents": self.n_agents,
            "hidden": self.hidden,
            "mixer_hidden": self.mixer_hidden,
            "steps": self.steps,
            "meta": self.meta,
            "weights": arrays(self.flat()),
            "optimizer": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                          "t": opt.t, "m": arrays(opt.m), "v": arrays(opt.v)},
        }

    @classmethod
    def from_document(cls, doc: dict) -> "QmixParams":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")

        def arrays(d):
            return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d.items()}

        flat = arrays(doc["weights"])
        agent = {k[len("agent."):]: v for k, v in flat.items() if k.startswith("agent.")}
        mixer = {k[len("mixer."):]: v for k, v in flat.items() if k.startswith("mixer.")}
        o = doc["optimizer"]
        opt = Adam(o["lr"], o["beta1"], o["beta2"], o["eps"], o["t"], arrays(o["m"]), arrays(o["v"]))
        return cls(agent, mixer, doc["n_agents"], doc["hidden"], doc["mixer_hidden"], opt,
                   doc["steps"], doc.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_document(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "QmixParams":
        return cls.from_document(json.loads(Path(path).read_text()))
