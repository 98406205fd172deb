"""Goal-conditioned QMIX: recurrent per-agent values, monotonic mixing, TD training."""

from .learner import (EpisodeBuffer, agent_q, greedy_index, loss_and_grads, make_batch,
                      select_actions, td_train_step, train)
from .nets import mixer_forward
from .params import QmixParams


def mix(params: QmixParams, chosen_qs, joint_obs):
    """Q_tot for one joint step: chosen per-agent values and the joint observation."""
    import numpy as np

    q = np.asarray(chosen_qs, dtype=np.float64).reshape(1, -1)
    s = np.asarray(joint_obs, dtype=np.float64).reshape(1, -1)
    if q.shape[1] != params.n_agents or s.shape[1] != params.n_agents * 4:
        raise ValueError(f"expected {params.n_agents} agent values and a matching joint observation")
    return float(mixer_forward(params.mixer, q, s)[0][0])


__all__ = ["EpisodeBuffer", "QmixParams", "agent_q", "greedy_index", "loss_and_grads",
           "make_batch", "mix", "select_actions", "td_train_step", "train"]
