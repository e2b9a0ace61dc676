"""Backward-staged roll-in with a contextual-bandit learner at each step.

Stage ``h`` runs for ``ceil(T/H)`` rounds: the guide acts on steps ``0..h-1``,
the bandit picks the action at step ``h``, and the already-frozen mixtures act
on ``h+1..H-1``. The bandit's reward is the return collected from step ``h`` on.
At the end of the stage the actions taken at step ``h`` are frozen as an
equal-weight mixture.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .jsrl import EpisodeLog, RunRecord
from .mdp import MdpError, MdpSpec, Trajectory, policy_value, step
from .policies import TabularPolicy

DEFAULT_CB_EPSILON = 0.2
CB_SCHEDULES = ("constant", "cube_root")


def cb_epsilon(epsilon: float, round_index: int, schedule: str = "cube_root") -> float:
    """Exploration rate for the ``round_index``-th (1-based) round of a stage.

    ``cube_root`` decays as ``epsilon * t**(-1/3)``, the schedule behind the
    (SA/T)^(1/3) regret of tabular epsilon-greedy bandits.
    """
    if schedule == "constant":
        return epsilon
    if schedule == "cube_root":
        return min(1.0, epsilon * round_index ** (-1.0 / 3.0))
    raise ValueError(f"unknown CB epsilon schedule {schedule!r}")


@dataclass
class CbState:
    """Empirical means of the return-to-go for one stage's bandit problem."""

    stage: int
    horizon: int
    num_states: int
    num_actions: int
    rounds_per_stage: int = 1
    counts: np.ndarray = None
    sums: np.ndarray = None

    def __post_init__(self):
        shape = (self.num_states, self.num_actions)
        if self.counts is None:
            self.counts = np.zeros(shape, dtype=int)
        if self.sums is None:
            self.sums = np.zeros(shape)

    @property
    def reward_range(self) -> tuple[float, float]:
        return 0.0, float(self.horizon - self.stage)

    @property
    def means(self) -> np.ndarray:
        return np.divide(self.sums, self.counts, out=np.zeros_like(self.sums), where=self.counts > 0)

    def act(self, s: int, epsilon: float, rng: np.random.Generator) -> int:
        """Epsilon-greedy over empirical means; greedy ties go to the lowest index.

        Unpulled arms count as mean 0, so a context with no data picks action 0
        with probability ``1 - epsilon + epsilon/A`` and each other action with
        ``epsilon/A``.
        """
        A = self.num_actions
        if rng.random() < epsilon:
            return min(int(rng.random() * A), A - 1)
        return int(np.argmax(self.means[s]))

    def update(self, s: int, a: int, reward: float) -> None:
        lo, hi = self.reward_range
        if not lo - 1e-12 <= reward <= hi + 1e-12:
            raise ValueError(f"stage-{self.stage} reward {reward} outside [{lo}, {hi}]")
        self.counts[s, a] += 1
        self.sums[s, a] += reward


def cb_epsilon_greedy_round(cb: CbState, s: int, epsilon: float, rng: np.random.Generator):
    """Pick an action for context ``s``; returns (action, hook) where hook(reward) records the outcome."""
    a = cb.act(s, epsilon, rng)

    def hook(reward: float) -> None:
        cb.update(s, a, reward)

    return a, hook


@dataclass
class MixturePolicy:
    """Per (h, s) list of component actions with equal weights; empty means uniform."""

    horizon: int
    num_states: int
    num_actions: int
    components: dict = field(default_factory=dict)  # (h, s) -> list[int]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.horizon, self.num_states, self.num_actions

    def add(self, h: int, s: int, a: int) -> None:
        self.components.setdefault((h, s), []).append(int(a))

    def to_tabular(self) -> TabularPolicy:
        H, S, A = self.dims
        probs = np.full((H, S, A), 1.0 / A)
        for (h, s), comps in self.components.items():
            if comps:
                probs[h, s] = np.bincount(comps, minlength=A) / len(comps)
        return TabularPolicy(probs)

    def step_checksum(self, h: int) -> str:
        items = sorted((s, comps) for (hh, s), comps in self.components.items() if hh == h)
        return hashlib.sha256(json.dumps(items).encode()).hexdigest()

    def to_dict(self) -> dict:
        H, S, A = self.dims
        comps = [[self.components.get((h, s), []) for s in range(S)] for h in range(H)]
        return {"H": H, "S": S, "A": A, "components": comps}

    @classmethod
    def from_dict(cls, d: dict) -> "MixturePolicy":
        pol = cls(d["H"], d["S"], d["A"])
        for h, layer in enumerate(d["components"]):
            for s, comps in enumerate(layer):
                if comps:
                    pol.components[(h, s)] = [int(a) for a in comps]
        return pol


def mixture_action(policy: MixturePolicy, h: int, s: int, rng: np.random.Generator) -> int:
    comps = policy.components.get((h, s))
    if not comps:
        A = policy.num_actions
        return min(int(rng.random() * A), A - 1)
    return comps[min(int(rng.random() * len(comps)), len(comps) - 1)]


def _combined_tabular(guide: TabularPolicy, mix: MixturePolicy, first_mixture_step: int) -> TabularPolicy:
    probs = np.array(guide.probs)
    probs[first_mixture_step:] = mix.to_tabular().probs[first_mixture_step:]
    return TabularPolicy(probs)


def train_jsrl_cb(
    mdp: MdpSpec,
    guide: TabularPolicy,
    T: int,
    epsilon: float = DEFAULT_CB_EPSILON,
    rng: np.random.Generator | None = None,
    epsilon_schedule: str = "cube_root",
    stage_states: list | None = None,
) -> tuple[MixturePolicy, RunRecord]:
    """Train the composed mixture policy with ``ceil(T/H)`` rounds per stage.

    ``epsilon`` is the base rate fed through ``cb_epsilon``; the round counter
    restarts at every stage.

    ``stage_states``, when given, collects each finished stage's CbState.
    """
    H, S, A = mdp.dims
    if T < H:
        raise ValueError(f"T must be at least H={H}, got {T}")
    if guide.dims != mdp.dims:
        raise MdpError(f"guide dims {guide.dims} != MDP dims {mdp.dims}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon_schedule not in CB_SCHEDULES:
        raise ValueError(f"unknown CB epsilon schedule {epsilon_schedule!r}")
    rng = rng if rng is not None else np.random.default_rng()
    rounds = math.ceil(T / H)
    mix = MixturePolicy(H, S, A)
    record = RunRecord(extra_columns=("stage_rounds",))
    samplers, rewards = mdp._samplers, mdp._rewards
    episode = 0
    for stage_no, h in enumerate(range(H - 1, -1, -1)):
        cb = CbState(h, H, S, A, rounds)
        taken = []
        for t_round in range(1, rounds + 1):
            eps_t = cb_epsilon(epsilon, t_round, epsilon_schedule)
            s = mdp.sample_initial(rng)
            traj = Trajectory(init_state=s)
            a_cb = s_cb = None
            for t in range(H):
                if t < h:
                    a = guide.sample(t, s, rng)
                elif t == h:
                    a = cb.act(s, eps_t, rng)
                    s_cb, a_cb = s, a
                else:
                    a = mixture_action(mix, t, s, rng)
                sampler = samplers[t][s][a]
                s2 = sampler if isinstance(sampler, int) else step(mdp, t, s, a, rng)[0]
                traj.steps.append((s, a, rewards[t][s][a], s2))
                s = s2
            cb.update(s_cb, a_cb, sum(st[2] for st in traj.steps[h:]))
            taken.append((s_cb, a_cb))
            row = EpisodeLog(episode, h, traj.total_return, stage=stage_no)
            row.stage_rounds = rounds
            record.rows.append(row)
            episode += 1
        for s_cb, a_cb in taken:
            mix.add(h, s_cb, a_cb)
        if stage_states is not None:
            stage_states.append(cb)
        last = record.rows[-1]
        last.eval_return = policy_value(mdp, _combined_tabular(guide, mix, h))[1]
        record.stage_transitions.append((episode - 1, h, h - 1, False))
    return mix, record
