"""Policies, guide constructors and the tabular epsilon-greedy Q-learner."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .mdp import PROB_TOL, MdpError, MdpSpec, Trajectory, _draw, _make_sampler, lowest_index_argmax, step, value_iteration

DEFAULT_BUFFER_CAPACITY = 100_000


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """probs[h, s] is a distribution over actions."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 3:
            raise MdpError(f"policy must have shape (H, S, A), got {p.shape}")
        if (p < 0).any() or np.abs(p.sum(axis=-1) - 1.0).max() > PROB_TOL:
            raise MdpError("policy rows must be probability vectors")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.probs.shape

    @classmethod
    def uniform(cls, H: int, S: int, A: int) -> "TabularPolicy":
        return cls(np.full((H, S, A), 1.0 / A))

    @classmethod
    def deterministic(cls, actions: np.ndarray, A: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(A)[actions])

    @cached_property
    def _samplers(self):
        return [[_make_sampler(row) for row in layer] for layer in self.probs]

    def sample(self, h: int, s: int, rng: np.random.Generator) -> int:
        return _draw(self._samplers[h][s], rng)

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.probs.tobytes()).hexdigest()

    def to_dict(self) -> dict:
        H, S, A = self.dims
        return {"H": H, "S": S, "A": A, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TabularPolicy":
        pol = cls(np.asarray(d["probs"], dtype=float))
        if "H" in d and pol.dims != (d["H"], d["S"], d["A"]):
            raise MdpError("policy header does not match its table")
        return pol


@dataclass
class QLearnerConfig:
    epsilon: float = 0.1
    lr_schedule: str = "harmonic"  # "constant" | "harmonic"
    alpha: float = 0.5
    lr_c: float = 100.0
    eps_schedule: str = "constant"  # "constant" | "linear"
    eps_min: float = 0.0
    eps_decay_episodes: int = 1

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0 or not 0.0 <= self.eps_min <= 1.0:
            raise ValueError("epsilon values must lie in [0, 1]")
        if self.lr_schedule not in ("constant", "harmonic"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.eps_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown eps_schedule {self.eps_schedule!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lr_c <= 0:
            raise ValueError("lr_c must be positive")
        if self.eps_decay_episodes < 1:
            raise ValueError("eps_decay_episodes must be >= 1")

    def learning_rate(self, n_prior_updates: int) -> float:
        if self.lr_schedule == "constant":
            return self.alpha
        return self.lr_c / (self.lr_c + n_prior_updates)

    def epsilon_at(self, episode: int) -> float:
        if self.eps_schedule == "constant":
            return self.epsilon
        frac = min(1.0, episode / self.eps_decay_episodes)
        return self.epsilon + frac * (self.eps_min - self.epsilon)


class QTable:
    """Per-step action values Q[h][s][a] with per-cell update counts.

    Values live in nested lists because the learner touches single cells in
    tight loops; ``q`` exposes a numpy copy.
    """

    def __init__(self, q: np.ndarray, init_mode: str = "cold_zero", counts: np.ndarray | None = None):
        q = np.asarray(q, dtype=float)
        if q.ndim != 3 or not np.all(np.isfinite(q)):
            raise MdpError("Q-table must be a finite (H, S, A) array")
        if init_mode not in ("cold_zero", "warm_from_guide"):
            raise ValueError(f"unknown init_mode {init_mode!r}")
        self.H, self.S, self.A = q.shape
        self.init_mode = init_mode
        self._q = q.tolist()
        self._n = (np.zeros(q.shape, dtype=int) if counts is None else np.asarray(counts, dtype=int)).tolist()

    @classmethod
    def cold(cls, H: int, S: int, A: int) -> "QTable":
        return cls(np.zeros((H, S, A)), "cold_zero")

    @classmethod
    def warm_from_guide(cls, guide: TabularPolicy) -> "QTable":
        """Greedy(Q) reproduces the guide's modal action."""
        H, S, A = guide.dims
        q = np.eye(A)[lowest_index_argmax(guide.probs)]
        return cls(q, "warm_from_guide")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.H, self.S, self.A

    @property
    def q(self) -> np.ndarray:
        return np.array(self._q, dtype=float)

    @property
    def counts(self) -> np.ndarray:
        return np.array(self._n, dtype=int)

    def copy(self) -> "QTable":
        return QTable(self.q, self.init_mode, self.counts)

    def greedy_actions(self) -> np.ndarray:
        # exact ties only: the learner compares raw floats
        return np.argmax(self.q, axis=-1)

    def greedy_policy(self) -> TabularPolicy:
        return TabularPolicy.deterministic(self.greedy_actions(), self.A)

    def to_dict(self) -> dict:
        return {"H": self.H, "S": self.S, "A": self.A, "q": self._q, "init_mode": self.init_mode}

    @classmethod
    def from_dict(cls, d: dict) -> "QTable":
        qt = cls(np.asarray(d["q"], dtype=float), d.get("init_mode", "cold_zero"))
        if qt.dims != (d["H"], d["S"], d["A"]):
            raise MdpError("Q-table header does not match its table")
        return qt

    def __eq__(self, other):
        return isinstance(other, QTable) and self._q == other._q and self.init_mode == other.init_mode


# ------------------------------------------------------------------ guides


def scripted_optimal_guide(mdp: MdpSpec) -> TabularPolicy:
    return value_iteration(mdp).pi_star


def corrupted_guide(
    mdp: MdpSpec,
    base: TabularPolicy,
    noise: float,
    rng: np.random.Generator | None = None,
    mode: str = "mixture",
) -> TabularPolicy:
    """Blend ``base`` toward uniform.

    ``mode="mixture"`` returns (1-noise)*base + noise*uniform at every cell.
    ``mode="replace"`` swaps each cell for uniform independently with probability
    ``noise`` (needs ``rng``).
    """
    if not 0.0 <= noise <= 1.0:
        raise ValueError(f"noise must lie in [0, 1], got {noise}")
    if base.dims != mdp.dims:
        raise MdpError("base policy does not match the MDP")
    A = mdp.num_actions
    uniform = np.full(base.probs.shape, 1.0 / A)
    if mode == "mixture":
        probs = (1.0 - noise) * base.probs + noise * uniform
    elif mode == "replace":
        if rng is None:
            raise ValueError("replace mode needs an rng")
        hit = rng.random(base.probs.shape[:2]) < noise
        probs = np.where(hit[..., None], uniform, base.probs)
    else:
        raise ValueError(f"unknown corruption mode {mode!r}")
    return TabularPolicy(probs)


@dataclass
class DemoDataset:
    trajectories: list = field(default_factory=list)
    label: str = ""
    seed: int | None = None
    dims: tuple | None = None  # (H, S, A) of the generating MDP

    def transitions(self) -> list[tuple[int, int, int, float, int]]:
        out = []
        for traj in self.trajectories:
            for h, (s, a, r, s2) in enumerate(traj.steps):
                out.append((h, s, a, r, s2))
        return out

    def to_jsonl(self) -> str:
        header = {"metadata": {"policy": self.label, "seed": self.seed, "count": len(self.trajectories),
                               "dims": list(self.dims) if self.dims else None}}
        lines = [json.dumps(header, separators=(",", ":"))]
        lines += [json.dumps(t.to_dict(), separators=(",", ":")) for t in self.trajectories]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "DemoDataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise MdpError("empty demo file")
        first = json.loads(lines[0])
        meta = first.get("metadata") if isinstance(first, dict) else None
        body = lines[1:] if meta is not None else lines
        meta = meta or {}
        trajs = [Trajectory.from_dict(json.loads(ln)) for ln in body]
        dims = tuple(meta["dims"]) if meta.get("dims") else None
        return cls(trajs, meta.get("policy", ""), meta.get("seed"), dims)


def rollout(mdp: MdpSpec, policy: TabularPolicy, rng: np.random.Generator, seed: int | None = None) -> Trajectory:
    s = mdp.sample_initial(rng)
    traj = Trajectory(init_state=s, seed=seed)
    for h in range(mdp.horizon):
        a = policy.sample(h, s, rng)
        s2, r = step(mdp, h, s, a, rng)
        traj.steps.append((s, a, r, s2))
        s = s2
    return traj


def collect_demos(mdp: MdpSpec, policy: TabularPolicy, n: int, rng: np.random.Generator, label: str = "",
                  seed: int | None = None) -> DemoDataset:
    trajs = [rollout(mdp, policy, rng, i) for i in range(n)]
    return DemoDataset(trajs, label, seed, mdp.dims)


def bc_guide(dims: Sequence[int], demos: DemoDataset, fallback: str = "uniform") -> TabularPolicy:
    """Empirical action frequencies per (h, s); unvisited cells use ``fallback``."""
    H, S, A = dims
    if not demos.trajectories:
        raise ValueError("bc_guide needs at least one demonstration")
    if demos.dims is not None and tuple(demos.dims) != (H, S, A):
        raise MdpError(f"demo dims {tuple(demos.dims)} != {(H, S, A)}")
    counts = np.zeros((H, S, A))
    for traj in demos.trajectories:
        if len(traj.steps) != H:
            raise MdpError(f"demo has {len(traj.steps)} steps, expected {H}")
        for h, (s, a, _, s2) in enumerate(traj.steps):
            if not (0 <= s < S and 0 <= a < A and 0 <= s2 < S):
                raise MdpError("demo index outside the MDP dimensions")
            counts[h, s, a] += 1
    total = counts.sum(axis=-1, keepdims=True)
    if fallback == "uniform":
        fill = np.full(A, 1.0 / A)
    elif fallback == "lowest_action":
        fill = np.eye(A)[0]
    else:
        raise ValueError(f"unknown fallback {fallback!r}")
    probs = np.where(total > 0, counts / np.maximum(total, 1), fill)
    return TabularPolicy(probs)


# ----------------------------------------------------------------- learner


def q_update(qtable: QTable, transition: Sequence, config: QLearnerConfig) -> QTable:
    """One Q-learning backup on Q[h][s][a] in place, clipped to [-1, H+1]."""
    h, s, a, r, s2 = transition
    H = qtable.H
    if not (0 <= h < H and 0 <= s < qtable.S and 0 <= a < qtable.A and 0 <= s2 < qtable.S):
        raise MdpError(f"transition index out of range: {tuple(transition)}")
    row = qtable._q[h][s]
    n_row = qtable._n[h][s]
    alpha = config.learning_rate(n_row[a])
    target = r + (max(qtable._q[h + 1][s2]) if h + 1 < H else 0.0)
    new = row[a] + alpha * (target - row[a])
    row[a] = min(max(new, -1.0), H + 1.0)
    n_row[a] += 1
    return qtable


def epsilon_greedy_action(qtable: QTable, h: int, s: int, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform with probability epsilon, else greedy with lowest-index ties.

    If every value at (h, s) is equal the draw is uniform regardless of epsilon,
    so a zero-initialised table explores uniformly.
    """
    row = qtable._q[h][s]
    A = len(row)
    if rng.random() < epsilon:
        return min(int(rng.random() * A), A - 1)
    best = max(row)
    if min(row) == best:
        return min(int(rng.random() * A), A - 1)
    return row.index(best)


def greedy_action(qtable: QTable, h: int, s: int) -> int:
    row = qtable._q[h][s]
    return row.index(max(row))


class ReplayBuffer:
    """FIFO transition buffer with O(1) random access."""

    def __init__(self, capacity: int = DEFAULT_BUFFER_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._data: list = []
        self._next = 0

    def __len__(self):
        return len(self._data)

    def __getitem__(self, i):
        return self._data[i]

    def append(self, item) -> None:
        if len(self._data) < self.capacity:
            self._data.append(item)
        else:
            self._data[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def extend(self, items: Iterable) -> None:
        for it in items:
            self.append(it)


def replay_mixed_batch(online_buffer, offline_demos, batch_size: int, online_fraction: float,
                       rng: np.random.Generator) -> list:
    """Sample ``round(online_fraction * batch_size)`` online transitions, the rest offline.

    Both sources are sampled uniformly with replacement. ``offline_demos`` may be a
    DemoDataset or a sequence of (h, s, a, r, s') transitions.
    """
    if not 0.0 <= online_fraction <= 1.0:
        raise ValueError("online_fraction must lie in [0, 1]")
    offline = offline_demos.transitions() if isinstance(offline_demos, DemoDataset) else offline_demos
    offline = offline if offline is not None else []
    n_online = int(math.floor(online_fraction * batch_size + 0.5))
    n_offline = batch_size - n_online
    if n_online and len(online_buffer) == 0:
        raise ValueError("online buffer is empty")
    if n_offline and len(offline) == 0:
        raise ValueError("offline source is empty")
    batch = [online_buffer[int(i)] for i in rng.integers(0, len(online_buffer), size=n_online)] if n_online else []
    if n_offline:
        batch += [offline[int(i)] for i in rng.integers(0, len(offline), size=n_offline)]
    return batch
