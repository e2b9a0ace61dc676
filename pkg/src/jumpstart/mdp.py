"""Finite-horizon tabular MDPs: representation, simulation and exact DP.

Steps are 0-based in code: step ``h`` ranges over ``0..H-1`` and value arrays
carry one extra terminal row ``V[H] = 0``.
"""
from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

PROB_TOL = 1e-12
DP_TOL = 1e-9
TIE_TOL = 1e-12

# gridworld moves: up, right, down, left as (drow, dcol)
GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


class MdpError(ValueError):
    """Raised for malformed MDPs or out-of-range indices."""


def _readonly(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=float)
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Time-inhomogeneous finite-horizon MDP.

    ``transition`` has shape (H, S, A, S), ``reward`` (H, S, A), ``p0`` (S,).
    Arrays are frozen read-only after validation.
    """

    num_states: int
    num_actions: int
    horizon: int
    transition: np.ndarray
    reward: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        S, A, H = self.num_states, self.num_actions, self.horizon
        for name, v in (("num_states", S), ("num_actions", A), ("horizon", H)):
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise MdpError(f"{name} must be a positive integer, got {v!r}")
        P = _readonly(self.transition)
        r = _readonly(self.reward)
        p0 = _readonly(self.p0)
        if P.shape != (H, S, A, S):
            raise MdpError(f"transition shape {P.shape} != {(H, S, A, S)}")
        if r.shape != (H, S, A):
            raise MdpError(f"reward shape {r.shape} != {(H, S, A)}")
        if p0.shape != (S,):
            raise MdpError(f"p0 shape {p0.shape} != {(S,)}")
        if not np.all(np.isfinite(P)) or (P < 0).any():
            raise MdpError("transition has negative or non-finite entries")
        if np.abs(P.sum(axis=-1) - 1.0).max() > PROB_TOL:
            raise MdpError("transition rows must sum to 1")
        if not np.all(np.isfinite(r)) or (r < 0).any() or (r > 1).any():
            raise MdpError("rewards must lie in [0, 1]")
        if (p0 < 0).any() or abs(p0.sum() - 1.0) > PROB_TOL:
            raise MdpError("p0 must be a probability vector")
        object.__setattr__(self, "num_states", int(S))
        object.__setattr__(self, "num_actions", int(A))
        object.__setattr__(self, "horizon", int(H))
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "p0", p0)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(H, S, A)."""
        return self.horizon, self.num_states, self.num_actions

    # sampling tables as python lists; much faster than numpy for scalar access
    @cached_property
    def _samplers(self):
        H, S, A = self.dims
        table = []
        for h in range(H):
            row_h = []
            for s in range(S):
                row_s = []
                for a in range(A):
                    row_s.append(_make_sampler(self.transition[h, s, a]))
                row_h.append(row_s)
            table.append(row_h)
        return table

    @cached_property
    def _rewards(self) -> list:
        return self.reward.tolist()

    @cached_property
    def _init_sampler(self):
        return _make_sampler(self.p0)

    def sample_initial(self, rng: np.random.Generator) -> int:
        return _draw(self._init_sampler, rng)

    def to_dict(self) -> dict:
        return {
            "S": self.num_states,
            "A": self.num_actions,
            "H": self.horizon,
            "p0": self.p0.tolist(),
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdpSpec":
        try:
            return cls(
                num_states=d["S"],
                num_actions=d["A"],
                horizon=d["H"],
                transition=np.asarray(d["transition"], dtype=float),
                reward=np.asarray(d["reward"], dtype=float),
                p0=np.asarray(d["p0"], dtype=float),
            )
        except KeyError as exc:
            raise MdpError(f"missing MDP field {exc}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, MdpError):
                raise
            raise MdpError(f"bad MDP field: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MdpSpec":
        return cls.from_dict(json.loads(text))


def _make_sampler(probs: np.ndarray):
    """Deterministic rows collapse to an int; stochastic rows become (cdf, support)."""
    support = np.flatnonzero(probs > 0)
    if len(support) == 1:
        return int(support[0])
    cdf = np.cumsum(probs[support])
    cdf /= cdf[-1]
    return (cdf[:-1].tolist(), support.tolist())


def _draw(sampler, rng: np.random.Generator) -> int:
    if isinstance(sampler, int):
        return sampler
    cdf, support = sampler
    return support[bisect_right(cdf, rng.random())]


@dataclass
class Trajectory:
    """One H-step episode: ``steps`` holds (state, action, reward, next_state)."""

    init_state: int
    steps: list = field(default_factory=list)
    seed: int | None = None

    @property
    def total_return(self) -> float:
        return float(sum(st[2] for st in self.steps))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "init": self.init_state,
            "steps": [[int(s), int(a), float(r), int(s2)] for s, a, r, s2 in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        steps = [(int(s), int(a), float(r), int(s2)) for s, a, r, s2 in d["steps"]]
        return cls(init_state=int(d["init"]), steps=steps, seed=d.get("seed"))

    def validate(self, mdp: MdpSpec) -> None:
        H, S, A = mdp.dims
        if len(self.steps) != H:
            raise MdpError(f"trajectory has {len(self.steps)} steps, expected {H}")
        if not 0 <= self.init_state < S:
            raise MdpError("initial state out of range")
        for s, a, r, s2 in self.steps:
            if not (0 <= s < S and 0 <= s2 < S and 0 <= a < A):
                raise MdpError(f"trajectory index out of range: {(s, a, s2)}")
            if not 0.0 <= r <= 1.0:
                raise MdpError(f"trajectory reward {r} outside [0, 1]")


@dataclass(frozen=True, eq=False)
class OccupancyTable:
    """d[h, s]: probability of being in state s at step h."""

    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", _readonly(self.d))


@dataclass(frozen=True, eq=False)
class ValueSolution:
    v_star: np.ndarray  # (H+1, S)
    q_star: np.ndarray  # (H, S, A)
    pi_star: "object"  # TabularPolicy; typed loosely to avoid an import cycle

    @property
    def greedy_actions(self) -> np.ndarray:
        return self.pi_star.probs.argmax(axis=-1)


def step(mdp: MdpSpec, h: int, s: int, a: int, rng: np.random.Generator) -> tuple[int, float]:
    H, S, A = mdp.dims
    if not (0 <= h < H and 0 <= s < S and 0 <= a < A):
        raise MdpError(f"index out of range: h={h}, s={s}, a={a}")
    return _draw(mdp._samplers[h][s][a], rng), mdp._rewards[h][s][a]


def lowest_index_argmax(q: np.ndarray, tol: float = TIE_TOL) -> np.ndarray:
    """argmax along the last axis, resolving near-ties toward the lowest index."""
    best = q.max(axis=-1, keepdims=True)
    return np.argmax(q >= best - tol, axis=-1)


def _policy_probs(policy) -> np.ndarray:
    return policy.probs if hasattr(policy, "probs") else np.asarray(policy, dtype=float)


def value_iteration(mdp: MdpSpec) -> ValueSolution:
    """Backward induction for Q*, V* and the lowest-index greedy pi*."""
    from .policies import TabularPolicy

    H, S, A = mdp.dims
    v = np.zeros((H + 1, S))
    q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        q[h] = mdp.reward[h] + mdp.transition[h] @ v[h + 1]
        v[h] = q[h].max(axis=-1)
    greedy = lowest_index_argmax(q)
    pi = TabularPolicy.deterministic(greedy, A)
    return ValueSolution(v_star=_readonly(v), q_star=_readonly(q), pi_star=pi)


def policy_q_values(mdp: MdpSpec, policy) -> tuple[np.ndarray, np.ndarray]:
    """Exact (V^pi, Q^pi) by backward evaluation; V has shape (H+1, S)."""
    probs = _policy_probs(policy)
    H, S, A = mdp.dims
    if probs.shape != (H, S, A):
        raise MdpError(f"policy shape {probs.shape} != {(H, S, A)}")
    v = np.zeros((H + 1, S))
    q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        q[h] = mdp.reward[h] + mdp.transition[h] @ v[h + 1]
        v[h] = (probs[h] * q[h]).sum(axis=-1)
    return v, q


def policy_value(mdp: MdpSpec, policy) -> tuple[np.ndarray, float]:
    v, _ = policy_q_values(mdp, policy)
    return v, float(mdp.p0 @ v[0])


def occupancy(mdp: MdpSpec, policy) -> OccupancyTable:
    probs = _policy_probs(policy)
    H, S, A = mdp.dims
    if probs.shape != (H, S, A):
        raise MdpError(f"policy shape {probs.shape} != {(H, S, A)}")
    d = np.zeros((H, S))
    d[0] = mdp.p0
    for h in range(H - 1):
        # d[h+1, s'] = sum_{s,a} d[h, s] pi_h(a|s) P_h(s'|s,a)
        d[h + 1] = np.einsum("s,sa,sat->t", d[h], probs[h], mdp.transition[h])
    return OccupancyTable(d)


# ---------------------------------------------------------------- environments


def lock_red_state(h: int) -> int:
    """Index of the on-chain state at (0-based) step h."""
    return h


def lock_blue_state(H: int, h: int) -> int:
    return H + h


def build_combination_lock(H: int, seed: int = 0) -> MdpSpec:
    """Combination lock with S = 2H: one on-chain and one absorbing off-chain state per step.

    The correct action at each step is drawn from ``seed``. Leaving the chain is
    permanent; reward 1 only for the correct action at the last on-chain state.
    """
    if not isinstance(H, (int, np.integer)) or H < 1:
        raise MdpError(f"combination lock needs H >= 1, got {H!r}")
    combo = np.random.default_rng(seed).integers(0, 2, size=H)
    S, A = 2 * H, 2
    P = np.zeros((H, S, A, S))
    r = np.zeros((H, S, A))
    for h in range(H):
        red, blue = lock_red_state(h), lock_blue_state(H, h)
        if h < H - 1:
            nxt_red, nxt_blue = lock_red_state(h + 1), lock_blue_state(H, h + 1)
            for a in range(A):
                P[h, red, a, nxt_red if a == combo[h] else nxt_blue] = 1.0
            P[h, blue, :, nxt_blue] = 1.0
            # states belonging to other layers are unreachable at step h; keep them put
            for s in range(S):
                if s not in (red, blue):
                    P[h, s, :, s] = 1.0
        else:
            P[h, np.arange(S), :, np.arange(S)] = 1.0
            r[h, red, combo[h]] = 1.0
    p0 = np.zeros(S)
    p0[lock_red_state(0)] = 1.0
    return MdpSpec(S, A, H, P, r, p0)


def lock_combination(mdp: MdpSpec) -> np.ndarray:
    """Recover the correct action at each on-chain state of a combination lock."""
    H = mdp.horizon
    combo = np.zeros(H, dtype=int)
    for h in range(H - 1):
        combo[h] = int(np.argmax(mdp.transition[h, lock_red_state(h), :, lock_red_state(h + 1)]))
    combo[H - 1] = int(np.argmax(mdp.reward[H - 1, lock_red_state(H - 1)]))
    return combo


def gridworld_cells(width: int, height: int, walls: Iterable[Sequence[int]] = ()) -> list[tuple[int, int]]:
    """Non-wall cells as (row, col), row-major; list position is the state index."""
    blocked = {tuple(w) for w in walls}
    return [(i, j) for i in range(height) for j in range(width) if (i, j) not in blocked]


def build_gridworld(
    width: int,
    height: int,
    walls: Iterable[Sequence[int]],
    start: Sequence[int],
    goal: Sequence[int],
    H: int,
    slip_prob: float = 0.0,
) -> MdpSpec:
    """Four-action gridworld with slipping; the goal is absorbing.

    Rewards must be a deterministic function of (s, a), so the reward of a move is
    the probability that it enters the goal (exactly 1 or 0 when ``slip_prob == 0``).
    """
    if width < 1 or height < 1:
        raise MdpError("grid dimensions must be positive")
    if H < 1:
        raise MdpError("gridworld needs H >= 1")
    if not 0.0 <= slip_prob < 1.0:
        raise MdpError("slip_prob must lie in [0, 1)")
    cells = gridworld_cells(width, height, walls)
    index = {c: i for i, c in enumerate(cells)}
    start, goal = tuple(start), tuple(goal)
    for name, c in (("start", start), ("goal", goal)):
        if c not in index:
            raise MdpError(f"{name} {c} is outside the grid or on a wall")
    S, A = len(cells), len(GRID_MOVES)
    g = index[goal]
    move = np.zeros((S, A, S))
    for i, (row, col) in enumerate(cells):
        for a, (dr, dc) in enumerate(GRID_MOVES):
            j = index.get((row + dr, col + dc), i)
            move[i, a, j] = 1.0
    # slip: the intended action is replaced by a uniformly random one
    P1 = (1.0 - slip_prob) * move + slip_prob * move.mean(axis=1, keepdims=True)
    P1[g] = 0.0
    P1[g, :, g] = 1.0
    r1 = P1[:, :, g].copy()
    r1[g] = 0.0
    P = np.broadcast_to(P1, (H, S, A, S))
    r = np.broadcast_to(r1, (H, S, A))
    p0 = np.zeros(S)
    p0[index[start]] = 1.0
    return MdpSpec(S, A, H, P, r, p0)


def random_mdp(rng: np.random.Generator, S: int, A: int, H: int, sparsity: float = 0.0) -> MdpSpec:
    """Dirichlet transitions and uniform rewards; used for property checks."""
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        mask[..., 0] = False
        P = np.where(mask, 0.0, P)
        P /= P.sum(axis=-1, keepdims=True)
    r = rng.random((H, S, A))
    p0 = rng.dirichlet(np.ones(S))
    return MdpSpec(S, A, H, P, r, p0)
