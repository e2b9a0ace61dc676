"""Guide/explorer roll-in training with curriculum or random switching."""
from __future__ import annotations

import csv
import io
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .mdp import MdpError, MdpSpec, Trajectory, policy_value, step, value_iteration
from .policies import (
    DemoDataset,
    QLearnerConfig,
    QTable,
    ReplayBuffer,
    TabularPolicy,
    epsilon_greedy_action,
    greedy_action,
    q_update,
    replay_mixed_batch,
)

log = logging.getLogger(__name__)

RUN_COLUMNS = ["episode", "h", "train_return", "eval_return", "stage", "forced_advance", "explorer_return"]


@dataclass
class CombinedPolicy:
    """Guide acts on steps [0, guide_steps); the explorer's epsilon-greedy on the rest."""

    guide: TabularPolicy
    explorer_q: QTable
    guide_steps: int
    explorer_epsilon: float = 0.1

    def __post_init__(self):
        H = self.guide.dims[0]
        if not 0 <= self.guide_steps <= H:
            raise ValueError(f"guide_steps must lie in [0, {H}], got {self.guide_steps}")
        if self.guide.dims != self.explorer_q.dims:
            raise MdpError("guide and explorer dimensions differ")

    def induced_policy(self) -> TabularPolicy:
        """Guide rows, then the explorer's greedy rows (evaluation policy)."""
        probs = np.array(self.guide.probs)
        h = self.guide_steps
        probs[h:] = self.explorer_q.greedy_policy().probs[h:]
        return TabularPolicy(probs)


@dataclass
class CurriculumState:
    guide_step_sequence: list
    beta: float = 0.9
    stage_episode_budget: int = 1000
    moving_average_window: int = 3
    stage_index: int = 0
    episodes_in_stage: int = 0
    eval_window: deque = field(default_factory=deque)
    forced_advances: int = 0
    completed: bool = False

    def __post_init__(self):
        seq = [int(x) for x in self.guide_step_sequence]
        if not seq:
            raise ValueError("guide-step sequence is empty")
        if any(b >= a for a, b in zip(seq, seq[1:])):
            raise ValueError(f"guide-step sequence must be strictly decreasing: {seq}")
        if seq[-1] < 0:
            raise ValueError("guide steps must be non-negative")
        if self.moving_average_window < 1 or self.stage_episode_budget < 1:
            raise ValueError("window and stage budget must be positive")
        self.guide_step_sequence = seq
        self.eval_window = deque(self.eval_window, maxlen=self.moving_average_window)

    @classmethod
    def unit_decrements(cls, H: int, **kw) -> "CurriculumState":
        return cls(list(range(H, -1, -1)), **kw)

    @property
    def current_h(self) -> int:
        return self.guide_step_sequence[self.stage_index]

    @property
    def at_final_stage(self) -> bool:
        return self.stage_index == len(self.guide_step_sequence) - 1


@dataclass
class RandomSwitch:
    step_set: list

    def __post_init__(self):
        self.step_set = [int(x) for x in self.step_set]
        if not self.step_set:
            raise ValueError("RandomSwitch needs a nonempty step set")
        if min(self.step_set) < 0:
            raise ValueError("guide steps must be non-negative")


SwitchStrategy = Union[CurriculumState, RandomSwitch]


@dataclass
class EpisodeLog:
    episode: int
    h: int
    train_return: float
    eval_return: float | None = None
    stage: int = 0
    forced_advance: bool = False
    explorer_return: float | None = None


@dataclass
class RunRecord:
    rows: list = field(default_factory=list)
    stage_transitions: list = field(default_factory=list)  # (episode, from_h, to_h, forced)
    episodes_to_success: int | None = None
    extra_columns: tuple = ()
    elapsed_seconds: float = field(default=0.0, compare=False)

    @property
    def forced_advances(self) -> int:
        return sum(1 for t in self.stage_transitions if t[3])

    @property
    def episodes_used(self) -> int:
        return len(self.rows)

    def eval_points(self) -> list[tuple[int, float]]:
        """(episode, explorer_return) at every evaluation."""
        return [(r.episode, r.explorer_return) for r in self.rows if r.explorer_return is not None]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = RUN_COLUMNS + list(self.extra_columns)
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c, None)) for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------- operations


def rollout_combined(mdp: MdpSpec, combined: CombinedPolicy, rng: np.random.Generator,
                     greedy: bool = False) -> Trajectory:
    """Guide for the first ``guide_steps`` steps, then the explorer.

    With ``greedy=True`` the explorer acts without exploration noise.
    """
    guide, q, hg, eps = combined.guide, combined.explorer_q, combined.guide_steps, combined.explorer_epsilon
    samplers, rewards = mdp._samplers, mdp._rewards
    s = mdp.sample_initial(rng)
    traj = Trajectory(init_state=s)
    steps = traj.steps
    for h in range(mdp.horizon):
        if h < hg:
            a = guide.sample(h, s, rng)
        elif greedy:
            a = greedy_action(q, h, s)
        else:
            a = epsilon_greedy_action(q, h, s, eps, rng)
        sampler = samplers[h][s][a]
        s2 = sampler if isinstance(sampler, int) else step(mdp, h, s, a, rng)[0]
        steps.append((s, a, rewards[h][s][a], s2))
        s = s2
    return traj


def evaluate_policy(mdp: MdpSpec, combined: CombinedPolicy, n_episodes: int = 1,
                    rng: np.random.Generator | None = None, mode: str = "monte_carlo") -> float:
    """Mean return of the combined policy with a noise-free explorer.

    ``monte_carlo`` runs episode i on its own stream seeded ``base + i``;
    ``exact`` evaluates the induced policy by dynamic programming.
    """
    if mode == "exact":
        return policy_value(mdp, combined.induced_policy())[1]
    if mode != "monte_carlo":
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if rng is None:
        raise ValueError("monte_carlo evaluation needs an rng")
    base = int(rng.integers(0, 2**62))
    total = 0.0
    for i in range(n_episodes):
        total += rollout_combined(mdp, combined, np.random.default_rng(base + i), greedy=True).total_return
    return total / n_episodes


def curriculum_advance(state: CurriculumState, new_eval: float) -> tuple[CurriculumState, bool]:
    """Record an evaluation and move to the next stage when the gate opens.

    The gate opens when the window is full and its mean reaches beta, or when the
    stage has used its episode budget (a forced advance). The final stage never
    advances; meeting beta there marks the curriculum completed.
    """
    state.eval_window.append(float(new_eval))
    full = len(state.eval_window) == state.moving_average_window
    passed = full and float(np.mean(state.eval_window)) >= state.beta
    if state.at_final_stage:
        if passed:
            state.completed = True
        return state, False
    forced = not passed and state.episodes_in_stage >= state.stage_episode_budget
    if passed or forced:
        state.stage_index += 1
        state.episodes_in_stage = 0
        state.eval_window.clear()
        if forced:
            state.forced_advances += 1
        return state, True
    return state, False


def select_guide_step(strategy: SwitchStrategy, rng: np.random.Generator) -> int:
    if isinstance(strategy, CurriculumState):
        return strategy.current_h
    steps = strategy.step_set
    if len(steps) == 1:
        return steps[0]
    return steps[int(rng.integers(0, len(steps)))]


@dataclass
class ReplayConfig:
    batch_size: int = 32
    online_fraction: float = 0.75
    capacity: int = 100_000
    batches_per_episode: int = 1
    seed_buffer_with_demos: bool = False


def train_jsrl(
    mdp: MdpSpec,
    guide: TabularPolicy,
    strategy: SwitchStrategy,
    learner_config: QLearnerConfig,
    budget: int,
    eval_every: int,
    rng: np.random.Generator,
    *,
    init_mode: str = "cold_zero",
    eval_mode: str = "exact",
    eval_episodes: int = 100,
    eval_rng: np.random.Generator | None = None,
    demos: DemoDataset | None = None,
    replay: ReplayConfig | None = None,
    keep_dataset: bool = False,
    success_threshold: float | None = None,
    stop_on_success: bool = False,
    stop_when_complete: bool = True,
    dataset: list | None = None,
) -> tuple[QTable, RunRecord]:
    """Run roll-in training for up to ``budget`` episodes.

    Each episode picks a guide step, rolls out the combined policy, and trains
    the explorer on the new trajectory. Every ``eval_every`` episodes the
    combined policy is evaluated (gating the curriculum) and the explorer alone
    is scored exactly. With ``success_threshold`` the first evaluation whose
    explorer suboptimality is within the threshold is recorded, and training
    stops there when ``stop_on_success`` is set.
    """
    if budget < 0 or eval_every < 1:
        raise ValueError("budget must be >= 0 and eval_every >= 1")
    H, S, A = mdp.dims
    if guide.dims != mdp.dims:
        raise MdpError(f"guide dims {guide.dims} != MDP dims {mdp.dims}")
    if isinstance(strategy, CurriculumState):
        if strategy.guide_step_sequence[0] > H:
            raise ValueError("guide steps cannot exceed the horizon")
    elif max(strategy.step_set) > H:
        raise ValueError("guide steps cannot exceed the horizon")

    q = QTable.warm_from_guide(guide) if init_mode == "warm_from_guide" else QTable.cold(H, S, A)
    record = RunRecord()
    if eval_rng is None and eval_mode == "monte_carlo":
        eval_rng = rng.spawn(1)[0]
    v_star = float(mdp.p0 @ value_iteration(mdp).v_star[0]) if success_threshold is not None else None

    buffer = None
    if replay is not None:
        buffer = ReplayBuffer(replay.capacity)
        if demos is not None and replay.seed_buffer_with_demos:
            buffer.extend(demos.transitions())
    offline = demos.transitions() if demos is not None else []
    if dataset is None and keep_dataset:
        dataset = []

    t0 = time.perf_counter()
    last_h = None
    for ep in range(budget):
        h = select_guide_step(strategy, rng)
        eps = learner_config.epsilon_at(ep)
        traj = rollout_combined(mdp, CombinedPolicy(guide, q, h, eps), rng)
        transitions = [(t, s, a, r, s2) for t, (s, a, r, s2) in enumerate(traj.steps)]
        if dataset is not None:
            dataset.extend(transitions)
        if buffer is None:
            for tr in transitions:
                q_update(q, tr, learner_config)
        else:
            buffer.extend(transitions)
            frac = replay.online_fraction if offline else 1.0
            for _ in range(replay.batches_per_episode):
                for tr in replay_mixed_batch(buffer, offline, replay.batch_size, frac, rng):
                    q_update(q, tr, learner_config)

        row = EpisodeLog(ep, h, traj.total_return, stage=_stage(strategy))
        record.rows.append(row)
        if isinstance(strategy, CurriculumState):
            strategy.episodes_in_stage += 1
        last_h = h

        if (ep + 1) % eval_every:
            continue
        combined = CombinedPolicy(guide, q, h, 0.0)
        row.eval_return = evaluate_policy(mdp, combined, eval_episodes, eval_rng, eval_mode)
        row.explorer_return = policy_value(mdp, q.greedy_policy())[1]
        if v_star is not None and record.episodes_to_success is None \
                and v_star - row.explorer_return <= success_threshold:
            record.episodes_to_success = ep + 1
            if stop_on_success:
                break
        if isinstance(strategy, CurriculumState):
            before = strategy.forced_advances
            _, advanced = curriculum_advance(strategy, row.eval_return)
            if advanced:
                forced = strategy.forced_advances > before
                row.forced_advance = forced
                record.stage_transitions.append((ep, last_h, strategy.current_h, forced))
                if forced:
                    log.info("forced curriculum advance at episode %d (h=%d)", ep, last_h)
            if strategy.completed and stop_when_complete:
                break
    record.elapsed_seconds = time.perf_counter() - t0
    return q, record


def _stage(strategy: SwitchStrategy) -> int:
    return strategy.stage_index if isinstance(strategy, CurriculumState) else 0


def learning_curve_auc(record: RunRecord, horizon_episodes: int) -> float:
    """Area under the explorer's evaluation curve over the first episodes, as a step function.

    The curve holds 0 before the first evaluation and each value until the next one.
    Normalised by ``horizon_episodes`` so a perfect curve scores its return.
    """
    area, prev_ep, prev_val = 0.0, 0, 0.0
    for ep, val in record.eval_points():
        end = min(ep + 1, horizon_episodes)
        if end > prev_ep:
            area += prev_val * (end - prev_ep)
            prev_ep = end
        prev_val = val
        if prev_ep >= horizon_episodes:
            break
    if prev_ep < horizon_episodes:
        area += prev_val * (horizon_episodes - prev_ep)
    return area / horizon_episodes
