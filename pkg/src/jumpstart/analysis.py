"""Exact diagnostics: coverage coefficient, suboptimality, performance-difference
identity, and the episodes-to-success sweep."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .mdp import MdpSpec, build_combination_lock, build_gridworld, occupancy, policy_q_values, policy_value, value_iteration
from .policies import QLearnerConfig, QTable, TabularPolicy, corrupted_guide, scripted_optimal_guide
from .seeding import derive_seed, substream

SWEEP_COLUMNS = ["family", "size", "method", "seed", "episodes_to_success", "censored", "final_subopt", "C_measured"]
SWEEP_METHODS = ("jsrl_curriculum", "jsrl_random", "scratch")
SWEEP_FAMILIES = ("lock", "gridworld")


@dataclass(frozen=True)
class StateFeatureMap:
    """Partition of states into feature classes; ``phi[s]`` is the class of s."""

    phi: tuple
    num_classes: int

    def __post_init__(self):
        phi = tuple(int(c) for c in self.phi)
        if any(c < 0 or c >= self.num_classes for c in phi):
            raise ValueError("feature class index out of range")
        if set(phi) != set(range(self.num_classes)):
            raise ValueError("feature map must be onto its classes")
        object.__setattr__(self, "phi", phi)

    @classmethod
    def identity(cls, S: int) -> "StateFeatureMap":
        return cls(tuple(range(S)), S)

    def aggregate(self, d: np.ndarray) -> np.ndarray:
        """Sum a (H, S) occupancy into (H, num_classes)."""
        out = np.zeros((d.shape[0], self.num_classes))
        np.add.at(out.T, np.asarray(self.phi), d.T)
        return out


def as_tabular(policy) -> TabularPolicy:
    """Accept a TabularPolicy, a QTable (greedy), a mixture, or a raw array."""
    if isinstance(policy, TabularPolicy):
        return policy
    if isinstance(policy, QTable):
        return policy.greedy_policy()
    if hasattr(policy, "to_tabular"):
        return policy.to_tabular()
    return TabularPolicy(np.asarray(policy, dtype=float))


def concentratability_per_step(mdp: MdpSpec, guide, optimal_policy, phi: StateFeatureMap | None = None) -> np.ndarray:
    """sup over feature classes of d*_h / d^g_h for each step (inf when uncovered).

    Classes the optimal policy never visits are skipped; a step with no visited
    class reports 0.
    """
    phi = phi or StateFeatureMap.identity(mdp.num_states)
    d_star = phi.aggregate(occupancy(mdp, as_tabular(optimal_policy)).d)
    d_guide = phi.aggregate(occupancy(mdp, as_tabular(guide)).d)
    ratios = np.zeros(mdp.horizon)
    for h in range(mdp.horizon):
        visited = d_star[h] > 0
        if not visited.any():
            continue
        if (d_guide[h][visited] == 0).any():
            ratios[h] = math.inf
        else:
            ratios[h] = float(np.max(d_star[h][visited] / d_guide[h][visited]))
    return ratios


def concentratability(mdp: MdpSpec, guide, optimal_policy, phi: StateFeatureMap | None = None) -> float:
    return float(concentratability_per_step(mdp, guide, optimal_policy, phi).max())


def suboptimality(mdp: MdpSpec, policy) -> float:
    v_star = value_iteration(mdp).v_star
    return float(mdp.p0 @ v_star[0]) - policy_value(mdp, as_tabular(policy))[1]


def pdl_check(mdp: MdpSpec, policy) -> tuple[float, float, float]:
    """Both sides of the performance-difference decomposition and their gap.

    lhs = E_{p0}[V*_0 - V^pi_0];
    rhs = sum_h E_{s ~ d*_h}[Q^pi_h(s, pi*_h(s)) - V^pi_h(s)].
    """
    pol = as_tabular(policy)
    sol = value_iteration(mdp)
    v_pi, q_pi = policy_q_values(mdp, pol)
    lhs = float(mdp.p0 @ (sol.v_star[0] - v_pi[0]))
    d_star = occupancy(mdp, sol.pi_star).d
    a_star = sol.greedy_actions
    S = mdp.num_states
    rhs = 0.0
    for h in range(mdp.horizon):
        adv = q_pi[h, np.arange(S), a_star[h]] - v_pi[h]
        rhs += float(d_star[h] @ adv)
    return lhs, rhs, abs(lhs - rhs)


# --------------------------------------------------------------------- sweep


@dataclass
class SweepSpec:
    sizes: list
    methods: list
    seeds: list
    family: str = "lock"
    success_threshold: float = 0.05
    episode_cap: int = 10_000
    cap_mode: str = "fixed"  # "fixed" | "exponential" (cap * 2**size)
    eval_every: int = 1
    beta: float = 0.9
    moving_average_window: int = 3
    stage_budget_per_h: int = 50
    guide_noise: float = 0.0
    slip_prob: float = 0.0
    learner: QLearnerConfig = field(default_factory=QLearnerConfig)

    def __post_init__(self):
        if isinstance(self.learner, dict):
            self.learner = QLearnerConfig(**self.learner)
        if not self.sizes or not self.methods or not self.seeds:
            raise ValueError("sweep axes (sizes, methods, seeds) must be nonempty")
        unknown = set(self.methods) - set(SWEEP_METHODS)
        if unknown:
            raise ValueError(f"unknown sweep methods {sorted(unknown)}")
        if self.family not in SWEEP_FAMILIES:
            raise ValueError(f"unknown environment family {self.family!r}")
        if self.episode_cap < 1 or self.eval_every < 1:
            raise ValueError("episode_cap and eval_every must be >= 1")
        if self.cap_mode not in ("fixed", "exponential"):
            raise ValueError(f"unknown cap_mode {self.cap_mode!r}")

    def cap_for(self, size: int) -> int:
        return self.episode_cap * 2**size if self.cap_mode == "exponential" else self.episode_cap

    def to_dict(self) -> dict:
        return asdict(self)


def build_family(family: str, size: int, seed: int, slip_prob: float = 0.0) -> MdpSpec:
    """``lock``: horizon ``size``; ``gridworld``: empty size x size grid, corner to corner."""
    if family == "lock":
        return build_combination_lock(size, seed=derive_seed(seed, "env"))
    if family == "gridworld":
        return build_gridworld(size, size, (), (0, 0), (size - 1, size - 1), 3 * (size - 1) or 1, slip_prob)
    raise ValueError(f"unknown environment family {family!r}")


def run_cell(spec: SweepSpec, size: int, method: str, seed: int) -> dict:
    from .jsrl import CurriculumState, RandomSwitch, train_jsrl

    mdp = build_family(spec.family, size, seed, spec.slip_prob)
    H = mdp.horizon
    base = scripted_optimal_guide(mdp)
    guide = corrupted_guide(mdp, base, spec.guide_noise) if spec.guide_noise > 0 else base
    if method == "jsrl_curriculum":
        strategy = CurriculumState.unit_decrements(
            H, beta=spec.beta, stage_episode_budget=spec.stage_budget_per_h * H,
            moving_average_window=spec.moving_average_window)
    elif method == "jsrl_random":
        strategy = RandomSwitch(list(range(H + 1)))
    else:
        strategy = RandomSwitch([0])
    cap = spec.cap_for(size)
    q, rec = train_jsrl(mdp, guide, strategy, spec.learner, cap, spec.eval_every, substream(seed, "training"),
                        success_threshold=spec.success_threshold, stop_on_success=True, stop_when_complete=False)
    censored = rec.episodes_to_success is None
    c = "" if method == "scratch" else concentratability(mdp, guide, value_iteration(mdp).pi_star)
    return {
        "family": spec.family,
        "size": size,
        "method": method,
        "seed": seed,
        "episodes_to_success": cap if censored else rec.episodes_to_success,
        "censored": censored,
        "final_subopt": suboptimality(mdp, q),
        "C_measured": c,
    }


def _cell_args(spec: SweepSpec):
    return [(spec, size, m, seed) for size in spec.sizes for m in spec.methods for seed in spec.seeds]


def _run_cell_star(args):
    return run_cell(*args)


def sample_complexity_sweep(spec: SweepSpec, jobs: int = 1) -> list[dict]:
    """Episodes-to-success for every (size, method, seed), sorted by that key."""
    cells = _cell_args(spec)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_star, cells))
    else:
        rows = [run_cell(*c) for c in cells]
    order = {m: i for i, m in enumerate(spec.methods)}
    rows.sort(key=lambda r: (r["size"], order[r["method"]], r["seed"]))
    return rows


def sweep_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        out = []
        for c in SWEEP_COLUMNS:
            v = r[c]
            if isinstance(v, bool):
                v = int(v)
            elif isinstance(v, float):
                v = repr(v)
            out.append(v)
        w.writerow(out)
    return buf.getvalue()


def median_by_size(rows: list[dict], method: str) -> dict:
    sizes = sorted({r["size"] for r in rows if r["method"] == method})
    return {n: float(np.median([r["episodes_to_success"] for r in rows if r["method"] == method and r["size"] == n]))
            for n in sizes}


def growth_fits(sizes, episodes) -> dict:
    """Least-squares fits of log(episodes) against log(size) and against size."""
    x = np.asarray(sizes, dtype=float)
    y = np.log(np.asarray(episodes, dtype=float))
    out = {}
    for name, xx in (("loglog", np.log(x)), ("semilog", x)):
        coef, res, *_ = np.polyfit(xx, y, 1, full=True)
        out[name] = {"slope": float(coef[0]), "rss": float(res[0]) if len(res) else 0.0}
    return out
