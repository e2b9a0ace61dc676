"""Tabular guide-policy roll-in ("jump-start") learning for finite-horizon MDPs."""
from .mdp import MdpSpec, Trajectory, build_combination_lock, build_gridworld, occupancy, policy_value, value_iteration
from .policies import QLearnerConfig, QTable, TabularPolicy, corrupted_guide, scripted_optimal_guide
from .jsrl import CurriculumState, RandomSwitch, RunRecord, train_jsrl
from .cb import MixturePolicy, train_jsrl_cb
from .analysis import concentratability, pdl_check, suboptimality

__version__ = "0.1.0"
