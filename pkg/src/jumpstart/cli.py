"""Command-line entry point: ``jumpstart {gen-env,train,sweep,analyze}``.

Every failure prints one line ``error: <reason>: <detail>`` to stderr and exits
with the code for that reason (see ``EXIT_CODES``).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys

import numpy as np

from . import config as cfg
from .analysis import (
    SweepSpec,
    as_tabular,
    concentratability,
    concentratability_per_step,
    pdl_check,
    sample_complexity_sweep,
    suboptimality,
    sweep_to_csv,
)
from .cb import MixturePolicy, train_jsrl_cb
from .jsrl import CurriculumState, RandomSwitch, ReplayConfig, train_jsrl
from .mdp import MdpError, MdpSpec, Trajectory, build_combination_lock, build_gridworld, policy_value, value_iteration
from .policies import (
    DemoDataset,
    QLearnerConfig,
    QTable,
    TabularPolicy,
    bc_guide,
    collect_demos,
    corrupted_guide,
    scripted_optimal_guide,
)
from .seeding import derive_seed, substream

log = logging.getLogger("jumpstart")

EXIT_CODES = {
    "usage": 2,
    "parse": 3,
    "dimension-mismatch": 4,
    "config-invalid": 5,
    "io": 6,
    "invalid-parameter": 7,
}


class CliError(Exception):
    def __init__(self, reason: str, detail: str):
        super().__init__(detail)
        self.reason = reason
        self.detail = " ".join(str(detail).split())


def _read(path: str) -> str:
    try:
        with open(path) as f:
            return f.read()
    except OSError as exc:
        raise CliError("io", f"{path}: {exc.strerror or exc}") from None


def _write(path: str, text: str) -> None:
    try:
        with open(path, "w", newline="") as f:
            f.write(text)
    except OSError as exc:
        raise CliError("io", f"{path}: {exc.strerror or exc}") from None


def _load_json(path: str):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise CliError("parse", f"{path}: {exc}") from None


def load_mdp(path: str) -> MdpSpec:
    doc = _load_json(path)
    try:
        return MdpSpec.from_dict(doc)
    except MdpError as exc:
        raise CliError("parse", f"{path}: {exc}") from None


def load_policy(path: str):
    """TabularPolicy, QTable or MixturePolicy, chosen by the document's keys."""
    doc = _load_json(path)
    try:
        if "probs" in doc:
            return TabularPolicy.from_dict(doc)
        if "q" in doc:
            return QTable.from_dict(doc)
        if "components" in doc:
            return MixturePolicy.from_dict(doc)
    except (MdpError, KeyError, TypeError, ValueError) as exc:
        raise CliError("parse", f"{path}: {exc}") from None
    raise CliError("parse", f"{path}: not a policy document")


def load_demos(path: str) -> DemoDataset:
    try:
        return DemoDataset.from_jsonl(_read(path))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError("parse", f"{path}: {exc}") from None


def _parse_cell(text: str) -> tuple[int, int]:
    try:
        r, c = (int(x) for x in text.split(","))
    except ValueError:
        raise CliError("invalid-parameter", f"cell must look like ROW,COL: {text!r}") from None
    return r, c


# ------------------------------------------------------------------- gen-env


def _guide_from_label(mdp: MdpSpec, label: str) -> TabularPolicy:
    if label == "optimal":
        return scripted_optimal_guide(mdp)
    if label == "uniform":
        return TabularPolicy.uniform(*mdp.dims)
    if label.startswith("corrupted:"):
        try:
            noise = float(label.split(":", 1)[1])
        except ValueError:
            raise CliError("invalid-parameter", f"bad demo policy {label!r}") from None
        try:
            return corrupted_guide(mdp, scripted_optimal_guide(mdp), noise)
        except ValueError as exc:
            raise CliError("invalid-parameter", str(exc)) from None
    raise CliError("invalid-parameter", f"unknown demo policy {label!r}")


def cmd_gen_env(args) -> int:
    try:
        if args.family == "lock":
            if args.horizon is None:
                raise CliError("invalid-parameter", "--horizon is required for lock")
            mdp = build_combination_lock(args.horizon, seed=derive_seed(args.seed, "env"))
        else:
            missing = [n for n in ("width", "height", "start", "goal", "horizon") if getattr(args, n) is None]
            if missing:
                raise CliError("invalid-parameter", f"gridworld needs --{', --'.join(missing)}")
            walls = [_parse_cell(w) for w in args.walls.split(";") if w] if args.walls else []
            mdp = build_gridworld(args.width, args.height, walls, _parse_cell(args.start), _parse_cell(args.goal),
                                  args.horizon, args.slip_prob)
    except MdpError as exc:
        raise CliError("invalid-parameter", str(exc)) from None
    outputs = [args.out] + ([args.demo_out] if args.demos else [])
    _check_paths(outputs)
    _write(args.out, mdp.to_json())
    if args.demos:
        if args.demo_out is None:
            raise CliError("invalid-parameter", "--demos needs --demo-out")
        policy = _guide_from_label(mdp, args.demo_policy)
        demos = collect_demos(mdp, policy, args.demos, substream(args.seed, "demos"), args.demo_policy, args.seed)
        _write(args.demo_out, demos.to_jsonl())
    return 0


# --------------------------------------------------------------------- train


def _check_paths(paths) -> None:
    try:
        cfg.check_writable(paths)
    except OSError as exc:
        raise CliError("io", str(exc)) from None


def build_environment(env: dict, seed: int) -> MdpSpec:
    fam = env["family"]
    try:
        if fam == "lock":
            # same derivation as gen-env, so environment.seed == gen-env --seed gives the same lock
            return build_combination_lock(env["H"], seed=derive_seed(env.get("seed", seed), "env"))
        if fam == "gridworld":
            return build_gridworld(env["width"], env["height"], env.get("walls", []), env["start"], env["goal"],
                                   env["H"], env.get("slip_prob", 0.0))
    except MdpError as exc:
        raise CliError("config-invalid", f"environment: {exc}") from None
    return load_mdp(env["path"])


def build_guide(guide: dict, mdp: MdpSpec, seed: int) -> TabularPolicy:
    kind = guide["kind"]
    if kind == "scripted":
        return scripted_optimal_guide(mdp)
    if kind == "uniform":
        return TabularPolicy.uniform(*mdp.dims)
    if kind == "corrupted":
        return corrupted_guide(mdp, scripted_optimal_guide(mdp), guide["noise"], substream(seed, "guide"))
    demos = load_demos(guide["demo_path"])
    try:
        return bc_guide(mdp.dims, demos, guide.get("fallback", "uniform"))
    except MdpError as exc:
        raise CliError("dimension-mismatch", str(exc)) from None


def run_training(conf: dict, digest: str) -> tuple[str, str, str, list]:
    """Run one resolved config; returns (curve_csv, policy_json, summary_json, trajectories)."""
    seed = conf["seed"]
    mdp = build_environment(conf["environment"], seed)
    guide = build_guide(conf["guide"], mdp, seed)
    H = mdp.horizon
    method = conf["method"]["name"]
    sched = conf["schedule"]
    learner_block = dict(conf["learner"])
    init_mode = learner_block.pop("init_mode")
    v_star = float(mdp.p0 @ value_iteration(mdp).v_star[0])
    pi_star = value_iteration(mdp).pi_star
    summary = {"config_hash": digest, "method": method, "seed": seed,
               "C_guide": _json_float(concentratability(mdp, guide, pi_star))}
    trajectories: list = []

    if method == "jsrl_cb":
        mix, rec = train_jsrl_cb(mdp, guide, conf["method"]["T"], conf["method"].get("cb_epsilon", 0.2),
                                 substream(seed, "training"), conf["method"].get("cb_schedule", "cube_root"))
        policy_doc = mix.to_dict()
        final_return = policy_value(mdp, mix.to_tabular())[1]
        summary.update(forced_advances=0, episodes_used=rec.episodes_used, episodes_to_success=None)
    else:
        learner = QLearnerConfig(**learner_block)
        if method == "jsrl_curriculum":
            seq = sched.get("sequence", list(range(H, -1, -1)))
            try:
                strategy = CurriculumState(seq, beta=sched["beta"],
                                           stage_episode_budget=sched.get("stage_budget", 50 * H),
                                           moving_average_window=sched["moving_average_window"])
            except ValueError as exc:
                raise CliError("config-invalid", f"schedule: {exc}") from None
        else:
            step_set = [0] if method == "scratch" else sched.get("step_set", list(range(H + 1)))
            strategy = RandomSwitch(step_set)
            if "beta" in conf.get("schedule_raw", {}):
                log.warning("beta gating is ignored for %s", method)
        replay = ReplayConfig(**conf["replay"]) if "replay" in conf else None
        demos = load_demos(conf["guide"]["demo_path"]) if conf["guide"]["kind"] == "bc" else None
        dataset = [] if "trajectories" in conf["output"] else None
        try:
            q, rec = train_jsrl(mdp, guide, strategy, learner, sched["budget"], sched["eval_every"],
                                substream(seed, "training"), init_mode=init_mode, eval_mode=sched["eval_mode"],
                                eval_episodes=sched["eval_episodes"], eval_rng=substream(seed, "evaluation"),
                                demos=demos, replay=replay, dataset=dataset,
                                success_threshold=sched["success_threshold"])
        except ValueError as exc:
            raise CliError("config-invalid", str(exc)) from None
        policy_doc = q.to_dict()
        final_return = policy_value(mdp, q.greedy_policy())[1]
        summary.update(forced_advances=rec.forced_advances, episodes_used=rec.episodes_used,
                       episodes_to_success=rec.episodes_to_success)
        if dataset:
            for i in range(0, len(dataset), H):
                chunk = dataset[i:i + H]
                trajectories.append(Trajectory(chunk[0][1], [(s, a, r, s2) for _, s, a, r, s2 in chunk], seed))
    summary.update(final_return=final_return, final_suboptimality=v_star - final_return, optimal_value=v_star)
    return rec.to_csv(), cfg.dumps(policy_doc), cfg.dumps(summary), trajectories


def _json_float(x: float):
    return x if math.isfinite(x) else "inf"


def cmd_train(args) -> int:
    text = _read(args.config)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError("parse", f"{args.config}: {exc}") from None
    try:
        conf = cfg.resolve(doc)
    except cfg.ConfigError as exc:
        raise CliError("config-invalid", str(exc)) from None
    conf["schedule_raw"] = doc.get("schedule", {})
    out = conf["output"]
    _check_paths([out[k] for k in ("curve", "policy", "summary", "trajectories") if k in out])
    curve, policy, summary, trajs = run_training(conf, cfg.config_hash(text))
    _write(out["curve"], curve)
    _write(out["policy"], policy)
    _write(out["summary"], summary)
    if "trajectories" in out:
        _write(out["trajectories"], "".join(json.dumps(t.to_dict(), separators=(",", ":")) + "\n" for t in trajs))
    return 0


# --------------------------------------------------------------------- sweep


def cmd_sweep(args) -> int:
    doc = _load_json(args.spec)
    try:
        cfg.validate(doc, cfg.SWEEP_SCHEMA)
        doc.pop("schema_version", None)
        spec = SweepSpec(**doc)
    except (cfg.ConfigError, ValueError, TypeError) as exc:
        raise CliError("config-invalid", f"{exc}; usage: sweep --spec SPEC.json --out OUT.csv [--jobs K]") from None
    _check_paths([args.out])
    rows = sample_complexity_sweep(spec, jobs=args.jobs)
    _write(args.out, sweep_to_csv(rows))
    return 0


# ------------------------------------------------------------------- analyze


def cmd_analyze(args) -> int:
    mdp = load_mdp(args.mdp)
    policy = load_policy(args.policy)
    if tuple(policy.dims) != mdp.dims:
        raise CliError("dimension-mismatch", f"policy dims {tuple(policy.dims)} != MDP dims {mdp.dims}")
    tab = as_tabular(policy)
    pi_star = value_iteration(mdp).pi_star
    if args.optimal:
        pi_star = load_policy(args.optimal)
        if tuple(pi_star.dims) != mdp.dims:
            raise CliError("dimension-mismatch", "optimal policy dims do not match the MDP")
    lhs, rhs, gap = pdl_check(mdp, tab)
    per_step = concentratability_per_step(mdp, tab, pi_star)
    result = {
        "mean_return": policy_value(mdp, tab)[1],
        "suboptimality": suboptimality(mdp, tab),
        "C": _json_float(float(per_step.max())),
        "C_per_step": [_json_float(float(x)) for x in per_step],
        "pdl_lhs": lhs,
        "pdl_rhs": rhs,
        "pdl_gap": gap,
    }
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = [k for k in result if k != "C_per_step"]
        w.writerow(keys)
        w.writerow([result[k] for k in keys])
        text = buf.getvalue()
    else:
        text = cfg.dumps(result)
    if args.out:
        _check_paths([args.out])
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: usage: {' '.join(message.split())} (see {self.prog} --help)\n")
        raise SystemExit(EXIT_CODES["usage"])


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jumpstart", description="Guide-policy roll-in training for tabular finite-horizon MDPs.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-env", help="write an MDP (and optional demonstrations)")
    g.add_argument("--family", choices=["lock", "gridworld"], required=True)
    g.add_argument("--horizon", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--walls", help="semicolon-separated ROW,COL cells")
    g.add_argument("--start")
    g.add_argument("--goal")
    g.add_argument("--slip-prob", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.add_argument("--demos", type=int, default=0)
    g.add_argument("--demo-policy", default="optimal", help="optimal | uniform | corrupted:P")
    g.add_argument("--demo-out")
    g.set_defaults(func=cmd_gen_env)

    t = sub.add_parser("train", help="run one configured experiment")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="episodes-to-success sweep")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("analyze", help="coverage, suboptimality and PDL gap of a stored policy")
    a.add_argument("--mdp", required=True)
    a.add_argument("--policy", required=True)
    a.add_argument("--optimal", help="reference optimal policy (default: value iteration)")
    a.add_argument("--csv", action="store_true")
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(f"error: {exc.reason}: {exc.detail}\n")
        return EXIT_CODES[exc.reason]


if __name__ == "__main__":
    sys.exit(main())
