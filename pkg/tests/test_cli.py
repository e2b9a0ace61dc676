import json

import numpy as np
import pytest

from jumpstart.cli import EXIT_CODES, main
from jumpstart.mdp import MdpSpec, build_combination_lock, value_iteration
from jumpstart.policies import TabularPolicy


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def base_config(tmp_path, **overrides):
    doc = {
        "schema_version": 1,
        "seed": 3,
        "environment": {"family": "lock", "H": 6},
        "guide": {"kind": "scripted"},
        "method": {"name": "jsrl_curriculum"},
        "schedule": {"budget": 3000, "eval_every": 10},
        "output": {k: str(tmp_path / f"{k}.out") for k in ("curve", "policy", "summary")},
    }
    for k, v in overrides.items():
        doc[k] = v
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path, doc


def test_gen_env_is_byte_deterministic(tmp_path, capsys):
    paths = []
    for tag in "ab":
        out, demos = tmp_path / f"{tag}.json", tmp_path / f"{tag}.jsonl"
        code, _, _ = run(capsys, "gen-env", "--family", "lock", "--horizon", "6", "--seed", "7", "--out", str(out),
                         "--demos", "20", "--demo-out", str(demos))
        assert code == 0
        paths.append((out.read_bytes(), demos.read_bytes()))
    assert paths[0] == paths[1]
    lines = paths[0][1].decode().splitlines()
    assert len(lines) == 21 and "metadata" in json.loads(lines[0])
    assert all(sum(st[2] for st in json.loads(ln)["steps"]) == 1.0 for ln in lines[1:])
    text = paths[0][0].decode()
    assert MdpSpec.from_json(text).to_json() == text


def test_gen_env_gridworld_and_corrupted_demos(tmp_path, capsys):
    out, demos = tmp_path / "g.json", tmp_path / "g.jsonl"
    code, _, _ = run(capsys, "gen-env", "--family", "gridworld", "--width", "4", "--height", "3", "--walls", "1,1",
                     "--start", "0,0", "--goal", "2,3", "--horizon", "8", "--slip-prob", "0.1", "--out", str(out),
                     "--demos", "5", "--demo-policy", "corrupted:0.3", "--demo-out", str(demos))
    assert code == 0
    assert MdpSpec.from_json(out.read_text()).dims == (8, 11, 4)
    code, _, err = run(capsys, "gen-env", "--family", "lock", "--out", str(out))
    assert code == EXIT_CODES["invalid-parameter"] and err.startswith("error: invalid-parameter:")
    code, _, err = run(capsys, "gen-env", "--family", "lock", "--horizon", "4", "--out", str(tmp_path / "no" / "x"))
    assert code == EXIT_CODES["io"] and err.count("\n") == 1


def test_train_outputs_and_reproducibility(tmp_path, capsys):
    path, doc = base_config(tmp_path)
    assert run(capsys, "train", "--config", str(path))[0] == 0
    first = {k: open(v, "rb").read() for k, v in doc["output"].items()}
    assert run(capsys, "train", "--config", str(path))[0] == 0
    second = {k: open(v, "rb").read() for k, v in doc["output"].items()}
    assert first == second
    summary = json.loads(first["summary"])
    assert summary["final_suboptimality"] <= 0.05
    assert summary["C_guide"] == 1.0 and summary["forced_advances"] == 0
    assert len(summary["config_hash"]) == 64
    assert first["curve"].decode().splitlines()[0].startswith("episode,h,train_return,eval_return")


def test_train_scratch_and_cb(tmp_path, capsys):
    path, doc = base_config(tmp_path, method={"name": "scratch"}, schedule={"budget": 200})
    assert run(capsys, "train", "--config", str(path))[0] == 0
    assert json.loads(open(doc["output"]["summary"]).read())["episodes_used"] == 200
    path, doc = base_config(tmp_path, method={"name": "jsrl_cb", "T": 600})
    assert run(capsys, "train", "--config", str(path))[0] == 0
    mix = json.loads(open(doc["output"]["policy"]).read())
    assert "components" in mix


def test_train_bc_guide_from_demos(tmp_path, capsys):
    demos = tmp_path / "d.jsonl"
    run(capsys, "gen-env", "--family", "lock", "--horizon", "6", "--seed", "11", "--out", str(tmp_path / "m.json"),
        "--demos", "3", "--demo-out", str(demos))
    path, doc = base_config(tmp_path, environment={"family": "lock", "H": 6, "seed": 11},
                            guide={"kind": "bc", "demo_path": str(demos)})
    assert run(capsys, "train", "--config", str(path))[0] == 0
    assert json.loads(open(doc["output"]["summary"]).read())["C_guide"] == 1.0
    path, _ = base_config(tmp_path, environment={"family": "lock", "H": 5},
                          guide={"kind": "bc", "demo_path": str(demos)})
    code, _, err = run(capsys, "train", "--config", str(path))
    assert code == EXIT_CODES["dimension-mismatch"]


@pytest.mark.parametrize("mutate, reason", [
    (lambda d: d.update(extra=1), "config-invalid"),
    (lambda d: d.pop("guide"), "config-invalid"),
    (lambda d: d["schedule"].update(beta="high"), "config-invalid"),
    (lambda d: d.update(guide={"kind": "corrupted"}), "config-invalid"),
    (lambda d: d["output"].update(curve="/nonexistent/dir/c.csv"), "io"),
])
def test_train_rejects_bad_configs(tmp_path, capsys, mutate, reason):
    path, doc = base_config(tmp_path)
    mutate(doc)
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, "train", "--config", str(path))
    assert code == EXIT_CODES[reason]
    assert err.startswith(f"error: {reason}:") and err.count("\n") == 1


def test_train_parse_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert run(capsys, "train", "--config", str(bad))[0] == EXIT_CODES["parse"]


def test_sweep_jobs_identical_and_cardinality(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"sizes": [4, 5, 6, 7, 8], "methods": ["jsrl_curriculum", "jsrl_random"],
                                "seeds": [0, 1, 2, 3, 4], "episode_cap": 3000}))
    outs = []
    for jobs in ("1", "8"):
        out = tmp_path / f"s{jobs}.csv"
        assert run(capsys, "sweep", "--spec", str(spec), "--out", str(out), "--jobs", jobs)[0] == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert len(outs[0].decode().splitlines()) == 1 + 50


def test_sweep_empty_methods_is_usage_error(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"sizes": [4], "methods": [], "seeds": [0]}))
    code, _, err = run(capsys, "sweep", "--spec", str(spec), "--out", str(tmp_path / "o.csv"))
    assert code != 0 and "usage" in err and err.count("\n") == 1


def test_analyze_optimal_and_uniform(tmp_path, capsys):
    mdp = build_combination_lock(5, seed=2)
    (tmp_path / "m.json").write_text(mdp.to_json())
    (tmp_path / "opt.json").write_text(json.dumps(value_iteration(mdp).pi_star.to_dict()))
    (tmp_path / "uni.json").write_text(json.dumps(TabularPolicy.uniform(*mdp.dims).to_dict()))
    code, out, _ = run(capsys, "analyze", "--mdp", str(tmp_path / "m.json"), "--policy", str(tmp_path / "opt.json"))
    rep = json.loads(out)
    assert code == 0 and rep["suboptimality"] == 0.0 and rep["C"] == 1.0 and rep["pdl_gap"] <= 1e-9
    code, out, _ = run(capsys, "analyze", "--mdp", str(tmp_path / "m.json"), "--policy", str(tmp_path / "uni.json"))
    assert json.loads(out)["C"] == pytest.approx(16.0, abs=1e-9)
    code, out, _ = run(capsys, "analyze", "--mdp", str(tmp_path / "m.json"), "--policy", str(tmp_path / "uni.json"),
                       "--csv")
    assert out.splitlines()[0].startswith("mean_return,suboptimality,C")


def test_analyze_error_codes_are_distinct(tmp_path, capsys):
    mdp = build_combination_lock(5)
    (tmp_path / "m.json").write_text(mdp.to_json())
    (tmp_path / "small.json").write_text(json.dumps(TabularPolicy.uniform(4, 8, 2).to_dict()))
    (tmp_path / "bad.json").write_text('{"probs": [[[0.5, 0.5]]')
    dim = run(capsys, "analyze", "--mdp", str(tmp_path / "m.json"), "--policy", str(tmp_path / "small.json"))[0]
    bad = run(capsys, "analyze", "--mdp", str(tmp_path / "m.json"), "--policy", str(tmp_path / "bad.json"))[0]
    assert dim == EXIT_CODES["dimension-mismatch"] and bad == EXIT_CODES["parse"] and dim != bad


def test_usage_errors_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("error: usage:")
