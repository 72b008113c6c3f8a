"""Smoke test for the leap_sim extension module.

Build and install first:
    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml
"""

import json
import math
import tempfile
from pathlib import Path

import leap_sim


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def check_environments():
    tiger = leap_sim.Pomdp.tiger(3)
    assert (tiger.num_states, tiger.num_actions, tiger.horizon) == (2, 3, 3), tiger
    belief = tiger.belief([2, 0, 0])
    assert close(belief[0], 0.85), belief

    world = leap_sim.Pomdp.hidden_object_world([3, 1, 1], 6, detection=0.8)
    assert leap_sim.Pomdp.from_json(world.to_json()).to_json() == world.to_json()
    assert world.fully_observed().name.endswith("fully_observed")

    q, v = tiger.privileged_values()
    assert len(q) == 3 and len(v[0]) == 2
    assert close(tiger.expert_value(), sum(0.5 * x for x in v[0]))
    assert tiger.recoverability("reachable") <= tiger.recoverability("all")

    try:
        leap_sim.Pomdp.tiger(3, accuracy=0.2)
    except ValueError:
        pass
    else:
        raise AssertionError("accuracy below 0.5 accepted")


def check_experts():
    p, q = [0.7, 0.2, 0.1], [0.2, 0.3, 0.5]
    radius = leap_sim.kl(p, q)
    assert leap_sim.constrained_expert(p, q, 0.0) == q
    assert leap_sim.constrained_expert(p, q, radius) == p
    mid = leap_sim.constrained_expert(p, q, 0.1)
    assert abs(leap_sim.kl(mid, q) - 0.1) <= 1e-8
    l1 = sum(abs(a - b) for a, b in zip(mid, q))
    assert l1 <= math.sqrt(0.2) + 1e-9

    tiger = leap_sim.Pomdp.tiger(3)
    privileged = tiger.realizability_gap({"kind": "privileged"})
    assert tiger.realizability_gap({"kind": "nonprivileged"}) == 0.0
    assert 0.0 < tiger.realizability_gap({"kind": "constrained", "delta": 0.05}) <= privileged


def check_learning():
    tiger = leap_sim.Pomdp.tiger(3)
    config = {
        "num_iterations": 2,
        "rollouts_per_iteration": 20,
        "num_demos": 10,
        "root_seed": 4,
        "teacher": {"kind": "constrained", "delta": 0.1},
        "update_rule": {"kind": "sft"},
    }
    result = leap_sim.leap_run(tiger, config)
    rows = result.report["rows"]
    assert len(rows) == 3 and len(result.snapshots) == 3
    assert close(result.expert_j, tiger.expert_value())
    last = result.snapshots[-1]
    perf = last.evaluate(tiger)
    assert close(perf["j"], rows[-1]["J"])
    assert len(last.action_distribution([2])) == 3
    again = leap_sim.leap_run(tiger, config)
    assert json.dumps(again.report) == json.dumps(result.report)
    for policy in result.snapshots:
        assert leap_sim.Policy.from_json(policy.to_json()).to_json() == policy.to_json()


def check_runner():
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "tiger.toml"
        path.write_text(
            '[environment]\nkind = "tiger"\nhorizon = 3\n\n'
            "[leap]\nnum_iterations = 1\nrollouts_per_iteration = 10\nroot_seed = 1\n\n"
            f'[output]\ndir = "{Path(tmp) / "out"}"\n'
        )
        report = leap_sim.run_config(str(path))
        assert len(report["rows"]) == 2
        assert (Path(tmp) / "out" / "metrics.json").is_file()


if __name__ == "__main__":
    for check in (check_environments, check_experts, check_learning, check_runner):
        check()
        print(f"ok  {check.__name__}")
    print("smoke test passed")
