import json

import numpy as np
import pytest

from subspace_defense.config import build, load, sweep_values, validate
from subspace_defense.environments import PlantedEnv, TabularMdp
from subspace_defense.errors import ConfigError

PLANTED = {"env": {"kind": "planted", "D": 8, "d": 2, "eigenvalues": [2.0, 1.0]}}


def with_(base, **sections):
    out = json.loads(json.dumps(base))
    out.update(sections)
    return out


def error_path(config):
    with pytest.raises(ConfigError) as exc:
        build(config)
    return exc.value.path


def test_minimal_planted_config_builds():
    setup = build(with_(PLANTED, trigger={"kind": "constant"}))
    assert isinstance(setup.env, PlantedEnv)
    assert setup.true_d == 2
    np.testing.assert_allclose(np.linalg.norm(setup.trigger(np.zeros((1, 8)))), 3.0)
    assert setup.sanitizer_options() == {"d": "absolute_threshold", "threshold": 1e-10, "center": False, "mode": "geometric_iid"}
    assert setup.evaluation_options() == {"episodes": 500, "tol": 1e-4, "b_rollouts": 500}
    assert setup.seeds() == (0, 1)


def test_toy_config_builds():
    setup = build({"env": {"kind": "toy", "gamma": 0.8, "trigger_height": 3.0}, "trigger": {"kind": "impulse"}})
    assert isinstance(setup.env, TabularMdp) and setup.env.gamma == 0.8
    np.testing.assert_array_equal(setup.trigger(np.zeros((1, 2))), [0.0, 3.0])
    assert setup.trigger.horizon == 1


def test_no_trigger():
    assert build(PLANTED).trigger is None
    assert build(with_(PLANTED, trigger={"kind": "none"})).trigger is None


def test_explicit_direction_vector():
    setup = build({"env": {"kind": "toy"}, "trigger": {"kind": "constant", "direction": [0.0, 5.0], "magnitude": 1.0}})
    np.testing.assert_allclose(setup.trigger(np.zeros((1, 2))), [0.0, 1.0])


@pytest.mark.parametrize(
    "config, path",
    [
        ({"env": {"kind": "planted", "D": "8", "d": 2, "eigenvalues": [1.0, 1.0]}}, "env.D"),
        ({"env": {"kind": "cartpole"}}, "env.kind"),
        ({"env": {"kind": "toy", "gamma": 1.5}}, "env.gamma"),
        (with_(PLANTED, sweep={"n": []}), "sweep.n"),
        (with_(PLANTED, sweep={"d": [2, 0]}), "sweep.d[1]"),
        (with_(PLANTED, seeds={"count": 0}), "seeds.count"),
        (with_(PLANTED, trigger={"kind": "constant", "magnitude": -1}), "trigger.magnitude"),
        (with_(PLANTED, sanitizer={"d": "biggest"}), "sanitizer.d"),
        (with_(PLANTED, evaluation={"episodes": 1}), "evaluation.episodes"),
        ({"env": {"kind": "planted", "D": 8, "d": 2, "eigenvalues": [2.0]}}, "env.eigenvalues"),
        (with_(PLANTED, trigger={"kind": "constant", "direction": 6}), "trigger.direction"),
        (with_(PLANTED, trigger={"kind": "constant", "direction": [1.0, 0.0]}), "trigger.direction"),
        (with_(PLANTED, policy={"bad_action": 7}), "policy"),
        ({"env": {"kind": "planted", "D": 4, "d": 5, "eigenvalues": [5, 4, 3, 2, 1]}}, "env"),
    ],
)
def test_config_errors_name_the_field(config, path):
    assert error_path(config) == path


def test_unknown_top_level_key():
    with pytest.raises(ConfigError):
        validate(with_(PLANTED, plots={"x": 1}))


def test_missing_env():
    assert error_path({}) == "<root>"


def test_direction_outside_complement_is_rejected():
    config = {"env": {"kind": "toy"}, "trigger": {"kind": "constant", "direction": [1.0, 1.0]}}
    assert error_path(config) == "trigger"


def test_sweep_values():
    assert sweep_values({"sweep": {"n": 64}}, "n") == [64]
    assert sweep_values({"sweep": {"n": [1, 2]}}, "n") == [1, 2]
    with pytest.raises(ConfigError) as exc:
        sweep_values({}, "d")
    assert exc.value.path == "sweep.d"


def test_load(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(PLANTED))
    assert load(p) == PLANTED
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load(p)


def test_planted_overrides_pass_through():
    cfg = with_(PLANTED)
    cfg["env"].update(C0=0.5, gamma=0.8, persistence=0.2, seed=3, reward_bias=[0.1, 0.2, 0.0])
    env = build(cfg).env
    assert env.spec.C0 == 0.5 and env.gamma == 0.8 and env.spec.persistence == 0.2
    assert env.spec.reward_bias == (0.1, 0.2, 0.0)
