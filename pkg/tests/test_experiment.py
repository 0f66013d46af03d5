import json
import math

import numpy as np
import pytest

from subspace_defense.attack import constant_trigger
from subspace_defense.config import build
from subspace_defense.environments import PlantedEnvSpec, planted_env
from subspace_defense.errors import ConfigError, DegenerateGap
from subspace_defense.evaluation import ValueEstimate
from subspace_defense.experiment import (
    GAUSSIAN_K,
    ExperimentReport,
    combined_std,
    covariance_scaling_suite,
    davis_kahan_suite,
    derive_rng,
    loglog_slope,
    paired_stderr,
    performance_difference_suite,
    projector_scaling_suite,
    sin_theta_identity_suite,
    spectrum,
    spectrum_csv,
    sweep_d,
    sweep_n,
    theorem1,
    theorem1_check,
    theorem1_epsilon,
    theorem1_sample_size,
    verify_lemmas,
)
from subspace_defense.linalg import lemma3_sample_size
from subspace_defense.policies import planted_backdoor_policy

TOY = {
    "env": {"kind": "toy", "gamma": 0.9},
    "trigger": {"kind": "impulse", "times": [0]},
    "sweep": {"n": [1, 5, 20]},
    "seeds": {"master": 3, "count": 10},
    "evaluation": {"episodes": 20},
    "checks": {"sweep_n": {"recovery": True, "attack_visible": True}},
}


def planted_config(**env):
    base = {"kind": "planted", "D": 12, "d": 3, "eigenvalues": [4.0, 2.0, 1.0]}
    base.update(env)
    return {
        "env": base,
        "trigger": {"kind": "constant", "magnitude": 3.0},
        "sanitizer": {"d": 3},
        "seeds": {"master": 1, "count": 4},
        "evaluation": {"episodes": 100, "b_rollouts": 100},
    }


# ---------------------------------------------------------------- helpers


def test_derive_rng_is_keyed():
    a = derive_rng(5, 1, 2, 3).random(4)
    np.testing.assert_array_equal(a, derive_rng(5, 1, 2, 3).random(4))
    assert not np.array_equal(a, derive_rng(5, 1, 2, 4).random(4))
    assert not np.array_equal(a, derive_rng(5, 0, 2, 3).random(4))


def test_std_combinations():
    a = ValueEstimate(1.0, 3.0, 4, 10, 0.0, np.array([1.0, 2.0, 3.0, 4.0]))
    b = ValueEstimate(1.0, 4.0, 4, 10, 0.0, np.array([1.0, 2.0, 3.0, 5.0]))
    assert combined_std(a, b) == 5.0
    diff = np.array([0.0, 0.0, 0.0, -1.0])
    assert paired_stderr(a, b) == pytest.approx(diff.std(ddof=1) / 2)
    unpaired = ValueEstimate(1.0, 4.0, 16, 10, 0.0)
    assert paired_stderr(a, unpaired) == pytest.approx(math.hypot(1.5, 1.0))


def test_loglog_slope():
    n = np.array([16, 64, 256, 1024])
    assert loglog_slope(n, 3.0 / np.sqrt(n)) == pytest.approx(-0.5)


def test_theorem_sample_size_and_budget_are_inverse():
    kw = dict(d=3, B=4.0, L=10.0, K=GAUSSIAN_K, sigma_norm=4.0, gap=1.0, gamma=0.9, D=16, delta=0.05)
    n = theorem1_sample_size(0.5, **kw)
    assert theorem1_epsilon(n, **kw) == pytest.approx(0.5)
    # the value-level condition is the subspace condition scaled by B^2 L^2 / (1 - gamma)^4
    lemma = lemma3_sample_size(3, GAUSSIAN_K, 4.0, 1.0, 0.5, 16, 0.05)
    assert n == pytest.approx(lemma * 16.0 * 100.0 / 0.1**4)
    with pytest.raises(DegenerateGap):
        theorem1_sample_size(0.5, **{**kw, "gap": 0.0})


# ---------------------------------------------------------------- Theorem 1


def setup_of(config):
    s = build(config)
    return s.env, s.policy, s.trigger


def test_theorem1_exact_subspace_case():
    env, pi, f = setup_of(planted_config())
    reports = theorem1_check(env, pi, f, 256, range(4), episodes=200, b_rollouts=100, master=2)
    for r in reports:
        assert r.approximation_term == 0.0
        assert r.projector_error <= 1e-10
        assert abs(r.gap) <= 3 * r.gap_stderr + 1e-12
        assert r.holds
        assert r.inputs["K_certified"] and r.estimation_budget is not None and r.estimation_budget > 0


def test_theorem1_with_tail_energy():
    env, pi, f = setup_of(planted_config(C0=0.5))
    reports = theorem1_check(env, pi, f, 128, range(4), episodes=200, b_rollouts=100, master=2)
    tail = 9 * 0.25 / 11  # D - d = 9 complement directions with variance C0^2 / (D - d + 2)
    L = pi.lipschitz_bound
    for r in reports:
        assert r.inputs["tail_energy"] == pytest.approx(tail)
        assert r.approximation_term == pytest.approx(L / 0.01 * math.sqrt(tail))
        assert r.estimation_term == pytest.approx(r.inputs["B"] * L / 0.01 * r.projector_error)
        assert r.bound == pytest.approx(r.approximation_term + r.estimation_term + 3 * r.gap_stderr)
        assert r.holds
        assert r.estimation_budget is None and not r.inputs["K_certified"]


def test_theorem1_degenerate_gap():
    # complement variance C0^2 / 3 equals the single planted eigenvalue
    env = planted_env(PlantedEnvSpec.standard(D=2, d=1, eigenvalues=(1.0,), C0=math.sqrt(3.0)))
    pi = planted_backdoor_policy(env)
    f = constant_trigger(env.U_perp[:, 0], 3.0, env.complement_projector)
    with pytest.raises(DegenerateGap):
        theorem1_check(env, pi, f, 16, [0], episodes=10, b_rollouts=10)


def test_theorem1_runner():
    cfg = planted_config(C0=0.3)
    cfg["sweep"] = {"n": [64, 512]}
    report = theorem1(cfg)
    assert report.passed
    assert [r["grid_value"] for r in report.rows] == [64, 512]
    assert all(len(r["trials"]) == 4 and r["violations"] == 0 for r in report.rows)


def test_theorem1_rejects_toy():
    with pytest.raises(ConfigError):
        theorem1({**TOY, "sweep": {"n": [4]}})


# ---------------------------------------------------------------- sweeps


def test_toy_sweep_n():
    report = sweep_n(TOY)
    assert report.passed
    assert len(report.rows) == 3
    tri = report.curves["triggered"]
    san = report.curves["sanitized"]
    assert [p["mean"] for p in tri] == [1.0, 1.0, 1.0]
    # a single sample lands on F (all-zero covariance) 10% of the time; those trials are recorded as failed
    assert report.rows[0]["failed_trials"] == sum(t["failed"] for t in report.rows[0]["trials"])
    for p in san:
        assert abs(p["mean"] - 9.0) <= 1e-3
    assert san[-1]["n_episodes"] == 20 * 10


def test_degenerate_toy_samples_are_failed_trials():
    cfg = {**TOY, "sweep": {"n": [1]}, "seeds": {"master": 0, "count": 60}, "checks": {}}
    report = sweep_n(cfg)
    failed = report.rows[0]["failed_trials"]
    assert 0 < failed < 60
    assert all("EmptySubspace" not in t.get("reason", "") for t in report.rows[0]["trials"])


def test_sweep_n_trend_on_planted_env():
    cfg = {
        "env": {"kind": "planted", "D": 16, "d": 3, "eigenvalues": [1.0, 0.6, 0.3], "C0": 1.0},
        "trigger": {"kind": "constant", "magnitude": 6.0},
        "sanitizer": {"d": 3},
        "sweep": {"n": [16, 4096]},
        "seeds": {"master": 3, "count": 20},
        "evaluation": {"episodes": 300},
        "checks": {"sweep_n": {"trend": True}},
    }
    report = sweep_n(cfg)
    assert report.checks["trend"]["passed"], report.checks
    errs = [r["projector_error_median"] for r in report.rows]
    assert errs[1] < errs[0]


def test_sweep_d_underestimate_is_worse():
    cfg = planted_config(C0=0.01)
    cfg["sweep"] = {"n": 512, "d": [1, 2, 3, 8]}
    cfg["checks"] = {"sweep_d": {"peak": True, "spectrum_drop": {"min_drop_orders": 4}}}
    report = sweep_d(cfg)
    means = {p["grid_value"]: p["mean"] for p in report.curves["sanitized"]}
    assert means[1] < means[3] and means[2] < means[3] and means[8] < means[3]
    assert report.passed
    assert len(report.extra["spectra"]) == 4 and len(report.extra["spectrum_mean"]) == 12


def test_sweep_d_config_errors():
    cfg = planted_config()
    cfg["sweep"] = {"n": [64, 128], "d": [1]}
    with pytest.raises(ConfigError):
        sweep_d(cfg)
    cfg["sweep"] = {"n": 64, "d": [13]}
    with pytest.raises(ConfigError) as exc:
        sweep_d(cfg)
    assert exc.value.path == "sweep.d[0]"
    cfg["sweep"] = {"n": 64, "d": [1, 2]}
    cfg["checks"] = {"sweep_d": {"peak": True}}
    with pytest.raises(ConfigError):
        sweep_d(cfg)


def test_empty_sweep_is_config_error():
    with pytest.raises(ConfigError) as exc:
        sweep_n({**TOY, "sweep": {"n": []}})
    assert exc.value.path == "sweep.n"


def test_missing_trigger_is_config_error():
    cfg = dict(TOY)
    del cfg["trigger"]
    with pytest.raises(ConfigError):
        sweep_n(cfg)


def test_reports_are_byte_identical():
    a = sweep_n(TOY).to_json()
    b = sweep_n(TOY).to_json()
    assert a == b
    assert "wall_clock" not in json.loads(a)


def test_curve_csv():
    report = sweep_n(TOY)
    lines = report.curve_csv("triggered").splitlines()
    assert lines[0] == "grid_value,mean,std,n_episodes"
    assert lines[1] == "1,1.0,0.0,200"


def test_spectrum():
    cfg = planted_config()
    cfg["sweep"] = {"n": 256}
    report = spectrum(cfg)
    vals = [r["eigenvalue"] for r in report.rows]
    assert len(vals) == 12 and vals == sorted(vals, reverse=True)
    csv = spectrum_csv(report).splitlines()
    assert csv[0] == "index,eigenvalue,log10_eigenvalue"


def test_report_passed():
    r = ExperimentReport("x", {}, [], {})
    assert r.passed
    r.checks["a"] = {"passed": False}
    assert not r.passed


# ---------------------------------------------------------------- lemma suites


def test_small_lemma_suites():
    assert davis_kahan_suite(100, derive_rng(0, 1)).passed
    assert sin_theta_identity_suite(100, derive_rng(0, 2)).passed
    assert performance_difference_suite(20, rng=derive_rng(0, 3)).passed
    cov = covariance_scaling_suite(ns=[256, 1024, 4096], trials=20, rng=derive_rng(0, 4))
    assert cov.passed, cov.stats["slope"]


def test_projector_scaling_small():
    env = planted_env(PlantedEnvSpec.standard(D=8, d=2, eigenvalues=(2.0, 1.0), C0=1.0))
    res = projector_scaling_suite(env, planted_backdoor_policy(env), ns=[64, 256, 1024, 4096], trials=20)
    assert res.passed, res.stats["slope"]


def test_verify_lemmas_without_env():
    report = verify_lemmas({"lemmas": {"davis_kahan_trials": 50, "identity_trials": 50, "scaling_trials": 10, "pdl_mdps": 10}})
    assert set(report.checks) == {"davis_kahan", "sin_theta_identity", "covariance_scaling", "performance_difference"}
