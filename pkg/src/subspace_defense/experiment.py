"""Theorem-bound checks, lemma verification suites and the n / d sweep runners.

All randomness is derived from ``(master_seed, stream, grid_index, seed_index)``
so results don't depend on execution order, and reports serialize
deterministically (wall-clock time is kept out of the JSON).
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attack import TriggerFunction, estimate_B
from .config import Setup, build, is_planted, sweep_values
from .environments import PlantedEnv, toy_mdp
from .errors import ConfigError, DegenerateGap, EmptySubspace, InvalidInput
from .evaluation import (
    ValueEstimate,
    mc_value,
    random_tabular_mdp,
    random_tabular_policy,
    truncation_horizon,
    verify_performance_difference,
)
from .linalg import (
    CLUSTER_RTOL,
    Projector,
    davis_kahan_bound,
    eigendecompose,
    empirical_covariance,
    projector,
    projector_distance,
    random_orthonormal,
    sin_theta_frobenius,
)
from .policies import Policy, PlantedBackdoorPolicy, toy_optimal_policy, toy_right_policy
from .sanitizer import collect_clean_samples, fit_safe_subspace, sanitize

# SeedSequence stream tags
SAMPLES, EVAL, BOUND = 0, 1, 2
GAUSSIAN_K = math.sqrt(8.0 / 3.0)  # psi_2 norm of a standard normal


def derive_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(master), *map(int, keys)])


def combined_std(a: ValueEstimate, b: ValueEstimate) -> float:
    """``sqrt(std_a^2 + std_b^2)`` of the per-episode return spreads."""
    return math.hypot(a.std, b.std)


def paired_stderr(a: ValueEstimate, b: ValueEstimate) -> float:
    """Standard error of ``mean_a - mean_b`` when both used the same episode seeds."""
    if a.returns is None or b.returns is None or a.episodes != b.episodes:
        return math.hypot(a.stderr, b.stderr)
    diff = a.returns - b.returns
    return float(diff.std(ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else 0.0


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)
    return float(slope)


# --------------------------------------------------------------------------
# value-gap bound


def theorem1_epsilon(
    n: int, *, d: int, B: float, L: float, K: float, sigma_norm: float, gap: float, gamma: float, D: int,
    delta: float = 0.05, C: float = 1.0,
) -> float:
    """Estimation budget implied by ``n`` samples (the sample-size condition solved for epsilon), up to ``C``."""
    if gap <= 0:
        raise DegenerateGap("eigen gap must be positive")
    num = C * d * B**2 * L**2 * K**4 * sigma_norm**2 * (D + math.log(2.0 / delta))
    return math.sqrt(num / (gap**2 * (1.0 - gamma) ** 4 * n))


def theorem1_sample_size(
    eps: float, *, d: int, B: float, L: float, K: float, sigma_norm: float, gap: float, gamma: float, D: int,
    delta: float = 0.05, C: float = 1.0,
) -> float:
    if gap <= 0:
        raise DegenerateGap("eigen gap must be positive")
    return C * d * B**2 * L**2 * K**4 * sigma_norm**2 / (gap**2 * (1.0 - gamma) ** 4 * eps**2) * (D + math.log(2.0 / delta))


def approximation_term(L: float, gamma: float, tail_energy: float) -> float:
    return L / (1.0 - gamma) ** 2 * math.sqrt(max(tail_energy, 0.0))


@dataclass
class TheoremOneReport:
    clean_value: float
    sanitized_triggered_value: float
    gap: float
    gap_stderr: float
    approximation_term: float
    projector_error: float
    estimation_term: float
    bound: float
    holds: bool
    estimation_budget: Optional[float]
    n_used: int
    seed: int
    inputs: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def theorem1_check(
    env: PlantedEnv,
    policy: PlantedBackdoorPolicy,
    trigger: TriggerFunction,
    n: int,
    seeds: Sequence[int],
    *,
    d: Optional[int] = None,
    episodes: int = 500,
    tol: float = 1e-4,
    b_rollouts: int = 500,
    delta: float = 0.05,
    master: int = 0,
    grid_index: int = 0,
    mode: str = "geometric_iid",
) -> list[TheoremOneReport]:
    """Run sample -> fit -> sanitize -> evaluate per seed and compare the value gap with the bound.

    The bound is ``L/(1-g)^2 sqrt(sum_{i>d} lambda_i) + B L/(1-g)^2 ||P_E - P_En||_2
    + 3 * stderr(gap)`` with the measured projector error. ``B`` is estimated on
    the sanitized policy's triggered rollouts and ``L`` is the policy's analytic
    Lipschitz bound.
    """
    D = env.state_dim
    d = env.spec.d if d is None else d
    gamma = env.gamma
    if not 1 <= d < D:
        raise InvalidInput("the bound needs 1 <= d < D")
    # analytic spectrum, so exact zeros stay zero
    lam = np.sort(env.true_spectrum())[::-1]
    gap = float(lam[d - 1] - lam[d])
    if gap <= CLUSTER_RTOL * max(lam[0], 1.0):
        raise DegenerateGap(f"lambda_{d} - lambda_{d + 1} = {gap:.3g}")
    planted_on_top = d == env.spec.d and min(env.spec.eigenvalues) > env.spec.complement_variance
    true_proj = env.safe_projector if planted_on_top else projector(eigendecompose(env.true_covariance()), d)
    tail = float(lam[d:].sum())
    L = policy.lipschitz_bound
    sigma_norm = float(lam[0])
    K = GAUSSIAN_K if (env.spec.C0 == 0 and not env.has_drift) else None
    app = approximation_term(L, gamma, tail)
    T = truncation_horizon(gamma, tol)

    reports = []
    for seed in seeds:
        samples = collect_clean_samples(env, policy, n, mode, derive_rng(master, SAMPLES, grid_index, seed))
        fitted = fit_safe_subspace(samples, d=d)
        san = sanitize(policy, fitted.projector, fitted.mean)
        clean = mc_value(env, policy, None, episodes, tol, derive_rng(master, EVAL, grid_index, seed))
        attacked = mc_value(env, san, trigger, episodes, tol, derive_rng(master, EVAL, grid_index, seed))
        B = estimate_B(env, san, trigger, b_rollouts, T, derive_rng(master, BOUND, grid_index, seed))
        err = projector_distance(true_proj, fitted.projector)
        est = B * L / (1.0 - gamma) ** 2 * err
        value_gap = clean.mean - attacked.mean
        se = paired_stderr(clean, attacked)
        bound = app + est + 3.0 * se
        eps = None
        if K is not None:
            eps = theorem1_epsilon(n, d=d, B=B, L=L, K=K, sigma_norm=sigma_norm, gap=gap, gamma=gamma, D=D, delta=delta)
        reports.append(TheoremOneReport(
            clean_value=clean.mean,
            sanitized_triggered_value=attacked.mean,
            gap=value_gap,
            gap_stderr=se,
            approximation_term=app,
            projector_error=err,
            estimation_term=est,
            bound=bound,
            holds=bool(value_gap <= bound),
            estimation_budget=eps,
            n_used=n,
            seed=int(seed),
            inputs={"L": L, "B": B, "K": K, "delta_star": gap, "gamma": gamma, "d": d, "D": D,
                    "tail_energy": tail, "sigma_norm": sigma_norm, "K_certified": K is not None},
        ))
    return reports


# --------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    rows: list
    seeds: dict
    curves: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "seeds": self.seeds,
            "rows": self.rows,
            "curves": self.curves,
            "checks": self.checks,
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)

    def curve_csv(self, name: str) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["grid_value", "mean", "std", "n_episodes"])
        for pt in self.curves[name]:
            writer.writerow([pt["grid_value"], repr(pt["mean"]), repr(pt["std"]), pt["n_episodes"]])
        return buf.getvalue()


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _check(passed: bool, **detail) -> dict:
    return {"passed": bool(passed), **detail}


def _group(trials: list, grid_key: str, grid: Sequence) -> list:
    """One row per grid point holding its per-seed trials."""
    rows = []
    for g in grid:
        mine = [t for t in trials if t[grid_key] == g]
        rows.append({"grid_value": g, "failed_trials": sum(bool(t.get("failed")) for t in mine), "trials": mine})
    return rows


def _aggregate(rows: list, key: str, grid_key: str, grid: Sequence, episodes: int) -> list:
    out = []
    for g in grid:
        vals = [r[key]["mean"] for r in rows if r[grid_key] == g and key in r]
        out.append({
            "grid_value": g,
            "mean": float(np.mean(vals)) if vals else float("nan"),
            "std": float(np.std(vals)) if vals else float("nan"),
            "n_episodes": episodes * len(vals),
        })
    return out


def _setup(config) -> Setup:
    return config if isinstance(config, Setup) else build(config)


def _require_trigger(setup: Setup) -> TriggerFunction:
    if setup.trigger is None:
        raise ConfigError("this experiment needs a trigger", "trigger")
    return setup.trigger


def sweep_n(config) -> ExperimentReport:
    """Clean, triggered and sanitized-triggered values of the backdoor policy across sample sizes.

    Enabled checks (``config["checks"]["sweep_n"]``): ``recovery`` (sanitized
    within 1 combined std of clean at the largest n for >= 95% of seeds),
    ``attack_visible`` (triggered >= 5 combined std below clean everywhere) and
    ``trend`` (sanitized value at the largest n beats the smallest n for >= 95%
    of seeds).
    """
    started = time.perf_counter()
    setup = _setup(config)
    cfg = setup.config
    trigger = _require_trigger(setup)
    grid = sweep_values(cfg, "n")
    master, count = setup.seeds()
    ev = setup.evaluation_options()
    so = setup.sanitizer_options()
    trials = []
    for gi, n in enumerate(grid):
        for seed in range(count):
            eval_seed = (master, EVAL, gi, seed)
            clean = mc_value(setup.env, setup.policy, None, ev["episodes"], ev["tol"], derive_rng(*eval_seed))
            attacked = mc_value(setup.env, setup.policy, trigger, ev["episodes"], ev["tol"], derive_rng(*eval_seed))
            row = {"n": n, "seed": seed, "clean": clean.to_dict(), "triggered": attacked.to_dict()}
            samples = collect_clean_samples(setup.env, setup.policy, n, so["mode"], derive_rng(master, SAMPLES, gi, seed))
            try:
                fitted = fit_safe_subspace(samples, so["d"], so["center"], so["threshold"])
            except EmptySubspace as exc:
                row.update(failed=True, reason=str(exc))
                trials.append(row)
                continue
            san = sanitize(setup.policy, fitted.projector, fitted.mean)
            sanitized = mc_value(setup.env, san, trigger, ev["episodes"], ev["tol"], derive_rng(*eval_seed))
            row.update(failed=False, d_selected=fitted.d, sanitized=sanitized.to_dict(),
                       recovery_margin=combined_std(clean, sanitized), attack_margin=combined_std(clean, attacked))
            if fitted.d == setup.true_d:
                row["projector_error"] = projector_distance(setup.safe, fitted.projector)
            trials.append(row)

    report = ExperimentReport(
        "sweep-n", cfg, _group(trials, "n", grid), {"master": master, "count": count},
        curves={name: _aggregate(trials, name, "n", grid, ev["episodes"]) for name in ("clean", "triggered", "sanitized")},
    )
    for row in report.rows:
        errs = [t["projector_error"] for t in row["trials"] if "projector_error" in t]
        row["projector_error_median"] = float(np.median(errs)) if errs else None
    enabled = cfg.get("checks", {}).get("sweep_n", {})
    last = [r for r in trials if r["n"] == grid[-1]]
    if enabled.get("recovery", False):
        ok = [not r["failed"] and abs(r["sanitized"]["mean"] - r["clean"]["mean"]) <= r["recovery_margin"] for r in last]
        frac = float(np.mean(ok))
        report.checks["recovery"] = _check(frac >= 0.95, fraction=frac, seeds=len(ok))
    if enabled.get("attack_visible", False):
        margins = [r["clean"]["mean"] - r["triggered"]["mean"] - 5.0 * math.hypot(r["clean"]["std"], r["triggered"]["std"]) for r in trials]
        report.checks["attack_visible"] = _check(min(margins) >= 0, worst_margin=min(margins))
    if enabled.get("trend", False):
        first = {r["seed"]: r for r in trials if r["n"] == grid[0]}
        wins = [
            not r["failed"] and not first[r["seed"]]["failed"]
            and r["sanitized"]["mean"] > first[r["seed"]]["sanitized"]["mean"]
            for r in last
        ]
        frac = float(np.mean(wins))
        report.checks["trend"] = _check(frac >= 0.95, fraction=frac)
    report.wall_clock = time.perf_counter() - started
    return report


def sweep_d(config) -> ExperimentReport:
    """Sanitized-triggered value against the safe-subspace dimension, plus the empirical spectrum.

    One clean sample set per seed is shared by every ``d``. Enabled checks
    (``config["checks"]["sweep_d"]``): ``peak`` (the true d has strictly the
    highest mean value) and ``spectrum_drop`` (every seed's spectrum falls by at
    least ``min_drop_orders`` decades right after the true d).
    """
    started = time.perf_counter()
    setup = _setup(config)
    cfg = setup.config
    trigger = _require_trigger(setup)
    ds = sweep_values(cfg, "d")
    n_vals = sweep_values(cfg, "n")
    if len(n_vals) != 1:
        raise ConfigError("sweep-d needs a single sample size", "sweep.n")
    n = n_vals[0]
    D = setup.env.state_dim
    for i, d in enumerate(ds):
        if d > D:
            raise ConfigError(f"d={d} exceeds the state dimension {D}", f"sweep.d[{i}]")
    master, count = setup.seeds()
    ev = setup.evaluation_options()
    so = setup.sanitizer_options()
    trials, spectra = [], []
    for seed in range(count):
        samples = collect_clean_samples(setup.env, setup.policy, n, so["mode"], derive_rng(master, SAMPLES, 0, seed))
        cov = empirical_covariance(samples.samples, center=so["center"])
        model = eigendecompose(cov)
        spectra.append(model.eigenvalues.tolist())
        clean = mc_value(setup.env, setup.policy, None, ev["episodes"], ev["tol"], derive_rng(master, EVAL, 0, seed))
        for d in ds:
            san = sanitize(setup.policy, projector(model, d), cov.mean)
            v = mc_value(setup.env, san, trigger, ev["episodes"], ev["tol"], derive_rng(master, EVAL, 0, seed))
            trials.append({"d": d, "seed": seed, "n": n, "clean": clean.to_dict(), "sanitized": v.to_dict()})

    report = ExperimentReport(
        "sweep-d", cfg, _group(trials, "d", ds), {"master": master, "count": count},
        curves={
            "sanitized": _aggregate(trials, "sanitized", "d", ds, ev["episodes"]),
            "clean": _aggregate(trials, "clean", "d", ds, ev["episodes"]),
        },
        extra={"spectra": spectra, "spectrum_mean": np.mean(spectra, axis=0).tolist()},
    )
    enabled = cfg.get("checks", {}).get("sweep_d", {})
    true_d = setup.true_d
    if enabled.get("peak", False):
        means = {pt["grid_value"]: pt["mean"] for pt in report.curves["sanitized"]}
        if true_d not in means:
            raise ConfigError(f"sweep.d must include the true dimension {true_d}", "sweep.d")
        others = {d: m for d, m in means.items() if d != true_d}
        report.checks["peak"] = _check(all(means[true_d] > m for m in others.values()), means=means, true_d=true_d)
    if "spectrum_drop" in enabled:
        orders = float(enabled["spectrum_drop"].get("min_drop_orders", 4.0)) if isinstance(enabled["spectrum_drop"], dict) else 4.0
        drops = []
        for sp in spectra:
            lo = max(sp[true_d], np.finfo(float).tiny) if true_d < len(sp) else np.finfo(float).tiny
            drops.append(math.log10(sp[true_d - 1] / lo))
        report.checks["spectrum_drop"] = _check(min(drops) >= orders, min_orders=min(drops), required=orders)
    report.wall_clock = time.perf_counter() - started
    return report


def spectrum(config) -> ExperimentReport:
    """Eigenvalue spectrum of the empirical covariance for the first ``sweep.n`` value."""
    setup = _setup(config)
    cfg = setup.config
    n = sweep_values(cfg, "n")[0]
    master, _ = setup.seeds()
    so = setup.sanitizer_options()
    samples = collect_clean_samples(setup.env, setup.policy, n, so["mode"], derive_rng(master, SAMPLES, 0, 0))
    model = eigendecompose(empirical_covariance(samples.samples, center=so["center"]))
    rows = [{"index": i + 1, "eigenvalue": float(v)} for i, v in enumerate(model.eigenvalues)]
    return ExperimentReport("spectrum", cfg, rows, {"master": master, "count": 1})


def spectrum_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "eigenvalue", "log10_eigenvalue"])
    for r in report.rows:
        v = r["eigenvalue"]
        w.writerow([r["index"], repr(v), repr(math.log10(v)) if v > 0 else "-inf"])
    return buf.getvalue()


def theorem1(config) -> ExperimentReport:
    """Run :func:`theorem1_check` over ``sweep.n``; the ``bound`` check needs zero violations."""
    started = time.perf_counter()
    setup = _setup(config)
    cfg = setup.config
    if not is_planted(setup):
        raise ConfigError("theorem1 runs on planted environments", "env.kind")
    trigger = _require_trigger(setup)
    master, count = setup.seeds()
    ev = setup.evaluation_options()
    so = setup.sanitizer_options()
    d = so["d"] if isinstance(so["d"], int) else setup.true_d
    delta = cfg.get("theorem", {}).get("delta", 0.05)
    grid = sweep_values(cfg, "n")
    trials = []
    for gi, n in enumerate(grid):
        for rep in theorem1_check(
            setup.env, setup.policy, trigger, n, range(count), d=d, episodes=ev["episodes"], tol=ev["tol"],
            b_rollouts=ev["b_rollouts"], delta=delta, master=master, grid_index=gi, mode=so["mode"],
        ):
            trials.append(rep.to_dict())
    violations = [r for r in trials if not r["holds"]]
    rows = _group(trials, "n_used", grid)
    for row in rows:
        row["violations"] = sum(not t["holds"] for t in row["trials"])
        row["max_gap_over_bound"] = max(t["gap"] - t["bound"] for t in row["trials"])
    report = ExperimentReport("theorem1", cfg, rows, {"master": master, "count": count})
    report.checks["bound"] = _check(not violations, violations=len(violations), runs=len(trials))
    report.wall_clock = time.perf_counter() - started
    return report


# --------------------------------------------------------------------------
# lemma suites


@dataclass
class LemmaResult:
    name: str
    passed: bool
    stats: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, **self.stats}


def random_spectrum_pair(rng: np.random.Generator, D: int, d: int, min_gap: float):
    """Random covariance with ``lambda_d - lambda_{d+1} >= min_gap`` and a random symmetric perturbation of it."""
    top = rng.uniform(0.0, 2.0, d) + 1.0 + min_gap
    rest = rng.uniform(0.0, 1.0, D - d)
    vals = np.sort(np.concatenate([top, rest]))[::-1]
    Q = random_orthonormal(D, D, rng)
    sigma = (Q * vals) @ Q.T
    noise = rng.standard_normal((D, D))
    noise = 0.5 * (noise + noise.T)
    scale = 10.0 ** rng.uniform(-4, 0.5)
    sigma_hat = sigma + scale * noise / np.linalg.norm(noise, 2)
    return 0.5 * (sigma + sigma.T), 0.5 * (sigma_hat + sigma_hat.T)


def davis_kahan_suite(trials: int = 500, rng: Optional[np.random.Generator] = None, min_gap: float = 0.1,
                      identity_tol: float = 1e-9) -> LemmaResult:
    """Check ``||sin Theta||_F <= 2 sqrt(d)/gap ||Sigma - Sigma_hat||_2`` and the Frobenius projector identity."""
    rng = np.random.default_rng(0) if rng is None else rng
    violations, worst_ratio, worst_identity, skipped = 0, 0.0, 0.0, 0
    for _ in range(trials):
        D = int(rng.integers(2, 13))
        d = int(rng.integers(1, D))
        sigma, sigma_hat = random_spectrum_pair(rng, D, d, min_gap)
        model = eigendecompose(sigma)
        if model.gap(d) <= min_gap:
            skipped += 1
            continue
        p = projector(model, d)
        q = projector(eigendecompose(sigma_hat), d)
        s = sin_theta_frobenius(p, q)
        bound = davis_kahan_bound(sigma, sigma_hat, d)
        violations += int(s > bound)
        worst_ratio = max(worst_ratio, s / bound if bound > 0 else 0.0)
        worst_identity = max(worst_identity, abs(projector_distance(p, q, "frobenius") - math.sqrt(2.0) * s))
    passed = violations == 0 and worst_identity <= identity_tol
    return LemmaResult("davis_kahan", passed, {
        "trials": trials - skipped, "violations": violations, "max_ratio_to_bound": worst_ratio,
        "max_identity_error": worst_identity,
    })


def sin_theta_identity_suite(trials: int = 500, rng: Optional[np.random.Generator] = None, tol: float = 1e-9) -> LemmaResult:
    """``||P - Q||_F = sqrt(2) ||sin Theta||_F`` and ``||P - Q||_2 <= sqrt(2) ||sin Theta||_F`` on random subspace pairs."""
    rng = np.random.default_rng(1) if rng is None else rng
    worst, spectral_violations = 0.0, 0
    for _ in range(trials):
        D = int(rng.integers(2, 20))
        d = int(rng.integers(1, D))
        p = Projector.from_basis(random_orthonormal(D, d, rng))
        q = Projector.from_basis(random_orthonormal(D, d, rng))
        s = sin_theta_frobenius(p, q)
        worst = max(worst, abs(projector_distance(p, q, "frobenius") - math.sqrt(2.0) * s))
        spectral_violations += int(projector_distance(p, q) > math.sqrt(2.0) * s + 1e-12)
    return LemmaResult("sin_theta_identity", worst <= tol and spectral_violations == 0, {
        "trials": trials, "max_identity_error": worst, "spectral_violations": spectral_violations,
    })


def covariance_scaling_suite(
    ns: Sequence[int] = tuple(2**k for k in range(8, 15)), trials: int = 50, D: int = 8,
    rng: Optional[np.random.Generator] = None, target: float = -0.5, tol: float = 0.1,
) -> LemmaResult:
    """Median ``||Sigma_n - Sigma||_2`` over Gaussian draws should fall like ``n^{-1/2}``."""
    rng = np.random.default_rng(2) if rng is None else rng
    vals = np.linspace(4.0, 0.5, D)
    Q = random_orthonormal(D, D, rng)
    sigma = (Q * vals) @ Q.T
    chol = Q * np.sqrt(vals)
    medians = []
    for n in ns:
        errs = []
        for _ in range(trials):
            x = rng.standard_normal((n, D)) @ chol.T
            errs.append(np.linalg.norm(empirical_covariance(x).matrix - sigma, 2))
        medians.append(float(np.median(errs)))
    slope = loglog_slope(ns, medians)
    return LemmaResult("covariance_scaling", abs(slope - target) <= tol, {
        "slope": slope, "ns": list(ns), "medians": medians, "trials": trials,
    })


def projector_scaling_suite(
    env: PlantedEnv, policy: Policy, ns: Sequence[int] = tuple(2**k for k in range(6, 15)), trials: int = 50,
    master: int = 0, target: float = -0.5, tol: float = 0.1, d: Optional[int] = None, mode: str = "geometric_iid",
) -> LemmaResult:
    """Median ``||P_E - P_En||_2`` from clean geometric samples should fall like ``n^{-1/2}``."""
    d = env.spec.d if d is None else d
    true_proj = projector(eigendecompose(env.true_covariance()), d)
    medians = []
    for gi, n in enumerate(ns):
        errs = []
        for t in range(trials):
            samples = collect_clean_samples(env, policy, n, mode, derive_rng(master, SAMPLES, gi, t))
            errs.append(projector_distance(true_proj, fit_safe_subspace(samples, d=d).projector))
        medians.append(float(np.median(errs)))
    slope = loglog_slope(ns, medians)
    return LemmaResult("projector_scaling", abs(slope - target) <= tol, {
        "slope": slope, "ns": list(ns), "medians": medians, "trials": trials,
    })


def performance_difference_suite(
    mdps: int = 100, n_states: int = 5, n_actions: int = 2, rng: Optional[np.random.Generator] = None, tol: float = 1e-8,
) -> LemmaResult:
    """Both sides of the Markov performance-difference identity on the toy MDP and random tabular MDPs."""
    rng = np.random.default_rng(3) if rng is None else rng
    toy = toy_mdp()
    toy_report = verify_performance_difference(toy, toy_optimal_policy(), toy_right_policy())
    worst = toy_report.discrepancy
    for _ in range(mdps):
        env = random_tabular_mdp(n_states, n_actions, rng)
        rep = verify_performance_difference(env, random_tabular_policy(env, rng), random_tabular_policy(env, rng))
        worst = max(worst, rep.discrepancy)
    return LemmaResult("performance_difference", worst <= tol, {
        "mdps": mdps, "max_discrepancy": worst, "toy_lhs": toy_report.lhs, "toy_rhs": toy_report.rhs,
    })


def verify_lemmas(config: Optional[dict] = None) -> ExperimentReport:
    """Run the Davis-Kahan, sin-Theta identity, covariance scaling, projector scaling and
    performance-difference suites. ``config["lemmas"]`` may override trial counts and
    the projector-scaling environment comes from ``config["env"]`` when it is planted.
    """
    started = time.perf_counter()
    config = config or {}
    opts = config.get("lemmas", {})
    master = config.get("seeds", {}).get("master", 0)
    results = [
        davis_kahan_suite(opts.get("davis_kahan_trials", 500), derive_rng(master, 10)),
        sin_theta_identity_suite(opts.get("identity_trials", 500), derive_rng(master, 11)),
        covariance_scaling_suite(trials=opts.get("scaling_trials", 50), rng=derive_rng(master, 12)),
        performance_difference_suite(opts.get("pdl_mdps", 100), rng=derive_rng(master, 13)),
    ]
    if "env" in config and config["env"].get("kind") == "planted":
        setup = build(config)
        results.append(projector_scaling_suite(
            setup.env, setup.policy, trials=opts.get("scaling_trials", 50), master=master,
        ))
    report = ExperimentReport("verify-lemmas", config, [r.to_dict() for r in results], {"master": master})
    for r in results:
        report.checks[r.name] = _check(r.passed)
    report.wall_clock = time.perf_counter() - started
    return report
