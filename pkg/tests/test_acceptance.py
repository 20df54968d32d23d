"""Acceptance criteria, one test per check.

Each test appends a ``PASS``/``FAIL`` line to the session log printed in the
terminal summary, then asserts. Tolerances are pinned here, not derived from
the code under test.
"""

import math
import os
import subprocess
import sys
from pathlib import Path as FsPath

import numpy as np
import pytest
from scipy import stats

from conftest import IID, TWO_STATE, random_stochastic
from nhmc.chain_model import (
    ChainSpec,
    EpsilonSchedule,
    Observable,
    Path,
    TransitionSchedule,
    expected_sum,
    make_perturbed_schedule,
    matrix_norm,
    validate_matrix,
)
from nhmc.cli_reports import parse_config, run_experiment
from nhmc.ergodic_analysis import condition4_diagnostic, dobrushin_delta, stationary_distribution
from nhmc.limit_quantities import drift_terms, enumerate_exact, enumerate_paths, martingale_decompose, theta
from nhmc.monte_carlo import mdp_estimate, occupation_frequencies, sample_path, simulate_batch

ROOT = FsPath(__file__).resolve().parents[1]
F01 = Observable([0.0, 1.0], 1.0)
THETA_B_HAND = 2 / 3 * (0.0 - 0.1**2) + 1 / 3 * (1.0 - 0.8**2)  # 0.11333...


def record(log, label, ok, detail):
    log.append(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    return ok


@pytest.fixture(scope="module")
def spec_a():
    return ChainSpec([0.5, 0.5], TransitionSchedule.homogeneous(IID))


@pytest.fixture(scope="module")
def spec_b():
    return ChainSpec([1.0, 0.0], TransitionSchedule.homogeneous(TWO_STATE))


# 1 -------------------------------------------------------------------------


def test_c01_oracle_equivalence(spec_a, acceptance_log):
    n, N = 12, 100_000
    ex = enumerate_exact(spec_a, F01, n)
    binom = stats.binom.pmf(np.arange(n + 1), n, 0.5)
    exact_ok = np.array_equal(ex.support, np.arange(n + 1.0)) and np.max(np.abs(ex.probabilities - binom)) <= 1e-15
    mean_err = abs(expected_sum(spec_a, F01, n) - ex.mean)
    s = simulate_batch(spec_a, F01, n, N, 42, 0.25)
    worst = 0.0
    for atom, p in zip(ex.support, ex.probabilities):
        worst = max(worst, abs(np.mean(s.sums == atom) - p) / (4 * math.sqrt(p * (1 - p) / N)))
    ok = exact_ok and mean_err <= 1e-12 and worst <= 1.0
    detail = f"binomial exact={exact_ok}, |E S_n - mean|={mean_err:.1e}, worst atom error / 4sigma={worst:.3f}"
    assert record(acceptance_log, "1 oracle equivalence", ok, detail)


# 2 -------------------------------------------------------------------------


def test_c02a_clt_iid(spec_a, acceptance_log):
    pi = stationary_distribution(IID)
    th = theta(IID, pi, F01)
    s = simulate_batch(spec_a, F01, 2000, 50_000, 42, th)
    ok = th == 0.25 and s.ks_distance <= 0.02
    assert record(acceptance_log, "2(a) CLT iid fixture", ok, f"theta={th:.6g}, ks={s.ks_distance:.4f} (<= 0.02)")


@pytest.fixture(scope="module")
def clt_b(spec_b):
    pi = stationary_distribution(TWO_STATE)
    th = theta(TWO_STATE, pi, F01)
    return th, simulate_batch(spec_b, F01, 2000, 50_000, 42, th)


def test_c02b_theta(clt_b, acceptance_log):
    th, s = clt_b
    rel_w = abs(s.var_w_over_n - th) / th
    ok = abs(th - THETA_B_HAND) <= 1e-12 and rel_w <= 0.02
    detail = f"theta={th:.6f} (hand {THETA_B_HAND:.6f}), Var(W_n)/n={s.var_w_over_n:.5f} (rel {rel_w:.4f} <= 0.02)"
    assert record(acceptance_log, "2(b) theta cross-check", ok, detail)


def test_c02b_clt_ks(clt_b, acceptance_log):
    th, s = clt_b
    ok = s.ks_distance <= 0.02
    detail = f"ks={s.ks_distance:.4f} (<= 0.02); Var(S_n)/n={s.var_s_over_n:.4f} vs theta={th:.4f}"
    assert record(acceptance_log, "2(b) CLT two-state fixture", ok, detail)


# 3 -------------------------------------------------------------------------


def test_c03_condition4(acceptance_log):
    sched = make_perturbed_schedule(TWO_STATE, IID, EpsilonSchedule("power", c=1.0, p=1.0))
    curve = condition4_diagnostic(sched, TWO_STATE, 10_000)
    vals = curve.values
    final = vals[-1]
    decreasing = bool(np.all(np.diff(vals) <= 0))
    ok = curve.ns[-1] == 10_000 and final < 0.05 and decreasing
    assert record(acceptance_log, "3 averaged distance to limit (cond4)", ok, f"final={final:.3e} (< 0.05), non-increasing={decreasing}")


def test_c03_nonhomogeneous_clt(acceptance_log):
    cfg = parse_config((ROOT / "configs" / "perturbed_clt.json").read_bytes())
    assert cfg.params.n == 2000 and cfg.params.N == 50_000 and cfg.params.ks_threshold == 0.025
    env = run_experiment(cfg)
    r = env.results
    ok = env.verdict == "PASS" and r["ks_distance"] <= 0.025
    detail = f"verdict={env.verdict}, ks={r['ks_distance']:.4f} (<= 0.025), occupation dev={r['occupation_max_deviation']:.4f}"
    assert record(acceptance_log, "3 nonhomogeneous CLT", ok, detail)


# 4, 5 ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def long_path(spec_b):
    return sample_path(spec_b, 1_000_000, seed=42)


def test_c04_occupation(long_path, acceptance_log):
    occ = occupation_frequencies(long_path, K=2)
    dev = np.abs(occ - np.array([2 / 3, 1 / 3]))
    ok = bool(np.all(dev <= 0.01))
    assert record(acceptance_log, "4 occupation law", ok, f"L_n/n={np.round(occ, 5).tolist()}, max dev={dev.max():.2e} (<= 0.01)")


def test_c05_predictable_variation(long_path, spec_b, acceptance_log):
    tr = martingale_decompose(long_path, spec_b, F01)
    v = tr.v_values[-1] / long_path.n
    rel = abs(v - THETA_B_HAND) / THETA_B_HAND
    ok = rel <= 0.02
    assert record(acceptance_log, "5 predictable variation", ok, f"V(W_n)/n={v:.5f}, rel err={rel:.4f} (<= 0.02)")


# 6 -------------------------------------------------------------------------


def test_c06_martingale_identities(rng, acceptance_log):
    n = 10
    sched = TransitionSchedule.explicit([random_stochastic(rng, 2) for _ in range(n)])
    spec = ChainSpec(rng.dirichlet(np.ones(2)), sched)
    f = Observable(rng.normal(size=2))
    paths, probs = enumerate_paths(spec, n)
    w = np.empty(len(paths))
    v = np.empty(len(paths))
    for r, states in enumerate(paths):
        tr = martingale_decompose(Path(states), spec, f)
        w[r], v[r] = tr.w_values[-1], tr.v_values[-1]
    ew = float(probs @ w)
    gap = abs(float(probs @ (w * w)) - float(probs @ v))
    ok = abs(probs.sum() - 1) <= 1e-12 and abs(ew) <= 1e-12 and gap <= 1e-12
    assert record(acceptance_log, "6 martingale identities", ok, f"|E W_n|={abs(ew):.1e}, |E W_n^2 - E V(W_n)|={gap:.1e} (<= 1e-12)")


# 7 -------------------------------------------------------------------------


def test_c07_drift_bound(rng, acceptance_log):
    violations = 0
    steps = 0
    for _ in range(100):
        K = int(rng.integers(2, 6))
        mats = [random_stochastic(rng, K, sparsity=float(rng.choice([0.0, 0.4]))) for _ in range(100)]
        spec = ChainSpec(rng.dirichlet(np.ones(K)), TransitionSchedule.explicit(mats))
        f = Observable(rng.normal(size=K))
        bounds, realized = drift_terms(spec, f, 100)
        violations += int(np.sum(realized > bounds + 1e-12))
        steps += len(bounds)
    ok = violations == 0 and steps == 10_000
    assert record(acceptance_log, "7 drift bound", ok, f"{violations} violations over {steps} steps in 100 schedules")


# 8 -------------------------------------------------------------------------


def test_c08_mdp_trend(spec_a, acceptance_log):
    alpha, th, N = 0.75, 0.25, 200_000
    ns = (2048, 8192, 32768)
    tails = (1e-2, 10**-2.5, 1e-3)
    xs = {n: stats.norm.isf(t / 2) * math.sqrt(n * th) / n**alpha for n, t in zip(ns, tails)}
    est = mdp_estimate(spec_a, F01, ns, alpha, sorted(xs.values()), N, 42, th)
    gaps = []
    for n in ns:
        c = est.cell(n, xs[n])
        assert not c.flagged
        gaps.append(abs(c.normalized_log - c.reference) / abs(c.reference))
    ok = gaps[-1] <= 0.35 and gaps[1] <= gaps[0] and gaps[2] <= gaps[1]
    detail = "gaps " + ", ".join(f"n={n} x={xs[n]:.4f}: {g:.4f}" for n, g in zip(ns, gaps)) + " (last <= 0.35, non-increasing)"
    assert record(acceptance_log, "8 MDP trend", ok, detail)


# 9 -------------------------------------------------------------------------


def test_c09_delta_norm_properties(rng, acceptance_log):
    bad = {"submult": 0, "norm1": 0, "range": 0, "half_l1": 0, "delta_submult": 0}
    for _ in range(1000):
        p = validate_matrix(random_stochastic(rng, 5, sparsity=float(rng.choice([0.0, 0.5]))))
        q = validate_matrix(random_stochastic(rng, 5))
        a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        bad["submult"] += matrix_norm(a @ b) > matrix_norm(a) * matrix_norm(b) * (1 + 1e-15)
        bad["norm1"] += matrix_norm(p) != 1.0 or matrix_norm(q) != 1.0
        dp, dq = dobrushin_delta(p), dobrushin_delta(q)
        bad["range"] += not (0.0 <= dp <= 1.0)
        half = 0.5 * np.abs(p[:, None, :] - p[None, :, :]).sum(axis=2).max()
        bad["half_l1"] += bool(abs(dp - half) > 1e-12)
        bad["delta_submult"] += dobrushin_delta(p @ q) > dp * dq + 1e-12
    ok = sum(bad.values()) == 0
    assert record(acceptance_log, "9 delta/norm properties", ok, f"violations {bad} over 1000 pairs")


# 10 ------------------------------------------------------------------------


def _run_cli(threads):
    env = dict(os.environ, NHMC_THREADS=str(threads))
    env.pop("NUMBA_NUM_THREADS", None)
    cmd = [sys.executable, "-m", "nhmc.cli", "clt", "--config", str(ROOT / "configs" / "iid_clt.json")]
    return subprocess.run(cmd, env=env, capture_output=True, check=False, cwd=ROOT)


def _effective_threads(threads):
    env = dict(os.environ, NHMC_THREADS=str(threads))
    env.pop("NUMBA_NUM_THREADS", None)
    code = (
        "from nhmc.cli import _apply_thread_cap; _apply_thread_cap();"
        "from nhmc.monte_carlo import configure_threads; print(configure_threads())"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return int(out.stdout.strip())


def test_c10_determinism(acceptance_log):
    one, eight = _run_cli(1), _run_cli(8)
    workers = (_effective_threads(1), _effective_threads(8))
    ok = one.returncode == eight.returncode == 0 and one.stdout == eight.stdout and len(one.stdout) > 0 and workers == (1, 8)
    detail = f"exit codes {one.returncode}/{eight.returncode}, {len(one.stdout)} bytes, identical={one.stdout == eight.stdout}, workers={workers}"
    assert record(acceptance_log, "10 determinism across thread counts", ok, detail)
