"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL criterion N: ...`` line.  Running the
file as a script prints all nine lines without pytest.
"""
from __future__ import annotations

import functools
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from causal_mdp import algce, bench, env, opt

DESK = bench.ExperimentConfig(n=10, k=10, m=2, m0=2, eps=0.3, replications=200, T_grid=(1000, 5000, 10000),
                              T=10000, m_grid=(2, 4, 6, 8), workers=1, record_walltime=False)


def report(num: int, ok: bool, detail: str, seconds: float) -> None:
    print(f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail} [{seconds:.1f}s]", flush=True)


def timed(fn):
    @functools.wraps(fn)
    def wrapper():
        t0 = time.perf_counter()
        ok, detail = fn()
        return ok, detail, time.perf_counter() - t0
    return wrapper


@functools.cache
def regret_rows() -> tuple:
    return tuple(bench.run_regret_vs_T(DESK))


def cell(rows, alg, T):
    return next(c for c in bench.summarize([r for r in rows if r.T == T]) if c.algorithm == alg)


def pooled_problem(rng: np.random.Generator) -> opt.MinMaxProblem:
    """Random problem with repeated rows, so several interventions share a class."""
    k = int(rng.integers(1, 5))
    distinct = rng.dirichlet(np.full(k, 0.7), size=int(rng.integers(1, 6)))
    if rng.random() < 0.3:
        distinct = np.vstack([distinct, np.eye(k)[rng.integers(k)]])
    P = distinct[rng.integers(len(distinct), size=int(rng.integers(len(distinct), 11)))]
    P = np.vstack([distinct, P])
    return opt.MinMaxProblem(P, rng.uniform(1.0, 4.0, size=k))


@timed
def criterion_1():
    res = bench.closed_form_suite(np.random.default_rng(1), cases=20, tol=1e-3)
    return res.passed, res.detail


@timed
def criterion_2():
    rng = np.random.default_rng(2)
    worst_over, worst_under, skipped = -np.inf, -np.inf, 0
    for _ in range(50):
        prob = pooled_problem(rng)
        try:
            val, _ = opt.grid_oracle(prob, 0.01)
        except opt.InfeasibleOracle:
            skipped += 1
            continue
        got = opt.solve_min_max(prob).objective_value ** 2
        worst_over = max(worst_over, got - val)
        worst_under = max(worst_under, (val - got) / val)
    ok = worst_over <= 1e-2 and worst_under <= 0.02 and skipped == 0
    return ok, (f"50 pooled problems, max(solver - oracle) {worst_over:.2e}, "
                f"max relative undershoot {worst_under:.2e}, oracle skipped {skipped}")


@timed
def criterion_3():
    res = bench.chord_suite(np.random.default_rng(3), problems=50, trials=200)
    return res.passed, res.detail


@timed
def criterion_4():
    res = bench.kl_inequality_check()
    return res.passed, res.detail


@timed
def criterion_5():
    rows = regret_rows()
    ce, ue = cell(rows, "ALG-CE", 10000), cell(rows, "ALG-UE", 10000)
    ce0 = cell(rows, "ALG-CE", 1000)
    se = bench.pooled_se(ce, ue)
    ok = ce.mean < ue.mean - se and ce.mean < ce0.mean
    return ok, (f"T=10000 CE {ce.mean:.5f} vs UE {ue.mean:.5f} (pooled SE {se:.5f}); "
                f"CE T=1000 {ce0.mean:.5f}")


@timed
def criterion_6():
    rows = bench.run_regret_vs_lambda(DESK)
    cells = sorted((c for c in bench.summarize(rows) if c.algorithm == "ALG-CE"), key=lambda c: c.m)
    lam = [c.lam for c in cells]
    reg = [c.mean for c in cells]
    rho = spearmanr(lam, reg).statistic
    pairs = ", ".join(f"lambda {a:.4g}: {b:.5f}" for a, b in zip(lam, reg))
    return rho >= 0.8, f"Spearman {rho:.3f} ({pairs})"


@timed
def criterion_7():
    inst = env.make_experiment_instance(10, 10, 2, 2, 0.3)
    m_true = np.array([env.true_m(inst.start.q)[0]] + [env.true_m(s.q)[0] for s in inst.intermediates])
    p_err, r_err, m_ok = [], [], True
    for seed in range(20):
        res = algce.run_alg_ce(inst, 10**6, rng=np.random.default_rng(seed))
        p_err.append(np.abs(res.estimated.P_hat - inst.transitions).max())
        seen = res.reward_trials > 0
        r_err.append(np.abs(res.estimated.R_hat - inst.reward_table)[seen].max())
        m_ok &= bool(np.array_equal(res.estimated.m_hat, m_true))
    p, r = float(np.mean(p_err)), float(np.mean(r_err))
    ok = p <= 0.02 and r <= 0.02 and m_ok
    return ok, (f"mean max|P_hat-P| {p:.4f} (worst seed {max(p_err):.4f}), m_hat exact {m_ok}, "
                f"mean max|R_hat-R| {r:.4f} (worst seed {max(r_err):.4f})")


@timed
def criterion_8():
    ce = cell(regret_rows(), "ALG-CE", 10000)
    ev = np.array([r.events for r in regret_rows() if r.algorithm == "ALG-CE" and r.T == 10000], dtype=bool)
    per_event = ", ".join(f"E{i + 1} {1 - ev[:, i].mean():.2f}" for i in range(5))
    return ce.bad_event_rate <= 0.10, f"bad-event frequency {ce.bad_event_rate:.3f} at T=10000 ({per_event})"


@timed
def criterion_9():
    first = bench.rows_to_csv([r for r in regret_rows() if r.T == 10000])
    again = bench.rows_to_csv(bench.run_regret_vs_T(replace(DESK, T_grid=(10000,))))
    return first == again, f"{len(first.encode())} bytes, identical {first == again}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.slow
@pytest.mark.parametrize("num", range(1, 10))
def test_criterion(num, capsys):
    ok, detail, seconds = CRITERIA[num - 1]()
    with capsys.disabled():
        print()
        report(num, ok, detail, seconds)
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, 1):
        ok, detail, seconds = fn()
        report(i, ok, detail, seconds)
        failed += not ok
    sys.exit(1 if failed else 0)
