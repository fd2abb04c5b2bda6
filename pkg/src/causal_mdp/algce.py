"""Convex-exploration learner, the uniform-exploration baseline, and run diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import estimation as est
from . import opt
from .env import Instance, InvalidArgument, Intervention, Policy, Simulator, optimal_policy, policy_value, true_m


@dataclass
class DiagnosticsReport:
    """Good-event checks of one run against the ground truth."""

    e1: bool
    e2: bool
    e3: bool
    e4: bool
    e5: bool
    eta_prime: float
    eta_hat: np.ndarray
    lambda_hat: float
    p_plus: float
    details: dict = field(default_factory=dict)

    @property
    def events(self) -> tuple[bool, bool, bool, bool, bool]:
        return (self.e1, self.e2, self.e3, self.e4, self.e5)

    @property
    def good(self) -> bool:
        return all(self.events)


@dataclass
class RunResult:
    policy: Policy
    estimated: est.EstimatedModel
    budgets_used: tuple[int, int, int]
    f_tilde: np.ndarray | None
    f_star: np.ndarray | None
    diagnostics: DiagnosticsReport | None = None
    lambda_hat: float = math.nan
    solver: opt.SolveReport | None = None
    # empirical transition rows seen by each phase, as (name, rows, observed-mask)
    snapshots: list = field(default_factory=list)
    # per-cell reward sample counts of the last phase, shape (k, N)
    reward_trials: np.ndarray | None = None


def _as_simulator(inst: Instance | Simulator, rng: np.random.Generator | None) -> Simulator:
    if isinstance(inst, Simulator):
        return inst
    if rng is None:
        raise InvalidArgument("an rng is required when passing an Instance")
    return Simulator(inst, rng)


def extract_policy(P_hat: np.ndarray, R_hat: np.ndarray) -> Policy:
    """Greedy policy on the estimates; ties go to the earliest canonical intervention."""
    mids = np.argmax(R_hat, axis=1)
    best = R_hat[np.arange(R_hat.shape[0]), mids]
    start = int(np.argmax(P_hat @ best))
    return Policy.from_indices(start, mids)


def _reachable(P_hat: np.ndarray) -> np.ndarray:
    return np.flatnonzero(P_hat.max(axis=0) > 0)


def run_alg_ce(
    inst: Instance | Simulator,
    T: int,
    solver_tol: float = 1e-4,
    rng: np.random.Generator | None = None,
) -> RunResult:
    sim = _as_simulator(inst, rng)
    if T < 9 * sim.N:
        raise est.BudgetTooSmall(f"T={T} is below 9N={9 * sim.N}")
    b1 = b2 = T // 3
    b3 = T - b1 - b2

    te = est.estimate_transition_probabilities(sim, b1)
    P_hat = te.p_hat
    cols = _reachable(P_hat)
    # states never reached so far carry no information for either program
    f_tilde = opt.solve_max_min_reach(P_hat[:, cols])

    ce = est.estimate_causal_parameters(sim, f_tilde, b2)
    prob = opt.MinMaxProblem(P_hat[:, cols], ce.m_hat[cols])
    report = opt.solve_min_max(prob, tol=solver_tol)
    f_star = report.minimizer

    re = est.estimate_rewards(sim, f_star, f_tilde, b3, ce.hard)
    policy = extract_policy(P_hat, re.r_hat)

    model = est.EstimatedModel(
        q_hat=np.vstack([te.q0_hat, ce.q_hat]),
        m_hat=np.concatenate([[te.m0_hat], ce.m_hat]),
        P_hat=P_hat,
        R_hat=re.r_hat,
        I_m_hat=[te.hard0] + ce.hard,
        flags=te.counts.flags + ce.counts.flags + re.counts.flags,
    )
    rows3, seen3 = ce.counts.transition_rows()
    rows4, seen4 = re.counts.transition_rows()
    return RunResult(
        policy=policy,
        estimated=model,
        budgets_used=(te.counts.episodes, ce.counts.episodes, re.counts.episodes),
        f_tilde=f_tilde,
        f_star=f_star,
        lambda_hat=report.objective_value**2,
        solver=report,
        snapshots=[
            ("transitions", P_hat, np.ones(sim.N, dtype=bool)),
            ("causal", rows3, seen3),
            ("rewards", rows4, seen4),
        ],
        reward_trials=re.counts.reward_trials,
    )


def run_alg_ue(inst: Instance | Simulator, T: int, rng: np.random.Generator | None = None) -> RunResult:
    """Round robin over start interventions, and independently per intermediate state.

    Estimates pool every episode: a ``do(X_j=v)`` cell also counts the
    ``do()`` episodes in which ``X_j = v`` happened on its own.
    """
    sim = _as_simulator(inst, rng)
    if T < 1:
        raise InvalidArgument("T must be >= 1")
    n, k, N = sim.n, sim.k, sim.N
    starts = np.arange(T) % N
    choose = est.round_robin([list(range(N))] * k)
    batch = sim.run(starts, choose)

    counts = est.Counts(n, k)
    counts.episodes = T
    counts.add_transitions(batch.start_actions, batch.states)
    obs0 = batch.start_actions == 0
    trans = counts.transitions.astype(float)
    x0 = batch.start_assignment[obs0]
    s0 = batch.states[obs0] - 1
    for j in range(n):
        for v in (0, 1):
            sel = x0[:, j] == v
            trans[2 * j + 1 + v] += np.bincount(s0[sel], minlength=k)
    P_hat = np.zeros((N, k))
    tot = trans.sum(axis=1)
    P_hat[tot > 0] = trans[tot > 0] / tot[tot > 0, None]
    for a in np.flatnonzero(tot == 0):
        P_hat[a] = P_hat[0]
        counts.flags.append(f"P_hat row {Intervention.from_index(int(a))}: never observed, used do() row")

    np.add.at(counts.reward_trials, (batch.states - 1, batch.mid_actions), 1)
    np.add.at(counts.reward_successes, (batch.states - 1, batch.mid_actions), batch.rewards)
    obs = batch.mid_actions == 0
    xs, ss, rs = batch.assignment[obs], batch.states[obs] - 1, batch.rewards[obs]
    for j in range(n):
        for v in (0, 1):
            sel = xs[:, j] == v
            np.add.at(counts.reward_trials[:, 2 * j + 1 + v], ss[sel], 1)
            np.add.at(counts.reward_successes[:, 2 * j + 1 + v], ss[sel], rs[sel])
    R_hat = np.full((k, N), est.UNOBSERVED_REWARD)
    seen = counts.reward_trials > 0
    R_hat[seen] = counts.reward_successes[seen] / counts.reward_trials[seen]
    counts.add_observations(batch.states, batch.assignment)

    q_hat = np.full((k + 1, n), np.nan)
    if obs0.any():
        q_hat[0] = x0.mean(axis=0)
    m_hat = np.zeros(k + 1, dtype=np.int64)
    hard: list[list[Intervention]] = []
    for i in range(k + 1):
        if i > 0 and obs[batch.states == i].any():
            q_hat[i] = xs[ss == i - 1].mean(axis=0)
        if np.all(np.isfinite(q_hat[i])):
            m_hat[i], h = true_m(q_hat[i])
        else:
            m_hat[i], h = n, [Intervention(j, 1) for j in range(1, n + 1)]
        hard.append(h)

    model = est.EstimatedModel(q_hat, m_hat, P_hat, R_hat, hard, counts.flags)
    return RunResult(extract_policy(P_hat, R_hat), model, (T, 0, 0), None, None,
                     snapshots=[("uniform", P_hat, tot > 0)])


def simple_regret(inst: Instance, pi_hat: Policy) -> float:
    _, best = optimal_policy(inst)
    return max(best - policy_value(inst, pi_hat), 0.0)


def _row_l1(P_hat: np.ndarray, P: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return 0.0
    return float(np.abs(P_hat[mask] - P[mask]).sum(axis=1).max())


def check_good_event(inst: Instance, result: RunResult, T: int) -> DiagnosticsReport:
    """Evaluate the five good-event conditions of an ALG-CE run against the truth.

    Never feeds back into the algorithm.
    """
    if result.f_star is None:
        raise InvalidArgument("diagnostics need an ALG-CE run (no f_star on this result)")
    P = inst.transitions
    k, N = inst.k, inst.N
    p_plus = inst.p_plus
    model = result.estimated
    m0 = true_m(inst.start.q)[0]
    m_true = np.array([true_m(s.q)[0] for s in inst.intermediates])

    l1 = {name: _row_l1(rows, P, mask) for name, rows, mask in result.snapshots}
    e1 = all(v <= p_plus / 3 for v in l1.values())
    m0_hat = int(model.m_hat[0])
    e2 = 2 * m0 / 3 <= m0_hat <= 2 * m0
    m_hat = model.m_hat[1:]
    e3 = bool(np.all((2 * m_true / 3 <= m_hat) & (m_hat <= 2 * m_true)))
    eta_prime = math.sqrt(150 * m0 / (T * p_plus) * math.log(3 * T / k))
    l1_transitions = _row_l1(model.P_hat, P, np.ones(N, dtype=bool))
    e4 = l1_transitions <= eta_prime

    cols = _reachable(model.P_hat)
    y = np.zeros(k)
    y[cols] = model.P_hat[:, cols].T @ result.f_star
    with np.errstate(divide="ignore"):
        eta_hat = np.where(y > 0, np.sqrt(27 * m_hat / (T * np.where(y > 0, y, 1.0)) * math.log(2 * T * N)), np.inf)
    reward_err = np.abs(inst.reward_table - model.R_hat).max(axis=1)
    e5 = bool(np.all(reward_err <= eta_hat))
    return DiagnosticsReport(
        e1, e2, bool(e3), bool(e4), e5, eta_prime, eta_hat, result.lambda_hat, p_plus,
        details={"row_l1": l1, "threshold_e1": p_plus / 3, "m0": m0, "m0_hat": m0_hat,
                 "reward_err": reward_err},
    )
