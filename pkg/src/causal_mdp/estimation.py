"""Sampling subroutines that estimate transitions, causal parameters and rewards.

Each routine drives a :class:`~causal_mdp.env.Simulator` for a fixed budget
of episodes and returns its estimates together with the raw :class:`Counts`
they were computed from.  Cells that were never observed fall back to a
conservative default and are listed in ``Counts.flags``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .env import InvalidArgument, Intervention, Simulator, true_m

FREQ_TOL = 1e-12
UNOBSERVED_REWARD = 0.5


class BudgetTooSmall(ValueError):
    pass


def check_frequency_vector(f: np.ndarray, N: int) -> np.ndarray:
    f = np.asarray(f, dtype=float).reshape(-1)
    if f.size != N:
        raise InvalidArgument(f"frequency vector must have {N} entries, got {f.size}")
    if np.any(f < 0) or abs(f.sum() - 1.0) > FREQ_TOL * max(1, N):
        raise InvalidArgument("frequency vector must be nonnegative and sum to 1")
    return f


def uniform(N: int) -> np.ndarray:
    return np.full(N, 1.0 / N)


def apportion(f: np.ndarray, total: int) -> np.ndarray:
    """Integer episode counts proportional to ``f`` summing exactly to ``total``.

    Largest-remainder rounding; ties in the remainder go to the lower index.
    """
    f = np.asarray(f, dtype=float)
    if total < 0:
        raise InvalidArgument("total must be nonnegative")
    raw = f / f.sum() * total
    counts = np.floor(raw).astype(np.int64)
    short = int(total - counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(f.size), -(raw - counts)))
        counts[order[:short]] += 1
    return counts


def schedule(f: np.ndarray, total: int) -> np.ndarray:
    """Start actions grouped by intervention in canonical order."""
    return np.repeat(np.arange(len(f)), apportion(f, total))


@dataclass
class Counts:
    """Raw tallies behind a set of estimates.

    ``ones``/``visits`` count observational (``do()``) rounds per state, row 0
    being the start state.  ``transitions[a, i-1]`` counts arrivals in state
    ``i`` while ``a`` was performed at the start state.  ``reward_*[i-1, b]``
    count the observations used for the reward estimate of ``b`` at ``i``.
    """

    n: int
    k: int
    ones: np.ndarray = None
    visits: np.ndarray = None
    transitions: np.ndarray = None
    reward_successes: np.ndarray = None
    reward_trials: np.ndarray = None
    episodes: int = 0
    flags: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        N = 2 * self.n + 1
        if self.ones is None:
            self.ones = np.zeros((self.k + 1, self.n), dtype=np.int64)
        if self.visits is None:
            self.visits = np.zeros(self.k + 1, dtype=np.int64)
        if self.transitions is None:
            self.transitions = np.zeros((N, self.k), dtype=np.int64)
        if self.reward_successes is None:
            self.reward_successes = np.zeros((self.k, N), dtype=np.int64)
        if self.reward_trials is None:
            self.reward_trials = np.zeros((self.k, N), dtype=np.int64)

    def add_transitions(self, start_actions: np.ndarray, states: np.ndarray) -> None:
        np.add.at(self.transitions, (start_actions, states - 1), 1)

    def add_observations(self, states: np.ndarray, assignment: np.ndarray) -> None:
        for i in np.unique(states):
            rows = states == i
            self.visits[i] += int(rows.sum())
            self.ones[i] += assignment[rows].sum(axis=0)

    def transition_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Empirical rows of the start interventions that were performed, and a mask of which those are."""
        totals = self.transitions.sum(axis=1)
        seen = totals > 0
        rows = np.zeros(self.transitions.shape)
        rows[seen] = self.transitions[seen] / totals[seen, None]
        return rows, seen

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "observational_visits": self.visits.tolist(),
            "transition_tallies": int(self.transitions.sum()),
            "reward_trials": int(self.reward_trials.sum()),
            "flags": list(self.flags),
        }


class TransitionEstimate(NamedTuple):
    p_hat: np.ndarray
    m0_hat: int
    hard0: list[Intervention]
    q0_hat: np.ndarray
    counts: Counts


class CausalEstimate(NamedTuple):
    m_hat: np.ndarray
    q_hat: np.ndarray
    hard: list[list[Intervention]]
    counts: Counts


class RewardEstimate(NamedTuple):
    r_hat: np.ndarray
    counts: Counts


@dataclass
class EstimatedModel:
    """Everything the exploration phases learned.  Row/entry 0 refers to the start state."""

    q_hat: np.ndarray
    m_hat: np.ndarray
    P_hat: np.ndarray
    R_hat: np.ndarray
    I_m_hat: list[list[Intervention]]
    flags: list[str] = field(default_factory=list)


def _conditional_rows(states: np.ndarray, x: np.ndarray, k: int):
    """Empirical state distribution of ``do()`` rounds, overall and conditioned on each ``X_j = v``.

    Yields ``(action_index, counts, total)``.
    """
    yield 0, np.bincount(states - 1, minlength=k), states.size
    for j in range(x.shape[1]):
        for v in (0, 1):
            sel = x[:, j] == v
            yield 2 * j + 1 + v, np.bincount(states[sel] - 1, minlength=k), int(sel.sum())


def estimate_transition_probabilities(sim: Simulator, budget: int) -> TransitionEstimate:
    """Half the budget observes ``do()``; the rest performs each hard intervention explicitly.

    Rows of interventions that are common enough to be seen under ``do()``
    are estimated by conditioning the ``do()`` rounds on the relevant
    variable.  Rows of the hard interventions ``I_m0`` come from performing
    them, the remaining budget split as evenly as possible.
    """
    if budget < 2:
        raise BudgetTooSmall(f"transition estimation needs a budget of at least 2, got {budget}")
    n, k, N = sim.n, sim.k, sim.N
    counts = Counts(n, k)
    t1 = budget // 2
    obs = sim.run(0, 0, size=t1)
    counts.add_transitions(obs.start_actions, obs.states)
    counts.visits[0] += t1
    counts.ones[0] += obs.start_assignment.sum(axis=0)
    q0_hat = counts.ones[0] / t1
    m0_hat, hard0 = true_m(q0_hat)
    if budget < 2 * len(hard0):
        raise BudgetTooSmall(f"budget {budget} cannot cover {len(hard0)} hard interventions twice")

    hard_idx = sorted(a.index for a in hard0)
    p_hat = np.zeros((N, k))
    do_row = np.bincount(obs.states - 1, minlength=k) / t1
    for a, tally, total in _conditional_rows(obs.states, obs.start_assignment, k):
        if a in hard_idx:
            continue
        if total == 0:
            p_hat[a] = do_row
            counts.flags.append(f"P_hat row {Intervention.from_index(a)}: no conditioning rounds, used do() row")
        else:
            p_hat[a] = tally / total

    starts = np.repeat(hard_idx, apportion(np.ones(len(hard_idx)), budget - t1))
    direct = sim.run(starts, 0)
    counts.add_transitions(direct.start_actions, direct.states)
    for a in hard_idx:
        p_hat[a] = counts.transitions[a] / counts.transitions[a].sum()
    counts.episodes = t1 + starts.size
    return TransitionEstimate(p_hat, m0_hat, hard0, q0_hat, counts)


def estimate_causal_parameters(sim: Simulator, f_tilde: np.ndarray, budget: int) -> CausalEstimate:
    """Observe every intermediate state under ``do()`` while mixing ``f_tilde`` with uniform exploration.

    States that were never reached get ``m_hat = n`` and every ``do(X_j=1)``
    as their hard set.
    """
    n, k, N = sim.n, sim.k, sim.N
    f = 0.5 * (check_frequency_vector(f_tilde, N) + uniform(N))
    counts = Counts(n, k)
    batch = sim.run(schedule(f, budget), 0)
    counts.add_transitions(batch.start_actions, batch.states)
    counts.add_observations(batch.states, batch.assignment)
    counts.episodes = len(batch)

    m_hat = np.full(k, n, dtype=np.int64)
    q_hat = np.full((k, n), np.nan)
    hard: list[list[Intervention]] = []
    for i in range(1, k + 1):
        if counts.visits[i] == 0:
            hard.append([Intervention(j, 1) for j in range(1, n + 1)])
            counts.flags.append(f"state {i} never visited: m_hat set to n")
            continue
        q_hat[i - 1] = counts.ones[i] / counts.visits[i]
        m, h = true_m(q_hat[i - 1])
        m_hat[i - 1] = m
        hard.append(h)
    return CausalEstimate(m_hat, q_hat, hard, counts)


def round_robin(hard: Sequence[Sequence[int]]):
    """Intermediate-state policy cycling through each state's list across visits.

    The cursor of each state persists over successive calls.
    """
    cursor = np.zeros(len(hard), dtype=np.int64)
    lists = [np.asarray(h, dtype=np.int64) for h in hard]

    def choose(states: np.ndarray) -> np.ndarray:
        out = np.zeros(states.size, dtype=np.int64)
        for i in np.unique(states):
            idx = np.flatnonzero(states == i)
            h = lists[i - 1]
            if h.size == 0:
                continue
            out[idx] = h[(cursor[i - 1] + np.arange(idx.size)) % h.size]
            cursor[i - 1] += idx.size
        return out

    return choose


def estimate_rewards(
    sim: Simulator,
    f_star: np.ndarray,
    f_tilde: np.ndarray,
    budget: int,
    hard: Sequence[Sequence[Intervention]],
) -> RewardEstimate:
    """Two halves: ``do()`` observations for the easy cells, then round robin over the hard cells.

    ``R_hat[i-1, b]`` for an easy ``b = do(X_j=v)`` averages the first-half
    rewards of visits where ``X_j = v`` happened on its own; hard cells use
    only the second half, where they are performed explicitly.
    """
    n, k, N = sim.n, sim.k, sim.N
    f = (check_frequency_vector(f_star, N) + check_frequency_vector(f_tilde, N) + uniform(N)) / 3.0
    counts = Counts(n, k)
    hard_idx = [sorted(a.index for a in h) for h in hard]
    if len(hard_idx) != k:
        raise InvalidArgument(f"need one hard set per intermediate state, got {len(hard_idx)}")

    t1 = budget // 2
    obs = sim.run(schedule(f, t1), 0)
    counts.add_transitions(obs.start_actions, obs.states)
    counts.add_observations(obs.states, obs.assignment)
    for i in range(1, k + 1):
        at = obs.states == i
        r, x = obs.rewards[at], obs.assignment[at]
        for b in range(N):
            if b in hard_idx[i - 1]:
                continue
            sel = slice(None) if b == 0 else x[:, (b - 1) // 2] == (b - 1) % 2
            counts.reward_trials[i - 1, b] = r[sel].size
            counts.reward_successes[i - 1, b] = int(r[sel].sum())

    direct = sim.run(schedule(f, budget - t1), round_robin(hard_idx))
    counts.add_transitions(direct.start_actions, direct.states)
    np.add.at(counts.reward_trials, (direct.states - 1, direct.mid_actions), 1)
    np.add.at(counts.reward_successes, (direct.states - 1, direct.mid_actions), direct.rewards)
    # round robin only ever plays hard cells, so direct tallies never mix into easy ones
    counts.episodes = len(obs) + len(direct)

    r_hat = np.full((k, N), UNOBSERVED_REWARD)
    seen = counts.reward_trials > 0
    r_hat[seen] = counts.reward_successes[seen] / counts.reward_trials[seen]
    for i, b in zip(*np.nonzero(~seen)):
        counts.flags.append(f"R_hat state {i + 1} {Intervention.from_index(int(b))}: never observed")
    return RewardEstimate(r_hat, counts)
