"""Ground-truth two-stage causal MDP with parallel causal graphs.

An episode starts at state 0, where ``n`` independent Bernoulli variables
live and the learner may perform one atomic intervention.  The MDP then moves
to one of ``k`` intermediate states, each with its own ``n`` Bernoulli
variables; the learner intervenes again and collects a 0/1 reward.

Interventions are addressed by their position in a canonical ordering
(``do()`` first, then ``do(X_1=0)``, ``do(X_1=1)``, ``do(X_2=0)``, ...), so a
transition matrix row, a reward-table column and a frequency-vector entry all
share the same index.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
CONSISTENCY_TOL = 1e-9


class InvalidArgument(ValueError):
    """Raised when a constructor or operation receives out-of-contract input."""


class UnreachableState(ValueError):
    """Raised when some intermediate state has zero probability under every start intervention."""


class Kind(enum.Enum):
    DO_NOTHING = "do()"
    SET = "set"


@dataclass(frozen=True, order=True)
class Intervention:
    """Atomic intervention: ``do()`` or ``do(X_var = value)`` with 1-based ``var``."""

    var: int | None = None
    value: int | None = None

    def __post_init__(self) -> None:
        if (self.var is None) != (self.value is None):
            raise InvalidArgument("var and value must be given together")
        if self.var is not None:
            if self.var < 1:
                raise InvalidArgument(f"var must be >= 1, got {self.var}")
            if self.value not in (0, 1):
                raise InvalidArgument(f"value must be 0 or 1, got {self.value}")

    @property
    def kind(self) -> Kind:
        return Kind.DO_NOTHING if self.var is None else Kind.SET

    @property
    def index(self) -> int:
        """Position in the canonical ordering."""
        if self.var is None:
            return 0
        return 2 * self.var - 1 + self.value

    @classmethod
    def do_nothing(cls) -> "Intervention":
        return cls()

    @classmethod
    def set(cls, var: int, value: int) -> "Intervention":
        return cls(var, value)

    @classmethod
    def from_index(cls, index: int) -> "Intervention":
        if index < 0:
            raise InvalidArgument(f"intervention index must be >= 0, got {index}")
        if index == 0:
            return cls()
        return cls((index + 1) // 2, (index + 1) % 2)

    def __str__(self) -> str:
        if self.var is None:
            return "do()"
        return f"do(X{self.var}={self.value})"


DO_NOTHING = Intervention()


def canonical_intervention_order(n: int) -> list[Intervention]:
    """All ``2n+1`` interventions of a state with ``n`` variables, in canonical order."""
    if n < 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    order = [DO_NOTHING]
    for j in range(1, n + 1):
        order.append(Intervention(j, 0))
        order.append(Intervention(j, 1))
    return order


def num_interventions(n: int) -> int:
    return 2 * n + 1


def _check_prob(p: float, what: str) -> float:
    p = float(p)
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise InvalidArgument(f"{what} must lie in [0, 1], got {p}")
    return p


@dataclass(frozen=True)
class RewardModel:
    """Bernoulli reward depending on at most one variable per matching rule.

    ``overrides`` is a priority list of ``(var, value, prob)``; the first entry
    whose variable takes ``value`` sets the success probability, otherwise
    ``base`` applies.
    """

    base: float = 0.5
    overrides: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self) -> None:
        _check_prob(self.base, "reward base")
        seen = set()
        clean = []
        for var, value, prob in self.overrides:
            var, value = int(var), int(value)
            if var < 1:
                raise InvalidArgument(f"override var must be >= 1, got {var}")
            if value not in (0, 1):
                raise InvalidArgument(f"override value must be 0 or 1, got {value}")
            if (var, value) in seen:
                raise InvalidArgument(f"duplicate override for X{var}={value}")
            seen.add((var, value))
            clean.append((var, value, _check_prob(prob, "override probability")))
        object.__setattr__(self, "overrides", tuple(clean))

    def success_prob(self, assignment: np.ndarray) -> np.ndarray:
        """P{R=1 | assignment} for each row of a ``(size, n)`` 0/1 array."""
        assignment = np.atleast_2d(assignment)
        prob = np.full(assignment.shape[0], self.base)
        undecided = np.ones(assignment.shape[0], dtype=bool)
        for var, value, p in self.overrides:
            hit = undecided & (assignment[:, var - 1] == value)
            prob[hit] = p
            undecided &= ~hit
        return prob

    def expected(self, q: np.ndarray, a: Intervention = DO_NOTHING) -> float:
        """Exact E[R | a] under independent Bernoulli(q) variables."""
        q = np.asarray(q, dtype=float).copy()
        if a.var is not None:
            q[a.var - 1] = float(a.value)

        def match(var: int, value: int) -> float:
            return q[var - 1] if value == 1 else 1.0 - q[var - 1]

        # probability that no earlier override on each variable has fired
        earlier: dict[int, float] = {}
        total = 0.0
        for var, value, p in self.overrides:
            blocked = 1.0
            for other, mass in earlier.items():
                if other != var:
                    blocked *= 1.0 - mass
            # an earlier override on the same variable uses the other value,
            # so it cannot fire when this one matches
            total += p * match(var, value) * blocked
            earlier[var] = earlier.get(var, 0.0) + match(var, value)
        none_fire = 1.0
        for mass in earlier.values():
            none_fire *= 1.0 - mass
        return float(total + self.base * none_fire)


@dataclass(frozen=True)
class StateModel:
    q: np.ndarray
    reward: RewardModel = field(default_factory=RewardModel)

    def __post_init__(self) -> None:
        q = np.array(self.q, dtype=float).reshape(-1)
        if q.size == 0:
            raise InvalidArgument("a state needs at least one variable")
        if np.any(np.isnan(q)) or np.any(q < 0.0) or np.any(q > 1.0):
            raise InvalidArgument(f"variable probabilities must lie in [0, 1], got {q}")
        for var, _, _ in self.reward.overrides:
            if var > q.size:
                raise InvalidArgument(f"reward override references X{var} but n={q.size}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class Policy:
    start_action: Intervention
    intermediate_actions: tuple[Intervention, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "intermediate_actions", tuple(self.intermediate_actions))

    def __call__(self, state: int) -> Intervention:
        if state == 0:
            return self.start_action
        return self.intermediate_actions[state - 1]

    @classmethod
    def from_indices(cls, start: int, mids: Iterable[int]) -> "Policy":
        return cls(Intervention.from_index(int(start)), tuple(Intervention.from_index(int(b)) for b in mids))

    @property
    def indices(self) -> tuple[int, tuple[int, ...]]:
        return self.start_action.index, tuple(a.index for a in self.intermediate_actions)

    def __str__(self) -> str:
        mids = ", ".join(f"{i}:{a}" for i, a in enumerate(self.intermediate_actions, start=1))
        return f"Policy(0:{self.start_action}; {mids})"


@dataclass(frozen=True)
class Episode:
    start_assignment: np.ndarray
    reached_state: int
    intermediate_assignment: np.ndarray
    reward: int


@dataclass(frozen=True)
class Instance:
    """Full ground truth: variable laws, transition matrix and reward models.

    ``transitions[a, i-1]`` is P{i | a} with ``a`` the canonical index of a
    start-state intervention.
    """

    start: StateModel
    intermediates: tuple[StateModel, ...]
    transitions: np.ndarray

    def __post_init__(self) -> None:
        mids = tuple(self.intermediates)
        object.__setattr__(self, "intermediates", mids)
        if not mids:
            raise InvalidArgument("need at least one intermediate state")
        n = self.start.n
        if any(s.n != n for s in mids):
            raise InvalidArgument("every state must have the same number of variables")
        P = np.array(self.transitions, dtype=float)
        N, k = num_interventions(n), len(mids)
        if P.shape != (N, k):
            raise InvalidArgument(f"transition matrix must have shape {(N, k)}, got {P.shape}")
        if np.any(np.isnan(P)) or np.any(P < 0.0) or np.any(P > 1.0):
            raise InvalidArgument("transition probabilities must lie in [0, 1]")
        bad = np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL
        if np.any(bad):
            raise InvalidArgument(f"transition rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        q0 = self.start.q
        for j in range(n):
            mixed = (1.0 - q0[j]) * P[2 * j + 1] + q0[j] * P[2 * j + 2]
            if np.max(np.abs(mixed - P[0])) > CONSISTENCY_TOL:
                raise InvalidArgument(
                    f"rows for X{j + 1} are inconsistent with the do() row under q0={q0[j]}"
                )
        P.setflags(write=False)
        object.__setattr__(self, "transitions", P)

    @property
    def n(self) -> int:
        return self.start.n

    @property
    def k(self) -> int:
        return len(self.intermediates)

    @property
    def N(self) -> int:
        return num_interventions(self.n)

    @cached_property
    def reward_table(self) -> np.ndarray:
        """``(k, N)`` array of exact E[R_i | b]."""
        order = canonical_intervention_order(self.n)
        table = np.array([[s.reward.expected(s.q, b) for b in order] for s in self.intermediates])
        table.setflags(write=False)
        return table

    @cached_property
    def observational_given_state(self) -> np.ndarray:
        """``(k, n)`` array of P{X^0_j = 1 | reached i} under ``do()``.

        Under ``do()`` the reached state is drawn first and each start variable
        is then drawn from its Bayes posterior; this keeps every pairwise law
        of (X^0_j, state) equal to the one implied by the intervention rows.
        """
        P = self.transitions
        q0 = self.start.q
        pdo = P[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = q0[None, :] * P[2::2].T / pdo[:, None]
        cond = np.where(pdo[:, None] > 0, cond, q0[None, :])
        cond = np.clip(cond, 0.0, 1.0)
        cond.setflags(write=False)
        return cond

    @cached_property
    def p_plus(self) -> float:
        P = self.transitions
        return float(P[P > 0].min())

    def with_reward(self, state: int, reward: RewardModel) -> "Instance":
        mids = list(self.intermediates)
        mids[state - 1] = StateModel(mids[state - 1].q, reward)
        return Instance(self.start, tuple(mids), self.transitions)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _draw_states(rng: np.random.Generator, row: np.ndarray, size: int) -> np.ndarray:
    cdf = np.cumsum(row)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), row.size - 1)


def _draw_assignment(rng: np.random.Generator, q: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Product-Bernoulli draws with the bit of each ``Set`` action forced."""
    size = actions.size
    x = (rng.random((size, q.size)) < q).astype(np.int8)
    forced = actions > 0
    if np.any(forced):
        rows = np.flatnonzero(forced)
        var = (actions[rows] - 1) // 2
        x[rows, var] = (actions[rows] - 1) % 2
    return x


@dataclass
class EpisodeBatch:
    """Column-wise record of a batch of episodes, in the order they were run."""

    start_actions: np.ndarray
    start_assignment: np.ndarray
    states: np.ndarray  # 1-based
    mid_actions: np.ndarray
    assignment: np.ndarray
    rewards: np.ndarray

    def __len__(self) -> int:
        return self.states.size


class Simulator:
    """Black-box sampler over an :class:`Instance`.

    Algorithms interact with the environment only through :meth:`run`, and
    every episode they consume is counted in :attr:`episodes`.
    """

    def __init__(self, inst: Instance, rng: np.random.Generator):
        self._inst = inst
        self.rng = rng
        self.episodes = 0
        self.n, self.k, self.N = inst.n, inst.k, inst.N
        self._q = np.stack([s.q for s in inst.intermediates])

    def run(
        self,
        start_actions: np.ndarray | int,
        mid_policy: Callable[[np.ndarray], np.ndarray] | int = 0,
        size: int | None = None,
    ) -> EpisodeBatch:
        """Run one episode per entry of ``start_actions``.

        ``mid_policy`` maps the array of reached (1-based) states to the
        action index taken at each; an int means the same action everywhere.
        """
        inst, rng = self._inst, self.rng
        if np.isscalar(start_actions):
            if size is None:
                raise InvalidArgument("size is required with a scalar start action")
            start_actions = np.full(size, int(start_actions), dtype=np.int64)
        start_actions = np.asarray(start_actions, dtype=np.int64)
        size = start_actions.size
        if size and (start_actions.min() < 0 or start_actions.max() >= self.N):
            raise InvalidArgument("start action index out of range")

        states0 = np.empty(size, dtype=np.int64)
        x0 = np.empty((size, self.n), dtype=np.int8)
        for a in np.unique(start_actions):
            idx = np.flatnonzero(start_actions == a)
            s = _draw_states(rng, inst.transitions[a], idx.size)
            states0[idx] = s
            if a == 0:
                cond = inst.observational_given_state[s]
                x0[idx] = (rng.random(cond.shape) < cond).astype(np.int8)
            else:
                x0[idx] = _draw_assignment(rng, inst.start.q, np.full(idx.size, a))
        states = states0 + 1

        if callable(mid_policy):
            mid = np.asarray(mid_policy(states), dtype=np.int64)
        else:
            mid = np.full(size, int(mid_policy), dtype=np.int64)
        if size and (mid.min() < 0 or mid.max() >= self.N):
            raise InvalidArgument("intermediate action index out of range")

        x = np.empty((size, self.n), dtype=np.int8)
        rewards = np.empty(size, dtype=np.int8)
        for i in np.unique(states0):
            idx = np.flatnonzero(states0 == i)
            xi = _draw_assignment(rng, self._q[i], mid[idx])
            p = inst.intermediates[i].reward.success_prob(xi)
            x[idx] = xi
            rewards[idx] = (rng.random(idx.size) < p).astype(np.int8)
        self.episodes += size
        return EpisodeBatch(start_actions, x0, states, mid, x, rewards)


def sample_episode(
    inst: Instance,
    policy_start: Intervention,
    policy_mid: Callable[[int], Intervention],
    rng: np.random.Generator,
) -> Episode:
    sim = Simulator(inst, rng)
    batch = sim.run(
        np.array([policy_start.index]),
        lambda states: np.array([policy_mid(int(s)).index for s in states]),
    )
    return Episode(batch.start_assignment[0].copy(), int(batch.states[0]), batch.assignment[0].copy(), int(batch.rewards[0]))


# ---------------------------------------------------------------------------
# Exact oracles
# ---------------------------------------------------------------------------


def expected_reward(inst: Instance, state: int, a: Intervention) -> float:
    if not 1 <= state <= inst.k:
        raise InvalidArgument(f"state must be in [1, {inst.k}], got {state}")
    if a.var is not None and a.var > inst.n:
        raise InvalidArgument(f"{a} is not available with n={inst.n}")
    return float(inst.reward_table[state - 1, a.index])


def policy_value(inst: Instance, pi: Policy) -> float:
    if len(pi.intermediate_actions) != inst.k:
        raise InvalidArgument("policy must give one action per intermediate state")
    start, mids = pi.indices
    rewards = inst.reward_table[np.arange(inst.k), list(mids)]
    return float(inst.transitions[start] @ rewards)


def optimal_policy(inst: Instance) -> tuple[Policy, float]:
    """Exact optimum by enumeration; ties go to the earliest canonical intervention."""
    table = inst.reward_table
    mids = np.argmax(table, axis=1)  # argmax returns the first maximum
    best = table[np.arange(inst.k), mids]
    values = inst.transitions @ best
    start = int(np.argmax(values))
    return Policy.from_indices(start, mids), float(values[start])


def true_m(q: Sequence[float]) -> tuple[int, list[Intervention]]:
    """Causal parameter ``m`` and its set of hard-to-observe interventions.

    Each variable is folded to its less likely value (value 1 on ties), the
    folded probabilities are sorted, and ``m`` is the largest ``j`` with
    ``q_(j) < 1/j``.  The qualifying set is always a prefix of the sorted
    order, so ``len(I_m) == m``.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.size == 0:
        raise InvalidArgument("q must be non-empty")
    folded = np.minimum(q, 1.0 - q)
    minority = np.where(q <= 0.5, 1, 0)
    order = np.argsort(folded, kind="stable")
    m = 0
    for j, var in enumerate(order, start=1):
        if folded[var] < 1.0 / j:
            m = j
    hard = [Intervention(int(var) + 1, int(minority[var])) for var in order[:m]]
    return m, hard


def lambda_of(P: np.ndarray, m: Sequence[float], solver=None, tol: float = 1e-4):
    """Exploration difficulty ``min_f ||P M^{1/2} (P^T f)^{-1/2}||_inf^2``.

    Returns ``(lambda, f_star)``.  ``solver`` defaults to
    :func:`causal_mdp.opt.solve_min_max`.
    """
    from . import opt

    P = np.asarray(P, dtype=float)
    if np.any(P.max(axis=0) <= 0):
        raise UnreachableState(f"states {np.flatnonzero(P.max(axis=0) <= 0) + 1} are unreachable")
    solver = solver or opt.solve_min_max
    report = solver(opt.MinMaxProblem(P, np.asarray(m, dtype=float)), tol=tol)
    return report.objective_value**2, report.minimizer


# ---------------------------------------------------------------------------
# Instance generators
# ---------------------------------------------------------------------------


def zero_prefix_q(n: int, m: int) -> np.ndarray:
    """``q_j = 0`` for ``j <= m`` and 0.5 otherwise, which gives causal parameter ``max(m, 1)``."""
    q = np.full(n, 0.5)
    q[:m] = 0.0
    return q


def make_experiment_instance(n: int, k: int, m: int, m0: int, eps: float) -> Instance:
    """The benchmark instance: one rewarding variable, one favoured state per start variable.

    ``do()`` moves uniformly; ``do(X^0_i=1)`` moves to state ``i`` with
    probability ``2/k`` and to each other state with ``1/k - 1/(k(k-1))``;
    ``do(X^0_i=0)`` follows from the consistency identity with ``q^0``.
    The reward at state 1 is ``0.5 + eps`` when ``X^1_1 = 1`` and 0.5
    otherwise.
    """
    if k != n:
        raise InvalidArgument(f"the experiment construction needs k == n, got n={n}, k={k}")
    if k < 2:
        raise InvalidArgument("k must be at least 2")
    if not 1 <= m <= n:
        raise InvalidArgument(f"m must be in [1, {n}], got {m}")
    if not 0 <= m0 <= n:
        raise InvalidArgument(f"m0 must be in [0, {n}], got {m0}")
    if not 0.0 <= eps <= 0.5:
        raise InvalidArgument(f"eps must be in [0, 0.5], got {eps}")
    q0 = zero_prefix_q(n, m0)
    N = num_interventions(n)
    P = np.empty((N, k))
    P[0] = 1.0 / k
    for i in range(n):
        up = np.full(k, 1.0 / k - 1.0 / (k * (k - 1)))
        up[i] = 2.0 / k
        P[2 * i + 2] = up
        if q0[i] in (0.0, 1.0):
            # the identity pins only the row of the value that actually occurs
            P[2 * i + 1] = P[0]
        else:
            down = (P[0] - q0[i] * up) / (1.0 - q0[i])
            if np.any(down < -CONSISTENCY_TOL) or np.any(down > 1.0 + CONSISTENCY_TOL):
                raise InvalidArgument(f"no valid do(X{i + 1}=0) row for q0={q0[i]}")
            P[2 * i + 1] = np.clip(down, 0.0, 1.0)
    q = zero_prefix_q(n, m)
    mids = [StateModel(q) for _ in range(k)]
    mids[0] = StateModel(q, RewardModel(0.5, ((1, 1, 0.5 + eps),)))
    return Instance(StateModel(q0), tuple(mids), P)


def make_lower_bound_instance(
    k: int,
    target: tuple[int, Intervention] | None = None,
    beta: float = 0.0,
    m: int | Sequence[int] = 1,
) -> Instance:
    """Deterministic-transition family used for the lower bound.

    ``n = k - 1``; ``do(X^0_i=1)`` leads to state ``i`` and everything else to
    state ``k``.  All rewards are 0.5 except, with ``target=(i, a)``, the
    reward of ``a`` at state ``i`` which is ``0.5 + beta``.  ``m`` sets the
    zero-prefix length of the intermediate-state variables (per state or
    shared), i.e. their causal parameters.
    """
    if k <= 1:
        raise InvalidArgument(f"k must be > 1, got {k}")
    if not 0.0 <= beta < 0.5:
        raise InvalidArgument(f"beta must be in [0, 1/2), got {beta}")
    n = k - 1
    ms = [int(m)] * k if np.isscalar(m) else [int(v) for v in m]
    if len(ms) != k or any(not 0 <= v <= n for v in ms):
        raise InvalidArgument(f"m must give k={k} values in [0, {n}]")
    N = num_interventions(n)
    P = np.zeros((N, k))
    P[:, k - 1] = 1.0
    for i in range(n):
        P[2 * i + 2] = 0.0
        P[2 * i + 2, i] = 1.0
    mids = [StateModel(zero_prefix_q(n, v)) for v in ms]
    if target is not None:
        state, a = target
        if not 1 <= state <= k:
            raise InvalidArgument(f"target state must be in [1, {k}]")
        mids[state - 1] = StateModel(mids[state - 1].q, _single_action_reward(mids[state - 1].q, a, beta))
    return Instance(StateModel(np.zeros(n)), tuple(mids), P)


def _single_action_reward(q: np.ndarray, a: Intervention, beta: float) -> RewardModel:
    """Reward model whose mean is ``0.5 + beta`` under ``a`` and 0.5 otherwise.

    A ``Set`` target must fix a value of probability 0 at its state.  A
    ``do()`` target pays ``0.5 + beta`` unless a deterministic variable is
    moved off its natural value; interventions that leave the law of the
    state unchanged, or only touch random variables, tie with ``do()``.
    """
    if beta == 0.0:
        return RewardModel(0.5)
    if a.var is None:
        det = [(j + 1, int(q[j])) for j in range(q.size) if q[j] in (0.0, 1.0)]
        return RewardModel(0.5 + beta, tuple((j, 1 - v, 0.5) for j, v in det))
    p_hit = q[a.var - 1] if a.value == 1 else 1.0 - q[a.var - 1]
    if p_hit != 0.0:
        raise InvalidArgument(f"target {a} must set a value of probability 0 at its state")
    return RewardModel(0.5, ((a.var, a.value, 0.5 + beta),))


def lower_bound_beta(m: Sequence[float], T: int) -> float:
    """Gap of the hard family: ``min(1/3, sqrt(sum(m) / (18 T)))``."""
    return min(1.0 / 3.0, math.sqrt(float(np.sum(m)) / (18.0 * T)))
