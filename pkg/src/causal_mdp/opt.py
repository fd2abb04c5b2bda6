"""Simplex programs used to allocate exploration.

Two problems over frequency vectors ``f`` on the probability simplex:

* the convex min-max  ``min_f max_a sum_i A[a,i] / sqrt((P^T f)_i)`` with
  ``A = P diag(sqrt(m))``, whose squared value is the exploration difficulty;
* the max-min LP  ``max_f min_i (P^T f)_i``, which spreads visits evenly
  over the intermediate states.

Both are handled by :func:`minimize_max`, an accelerated entropic mirror
descent on a log-sum-exp smoothing of the max, with the temperature halved
whenever the smoothed problem is solved to its own accuracy.  Every
iterate carries a lower bound from convex duality, so the returned gap is
a certificate.  If the first-order phase stalls before the requested
accuracy, a cutting-plane phase built from the exact gradients sharpens
both the iterate and the lower bound (the master LP is solved by HiGHS).

:func:`grid_oracle` is a brute-force cross-check for small problems.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .env import InvalidArgument, UnreachableState

COORD_FLOOR = 1e-12
MAX_GRID_POINTS = 3_000_000


class InfeasibleOracle(ValueError):
    """The brute-force lattice would be too large."""


@dataclass(frozen=True)
class MinMaxProblem:
    """``P`` is ``N x k``; ``m`` holds the (possibly estimated) causal parameter of each state."""

    P: np.ndarray
    m: np.ndarray
    A: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        P = np.asarray(self.P, dtype=float)
        m = np.asarray(self.m, dtype=float).reshape(-1)
        if P.ndim != 2 or m.size != P.shape[1]:
            raise InvalidArgument(f"P must be N x k and m of length k, got {P.shape} and {m.size}")
        if np.any(P < 0) or np.any(m <= 0):
            raise InvalidArgument("P must be nonnegative and m positive")
        dead = np.flatnonzero(P.max(axis=0) <= 0)
        if dead.size:
            raise UnreachableState(f"states {(dead + 1).tolist()} have an all-zero column")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "A", P * np.sqrt(m))

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @property
    def k(self) -> int:
        return self.P.shape[1]

    def row_values(self, f: np.ndarray) -> np.ndarray:
        """Per-row terms of the max; ``inf`` where a row touches a state with no mass."""
        y = self.P.T @ f
        with np.errstate(divide="ignore"):
            inv = np.where(y > 0, 1.0 / np.sqrt(np.where(y > 0, y, 1.0)), np.inf)
        touches_zero = (self.A[:, y <= 0] > 0).any(axis=1)
        vals = self.A[:, y > 0] @ inv[y > 0]
        return np.where(touches_zero, np.inf, vals)

    def weighted_grad(self, f: np.ndarray, w: np.ndarray) -> np.ndarray:
        y = self.P.T @ f
        return -0.5 * self.P @ ((w @ self.A) * y**-1.5)

    def jacobian(self, f: np.ndarray) -> np.ndarray:
        y = self.P.T @ f
        return -0.5 * (self.A * y**-1.5) @ self.P.T


@dataclass
class SolveReport:
    minimizer: np.ndarray
    objective_value: float
    iterations: int
    certified_gap: float
    converged: bool
    lower_bound: float = -math.inf


def objective(prob: MinMaxProblem, f: np.ndarray) -> float:
    """Un-squared min-max objective at ``f`` (``inf`` off the domain)."""
    return float(prob.row_values(np.asarray(f, dtype=float)).max())


def _smooth(vals: np.ndarray, mu: float) -> tuple[float, np.ndarray]:
    vmax = vals.max()
    z = np.exp((vals - vmax) / mu)
    s = z.sum()
    return vmax + mu * math.log(s), z / s


def _floor(x: np.ndarray) -> np.ndarray:
    x = np.maximum(x / x.sum(), COORD_FLOOR)
    return x / x.sum()


@dataclass
class _Trace:
    best: np.ndarray
    ub: float
    lb: float = -math.inf
    iterations: int = 0
    visited: list = field(default_factory=list)

    def offer(self, x: np.ndarray, v: float, keep: bool) -> None:
        if keep:
            self.visited.append((v, x.copy()))
        if v < self.ub:
            self.ub, self.best = v, x.copy()


def minimize_max(
    values: Callable[[np.ndarray], np.ndarray],
    weighted_grad: Callable[[np.ndarray, np.ndarray], np.ndarray],
    N: int,
    gap: Callable[[float, float], float],
    tol: float,
    max_iters: int,
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None,
    first_order_iters: int = 300,
    mu_rel: float = 0.05,
    keep_visited: bool = False,
) -> _Trace:
    """Minimize ``max_a h_a(f)`` over the simplex for smooth convex components ``h``.

    ``values(f)`` returns all ``h_a(f)``; ``weighted_grad(f, w)`` returns
    ``sum_a w_a grad h_a(f)``; the optional ``jacobian(f)`` returns the full
    ``K x N`` gradient matrix and enables the cutting-plane phase.
    """
    x = np.full(N, 1.0 / N)
    vx = values(x)
    tr = _Trace(x.copy(), float(vx.max()))
    tr.offer(x, tr.ub, keep_visited)
    scale = max(abs(tr.ub), 1e-12)
    mu, mu_min = mu_rel * scale, 1e-10 * scale
    z, theta, L = x.copy(), 1.0, 1.0
    gx, _ = _smooth(vx, mu)
    limit = min(max_iters, first_order_iters) if jacobian is not None else max_iters

    while tr.iterations < limit:
        tr.iterations += 1
        _, w = _smooth(vx, mu)
        gr = weighted_grad(x, w)
        fw = gr @ x - gr.min()
        # any weights on the components give a valid bound by convexity
        tr.lb = max(tr.lb, float(w @ vx - fw))
        if gap(tr.ub, tr.lb) <= tol:
            return tr
        if fw <= mu and mu > mu_min:
            mu = max(0.5 * mu, mu_min)
            theta, z = 1.0, x.copy()
            gx, _ = _smooth(vx, mu)
            continue
        y = (1 - theta) * x + theta * z
        vy = values(y)
        gy, wy = _smooth(vy, mu)
        g = weighted_grad(y, wy)
        L *= 0.5
        while True:
            zn = _floor(z * np.exp(-(g - g.min()) / (theta * L)))
            xn = (1 - theta) * x + theta * zn
            vn = values(xn)
            gn, _ = _smooth(vn, mu)
            d = xn - y
            if gn <= gy + g @ d + 0.5 * L * np.abs(d).sum() ** 2 + 1e-14 * abs(gy):
                break
            L *= 2.0
        if gn > gx:
            if theta < 1.0:
                theta, z = 1.0, x.copy()
                continue
            if mu <= mu_min:
                break
            mu = max(0.5 * mu, mu_min)
            gx, _ = _smooth(vx, mu)
            continue
        x, vx, gx, z = xn, vn, gn, zn
        tr.offer(x, float(vx.max()), keep_visited)
        theta = (math.sqrt(theta**4 + 4 * theta**2) - theta**2) / 2

    if jacobian is not None and gap(tr.ub, tr.lb) > tol:
        _cutting_planes(values, jacobian, N, gap, tol, max_iters, tr, keep_visited)
    return tr


def _cutting_planes(values, jacobian, N, gap, tol, max_iters, tr: _Trace, keep_visited: bool) -> None:
    """Kelley's method from the current best point; tangent cuts are global minorants."""
    from scipy.optimize import linprog

    rows, rhs = [], []

    def cut(x):
        h, J = values(x), jacobian(x)
        rows.append(np.hstack([J, -np.ones((J.shape[0], 1))]))
        rhs.append(J @ x - h)

    cut(tr.best)
    cost = np.zeros(N + 1)
    cost[-1] = 1.0
    a_eq = np.concatenate([np.ones(N), [0.0]])[None]
    bounds = [(0.0, None)] * N + [(None, None)]
    while tr.iterations < max_iters:
        tr.iterations += 1
        res = linprog(cost, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs), A_eq=a_eq, b_eq=[1.0],
                      bounds=bounds, method="highs-ds")
        if res.status != 0:
            return
        tr.lb = max(tr.lb, float(res.fun))
        if gap(tr.ub, tr.lb) <= tol:
            return
        u = _floor(np.maximum(res.x[:N], 0.0))
        tr.offer(u, float(values(u).max()), keep_visited)
        cut(u)


def squared_gap(ub: float, lb: float) -> float:
    return ub**2 - max(lb, 0.0) ** 2


def solve_min_max(prob: MinMaxProblem, tol: float = 1e-4, max_iters: int = 200_000,
                  polish: bool = True) -> SolveReport:
    """Minimize the exploration objective; ``tol`` bounds the gap of the squared value.

    With ``polish=False`` only the first-order method runs.
    """
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    tr = minimize_max(prob.row_values, prob.weighted_grad, prob.N, squared_gap, tol, max_iters,
                      jacobian=prob.jacobian if polish else None)
    g = squared_gap(tr.ub, tr.lb)
    return SolveReport(tr.best, objective(prob, tr.best), tr.iterations, max(g, 0.0), g <= tol, tr.lb)


def _entropy(f: np.ndarray) -> float:
    p = f[f > 0]
    return float(-(p * np.log(p)).sum())


def solve_max_min_reach(P_hat: np.ndarray, tol: float = 1e-9, max_iters: int = 50_000) -> np.ndarray:
    """Frequency vector maximizing the least-visited state's probability.

    Among the points found within ``tol`` of the optimum, the one with the
    largest entropy is returned.
    """
    P = np.asarray(P_hat, dtype=float)
    dead = np.flatnonzero(P.max(axis=0) <= 0)
    if dead.size:
        raise UnreachableState(f"states {(dead + 1).tolist()} have an all-zero column")
    N = P.shape[0]
    tr = minimize_max(
        lambda f: -(P.T @ f),
        lambda f, w: -(P @ w),
        N,
        lambda ub, lb: ub - lb,
        tol,
        max_iters,
        jacobian=lambda f: -P.T,
        keep_visited=True,
    )
    best = -tr.ub
    # moving toward uniform costs nothing while the optimum stays within tol
    u = np.full(N, 1.0 / N)
    for t in np.linspace(1.0, 0.0, 101):
        g = (1 - t) * tr.best + t * u
        if (P.T @ g).min() >= best - tol:
            tr.visited.append((-(P.T @ g).min(), g))
            break
    good = [x for v, x in tr.visited if -v >= best - tol]
    return max(good, key=_entropy)


def reach_value(P: np.ndarray, f: np.ndarray) -> float:
    return float((np.asarray(P, dtype=float).T @ f).min())


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------


def row_classes(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``P`` and the class label of every row."""
    uniq, labels = np.unique(np.asarray(P, dtype=float), axis=0, return_inverse=True)
    return uniq, labels.reshape(-1)


def column_classes(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, labels = np.unique(np.asarray(P, dtype=float).T, axis=0, return_inverse=True)
    return uniq.T, labels.reshape(-1)


def _lattice_size(dim: int, steps: int) -> int:
    return math.comb(steps + dim - 1, dim - 1)


def _lattice(dim: int, steps: int):
    """All points of the simplex lattice ``{c / steps : c in N^dim, sum c = steps}``, in chunks."""
    buf = []
    for bars in itertools.combinations(range(steps + dim - 1), dim - 1):
        prev, c = -1, []
        for b in bars:
            c.append(b - prev - 1)
            prev = b
        c.append(steps + dim - 2 - prev)
        buf.append(c)
        if len(buf) == 65536:
            yield np.array(buf, dtype=float) / steps
            buf = []
    if buf:
        yield np.array(buf, dtype=float) / steps


def grid_oracle(prob: MinMaxProblem, resolution: float, refine: bool = True) -> tuple[float, np.ndarray]:
    """Smallest squared objective over a simplex lattice of the pooled problem.

    The objective depends on ``f`` only through the mass on each class of
    identical rows, so the lattice lives on those classes.  When the state
    distribution ``y = P^T f`` has fewer lattice points (for instance many
    distinct rows and few states), the lattice is taken over ``y``
    instead, keeping the points inside the convex hull of the rows.

    With ``refine`` the best lattice point is then improved by local
    lattices of shrinking spacing (sound because the objective is convex).
    """
    if not 0 < resolution <= 0.1:
        raise InvalidArgument("resolution must be in (0, 0.1]")
    steps = int(round(1.0 / resolution))
    classes, labels = row_classes(prob.P)
    C = classes.shape[0]
    A_cls = classes * np.sqrt(prob.m)
    by_class = _lattice_size(C, steps)
    by_state = _lattice_size(prob.k, steps) if prob.k > 1 else 1
    if min(by_class, by_state) > MAX_GRID_POINTS:
        raise InfeasibleOracle(f"{C} row classes and {prob.k} states are too many for resolution {resolution}")

    def score(y):
        with np.errstate(divide="ignore"):
            inv = np.where(y > 0, 1.0 / np.sqrt(np.where(y > 0, y, 1.0)), np.inf)
        out = np.full(y.shape[0], -np.inf)
        inv = np.where(np.isinf(inv), 1e300, inv)
        for a in range(C):
            terms = np.where(A_cls[a] > 0, A_cls[a] * inv, 0.0)
            out = np.maximum(out, terms.sum(axis=1))
        return out

    best_val, best_rho, best_y = math.inf, None, None
    if by_class <= by_state or prob.k == 1:
        for rho in _lattice(C, steps):
            s = score(rho @ classes)
            j = int(np.argmin(s))
            if s[j] < best_val:
                best_val, best_rho = float(s[j]), rho[j].copy()
        if refine:
            best_val, best_rho = _zoom(best_rho, resolution, lambda r: np.all(r >= 0, axis=1),
                                       lambda r: score(r @ classes), best_val)
    else:
        inside = _hull_test(classes)
        for y in _lattice(prob.k, steps):
            y = y[inside(y)]
            if not y.size:
                continue
            s = score(y)
            j = int(np.argmin(s))
            if s[j] < best_val:
                best_val, best_y = float(s[j]), y[j].copy()
        if best_y is None:
            raise InfeasibleOracle("no lattice point lies inside the convex hull of the rows")
        if refine:
            best_val, best_y = _zoom(best_y, resolution, lambda y: np.all(y >= 0, axis=1) & inside(y),
                                     score, best_val)
        best_rho = _mixture_weights(classes, best_y)

    f = np.zeros(prob.N)
    for c in range(C):
        members = np.flatnonzero(labels == c)
        f[members] = best_rho[c] / members.size
    return best_val**2, f


def _zoom(center, h, feasible, score, value, radius=2, min_step=1e-9, max_rounds=500):
    dim = center.size
    if dim == 1:
        return value, center
    grid = np.array(list(itertools.product(range(-radius, radius + 1), repeat=dim - 1)), dtype=float)
    offsets = np.hstack([grid, -grid.sum(axis=1, keepdims=True)])
    for _ in range(max_rounds):
        if h < min_step:
            break
        pts = center + h * offsets
        pts = pts[feasible(pts)]
        s = score(pts)
        j = int(np.argmin(s))
        if s[j] < value - 1e-15:
            value, center = float(s[j]), pts[j].copy()
        else:
            h /= 4.0
    return value, center


def _hull_test(rows: np.ndarray):
    """Membership test for the convex hull of ``rows`` (points on the simplex)."""
    from scipy.spatial import ConvexHull, QhullError

    coords = rows[:, :-1]
    if coords.shape[1] == 1:
        lo, hi = coords.min(), coords.max()
        return lambda y: (y[:, 0] >= lo - 1e-12) & (y[:, 0] <= hi + 1e-12)
    try:
        hull = ConvexHull(coords)
    except QhullError:
        raise InfeasibleOracle("rows do not span the state simplex; use the class lattice instead")
    eq = hull.equations

    def inside(y: np.ndarray) -> np.ndarray:
        return np.all(y[:, :-1] @ eq[:, :-1].T + eq[:, -1] <= 1e-12, axis=1)

    return inside


def _mixture_weights(rows: np.ndarray, y: np.ndarray) -> np.ndarray:
    from scipy.optimize import nnls

    M = np.vstack([rows.T, np.ones(rows.shape[0])])
    rho, _ = nnls(M, np.append(y, 1.0))
    return rho / rho.sum()


# ---------------------------------------------------------------------------
# Property checks
# ---------------------------------------------------------------------------


def chord_margins(prob: MinMaxProblem, trials: int, rng: np.random.Generator) -> np.ndarray:
    """``t g(f1) + (1-t) g(f2) - g(t f1 + (1-t) f2)`` at random interior pairs."""
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    f1 = rng.dirichlet(np.ones(prob.N), size=trials)
    f2 = rng.dirichlet(np.ones(prob.N), size=trials)
    f1 = np.maximum(f1, COORD_FLOOR)
    f2 = np.maximum(f2, COORD_FLOOR)
    f1 /= f1.sum(axis=1, keepdims=True)
    f2 /= f2.sum(axis=1, keepdims=True)
    t = rng.uniform(0.0, 1.0, size=trials)
    out = np.empty(trials)
    for j in range(trials):
        mid = t[j] * f1[j] + (1 - t[j]) * f2[j]
        out[j] = t[j] * objective(prob, f1[j]) + (1 - t[j]) * objective(prob, f2[j]) - objective(prob, mid)
    return out


def convexity_chord_check(prob: MinMaxProblem, trials: int, rng: np.random.Generator) -> bool:
    return bool(np.all(chord_margins(prob, trials, rng) >= -1e-9))
