"""Replicated regret experiments and property checks, written to CSV.

Each (experiment, grid value, replication, algorithm) cell gets its own
seed, derived from the base seed with a stable hash, so any cell can be
rerun on its own and output does not depend on worker scheduling.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import algce, env, opt

KINDS = ("regret-vs-T", "regret-vs-lambda", "lower-bound-sanity", "properties")
ALGORITHMS = ("ALG-CE", "ALG-UE")
CSV_COLUMNS = (
    "experiment", "algorithm", "T", "lambda", "m", "seed", "regret", "walltime_ms",
    "e1", "e2", "e3", "e4", "e5", "lambda_hat",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str = "regret-vs-T"
    n: int = 10
    k: int = 10
    m: int = 2
    m0: int = 2
    eps: float = 0.3
    T_grid: tuple[int, ...] = (1000, 5000, 10000)
    m_grid: tuple[int, ...] = (2, 4, 6, 8)
    T: int = 10000  # fixed horizon of regret-vs-lambda
    replications: int = 200
    base_seed: int = 0
    solver_tol: float = 1e-4
    output_path: str = "results.csv"
    workers: int = 1
    algorithms: tuple[str, ...] = ALGORITHMS
    diagnostics: bool = True
    # wall time is the only nondeterministic column; off gives byte-stable files
    record_walltime: bool = True
    lb_k: int = 4
    lb_m: int = 3

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.T_grid or not self.m_grid:
            raise ConfigError("grids must be nonempty")
        if any(a not in ALGORITHMS for a in self.algorithms):
            raise ConfigError(f"algorithms must be among {ALGORITHMS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed must be an unsigned 64-bit integer")
        if self.kind == "regret-vs-lambda" and any(not 2 <= v <= self.n for v in self.m_grid):
            raise ConfigError(f"m_grid must lie in [2, n={self.n}]")
        if self.kind == "lower-bound-sanity" and not (self.lb_k > 1 and 0 <= self.lb_m <= self.lb_k - 1):
            raise ConfigError("lower-bound needs lb_k > 1 and 0 <= lb_m <= lb_k - 1")
        if self.kind in ("regret-vs-T", "regret-vs-lambda"):
            # surfaces generator precondition failures before any work is scheduled
            for m in (self.m_grid if self.kind == "regret-vs-lambda" else (self.m,)):
                try:
                    env.make_experiment_instance(self.n, self.k, m, self.m0, self.eps)
                except env.InvalidArgument as exc:
                    raise ConfigError(str(exc)) from exc
        return self


def full_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Large-scale parameters: 25 variables and states, 10^4 runs per cell."""
    return replace(
        cfg, n=25, k=25, m=2, m0=2, eps=0.3, replications=10000,
        T_grid=tuple(range(1000, 25001, 1000)), m_grid=tuple(range(2, 26)), T=25000,
    )


def _parse_value(cur, text: str):
    if isinstance(cur, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)
    if isinstance(cur, tuple):
        items = [s for s in text.replace(",", " ").split() if s]
        return tuple(type(cur[0])(s) if cur and not isinstance(cur[0], str) else s for s in items)
    return type(cur)(text)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; lists are comma or space separated."""
    cfg = base or ExperimentConfig()
    names = {f.name for f in fields(ExperimentConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _parse_value(getattr(cfg, key), value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}")
    return replace(cfg, **updates)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base)


def derive_seed(base_seed: int, experiment: str, value, replication: int, algorithm: str) -> int:
    key = f"{experiment}|{value}|{replication}|{algorithm}".encode()
    h = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return base_seed ^ h


@dataclass
class ResultRow:
    experiment: str
    algorithm: str
    T: int
    lam: float
    m: int
    seed: int
    regret: float
    walltime_ms: float
    events: tuple | None = None
    lambda_hat: float | None = None

    def sort_key(self):
        value = self.m if self.experiment == "regret-vs-lambda" else self.T
        return (self.experiment, self.algorithm, value, self.seed)

    def cells(self) -> list[str]:
        ev = ["" if self.events is None else str(int(e)) for e in (self.events or (None,) * 5)]
        return [
            self.experiment, self.algorithm, str(self.T), _fmt(self.lam), str(self.m), str(self.seed),
            _fmt(self.regret), _fmt(self.walltime_ms), *ev,
            "" if self.lambda_hat is None else _fmt(self.lambda_hat),
        ]


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


@dataclass(frozen=True)
class _Task:
    experiment: str
    algorithm: str
    T: int
    m: int
    replication: int
    seed: int
    lam: float
    instance_key: tuple
    solver_tol: float
    diagnostics: bool
    record_walltime: bool


@lru_cache(maxsize=64)
def _instance(key: tuple) -> env.Instance:
    kind, *args = key
    if kind == "experiment":
        n, k, m, m0, eps = args
        return env.make_experiment_instance(n, k, m, m0, eps)
    k, m, state, action, beta = args
    target = None if state is None else (state, env.Intervention.from_index(action))
    return env.make_lower_bound_instance(k, target, beta, m)


def _run_task(task: _Task) -> ResultRow:
    inst = _instance(task.instance_key)
    rng = np.random.default_rng(task.seed)
    t0 = time.perf_counter()
    events = lam_hat = None
    if task.algorithm == "ALG-CE":
        res = algce.run_alg_ce(inst, task.T, task.solver_tol, rng)
        lam_hat = res.lambda_hat
        if task.diagnostics:
            events = algce.check_good_event(inst, res, task.T).events
    else:
        res = algce.run_alg_ue(inst, task.T, rng)
    wall = (time.perf_counter() - t0) * 1000 if task.record_walltime else 0.0
    return ResultRow(task.experiment, task.algorithm, task.T, task.lam, task.m, task.seed,
                     algce.simple_regret(inst, res.policy), wall, events, lam_hat)


def _execute(tasks: list[_Task], workers: int) -> list[ResultRow]:
    if workers == 1 or len(tasks) <= 1:
        rows = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    return sorted(rows, key=ResultRow.sort_key)


@lru_cache(maxsize=256)
def _lambda(key: tuple) -> float:
    inst = _instance(key)
    m = [env.true_m(s.q)[0] for s in inst.intermediates]
    return env.lambda_of(inst.transitions, m)[0]


def _experiment_tasks(cfg: ExperimentConfig, name: str, points: list[tuple[int, int]]) -> list[_Task]:
    tasks = []
    for T, m in points:
        key = ("experiment", cfg.n, cfg.k, m, cfg.m0, cfg.eps)
        lam = _lambda(key)
        value = m if name == "regret-vs-lambda" else T
        for rep in range(cfg.replications):
            for alg in cfg.algorithms:
                seed = derive_seed(cfg.base_seed, name, value, rep, alg)
                tasks.append(_Task(name, alg, T, m, rep, seed, lam, key, cfg.solver_tol,
                                   cfg.diagnostics, cfg.record_walltime))
    return tasks


def run_regret_vs_T(cfg: ExperimentConfig) -> list[ResultRow]:
    cfg.validate()
    return _execute(_experiment_tasks(cfg, "regret-vs-T", [(T, cfg.m) for T in cfg.T_grid]), cfg.workers)


def run_regret_vs_lambda(cfg: ExperimentConfig) -> list[ResultRow]:
    cfg.validate()
    return _execute(_experiment_tasks(cfg, "regret-vs-lambda", [(cfg.T, m) for m in cfg.m_grid]), cfg.workers)


def lower_bound_targets(k: int, m: int) -> list[tuple[int, int]]:
    """``(state, action index)`` pairs the hard family can reward: ``do()`` or a never-seen value."""
    return [(i, a) for i in range(1, k + 1) for a in [0] + [2 * j + 2 for j in range(m)]]


def run_lower_bound_sanity(cfg: ExperimentConfig, beta: float | None = None) -> list[ResultRow]:
    """ALG-CE on the hard family, cycling the rewarded (state, action) over replications.

    ``beta`` defaults to the family's gap for the horizon; the row's
    ``lambda`` column holds the exact difficulty (which equals the sum of
    the causal parameters on this family).
    """
    cfg.validate()
    name = "lower-bound-sanity"
    k, m_prefix = cfg.lb_k, cfg.lb_m
    m_vec = [max(m_prefix, 1)] * k
    targets = lower_bound_targets(k, m_prefix)
    tasks = []
    for T in cfg.T_grid:
        b = env.lower_bound_beta(m_vec, T) if beta is None else beta
        for rep in range(cfg.replications):
            state, action = targets[rep % len(targets)]
            key = ("lower-bound", k, m_prefix, state, action, b)
            lam = _lambda(key)
            seed = derive_seed(cfg.base_seed, name, T, rep, "ALG-CE")
            tasks.append(_Task(name, "ALG-CE", T, m_vec[0], rep, seed, lam, key, cfg.solver_tol,
                               cfg.diagnostics, cfg.record_walltime))
    return _execute(tasks, cfg.workers)


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def write_csv(rows: list[ResultRow], path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rows_to_csv(rows))
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


@dataclass
class SummaryCell:
    experiment: str
    algorithm: str
    T: int
    m: int
    lam: float
    count: int
    mean: float
    se: float
    bad_event_rate: float | None = None


def summarize(rows: list[ResultRow]) -> list[SummaryCell]:
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.experiment, r.algorithm, r.T, r.m, r.lam), []).append(r)
    out = []
    for (exp, alg, T, m, lam), rs in sorted(groups.items()):
        x = np.array([r.regret for r in rs])
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
        ev = [r.events for r in rs if r.events is not None]
        bad = float(np.mean([not all(e) for e in ev])) if ev else None
        out.append(SummaryCell(exp, alg, T, m, lam, x.size, float(x.mean()), se, bad))
    return out


def summary_to_csv(cells: list[SummaryCell]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["experiment", "algorithm", "T", "m", "lambda", "count", "mean_regret", "se", "bad_event_rate",
                "sqrt_lambda_over_T"])
    for c in cells:
        w.writerow([c.experiment, c.algorithm, c.T, c.m, _fmt(c.lam), c.count, _fmt(c.mean), _fmt(c.se),
                    "" if c.bad_event_rate is None else _fmt(c.bad_event_rate), _fmt(math.sqrt(c.lam / c.T))])
    return buf.getvalue()


def pooled_se(a: SummaryCell, b: SummaryCell) -> float:
    return math.sqrt(a.se**2 + b.se**2)


# ---------------------------------------------------------------------------
# Property suite
# ---------------------------------------------------------------------------


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class PropertyReport:
    results: list[PropertyResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __str__(self) -> str:
        return "\n".join(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in self.results)


def kl_inequality_check(betas: np.ndarray | None = None) -> PropertyResult:
    """``KL(1/2 || 1/2 + b) = -log2(1 - 4 b^2) / 2`` lies in ``[0, 6 b^2]``."""
    if betas is None:
        betas = np.arange(1, 334) / 1000.0
    kl = -0.5 * np.log2(1.0 - 4.0 * betas**2)
    upper = 6.0 * betas**2
    bad = np.flatnonzero((kl > upper) | (kl < 0))
    detail = f"{betas.size} values, min slack {float((upper - kl).min()):.3g}"
    if bad.size:
        detail += f"; violated at beta={betas[bad].tolist()}"
    return PropertyResult("kl-inequality", not bad.size, detail)


def random_problem(rng: np.random.Generator, k_max: int = 5, N_max: int = 9) -> opt.MinMaxProblem:
    k = int(rng.integers(1, k_max + 1))
    N = int(rng.integers(1, N_max + 1))
    P = rng.dirichlet(np.ones(k), size=N)
    return opt.MinMaxProblem(P, rng.uniform(1.0, 4.0, size=k))


def deterministic_family(k: int) -> np.ndarray:
    return env.make_lower_bound_instance(k).transitions


def chord_suite(rng: np.random.Generator, problems: int = 50, trials: int = 200) -> PropertyResult:
    worst, where = math.inf, None
    for p in range(problems):
        prob = random_problem(rng)
        margin = float(opt.chord_margins(prob, trials, rng).min())
        if margin < worst:
            worst, where = margin, p
    return PropertyResult("convexity-chord", worst >= -1e-9,
                          f"{problems * trials} chords, worst margin {worst:.3g} (problem {where})")


def closed_form_suite(rng: np.random.Generator, cases: int = 20, tol: float = 1e-3) -> PropertyResult:
    worst, bad = 0.0, []
    for _ in range(cases):
        k = int(rng.integers(2, 9))
        m = rng.integers(1, 11, size=k).astype(float)
        rep = opt.solve_min_max(opt.MinMaxProblem(deterministic_family(k), m))
        err = abs(rep.objective_value**2 - m.sum())
        worst = max(worst, err)
        if err > tol:
            bad.append(m.tolist())
    detail = f"{cases} cases, worst |obj^2 - sum m| {worst:.3g}"
    if bad:
        detail += f"; failing m: {bad}"
    return PropertyResult("closed-form-lambda", not bad, detail)


def lattice_min_ratio(m: np.ndarray, resolution: float = 0.01) -> float:
    """``min`` over a simplex lattice of ``max_l m_l / rho_l``."""
    steps = int(round(1.0 / resolution))
    best = math.inf
    for rho in opt._lattice(len(m), steps):
        rho = rho[np.all(rho > 0, axis=1)]
        if rho.size:
            best = min(best, float((m / rho).max(axis=1).min()))
    return best


def harmonic_floor_suite(rng: np.random.Generator, cases: int = 10) -> PropertyResult:
    ms = [np.array([3.0, 5.0])] + [rng.integers(1, 11, size=int(rng.integers(1, 4))).astype(float)
                                  for _ in range(cases)]
    bad = []
    for m in ms:
        v = lattice_min_ratio(m)
        if v < m.sum() - 1e-9:
            bad.append((m.tolist(), v))
    return PropertyResult("lattice-ratio-floor", not bad,
                          f"{len(ms)} vectors" + (f"; violated: {bad}" if bad else ""))


def run_property_suite(seed: int = 0) -> PropertyReport:
    rng = np.random.default_rng(seed)
    return PropertyReport([
        kl_inequality_check(),
        chord_suite(rng),
        closed_form_suite(rng),
        harmonic_floor_suite(rng),
    ])
