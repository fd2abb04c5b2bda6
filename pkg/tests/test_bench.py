from __future__ import annotations

import csv
import io
from dataclasses import replace

import numpy as np
import pytest

from causal_mdp import bench, cli, env, serialize


def small(kind="regret-vs-T", **kw):
    base = bench.ExperimentConfig(kind=kind, n=4, k=4, replications=2, T_grid=(400,), m_grid=(2, 3), T=400,
                                  record_walltime=False)
    return replace(base, **kw)


def test_config_parsing():
    cfg = bench.parse_config("kind = regret-vs-lambda\nm_grid = 2, 4\nreplications=3  # comment\ndiagnostics = off\n")
    assert cfg.kind == "regret-vs-lambda" and cfg.m_grid == (2, 4) and cfg.replications == 3
    assert cfg.diagnostics is False
    with pytest.raises(bench.ConfigError, match="unknown key"):
        bench.parse_config("replication = 3")
    with pytest.raises(bench.ConfigError, match="bad value"):
        bench.parse_config("replications = many")
    with pytest.raises(bench.ConfigError):
        bench.ExperimentConfig(replications=0).validate()
    with pytest.raises(bench.ConfigError):
        bench.ExperimentConfig(kind="regret-vs-lambda", m_grid=(1,)).validate()
    with pytest.raises(bench.ConfigError):
        bench.ExperimentConfig(k=9).validate()
    with pytest.raises(bench.ConfigError, match="cannot read"):
        bench.load_config("/nonexistent/x.cfg")


def test_seed_derivation_is_stable():
    a = bench.derive_seed(0, "regret-vs-T", 1000, 3, "ALG-CE")
    assert a == bench.derive_seed(0, "regret-vs-T", 1000, 3, "ALG-CE")
    assert a != bench.derive_seed(0, "regret-vs-T", 1000, 3, "ALG-UE")
    assert bench.derive_seed(5, "regret-vs-T", 1000, 3, "ALG-CE") == a ^ 5
    assert 0 <= a < 2**64


def test_regret_vs_T_rows_and_csv():
    rows = bench.run_regret_vs_T(small())
    assert len(rows) == 4
    assert all(0 <= r.regret <= 1 for r in rows)
    text = bench.rows_to_csv(rows)
    parsed = list(csv.reader(io.StringIO(text)))
    assert tuple(parsed[0]) == bench.CSV_COLUMNS
    ce = [r for r in parsed[1:] if r[1] == "ALG-CE"]
    ue = [r for r in parsed[1:] if r[1] == "ALG-UE"]
    assert all(c in "01" for r in ce for c in r[8:13])
    assert all(r[8:14] == [""] * 6 for r in ue)
    assert rows == sorted(rows, key=bench.ResultRow.sort_key)


def test_rows_lambda_matches_recomputation():
    rows = bench.run_regret_vs_lambda(small(kind="regret-vs-lambda"))
    assert len(rows) == 2 * 2 * 2  # grid points x replications x algorithms
    for r in rows:
        inst = env.make_experiment_instance(4, 4, r.m, 2, 0.3)
        assert r.lam == pytest.approx(env.lambda_of(inst.transitions, [r.m] * 4)[0], abs=1e-3)


def test_single_grid_point_row_count():
    rows = bench.run_regret_vs_lambda(small(kind="regret-vs-lambda", m_grid=(3,), replications=5))
    assert len(rows) == 10


def test_determinism_and_workers():
    a = bench.rows_to_csv(bench.run_regret_vs_T(small()))
    b = bench.rows_to_csv(bench.run_regret_vs_T(small(workers=2)))
    assert a == b


def test_zero_eps_gives_zero_regret():
    rows = bench.run_regret_vs_T(small(eps=0.0, replications=3))
    assert all(r.regret == 0 for r in rows)


def test_summary():
    rows = bench.run_regret_vs_T(small(replications=4))
    cells = bench.summarize(rows)
    assert {c.algorithm for c in cells} == {"ALG-CE", "ALG-UE"}
    for c in cells:
        x = [r.regret for r in rows if r.algorithm == c.algorithm]
        assert c.count == 4 and c.mean == pytest.approx(np.mean(x))
        assert c.se == pytest.approx(np.std(x, ddof=1) / 2)
    assert "sqrt_lambda_over_T" in bench.summary_to_csv(cells)


def test_lower_bound_sanity():
    cfg = small(kind="lower-bound-sanity", T_grid=(5000,), replications=3, lb_k=4, lb_m=3)
    rows = bench.run_lower_bound_sanity(cfg)
    assert len(rows) == 3
    assert all(r.lam == pytest.approx(12, abs=1e-3) for r in rows)
    rows = bench.run_lower_bound_sanity(cfg, beta=0.0)
    assert all(r.regret == 0 for r in rows)
    assert env.lower_bound_beta([3] * 4, 5000) == pytest.approx(np.sqrt(12 / 90000))


def test_lower_bound_targets_are_valid():
    for state, action in bench.lower_bound_targets(4, 3):
        inst = env.make_lower_bound_instance(4, (state, env.Intervention.from_index(action)), 0.2, 3)
        assert env.optimal_policy(inst)[1] == pytest.approx(0.7)


def test_property_suite_pieces():
    assert bench.kl_inequality_check().passed
    b = np.array([0.1])
    assert -0.5 * np.log2(1 - 4 * b**2)[0] == pytest.approx(0.02944, abs=1e-5)
    assert bench.kl_inequality_check(np.array([1e-8])).passed
    assert not bench.kl_inequality_check(np.array([0.49])).passed
    assert bench.lattice_min_ratio(np.array([3.0, 5.0])) >= 8 - 1e-9


def test_cli_properties_and_errors(tmp_path, capsys):
    assert cli.main(["properties"]) == 0
    assert "PASS kl-inequality" in capsys.readouterr().out
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert cli.main(["regret-vs-t", "--config", str(bad)]) == 2


def test_cli_run(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n = 4\nk = 4\nreplications = 2\nT_grid = 400\n")
    out = tmp_path / "out" / "r.csv"
    assert cli.main(["regret-vs-t", "--config", str(cfg), "--out", str(out), "--seed", "7", "--no-walltime"]) == 0
    first = out.read_bytes()
    assert (tmp_path / "out" / "r_summary.csv").exists()
    assert cli.main(["regret-vs-t", "--config", str(cfg), "--out", str(out), "--seed", "7", "--no-walltime",
                     "--workers", "2"]) == 0
    assert out.read_bytes() == first


def test_full_scale_parameters():
    cfg = bench.full_scale(bench.ExperimentConfig())
    assert (cfg.n, cfg.k, cfg.replications, cfg.T) == (25, 25, 10000, 25000)
    assert cfg.T_grid[0] == 1000 and cfg.T_grid[-1] == 25000
    cfg.validate()


def test_serialization_round_trip(tmp_path):
    insts = [
        env.make_experiment_instance(5, 5, 3, 2, 0.3),
        env.make_lower_bound_instance(4, (2, env.Intervention(1, 1)), 0.1, 2),
    ]
    for inst in insts:
        back = serialize.loads(serialize.dumps(inst))
        assert np.array_equal(back.transitions, inst.transitions)
        assert all(np.array_equal(a.q, b.q) and a.reward == b.reward
                   for a, b in zip(back.intermediates, inst.intermediates))
        assert np.array_equal(back.start.q, inst.start.q)
    p = tmp_path / "i.txt"
    serialize.save(insts[0], p)
    assert serialize.dumps(serialize.load(p)) == serialize.dumps(insts[0])
    with pytest.raises(env.InvalidArgument):
        serialize.loads("hello\n")
