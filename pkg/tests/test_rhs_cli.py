"""Design functions and the command-line front-end, including exit codes."""

import csv
import numpy as np
import pytest

from fraclap import (
    DESIGN_TAGS,
    DesignFunction,
    cp_to_dense,
    load_operator,
    load_tensor,
    random_smooth,
)
from fraclap.cli import main

import oracles


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# design functions
# ---------------------------------------------------------------------------


def test_design_tags_and_ranks():
    assert DESIGN_TAGS == ("gaussian-bump", "two-bumps", "box-indicator",
                           "custom-separable")
    n = 9
    g = DesignFunction("gaussian-bump").evaluate((n, n))
    assert g.rank == 1
    # the grid contains x = 0.5 at index 4, where the bump peaks at 1
    dense = cp_to_dense(g)
    assert dense[4, 4] == pytest.approx(1.0, rel=1e-13)
    assert dense.max() == pytest.approx(1.0, rel=1e-13)

    two = DesignFunction("two-bumps").evaluate((n, n, n))
    assert two.rank <= 2

    box = DesignFunction("box-indicator").evaluate((n, n))
    x = (np.arange(n) + 1.0) / (n + 1.0)
    ind = ((x >= 0.25) & (x <= 0.75)).astype(float)
    assert np.allclose(cp_to_dense(box), np.outer(ind, ind), rtol=0, atol=1e-14)

    custom = DesignFunction("custom-separable",
                            profiles=[np.sin, np.cos]).evaluate((n, n))
    assert custom.rank == 1
    assert np.allclose(cp_to_dense(custom), np.outer(np.sin(x), np.cos(x)),
                       rtol=1e-13, atol=0)


def test_design_validation():
    with pytest.raises(ValueError):
        DesignFunction("plateau")
    with pytest.raises(ValueError):
        DesignFunction("custom-separable")
    with pytest.raises(ValueError):
        DesignFunction("custom-separable", profiles=[np.sin]).evaluate((5, 5))
    with pytest.raises(ValueError):
        DesignFunction("gaussian-bump").evaluate((5,))


def test_random_smooth_is_seeded():
    a = random_smooth((10, 10), rank=3, seed=4)
    b = random_smooth((10, 10), rank=3, seed=4)
    c = random_smooth((10, 10), rank=3, seed=5)
    assert a.rank == 3
    assert np.array_equal(cp_to_dense(a), cp_to_dense(b))
    assert not np.allclose(cp_to_dense(a), cp_to_dense(c))


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------


def test_cli_build_core_writes_a_loadable_dump(tmp_path, capsys):
    out = tmp_path / "core.lro"
    code = main(["build-core", "--kind", "g2", "--d", "2", "--n", "16",
                 "--alpha", "0.5", "--eps", "1e-8", "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "rank=" in printed and "achieved_error=" in printed
    op = load_operator(out)
    want = oracles.dense_core("g2", 16, 2, 0.5)
    got = cp_to_dense(op.diag.core)
    assert np.linalg.norm(got - want) <= 1e-7 * np.linalg.norm(want)


def test_cli_build_core_constant_spectrum(capsys):
    code = main(["build-core", "--kind", "g1", "--d", "3", "--n", "8",
                 "--alpha", "0.5", "--spectrum", "constant"])
    assert code == 0
    assert "rank=1" in capsys.readouterr().out


def test_cli_usage_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["build-core", "--kind", "g1"]) == 1
    assert main(["build-core", "--kind", "g9", "--d", "2", "--n", "8",
                 "--alpha", "0.5"]) == 1
    # validation failures inside the command also map to 1
    assert main(["build-core", "--kind", "g1", "--d", "2", "--n", "8",
                 "--alpha", "1.5"]) == 1
    capsys.readouterr()


def test_cli_solve_control_end_to_end_matches_dense_kkt(tmp_path):
    n, d = 16, 2
    y_dense = cp_to_dense(DesignFunction("gaussian-bump").evaluate((n,) * d))
    for alpha in (1.0, 0.5, 0.25, 0.1):
        out = tmp_path / ("u_%g.lrt" % alpha)
        rep = tmp_path / ("row_%g.csv" % alpha)
        code = main(["solve", "--d", str(d), "--n", str(n),
                     "--alpha", str(alpha), "--beta", "1.0", "--gamma", "0.01",
                     "--eps", "1e-12", "--tol", "1e-10", "--precond-rank", "8",
                     "--k-max", "100", "--out", str(out), "--report", str(rep)])
        assert code == 0
        u = load_tensor(out)
        _, u_want = oracles.kkt_dense_solve(y_dense, n, d, alpha, 1.0, 0.01)
        got = cp_to_dense(u)
        rel = np.linalg.norm(got - u_want) / np.linalg.norm(u_want)
        assert rel <= 1e-7, "alpha=%g rel=%g" % (alpha, rel)
        header, rows = read_csv(rep)
        assert header == ["kind", "d", "n", "alpha", "r", "eps", "iterations",
                          "final_residual", "seconds_per_iteration"]
        assert len(rows) == 1 and rows[0][0] == "control"
        assert float(rows[0][7]) <= 1e-10


def test_cli_solve_state_target(tmp_path, capsys):
    n = 12
    out = tmp_path / "y.lrt"
    code = main(["solve", "--d", "2", "--n", str(n), "--alpha", "0.5",
                 "--gamma", "0.001", "--target", "state", "--eps", "1e-10",
                 "--out", str(out)])
    assert code == 0
    assert "state: rank=" in capsys.readouterr().out
    y = load_tensor(out)
    y_dense = cp_to_dense(DesignFunction("gaussian-bump").evaluate((n, n)))
    y_want, _ = oracles.kkt_dense_solve(y_dense, n, 2, 0.5, 1.0, 0.001)
    rel = np.linalg.norm(cp_to_dense(y) - y_want) / np.linalg.norm(y_want)
    assert rel <= 1e-6


def test_cli_solve_nonconvergence_exits_2(capsys):
    code = main(["solve", "--d", "2", "--n", "16", "--alpha", "0.5",
                 "--tol", "1e-12", "--k-max", "1"])
    assert code == 2
    capsys.readouterr()


def test_cli_bench_precond_iteration_matrix(tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench-precond", "--d", "2", "--alpha", "0.5",
                 "--kinds", "g1,g3", "--grid-list", "15,31",
                 "--rank-list", "2..4", "--out", str(out)])
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["kind", "r", "15", "31"]
    assert [r[:2] for r in rows] == [["g1", "2"], ["g1", "3"], ["g1", "4"],
                                     ["g3", "2"], ["g3", "3"], ["g3", "4"]]
    counts = np.array([[int(c) for c in r[2:]] for r in rows])
    assert np.all(counts >= 1)
    assert np.all(counts <= 40)
    # more preconditioner rank never hurts by much: within each kind the
    # count at rank 4 is <= the count at rank 2
    for block in (counts[:3], counts[3:]):
        assert np.all(block[2] <= block[0])


def test_cli_bench_thread_env_is_deterministic(tmp_path, monkeypatch):
    args = ["bench-precond", "--d", "2", "--alpha", "0.5", "--kinds", "g4",
            "--grid-list", "15", "--rank-list", "2,3"]
    one = tmp_path / "one.csv"
    two = tmp_path / "two.csv"
    monkeypatch.setenv("FRACLAP_THREADS", "1")
    assert main(args + ["--out", str(one)]) == 0
    monkeypatch.setenv("FRACLAP_THREADS", "2")
    assert main(args + ["--out", str(two)]) == 0
    assert one.read_text() == two.read_text()
    monkeypatch.setenv("FRACLAP_THREADS", "not-a-number")
    assert main(args + ["--out", str(two)]) == 0


def test_cli_rank_decay_2d_tail_is_monotone(tmp_path):
    out = tmp_path / "decay.csv"
    code = main(["rank-decay", "--kind", "g1", "--d", "2", "--n", "20",
                 "--alpha-list", "1,0.5", "--max-rank", "5", "--out", str(out)])
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["kind", "d", "n", "alpha", "rank", "rel_error"]
    assert len(rows) == 2 * 6
    for alpha in ("1.0", "0.5"):
        tail = [float(r[5]) for r in rows if r[3] == alpha]
        assert tail[0] == 1.0
        assert all(b <= a + 1e-15 for a, b in zip(tail, tail[1:]))
        assert tail[-1] < 1e-3


def test_cli_rank_decay_3d(tmp_path):
    out = tmp_path / "decay3.csv"
    code = main(["rank-decay", "--kind", "g2", "--d", "3", "--n", "9",
                 "--alpha-list", "0.5", "--max-rank", "4", "--out", str(out)])
    assert code == 0
    _, rows = read_csv(out)
    errs = [float(r[5]) for r in rows]
    assert errs[0] == 1.0
    assert errs[-1] < errs[1]
    assert all(e <= 1.0 + 1e-12 for e in errs)


def test_cli_timing_reports_per_iteration_medians(tmp_path, capsys):
    out = tmp_path / "timing.csv"
    code = main(["timing", "--d", "2", "--grid-list", "15,31",
                 "--repeats", "1", "--out", str(out)])
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["n", "seconds_per_iteration"]
    assert [r[0] for r in rows] == ["15", "31"]
    assert all(float(r[1]) > 0.0 for r in rows)
    assert "per-iteration time ratio" in capsys.readouterr().out


def test_cli_config_file_preloads_flags(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults for the small demo\nkind=g1\nd=2\nn=16\nalpha=0.5\n")
    assert main(["build-core", "--config", str(cfg)]) == 0
    assert "n=16" in capsys.readouterr().out
    # explicit flags win over the file
    assert main(["build-core", "--config", str(cfg), "--n", "8"]) == 0
    assert "n=8" in capsys.readouterr().out
    # underscores in keys map to flag dashes
    cfg2 = tmp_path / "run2.cfg"
    cfg2.write_text("kind=g1\nd=2\nn=12\nalpha=0.5\nrank_cap=3\n")
    assert main(["build-core", "--config", str(cfg2)]) == 0
    assert "rank=3" in capsys.readouterr().out


def test_cli_config_file_failures(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    assert main(["build-core", "--config", str(missing)]) == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("this line has no equals sign\n")
    assert main(["build-core", "--config", str(bad)]) == 1
    capsys.readouterr()


def test_cli_unwritable_output_exits_3(tmp_path, capsys):
    out = tmp_path / "no" / "such" / "dir" / "core.lro"
    code = main(["build-core", "--kind", "g1", "--d", "2", "--n", "8",
                 "--alpha", "0.5", "--out", str(out)])
    assert code == 3
    capsys.readouterr()
