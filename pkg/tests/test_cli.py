import csv
import json

import numpy as np
import pytest

from chores_ce.cli import (
    BENCH_COLUMNS,
    EXIT_FAIL,
    EXIT_INVALID,
    EXIT_NOT_CONVERGED,
    EXIT_PASS,
    BenchPlan,
    InvalidInput,
    build_config,
    main,
)
from chores_ce.market import MarketInstance, load_instance, save_instance


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["gen", "--dist", "integer", "--n", "4", "--m", "5", "--seed", "7", "--out", str(out)]) == EXIT_PASS
    assert a.read_bytes() == b.read_bytes()
    inst = load_instance(a)
    assert (inst.n, inst.m) == (4, 5)
    assert "raw_integral" in inst.meta
    assert main(["gen", "--dist", "cauchy", "--n", "2", "--m", "2", "--out", str(a)]) == EXIT_INVALID


def test_solve_single_agent(tmp_path):
    inst = tmp_path / "one.json"
    save_instance(MarketInstance([[1.0, 3.0]], [4.0]), inst)
    out = tmp_path / "res.json"
    assert main(["solve", str(inst), "--algo", "dca", "--eps", "1e-8", "--out", str(out)]) == EXIT_PASS
    payload = json.loads(out.read_text())
    np.testing.assert_allclose(payload["candidate"]["p"], [1.0, 3.0], rtol=1e-8)
    assert payload["status"] == "converged"
    assert (tmp_path / "res.trace.csv").exists()
    # a solve result is accepted as a verify candidate
    assert main(["verify", str(inst), str(out), "--eps", "1e-6"]) == EXIT_PASS


def test_solve_exit_codes(tmp_path):
    inst = tmp_path / "u.json"
    main(["gen", "--n", "50", "--m", "50", "--seed", "0", "--out", str(inst)])
    out = tmp_path / "r.json"
    assert main(["solve", str(inst), "--algo", "sgr", "--eps", "0.01", "--out", str(out)]) == EXIT_PASS
    trace = tmp_path / "t.csv"
    code = main(["solve", str(inst), "--algo", "sgr", "--eps", "1e-3", "--max-iter", "1", "--out", str(out), "--trace", str(trace)])
    assert code == EXIT_NOT_CONVERGED
    assert json.loads(out.read_text())["status"] == "max_iter"
    assert trace.read_text().startswith("k,")
    assert main(["solve", str(tmp_path / "missing.json"), "--out", str(out)]) == EXIT_INVALID
    assert main(["solve", str(inst), "--gamma", "1.5", "--out", str(out)]) == EXIT_INVALID
    assert main(["solve"]) == EXIT_INVALID


def test_verify_exit_codes(tmp_path):
    inst = tmp_path / "one.json"
    save_instance(MarketInstance([[1.0, 3.0]], [4.0]), inst)
    cand = tmp_path / "c.json"
    cand.write_text(json.dumps({"p": [1.0, 3.0], "x": [[1.0, 1.0]]}))
    assert main(["verify", str(inst), str(cand), "--eps", "1e-12"]) == EXIT_PASS
    cand.write_text(json.dumps({"p": [1.0, 3.0], "x": [[1.05, 1.05]]}))
    assert main(["verify", str(inst), str(cand), "--eps", "0.01", "--eps-list", "0.01", "0.1"]) == EXIT_FAIL
    cand.write_text(json.dumps({"p": [0.0, 3.0], "x": [[1.0, 1.0]]}))
    assert main(["verify", str(inst), str(cand)]) == EXIT_INVALID
    cand.write_text("not json")
    assert main(["verify", str(inst), str(cand)]) == EXIT_INVALID


def test_bench_table(tmp_path):
    out = tmp_path / "bench.csv"
    code = main(["bench", "--dist", "uniform", "--dims", "10x10,50x50", "--algo", "dca", "sgr",
                 "--repeats", "1", "--out", str(out)])
    assert code == EXIT_PASS
    rows = _rows(out)
    assert len(rows) == 4
    assert list(rows[0]) == list(BENCH_COLUMNS)
    assert all(float(r["pass_rate"]) == 1.0 for r in rows)
    assert {(r["n"], r["algo"]) for r in rows} == {("10", "dca"), ("10", "sgr"), ("50", "dca"), ("50", "sgr")}
    trials = _rows(tmp_path / "bench.trials.csv")
    assert len(trials) == 4 and all(t["seed"] == "0" for t in trials)


def test_bench_without_algorithms_writes_header_only(tmp_path):
    out = tmp_path / "empty.csv"
    assert main(["bench", "--dims", "10", "--algo", "--repeats", "1", "--out", str(out)]) == EXIT_PASS
    assert out.read_text().splitlines() == [",".join(BENCH_COLUMNS)]
    assert main(["bench", "--dist", "cauchy", "--dims", "3", "--algo", "dca", "--out", str(out)]) == EXIT_INVALID
    assert main(["bench", "--dims", "3", "--repeats", "0", "--out", str(out)]) == EXIT_INVALID


def test_bench_seeds_follow_repeats():
    plan = BenchPlan([(3, 4)], ["uniform"], algorithms=["sgr"], repeats=3, seed_base=10)
    assert [k[-1] for k in plan.trials()] == [10, 11, 12]
    with pytest.raises(InvalidInput):
        BenchPlan([(3, 4)], ["uniform"], algorithms=["simplex"])


def test_config_precedence(tmp_path):
    class Args:
        eps = None
        time_limit_s = None
        delta_mode = None
        gamma = 0.5
        max_iter = None
        step_mode = None
        reg_eta = None

    cfg = build_config("sgr", Args(), {"eps": 0.05, "gamma": 0.8, "sgr": {"max_iter": 17}, "dca": {"reg_eta": 2.0}})
    assert cfg.eps == 0.05 and cfg.gamma == 0.5 and cfg.max_iter == 17
    dcfg = build_config("rdca", Args(), {"dca": {"reg_eta": 2.0}, "eps": 0.02})
    assert dcfg.reg_eta == 2.0 and dcfg.rounding and dcfg.eps == 0.02
    with pytest.raises(InvalidInput):
        build_config("sgr", Args(), {"colour": "blue"})

    inst = tmp_path / "one.json"
    save_instance(MarketInstance([[1.0, 3.0]], [4.0]), inst)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"colour": "blue"}))
    assert main(["solve", str(inst), "--config", str(bad), "--out", str(tmp_path / "r.json")]) == EXIT_INVALID
    bad.write_text("[1, 2]")
    assert main(["solve", str(inst), "--config", str(bad), "--out", str(tmp_path / "r.json")]) == EXIT_INVALID
