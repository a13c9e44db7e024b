import json

import numpy as np
import pytest

from hsrtrain import __version__
from hsrtrain.cli import bench, fit_exponent, main, selftest
from hsrtrain.data import Dataset, export_csv, gen_separated
from hsrtrain.numerics import Rng


def records(path):
    return [json.loads(line) for line in open(path) if line.strip()]


@pytest.fixture
def data_csv(tmp_path):
    p = tmp_path / "data.csv"
    assert main(["gen", "--n", "32", "--d", "8", "--delta", "0.5", "--seed", "7", "--out", str(p), "--report", str(tmp_path / "gen.ndjson")]) == 0
    return p


@pytest.fixture
def ortho_csv(tmp_path):
    p = tmp_path / "ortho.csv"
    export_csv(Dataset([[1.0, 0.0], [0.0, 1.0]], [1.0, -1.0]), p)
    return p


# ---------------------------------------------------------------- gen
def test_gen_writes_file_and_report(tmp_path, data_csv):
    recs = records(tmp_path / "gen.ndjson")
    assert recs[0]["type"] == "config" and recs[0]["version"] == __version__
    assert recs[-1]["delta"] >= 0.5 and recs[-1]["n"] == 32


def test_gen_is_deterministic(tmp_path, data_csv):
    other = tmp_path / "again.csv"
    main(["gen", "--n", "32", "--d", "8", "--delta", "0.5", "--seed", "7", "--out", str(other), "--report", str(tmp_path / "x")])
    assert other.read_bytes() == data_csv.read_bytes()


def test_gen_missing_out(capsys):
    assert main(["gen", "--n", "4"]) == 1


def test_gen_infeasible(tmp_path):
    assert main(["gen", "--n", "40", "--d", "2", "--delta", "1.3", "--out", str(tmp_path / "x.csv"), "--report", str(tmp_path / "r")]) == 2


def test_unknown_flag_is_usage_error():
    assert main(["gen", "--bogus"]) == 1
    assert main([]) == 1


# ---------------------------------------------------------------- train
def test_train_trace(tmp_path, data_csv):
    out = tmp_path / "t.ndjson"
    assert main(["train", "--data", str(data_csv), "--mode", "data-index", "--m", "512", "--T", "20", "--out", str(out)]) == 0
    recs = records(out)
    assert recs[0]["type"] == "config" and recs[0]["params"]["mode"] == "data-index"
    iters = [r for r in recs if r["type"] == "iter"]
    assert len(iters) == 21
    assert {"t", "err2", "kmax", "ksum", "flips", "ops", "displacement", "millis"} <= set(iters[0])
    assert iters[-1]["err2"] < iters[0]["err2"]
    summary = recs[-1]
    assert summary["type"] == "summary"
    assert {"converged", "rho", "lambda_hat", "eta"} <= set(summary)


def test_train_rejects_zero_T(data_csv):
    assert main(["train", "--data", str(data_csv), "--T", "0"]) == 1


def test_compare_dense_and_weight_index(tmp_path, data_csv):
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    common = ["train", "--data", str(data_csv), "--m", "512", "--T", "30", "--seed", "3"]
    assert main(common + ["--out", str(a)]) == 0
    assert main(common + ["--mode", "weight-index", "--out", str(b)]) == 0
    assert main(["train", "--compare", str(a), str(b)]) == 0


def test_compare_detects_mismatch(tmp_path, data_csv):
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    main(["train", "--data", str(data_csv), "--m", "256", "--T", "10", "--seed", "1", "--out", str(a)])
    main(["train", "--data", str(data_csv), "--m", "256", "--T", "10", "--seed", "2", "--out", str(b)])
    assert main(["train", "--compare", str(a), str(b)]) == 4


def test_divergence_exit_code(tmp_path, data_csv):
    code = main(["train", "--data", str(data_csv), "--m", "256", "--T", "50", "--eta", "500", "--shift", "fixed:0", "--out", str(tmp_path / "d")])
    assert code == 3


def test_config_file_and_override(tmp_path, data_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"m": 128, "T": 7, "mode": "weight-index", "stop-threshold": 0.5}))
    out = tmp_path / "t.ndjson"
    assert main(["train", "--data", str(data_csv), "--config", str(cfg), "--T", "3", "--out", str(out)]) == 0
    params = records(out)[0]["params"]
    assert (params["m"], params["T"], params["mode"], params["stop_threshold"]) == (128, 3, "weight-index", 0.5)


def test_config_unknown_key(tmp_path, data_csv):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"width": 128}))
    assert main(["train", "--data", str(data_csv), "--config", str(cfg)]) == 1
    cfg.write_text("[1, 2]")
    assert main(["train", "--data", str(data_csv), "--config", str(cfg)]) == 1


# ---------------------------------------------------------------- ntk
def test_ntk_orthogonal_pair(tmp_path, ortho_csv):
    out = tmp_path / "k.ndjson"
    assert main(["ntk", "--data", str(ortho_csv), "--b", "0", "--mc-samples", "100000", "--out", str(out)]) == 0
    k = records(out)[-1]
    assert abs(k["lambda_hat"] - 0.5) <= 0.01
    assert k["lower_bound"] == pytest.approx(0.00354, abs=1e-5)
    assert k["upper_bound"] == 1.0 and k["passed"]


def test_ntk_unreliable(tmp_path, data_csv):
    assert main(["ntk", "--data", str(data_csv), "--b", "3", "--mc-samples", "1000", "--out", str(tmp_path / "k")]) == 5


def test_ntk_needs_b(data_csv):
    assert main(["ntk", "--data", str(data_csv), "--b"]) == 1
    assert main(["ntk", "--data", str(data_csv)]) == 1


# ---------------------------------------------------------------- self-test
def test_selftest_passes(tmp_path):
    out = tmp_path / "s.ndjson"
    assert main(["hsr-selftest", "--n", "500", "--steps", "150", "--out", str(out)]) == 0
    assert records(out)[-1]["passed"]


def test_selftest_catches_fault(tmp_path):
    out = tmp_path / "s.ndjson"
    assert main(["hsr-selftest", "--n", "500", "--steps", "150", "--inject-fault", "--out", str(out)]) == 4
    where = records(out)[-1]["first_divergence"]
    assert where["op"] == "query"


def test_selftest_empty_trace():
    assert selftest(0, [2, 3], 0, 0) == (True, None)


# ---------------------------------------------------------------- bench
def test_bench_rows_and_dense_cost():
    ds = gen_separated(Rng(0, 2), 16, 4, 0.3)
    rows, exps = bench(ds, [256, 1024], ["dense", "data-index"], iters=4, seed=0, mc_samples=20_000)
    assert len(rows) == 4
    for r in rows:
        if r["mode"] == "dense":
            assert r["ops_per_iter"] == r["dense_equiv"] == 16 * r["m"]
    assert exps["dense"] == pytest.approx(1.0)


def test_bench_cli(tmp_path):
    out = tmp_path / "b.ndjson"
    code = main(["bench", "--n", "16", "--d", "4", "--m-grid", "256", "512", "--iters", "3", "--mc-samples", "20000", "--out", str(out)])
    assert code == 0
    recs = records(out)
    assert sum(r["type"] == "bench" for r in recs) == 2 * 3
    assert "exponents" in recs[-1]


def test_fit_exponent():
    m = np.array([1, 4, 16, 64])
    assert fit_exponent(m, 3 * m**0.8) == pytest.approx(0.8)
