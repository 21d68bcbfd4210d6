import json

import numpy as np
import pandas as pd
import pytest

from incomplete_mle.core.diagnostics import COLUMNS
from incomplete_mle.main import main
from incomplete_mle.models.params import worked_example
from incomplete_mle.storage.files import (
    load_params,
    read_matrix,
    read_paths,
    read_stats,
    save_params,
)


@pytest.fixture
def model_file(tmp_path, two_regime):
    return str(save_params(tmp_path / "model.json", two_regime))


@pytest.fixture
def ctmc_file(tmp_path, ctmc):
    return str(save_params(tmp_path / "ctmc.json", ctmc))


def simulate(model, out, *flags):
    return main(["simulate", "--model", model, "--out", str(out), *flags])


def test_simulate_single_path(tmp_path, model_file):
    assert simulate(model_file, tmp_path / "one", "--n-paths", "1", "--seed", "3") == 0
    assert len((tmp_path / "one" / "paths.jsonl").read_text().splitlines()) == 1
    assert len((tmp_path / "one" / "stats.csv").read_text().splitlines()) == 2
    paths = read_paths(tmp_path / "one" / "paths.jsonl", p=2)
    assert paths[0].events[0][1] == 0.0


def test_simulate_is_byte_reproducible(tmp_path, model_file):
    for name in ("a", "b"):
        assert simulate(model_file, tmp_path / name, "--n-paths", "25", "--seed", "8", "--threads", "3") == 0
    for artifact in ("paths.jsonl", "stats.csv"):
        assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()


def test_simulated_stats_cover_the_horizon(tmp_path, model_file):
    assert simulate(model_file, tmp_path, "--n-paths", "50", "--horizon", "7.5") == 0
    for stats in read_stats(tmp_path / "stats.csv"):
        assert abs(stats.T.sum() - 7.5) <= 1e-12 * 7.5


def test_estimate_single_regime(tmp_path, ctmc_file):
    assert simulate(ctmc_file, tmp_path, "--n-paths", "40") == 0
    assert main(["estimate", "--stats", str(tmp_path / "stats.csv"), "--regimes", "1", "--out", str(tmp_path)]) == 0
    fitted = load_params(tmp_path / "fitted_params.json")
    sample = read_stats(tmp_path / "stats.csv")
    N = sum(s.N for s in sample)
    T = sum(s.T for s in sample)
    assert np.isclose(fitted.q[0, 0, 1], N[0, 1] / T[0], rtol=1e-12)
    trace = (tmp_path / "trace.csv").read_text().splitlines()
    assert trace[0] == "iter,loglik,step_error"
    assert len(trace) == 1 + 2  # header, start, one iteration


def test_estimate_methods_agree(tmp_path, model_file):
    assert simulate(model_file, tmp_path, "--n-paths", "300", "--seed", "3", "--horizon", "5") == 0
    stats = str(tmp_path / "stats.csv")
    for method in ("em", "em-gradient"):
        out = tmp_path / method
        flags = ["--method", method, "--tol", "1e-10", "--max-iter", "50000"]
        assert main(["estimate", "--stats", stats, "--model", model_file, "--out", str(out), *flags]) == 0
    em = load_params(tmp_path / "em" / "fitted_params.json")
    gradient = load_params(tmp_path / "em-gradient" / "fitted_params.json")
    assert np.allclose(em.q, gradient.q, atol=1e-5)
    assert np.allclose(em.phi, gradient.phi, atol=1e-5)
    lines = (tmp_path / "em" / "trace.csv").read_text().splitlines()
    assert lines[0] == "iter,loglik,step_error"
    loglik = np.array([float(line.split(",")[1]) for line in lines[1:]])
    assert np.all(np.diff(loglik) >= -1e-10 * np.abs(loglik[:-1]))


def test_invert_info(tmp_path, model_file, capsys):
    assert simulate(model_file, tmp_path, "--n-paths", "300") == 0
    assert main(["estimate", "--stats", str(tmp_path / "stats.csv"), "--regimes", "2", "--out", str(tmp_path)]) == 0
    args = ["invert-info", "--stats", str(tmp_path / "stats.csv"), "--params", str(tmp_path / "fitted_params.json")]
    assert main([*args, "--out", str(tmp_path), "--psi-iters", "5000", "--psi-tol", "1e-13"]) == 0
    assert "spectral radius" in capsys.readouterr().out
    jy = read_matrix(tmp_path / "jy.csv")
    psi = read_matrix(tmp_path / "psi.csv")
    assert np.allclose(jy @ psi, np.eye(jy.shape[0]), atol=1e-8)


def test_kstest(tmp_path, capsys):
    z = np.random.default_rng(1).standard_normal((30, 2))
    path = tmp_path / "z.csv"
    path.write_text("a,b\n" + "\n".join(f"{float(x)!r},{float(y)!r}" for x, y in z) + "\n")
    assert main(["kstest", "--input", str(path), "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "kstest.csv").read_text().splitlines()
    assert lines[0] == "column,statistic,p_value"
    assert len(lines) == 3
    assert "statistic" in capsys.readouterr().out


def test_run_file_with_flag_override(tmp_path, model_file):
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"command": "simulate", "model": model_file, "n_paths": 5, "out": str(tmp_path)}))
    assert main(["--config", str(run), "--n-paths", "2"]) == 0
    assert len((tmp_path / "paths.jsonl").read_text().splitlines()) == 2


def test_bad_configuration_exits_nonzero(tmp_path, model_file):
    assert main(["simulate", "--out", str(tmp_path)]) == 1
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"command": "simulate", "model": model_file, "colour": "blue"}))
    assert main(["--config", str(run)]) == 1
    assert main(["--config", str(tmp_path / "missing.json")]) == 1
    assert main(["simulate", "--model", model_file, "--n-paths", "0", "--out", str(tmp_path)]) == 1
    assert main([]) == 1


def test_reproduce_smoke(tmp_path, model_file):
    out = tmp_path / "study"
    args = ["reproduce", "--model", model_file, "--replicates", "3", "--n-paths", "200", "--horizon", "5"]
    assert main([*args, "--seed", "5", "--out", str(out), "--threads", "2", "--max-iter", "5000"]) == 0
    properties = json.loads((out / "properties.json").read_text())
    assert properties["passed"]
    assert all(properties["checks"].values())
    assert properties["info"]["null_dimension"] == 1
    assert properties["info"]["replicates_used"] + len(properties["info"]["boundary_replicates"]) == 3
    for name in (
        "mle_report.csv",
        "mle_report.txt",
        "mestimator_report.csv",
        "mestimator_report.txt",
        "mle_standardized.csv",
        "mestimator_standardized.csv",
        "jx_bar.csv",
        "jy_bar.csv",
        "sigma_n.csv",
    ):
        assert (out / name).exists(), name
    traces = sorted(path.name for path in (out / "fit_traces").iterdir())
    assert len(traces) == 2
    assert traces[0].endswith("_em.csv") and traces[1].endswith("_em_gradient.csv")
    report = pd.read_csv(out / "mle_report.csv")
    assert list(report.columns) == list(COLUMNS)
    assert len(report) == 6


def test_reproduce_worked_example_small(tmp_path):
    model = save_params(tmp_path / "model.json", worked_example())
    out = tmp_path / "small"
    args = ["reproduce", "--model", str(model), "--replicates", "2", "--n-paths", "50", "--seed", "1"]
    assert main([*args, "--out", str(out), "--max-iter", "5000"]) in (0, 1)
    properties = json.loads((out / "properties.json").read_text())
    assert properties["info"]["null_dimension"] == 2
    assert len(pd.read_csv(out / "mle_report.csv")) == 24


@pytest.mark.slow
def test_desk_scale_study(tmp_path):
    model = save_params(tmp_path / "model.json", worked_example())
    out = tmp_path / "study"
    args = ["reproduce", "--model", str(model), "--replicates", "50", "--n-paths", "1000", "--horizon", "10"]
    assert main([*args, "--seed", "2024", "--out", str(out), "--max-iter", "50000"]) == 0

    mle, mest = pd.read_csv(out / "mle_report.csv"), pd.read_csv(out / "mestimator_report.csv")
    assert np.all(np.abs(mle["estimate"] - mle["true_value"]) < 4 * mle["se_jy_inv_pct"] / 100)
    assert np.all(np.abs(mle["rmse_pct"] - mle["se_jy_inv_pct"]) < 0.35 * mle["se_jy_inv_pct"])
    assert np.all(np.abs(mest["sd_pct"] - mest["se_sandwich_pct"]) < 0.35 * mest["se_sandwich_pct"])
    assert np.all(mest["se_sandwich_pct"] < mest["se_jy_inv_pct"])
    assert np.sum(mle["ks_pvalue"] > 0.05) >= 20
    assert np.sum(mest["ks_pvalue"] > 0.05) >= 20
