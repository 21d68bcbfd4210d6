"""The replication study: K seeded samples, MLE and M-estimator tables, property checks."""
import logging

import numpy as np

from incomplete_mle.commands.base import Command, output_dir, threads
from incomplete_mle.core.diagnostics import build_report
from incomplete_mle.core.estimators import FitConfig, Method, fit, m_estimator_pipeline
from incomplete_mle.core.information import (
    LOEWNER_TOL,
    PsiTrace,
    loewner_greater,
    psi_recursion,
    spectral_radius,
)
from incomplete_mle.core.simulator import SimConfig
from incomplete_mle.exceptions import LoewnerOrderingError, PsiNotConvergedError
from incomplete_mle.storage.files import load_params, write_json, write_matrix, write_report, write_trace

logger = logging.getLogger(__name__)

command = Command("reproduce", "run the replication study and write both estimation tables", requires=("model",))


def _psi(jx_inv, jy, config, name):
    try:
        return psi_recursion(jx_inv, jy, tol=config.psi_tol, max_iter=config.psi_iters)
    except PsiNotConvergedError as exc:
        logger.warning("%s: %s; reporting the last iterate", name, exc)
        return exc.trace
    except LoewnerOrderingError as exc:
        logger.warning("%s: %s; psi standard errors unavailable", name, exc)
        d = jy.shape[0]
        return PsiTrace(iterates=[np.full((d, d), np.nan)], spectral_radius_estimate=float("nan"), converged=False)


def _positive_definite(matrix):
    return loewner_greater(matrix, np.zeros_like(matrix))


@command.handler
def reproduce(config, settings):
    truth = load_params(config.model)
    sim = SimConfig(config.n_paths, config.horizon or settings.default_horizon, config.seed)
    fit_config = FitConfig(config.method, config.tol, config.max_iter)
    result = m_estimator_pipeline(
        truth,
        config.replicates,
        sim,
        fit_config,
        threads=threads(config, settings),
        m_estimate_kind=config.m_estimate_kind,
    )

    mle_trace = _psi(result.mle_jx_bar_inv, result.mle_jy_bar, config, "MLE table")
    m_trace = _psi(result.jx_bar_inv, result.jy_bar, config, "M-estimator table")
    mle_report = build_report(truth, result, mle_trace, kind="mle")
    m_report = build_report(truth, result, m_trace, kind="m_estimator")

    out = output_dir(config, settings)
    labels = truth.layout.labels
    write_report(out / "mle_report", mle_report)
    write_report(out / "mestimator_report", m_report)
    write_matrix(out / "mle_standardized.csv", mle_report.standardized, labels)
    write_matrix(out / "mestimator_standardized.csv", m_report.standardized, labels)
    write_matrix(out / "jx_bar.csv", result.jx_bar, labels)
    write_matrix(out / "jy_bar.csv", result.jy_bar, labels)
    write_matrix(out / "sigma_n.csv", result.sigma_n, labels)

    # traces come from the first replicate kept in the tables; the configured
    # method's fit of it is already in the result
    first = result.replicates[0]
    traces = {fit_config.method: result.fits[first]}
    for method in (Method.EM, Method.EM_GRADIENT):
        if method not in traces:
            traces[method] = fit(result.samples[0], method, tol=config.tol, max_iter=config.max_iter, M=truth.M)
        name = method.value.replace("-", "_")
        write_trace(out / "fit_traces" / f"replicate_{first:03d}_{name}.csv", traces[method])

    jy_inv = np.linalg.inv(result.jy_bar)
    # with one shared horizon J_x - J_y is singular along null_basis, so the
    # strict orderings are checked on its complement (J_x null_basis for inverses)
    null_basis, image = result.null_basis, result.inverse_null_basis()
    checks = {
        "mle_jy_positive_definite": _positive_definite(result.mle_jy_bar),
        "mle_jx_greater_than_jy": loewner_greater(result.mle_jx_bar, result.mle_jy_bar, null_basis=null_basis),
        "jx_greater_than_jy": loewner_greater(result.jx_bar, result.jy_bar, null_basis=null_basis),
        "jy_inv_greater_than_jx_inv": loewner_greater(jy_inv, result.jx_bar_inv, null_basis=image),
        "jx_inv_greater_than_sigma_n": loewner_greater(result.jx_bar_inv, result.sigma_n, null_basis=image),
        "sigma_n_positive_definite": _positive_definite(result.sigma_n),
        "em_monotone_first_replicate": traces[Method.EM].monotone,
        "se_sandwich_below_se_jy_inv": bool(
            np.all(m_report.column("se_sandwich_pct") < m_report.column("se_jy_inv_pct"))
        ),
    }
    if fit_config.method is Method.EM:
        checks["em_monotone_all_replicates"] = all(f.monotone for f in result.fits)
    for name, trace in (("mle", mle_trace), ("mestimator", m_trace)):
        if trace.steps:
            checks[f"psi_increments_psd_{name}"] = trace.min_increment_eigenvalue() >= -LOEWNER_TOL

    info = {
        "replicates": result.K,
        "n_paths": result.n,
        "horizon": sim.horizon,
        "seed": sim.seed,
        "method": fit_config.method.value,
        "m_estimate_kind": config.m_estimate_kind,
        "fits_converged": sum(f.converged for f in result.fits),
        "replicates_used": len(result.replicates),
        "boundary_replicates": result.boundary,
        "null_dimension": int(null_basis.shape[1]),
        "iterations_first_replicate":{m.value: traces[m].iterations for m in traces},
        "psi_converged": {"mle": mle_trace.converged, "mestimator": m_trace.converged},
        "psi_steps": {"mle": mle_trace.steps, "mestimator": m_trace.steps},
        "psi_rate_estimate": {
            "mle": mle_trace.spectral_radius_estimate,
            "mestimator": m_trace.spectral_radius_estimate,
        },
        "spectral_radius": {
            "mle": spectral_radius(result.mle_jx_bar_inv, result.mle_jy_bar),
            "mestimator": spectral_radius(result.jx_bar_inv, result.jy_bar),
        },
    }
    passed = all(checks.values())
    write_json(out / "properties.json", {"passed": passed, "checks": checks, "info": info})

    print(mle_report.to_text())
    print(m_report.to_text())
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        logger.error("property checks failed: %s", ", ".join(failed))
        return 1
    print(f"all {len(checks)} property checks passed; results in {out}")
    return 0
