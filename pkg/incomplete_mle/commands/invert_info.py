import logging

import numpy as np
import pandas as pd

from incomplete_mle.commands.base import Command, output_dir
from incomplete_mle.core.information import information_matrices, psi_recursion, spectral_radius
from incomplete_mle.exceptions import PsiNotConvergedError
from incomplete_mle.models.params import SampleStats
from incomplete_mle.storage.files import load_params, read_stats, write_matrix, write_table

logger = logging.getLogger(__name__)

command = Command(
    "invert-info",
    "compute J_x and J_y at a parameter file and invert J_y with the Psi recursion",
    requires=("stats", "params"),
)


def _trace_frame(trace) -> pd.DataFrame:
    norms = np.asarray(trace.increment_norms, dtype=float)
    return pd.DataFrame({"step": np.arange(1, norms.size + 1), "increment_norm": norms})


def _print_trace(trace, rho):
    print(_trace_frame(trace).to_string(index=False, float_format=lambda v: f"{v:.6e}"))
    print(f"rate estimate {trace.spectral_radius_estimate:.6f}, spectral radius {rho:.6f}")


@command.handler
def invert_info(config, settings):
    sample = SampleStats.from_paths(read_stats(config.stats))
    theta = load_params(config.params)
    info = information_matrices(sample, theta)
    labels = theta.layout.labels
    out = output_dir(config, settings)
    write_matrix(out / "jx.csv", info.jx, labels)
    write_matrix(out / "jy.csv", info.jy, labels)
    rho = spectral_radius(info.jx_inv, info.jy)

    try:
        trace = psi_recursion(info.jx_inv, info.jy, tol=config.psi_tol, max_iter=config.psi_iters)
    except PsiNotConvergedError as exc:
        _print_trace(exc.trace, rho)
        logger.error("%s", exc)
        return 1

    write_matrix(out / "psi.csv", trace.limit, labels)
    write_table(out / "psi_trace.csv", _trace_frame(trace))
    _print_trace(trace, rho)
    residual = float(np.abs(info.jy @ trace.limit - np.eye(len(labels))).max())
    print(f"converged after {trace.steps} steps; max |J_y Psi - I| = {residual:.3e}")
    return 0
