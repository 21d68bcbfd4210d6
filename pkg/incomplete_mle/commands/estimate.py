import logging

import numpy as np

from incomplete_mle.commands.base import Command, output_dir
from incomplete_mle.core.estimators import fit
from incomplete_mle.core.likelihood import score, weighted_stats
from incomplete_mle.exceptions import ConfigError
from incomplete_mle.models.params import SampleStats
from incomplete_mle.storage.files import load_params, read_stats, save_params, write_trace, write_weighted_stats

logger = logging.getLogger(__name__)

command = Command("estimate", "fit the model to a statistics file", requires=("stats",))


@command.handler
def estimate(config, settings):
    sample = SampleStats.from_paths(read_stats(config.stats))
    M = config.regimes
    if M is None and config.model is not None:
        M = load_params(config.model).M
    if M is None:
        raise ConfigError("estimate needs --regimes or --model to know the number of regimes")

    result = fit(sample, config.method, tol=config.tol, max_iter=config.max_iter, M=M)
    out = output_dir(config, settings)
    save_params(out / "fitted_params.json", result.theta_hat)
    write_trace(out / "trace.csv", result)
    write_weighted_stats(out / "weighted_stats.csv", weighted_stats(sample, result.theta_hat))

    score_norm = float(np.abs(score(sample, result.theta_hat)).max())
    print(
        f"{result.method.value} {result.status} after {result.iterations} iterations: "
        f"loglik {result.loglik_trace[-1]:.10f}, max |score| {score_norm:.3e}"
    )
    return 0
