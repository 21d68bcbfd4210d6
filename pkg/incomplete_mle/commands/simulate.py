import logging

from incomplete_mle.commands.base import Command, output_dir, threads
from incomplete_mle.core.simulator import SimConfig, sample_stats, simulate_sample
from incomplete_mle.storage.files import load_params, write_paths, write_stats

logger = logging.getLogger(__name__)

command = Command("simulate", "simulate sample paths and write paths.jsonl and stats.csv", requires=("model",))


@command.handler
def simulate(config, settings):
    theta = load_params(config.model)
    sim = SimConfig(config.n_paths, config.horizon or settings.default_horizon, config.seed)
    paths = simulate_sample(theta, sim, threads(config, settings))
    out = output_dir(config, settings)
    write_paths(out / "paths.jsonl", paths)
    write_stats(out / "stats.csv", sample_stats(paths))
    print(f"simulated {len(paths)} paths (seed {sim.seed}, horizon {sim.horizon:g}) into {out}")
    return 0
