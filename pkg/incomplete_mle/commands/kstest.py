import logging

import pandas as pd

from incomplete_mle.commands.base import Command, output_dir
from incomplete_mle.core.diagnostics import ks_normality
from incomplete_mle.storage.files import read_columns, write_table

logger = logging.getLogger(__name__)

command = Command("kstest", "KS normality test of every column of a standardized-error CSV", requires=("input",))


@command.handler
def kstest(config, settings):
    header, values = read_columns(config.input)
    rows = []
    for i, name in enumerate(header):
        statistic, pvalue = ks_normality(values[:, i])
        rows.append({"column": name, "statistic": statistic, "p_value": pvalue})
    frame = pd.DataFrame(rows, columns=["column", "statistic", "p_value"])
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    write_table(output_dir(config, settings) / "kstest.csv", frame)
    return 0
