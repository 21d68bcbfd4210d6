"""Reading and writing run artifacts: parameter JSON, path JSONL and CSV tables.

Machine-readable floats are written with 17 significant digits.
"""
import json
import logging
from pathlib import Path as FilePath
from typing import List, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from incomplete_mle.core.diagnostics import EstimationReport
from incomplete_mle.core.estimators import FitResult
from incomplete_mle.core.likelihood import WeightedStats
from incomplete_mle.core.simulator import Path
from incomplete_mle.exceptions import ConfigError, ParameterValidationError
from incomplete_mle.models.params import ModelParams, PathStats
from incomplete_mle.models.schemas import ParamFile, PathRecord

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise ConfigError(f"{path} is empty") from exc


def _prepare(path) -> FilePath:
    path = FilePath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_table(path, frame: pd.DataFrame) -> FilePath:
    path = _prepare(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %s", path)
    return path


def load_params(path) -> ModelParams:
    try:
        data = json.loads(FilePath(path).read_text())
        return ParamFile.model_validate(data).to_params()
    except FileNotFoundError as exc:
        raise ConfigError(f"parameter file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parameter file {path} is not valid JSON: {exc}") from exc
    except ValidationError as exc:
        raise ParameterValidationError([str(exc)]) from exc


def save_params(path, theta: ModelParams) -> FilePath:
    path = _prepare(path)
    path.write_text(ParamFile.from_params(theta).model_dump_json(indent=2) + "\n")
    logger.info("wrote %s", path)
    return path


def write_paths(path, paths: Sequence[Path]) -> FilePath:
    path = _prepare(path)
    with path.open("w") as handle:
        for item in paths:
            record = PathRecord(regime=item.regime, events=list(item.events), horizon=item.horizon)
            handle.write(record.model_dump_json() + "\n")
    logger.info("wrote %s", path)
    return path


def read_paths(path, p: int) -> List[Path]:
    paths = []
    with FilePath(path).open() as handle:
        for line in handle:
            if line.strip():
                record = PathRecord.model_validate_json(line)
                paths.append(Path(events=tuple(record.events), regime=record.regime, horizon=record.horizon, p=p))
    return paths


def _stats_header(p: int) -> List[str]:
    header = ["path_id"] + [f"B_{x}" for x in range(1, p + 1)]
    header += [f"N_{x}{y}" for x in range(1, p + 1) for y in range(1, p + 1)]
    return header + [f"T_{x}" for x in range(1, p + 1)]


def write_stats(path, stats: Sequence[PathStats]) -> FilePath:
    p = stats[0].p
    B = np.array([s.B for s in stats], dtype=int)
    N = np.array([s.N.ravel() for s in stats], dtype=int)
    T = np.array([s.T for s in stats], dtype=float)
    header = _stats_header(p)
    frame = pd.concat(
        [
            pd.DataFrame({"path_id": np.arange(len(stats))}),
            pd.DataFrame(B, columns=header[1 : 1 + p]),
            pd.DataFrame(N, columns=header[1 + p : 1 + p + p * p]),
            pd.DataFrame(T, columns=header[1 + p + p * p :]),
        ],
        axis=1,
    )
    return write_table(path, frame)


def read_stats(path) -> List[PathStats]:
    frame = _read_csv(path)
    header = list(frame.columns)
    p = sum(1 for name in header if name.startswith("T_"))
    if header != _stats_header(p):
        raise ConfigError(f"{path} does not have the statistics header for {p} states")
    if frame.empty:
        raise ConfigError(f"{path} holds no paths")
    B = frame.iloc[:, 1 : 1 + p].to_numpy(dtype=int)
    N = frame.iloc[:, 1 + p : 1 + p + p * p].to_numpy(dtype=int).reshape(-1, p, p)
    T = frame.iloc[:, 1 + p + p * p :].to_numpy(dtype=float)
    return [PathStats.create(B[k], N[k], T[k], T[k].sum()) for k in range(len(frame))]


def write_matrix(path, matrix: np.ndarray, labels: Sequence[str]) -> FilePath:
    return write_table(path, pd.DataFrame(np.asarray(matrix, dtype=float), columns=list(labels)))


def read_matrix(path) -> np.ndarray:
    return _read_csv(path).to_numpy(dtype=float)


def read_columns(path):
    """Read a CSV of numeric columns; returns (header, array of shape (rows, columns))."""
    frame = _read_csv(path)
    return list(frame.columns), frame.to_numpy(dtype=float)


def write_trace(path, result: FitResult) -> FilePath:
    # the starting point has no step error; it is written as an empty cell
    frame = pd.DataFrame(
        {
            "iter": np.arange(len(result.loglik_trace)),
            "loglik": np.asarray(result.loglik_trace, dtype=float),
            "step_error": np.concatenate([[np.nan], np.asarray(result.error_trace, dtype=float)]),
        }
    )
    return write_table(path, frame)


def write_weighted_stats(path, ws: WeightedStats) -> FilePath:
    p, M = ws.Bhat.shape
    x, m = np.meshgrid(np.arange(p), np.arange(M), indexing="ij")
    frame = pd.DataFrame(
        {
            "x": x.ravel() + 1,
            "m": m.ravel() + 1,
            "Bhat": ws.Bhat.ravel(),
            "That": ws.That.ravel(),
        }
    )
    # Nhat[x, y, m] laid out one row per (x, m)
    nhat = np.transpose(ws.Nhat, (0, 2, 1)).reshape(p * M, p)
    frame = frame.join(pd.DataFrame(nhat, columns=[f"Nhat_{y}" for y in range(1, p + 1)]))
    return write_table(path, frame)


def write_report(stem, report: EstimationReport) -> FilePath:
    stem = FilePath(stem)
    write_table(stem.with_suffix(".csv"), report.to_frame())
    text = _prepare(stem.with_suffix(".txt"))
    text.write_text(report.to_text())
    logger.info("wrote %s", text)
    return stem


def write_json(path, payload) -> FilePath:
    path = _prepare(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    logger.info("wrote %s", path)
    return path
