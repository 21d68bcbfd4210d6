from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from incomplete_mle.core.estimators import Method
from incomplete_mle.models.params import ModelParams


class ParamFile(BaseModel):
    """Model parameter file. Diagonal entries of Q may be null; they are rebuilt."""

    model_config = ConfigDict(extra="forbid")

    p: int = Field(ge=2)
    M: int = Field(ge=1)
    alpha: List[float]
    phi: List[List[float]]
    Q: List[List[List[Optional[float]]]]

    @model_validator(mode="after")
    def check_shapes(self):
        p, M = self.p, self.M
        if len(self.alpha) != p:
            raise ValueError(f"alpha needs {p} entries")
        if len(self.phi) != p or any(len(row) != M for row in self.phi):
            raise ValueError(f"phi must be {p} rows of {M} values")
        if len(self.Q) != M or any(len(mat) != p or any(len(row) != p for row in mat) for mat in self.Q):
            raise ValueError(f"Q must hold {M} matrices of size {p}x{p}")
        for mat in self.Q:
            for x, row in enumerate(mat):
                for y, value in enumerate(row):
                    if value is None and x != y:
                        raise ValueError("only diagonal entries of Q may be omitted")
        return self

    def to_params(self) -> ModelParams:
        q = np.array([[[0.0 if v is None else v for v in row] for row in mat] for mat in self.Q])
        return ModelParams.build(self.alpha, self.phi, q)

    @classmethod
    def from_params(cls, theta: ModelParams) -> "ParamFile":
        return cls(
            p=theta.p,
            M=theta.M,
            alpha=theta.alpha.tolist(),
            phi=theta.phi.tolist(),
            Q=theta.q.tolist(),
        )


class PathRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    regime: int = Field(ge=1)
    events: List[Tuple[int, float]]
    horizon: float = Field(gt=0)


class RunConfig(BaseModel):
    """Settings of one CLI run, read from the run file and overridden by flags."""

    model_config = ConfigDict(extra="forbid")

    command: Optional[Literal["simulate", "estimate", "invert-info", "reproduce", "kstest"]] = None
    model: Optional[str] = None
    stats: Optional[str] = None
    params: Optional[str] = None
    input: Optional[str] = None
    regimes: Optional[PositiveInt] = None
    seed: int = Field(default=0, ge=0)
    n_paths: PositiveInt = 1000
    horizon: Optional[float] = Field(default=None, gt=0)
    replicates: PositiveInt = 50
    method: Method = Method.EM
    tol: float = Field(default=1e-8, gt=0)
    max_iter: Optional[PositiveInt] = None
    psi_tol: float = Field(default=1e-10, gt=0)
    psi_iters: PositiveInt = 500
    m_estimate_kind: Literal["one_step", "em_step"] = "one_step"
    threads: Optional[PositiveInt] = None
    out: Optional[str] = None
