"""Request bodies of the HTTP routes.

Responses stay plain dicts assembled next to the core calls; requests are
validated here so malformed payloads fail with 422 before touching the
numerics (core-level range violations still surface as 400).
"""

from __future__ import annotations

import math
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator


class EnvSampleRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dist0: dict
    dist2: dict
    d: int = Field(default=1, ge=1)
    R: int = Field(default=3, ge=0)
    boundary: Literal["periodic", "zero"] = "periodic"
    seed: int = 0


class EnvValidateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    env: dict


class TreesEnumRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: int = Field(ge=0)
    numberings: bool = False


class ChiSolveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rho: Union[float, Literal["inf"]]
    window: int = Field(default=15, ge=1)
    tol: float = Field(default=1e-8, gt=0)
    restarts: int = Field(default=8, ge=0)
    seed: int = 0
    window_check: bool = True

    @field_validator("rho")
    @classmethod
    def _nonnegative(cls, v):
        if v == "inf":
            return v
        if not (v >= 0 and not math.isnan(v)):
            raise ValueError("rho must be >= 0 or 'inf'")
        return v

    def rho_value(self) -> float:
        return math.inf if self.rho == "inf" else float(self.rho)


class ChiTableRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rho_grid: list[Union[float, Literal["inf"]]] = Field(min_length=1)
    window: int = Field(default=15, ge=1)
    tol: float = Field(default=1e-8, gt=0)
    restarts: int = Field(default=8, ge=0)
    seed: int = 0
    window_check: bool = False

    def rho_values(self) -> list[float]:
        return [math.inf if r == "inf" else float(r) for r in self.rho_grid]


class SimulateDirectRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    env: dict
    x: list[int]
    t: float = Field(ge=0)
    n: int = Field(default=1, ge=1)
    samples: int = Field(ge=2)
    seed: int = 0
    kappa: float = Field(default=1.0, ge=0)
    cap: Optional[int] = Field(default=None, ge=1)
    y: Optional[list[int]] = None
    threads: int = Field(default=1, ge=1)


class SimulateFkRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    env: dict
    x: list[int]
    t: float = Field(ge=0)
    n: int = Field(default=1, ge=1)
    samples: int = Field(ge=2)
    seed: int = 0
    kappa: float = Field(default=1.0, ge=0)
    y: Optional[list[int]] = None
    warp_a: Optional[float] = Field(default=None, gt=0, le=1)
    threads: int = Field(default=1, ge=1)


class PdeSolveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    env: dict
    n: int = Field(default=1, ge=1)
    times: list[float] = Field(min_length=1)
    init: Literal["delocalized", "localized"] = "delocalized"
    y: Optional[list[int]] = None
    method: Optional[Literal["expm", "rk4"]] = None
    kappa: float = Field(default=1.0, ge=0)
