"""Serialisable estimation results."""
from __future__ import annotations

from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class EstimateFlag(str, Enum):
    """Degenerate events recorded on a result instead of raised."""
    DEGENERATE_SELECTION = "degenerate_selection"
    NONPOSITIVE_RATIO = "nonpositive_ratio"
    NEGATIVE_RADICAND = "negative_radicand"
    CLAMPED_H = "clamped_H"
    CLAMPED_ETA = "clamped_eta"


# ============== Result Models ==============

class IterationSnapshot(BaseModel):
    """(H, eta, J) after refinement pass m; m = 0 is the first stage."""
    m: int
    H: float
    eta: Optional[float] = None
    J: int


class EstimateResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    H_hat: float
    eta_hat: Optional[float] = None
    J_star: int
    m_opt: int = 0
    trajectory: list[IterationSnapshot]
    flags: list[str] = Field(default_factory=list)
    # energy ladder the estimate was computed from; not serialised
    ladder: Optional[Any] = Field(default=None, exclude=True, repr=False)

    @property
    def iterations(self) -> list[IterationSnapshot]:
        return self.trajectory

    def to_json(self, indent: Optional[int] = None) -> str:
        return self.model_dump_json(indent=indent)
