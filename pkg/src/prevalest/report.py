"""Result containers returned by every estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from prevalest.core import PrevalenceVector


@dataclass(frozen=True)
class RankReport:
    numerical_rank: int
    singular_values: np.ndarray
    kernel_witness_residual: float
    tolerance: float

    @property
    def condition_number(self) -> float:
        s = self.singular_values
        if s.size == 0 or s[-1] == 0:
            return float("inf")
        return float(s[0] / s[-1])


@dataclass
class Diagnostics:
    clipped: bool = False
    condition_number: float | None = None
    iterations: int | None = None
    converged: bool | None = None
    rank_report: RankReport | None = None
    active_bounds: tuple[bool, ...] | None = None
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass
class EstimateReport:
    method: str
    estimate: PrevalenceVector
    raw_estimate: np.ndarray
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    seed: int | None = None

    @property
    def q(self) -> np.ndarray:
        return self.estimate.probs
