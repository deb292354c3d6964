"""Scenario complexity from relation, variety and quantity terms.

    C = sum_i s(i) p(i)                       relation (expected scenario severity)
    d = C * [(1 - m/100) + n/n_max + 1/TTC]   global complexity

``m`` is the segmentation accuracy in percent, ``n`` the number of distinct
non-background classes in the frame and ``1/TTC`` is 0 when nothing closes in.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .labelmap import LabelMap
from .scenario import RELATION_VALUES, ScenarioDistribution, ScenarioLabel

DEFAULT_N_MAX = 22
DISPLAY_CAP = 10.0


def relation_complexity(p: ScenarioDistribution) -> float:
    if not isinstance(p, ScenarioDistribution):
        p = ScenarioDistribution(p)
    return float(sum(RELATION_VALUES[s] * p.p[s] for s in ScenarioLabel))


def inverse_ttc(ttc: float | None) -> float:
    if ttc is None or math.isinf(ttc):
        return 0.0
    if ttc <= 0:
        raise ValueError("TTC must be positive or infinite")
    return 1.0 / ttc


def complexity_bracket(m: float, n: int | float, n_max: int | float, ttc: float | None) -> float:
    """The bracketed sum ``(1 - m/100) + n/n_max + 1/TTC``."""
    if not 0 <= m <= 100:
        raise ValueError("variety m must be a percentage in [0, 100]")
    if n_max <= 0 or not 0 <= n <= n_max:
        raise ValueError("quantity n must lie in [0, n_max] with n_max > 0")
    return (1.0 - m / 100.0) + n / n_max + inverse_ttc(ttc)


def scenario_complexity(C: float, m: float, n: int | float, n_max: int | float, ttc: float | None) -> float:
    if not 1.0 - 1e-12 <= C <= 5.0 + 1e-12:
        raise ValueError(f"relation complexity {C} outside [1, 5]")
    return C * complexity_bracket(m, n, n_max, ttc)


def quantity_count(m: LabelMap) -> int:
    """Distinct non-background classes present."""
    present = np.unique(m.cells)
    return int(np.count_nonzero(present != 0))


@dataclass(frozen=True)
class ComplexityReport:
    C: float
    m: float
    n: int
    n_max: int
    ttc: float | None  # None: no closing conflict object
    inv_ttc: float
    d: float

    @property
    def d_display(self) -> float:
        return min(self.d, DISPLAY_CAP)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "ComplexityReport":
        return cls(**data)


def complexity_report(p: ScenarioDistribution, m: float, n: int, n_max: int = DEFAULT_N_MAX,
                      ttc: float | None = None) -> ComplexityReport:
    ttc = None if ttc is None or math.isinf(ttc) else float(ttc)
    C = relation_complexity(p)
    return ComplexityReport(C, float(m), int(n), int(n_max), ttc, inverse_ttc(ttc),
                            scenario_complexity(C, m, n, n_max, ttc))
