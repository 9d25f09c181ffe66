"""Rollout error metrics and ensemble summaries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

PLUME_THRESHOLD = 0.01
SUMMARY_KEYS = ("min", "q1", "median", "q3", "max")


@dataclass(frozen=True, eq=False)
class RolloutResult:
    """Physical predictions and truth for snapshots 1 .. n_T (row n-1 is snapshot n)."""

    predicted: np.ndarray
    truth: np.ndarray
    variable: str = "s_g"
    sample_id: str = ""
    relperm_input: np.ndarray | None = None

    def __post_init__(self):
        if self.predicted.shape != self.truth.shape:
            raise InvalidArgument(f"prediction {self.predicted.shape} and truth "
                                  f"{self.truth.shape} differ in shape")
        if self.predicted.ndim != 2 or self.predicted.shape[0] < 1:
            raise InvalidArgument("need at least one step of [n_T, n_C] fields")

    @property
    def n_T(self) -> int:
        return self.predicted.shape[0]

    @property
    def error(self) -> np.ndarray:
        return np.abs(self.truth - self.predicted)

    def upto(self, horizon: int) -> "RolloutResult":
        if not 1 <= horizon <= self.n_T:
            raise InvalidArgument(f"horizon {horizon} outside 1..{self.n_T}")
        kr = None if self.relperm_input is None else self.relperm_input[:horizon]
        return RolloutResult(self.predicted[:horizon], self.truth[:horizon], self.variable,
                             self.sample_id, kr)


def plume_saturation_error(result: RolloutResult, threshold: float = PLUME_THRESHOLD) -> float:
    """Mean |s - s_hat| over (cell, step) pairs where truth or prediction exceeds the threshold.

    Returns 0 when no pair qualifies.
    """
    if result.variable != "s_g":
        raise InvalidArgument("plume error needs a saturation rollout")
    s, s_hat = result.truth, result.predicted
    mask = (s > threshold) | (np.abs(s_hat) > threshold)
    count = int(mask.sum())
    if count == 0:
        return 0.0
    return float(np.abs(s - s_hat)[mask].sum() / count)


def pressure_relative_error(result: RolloutResult, p_init: float = 10e6) -> float:
    if result.variable != "p_g":
        raise InvalidArgument("pressure error needs a pressure rollout")
    if p_init <= 0:
        raise InvalidArgument("p_init must be positive")
    return float(np.abs(result.truth - result.predicted).sum() / (result.truth.size * p_init))


def rollout_error(result: RolloutResult, p_init: float = 10e6) -> float:
    if result.variable == "s_g":
        return plume_saturation_error(result)
    return pressure_relative_error(result, p_init)


def ensemble_summary(values) -> dict[str, float]:
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise InvalidArgument("ensemble_summary of an empty list")
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return dict(zip(SUMMARY_KEYS, (float(x) for x in q)))
