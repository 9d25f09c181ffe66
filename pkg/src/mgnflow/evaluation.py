"""Rollout evaluation over test ensembles and the two-variant comparison."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphSample, NormStats
from .metrics import RolloutResult, ensemble_summary, rollout_error
from .model import ModelParams, rollout


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    variable: str
    horizon: int
    delta: float


def evaluate(params: ModelParams, stats: NormStats, samples, horizons=(11, 19),
             p_init: float = 10e6) -> tuple[list[SampleScore], list[RolloutResult]]:
    """Roll every sample out to the longest horizon; score each horizon on steps 1..h."""
    scores, results = [], []
    for s in samples:
        hs = sorted({h for h in horizons if h <= s.n_T})
        if not hs:
            continue
        res = rollout(params, s, stats, hs[-1])
        results.append(res)
        for h in hs:
            scores.append(SampleScore(s.sample_id, s.variable, h, rollout_error(res.upto(h), p_init)))
    return scores, results


def summarize(scores, label: str) -> list[dict]:
    rows = []
    for h in sorted({s.horizon for s in scores}):
        summary = ensemble_summary([s.delta for s in scores if s.horizon == h])
        rows.append({"variant": label, "horizon": h, **summary})
    return rows


def compare(lstm: tuple[ModelParams, NormStats], mgn: tuple[ModelParams, NormStats],
            samples: list[GraphSample], horizons=(11, 19), p_init: float = 10e6) -> dict:
    """Side-by-side five-number summaries; ``lstm_not_worse`` compares medians at the last horizon."""
    sc_lstm, _ = evaluate(*lstm, samples, horizons, p_init)
    sc_mgn, _ = evaluate(*mgn, samples, horizons, p_init)
    rows = summarize(sc_lstm, "mgn_lstm") + summarize(sc_mgn, "mgn")
    last = max(r["horizon"] for r in rows)
    med = {r["variant"]: r["median"] for r in rows if r["horizon"] == last}
    return {"rows": rows, "horizon": last, "lstm_not_worse": bool(med["mgn_lstm"] <= med["mgn"]),
            "scores": {"mgn_lstm": sc_lstm, "mgn": sc_mgn}}


def median_of(scores, horizon: int) -> float:
    return float(np.median([s.delta for s in scores if s.horizon == horizon]))
