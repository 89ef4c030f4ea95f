"""Model choice from pooled ABC acceptances and Bayes factors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .inference import accept_count, mad_scale, scaled_distances

INF_SENTINEL = "inf"


@dataclass(frozen=True)
class ModelComparison:
    """Accepted counts per model with posterior probabilities and Bayes factors.

    ``bf_matrix[i, j] = counts[i] / counts[j]``; a zero denominator gives
    ``inf`` (``nan`` when both counts are zero), written as ``"inf"`` on
    serialization.
    """

    names: tuple[str, ...]
    counts: np.ndarray
    probs: np.ndarray
    bf_matrix: np.ndarray

    @classmethod
    def from_counts(cls, names: Sequence[str], counts: Sequence[int]) -> "ModelComparison":
        names = tuple(names)
        counts = np.asarray(counts, dtype=np.int64)
        if len(names) != len(counts) or len(names) == 0:
            raise ValueError("need one count per model")
        if len(set(names)) != len(names):
            raise ValueError("duplicate model names")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        total = counts.sum()
        if total == 0:
            raise ValueError("no accepted simulations in any model")
        probs = counts / total
        num, den = counts[:, None].astype(float), counts[None, :].astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            bf = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                          np.where(num > 0, np.inf, np.nan))
        np.fill_diagonal(bf, 1.0)
        return cls(names, counts, probs, bf)

    def bayes_factor(self, model_1: str, model_2: str) -> float:
        return float(self.bf_matrix[self.names.index(model_1), self.names.index(model_2)])

    def to_dict(self) -> dict:
        return {
            "models": list(self.names),
            "counts": [int(c) for c in self.counts],
            "probs": [float(p) for p in self.probs],
            "bf_matrix": [[encode_float(v) for v in row] for row in self.bf_matrix],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelComparison":
        return cls.from_counts(data["models"], data["counts"])


def encode_float(value: float):
    """JSON-safe float: infinities and NaN become string sentinels."""
    value = float(value)
    if math.isinf(value):
        return INF_SENTINEL if value > 0 else "-" + INF_SENTINEL
    if math.isnan(value):
        return "nan"
    return value


def decode_float(value) -> float:
    """Inverse of :func:`encode_float`."""
    return float(value)


def pooled_model_posterior(distances: Sequence[np.ndarray], acceptance_rate: float,
                           names: Sequence[str] | None = None) -> ModelComparison:
    """Count each model's share of the pooled ``ceil(rate * total)`` smallest distances.

    Ties at the cutoff are admitted by replicate index, then by model order.
    """
    if not 0 < acceptance_rate < 1:
        raise ValueError("acceptance_rate must lie in (0, 1)")
    arrays = [np.asarray(d, float) for d in distances]
    if not arrays:
        raise ValueError("need at least one model")
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("every model needs the same number of replicates")
    names = [f"M{i}" for i in range(len(arrays))] if names is None else list(names)
    pooled = np.concatenate(arrays)
    pooled = np.where(np.isnan(pooled), np.inf, pooled)
    model_idx = np.repeat(np.arange(len(arrays)), n)
    rep_idx = np.tile(np.arange(n), len(arrays))
    order = np.lexsort((model_idx, rep_idx, pooled))
    target = accept_count(acceptance_rate, len(pooled))
    counts = np.bincount(model_idx[order[:target]], minlength=len(arrays))
    return ModelComparison.from_counts(names, counts)


def pooled_distances(stats_per_model: Sequence[np.ndarray], observed, ok=None) -> list[np.ndarray]:
    """Distances to ``observed`` with MAD scales estimated on all models together."""
    stacked = np.vstack(stats_per_model)
    _, scales = mad_scale(stacked)
    out = []
    for i, s in enumerate(stats_per_model):
        d = scaled_distances(s, observed, scales)
        if ok is not None:
            d = np.where(ok[i], d, np.inf)
        out.append(d)
    return out


KR_BANDS = ((3.0, "bare mention"), (20.0, "positive"), (150.0, "strong"))


def kass_raftery_label(k: float) -> str:
    """Evidence label for a Bayes factor ``k >= 1`` (boundaries go to the lower band)."""
    if math.isnan(k) or k < 1:
        raise ValueError("K must be at least 1; invert the Bayes factor first")
    for upper, label in KR_BANDS:
        if k <= upper:
            return label
    return "very strong"


@dataclass(frozen=True)
class Ranking:
    order: tuple[str, ...]
    counts: tuple[int, ...]
    tied: bool


def rank_models(comparison: ModelComparison) -> Ranking:
    """Models by accepted count, descending; ties alphabetical and flagged."""
    pairs = sorted(zip(comparison.names, comparison.counts.tolist()), key=lambda p: (-p[1], p[0]))
    counts = [c for _, c in pairs]
    tied = len(set(counts)) < len(counts)
    return Ranking(tuple(n for n, _ in pairs), tuple(counts), tied)


def rank_from_bf(names: Sequence[str], bf_matrix) -> tuple[str, ...]:
    """Order models so each beats every later one (row products of the BF matrix).

    The geometric mean of a model's row is a consistent score because
    ``bf[i, j] = p_i / p_j`` for any valid matrix.
    """
    bf = np.asarray(bf_matrix, float)
    with np.errstate(divide="ignore"):
        score = np.log(bf).sum(axis=1)
    order = sorted(range(len(names)), key=lambda i: (-score[i], names[i]))
    return tuple(names[i] for i in order)
