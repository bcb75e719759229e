"""Aggregation of stage attributes and cross-entropy guided feature selection.

An aggregated stage output for one channel is ``P x P x Q`` where ``Q`` counts
vertical features (vertical positions times filters). Each vertical feature is a
``P x P`` plane; it is reduced to one scalar per sample, binned, and scored by
the cross-entropy of a class histogram fitted on those bins.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .tensor import AggregationSpec

SUMMARIES = ("mean", "max")


def aggregate(pre_pool: np.ndarray, spec: AggregationSpec) -> np.ndarray:
    """Aggregate one grouped ``(S, S, Kv, F)`` stage output to flat ``(P, P, Q*F)``."""
    S, _, Kv, F = pre_pool.shape
    return spec.apply(pre_pool.reshape(S, S, Kv * F), group=F)


class BinnedEstimator:
    """Class-conditional histogram over quantile bins with add-one smoothing.

    Bin edges are order statistics of the training values, so the binning of
    training data is unchanged by any strictly increasing transform.
    """

    def __init__(self, bins: int = 16, n_classes: int = 2):
        if bins < 1:
            raise ConfigError("bin count must be >= 1")
        self.bins = bins
        self.n_classes = n_classes
        self.edges = np.zeros(0)
        self.counts = np.zeros((bins, n_classes))

    def fit(self, values, labels) -> "BinnedEstimator":
        values = np.asarray(values, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        J = values.size
        order = np.sort(values)
        cuts = np.array([math.ceil(J * b / self.bins) for b in range(1, self.bins)], dtype=np.intp)
        self.edges = order[np.clip(cuts, 0, J - 1)] if J else np.zeros(0)
        self.counts = np.zeros((self.bins, self.n_classes))
        np.add.at(self.counts, (self.assign(values), labels), 1.0)
        return self

    def assign(self, values) -> np.ndarray:
        return np.searchsorted(self.edges, np.asarray(values, dtype=np.float64), side="right")

    @property
    def probabilities(self) -> np.ndarray:
        """Per-bin class probabilities, ``(bins, n_classes)``; rows sum to one."""
        sm = self.counts + 1.0
        return sm / sm.sum(axis=1, keepdims=True)

    def predict_proba(self, values) -> np.ndarray:
        return self.probabilities[self.assign(values)]


def cross_entropy(proba: np.ndarray, labels) -> float:
    """Summed cross-entropy of one-hot labels against predicted class probabilities."""
    labels = np.asarray(labels, dtype=np.int64)
    p = np.asarray(proba, dtype=np.float64)[np.arange(labels.size), labels]
    with np.errstate(divide="ignore"):
        return float(-np.log(p).sum())


def feature_cross_entropy(values, labels, bins: int = 16) -> float:
    est = BinnedEstimator(bins, max(2, int(np.max(labels)) + 1)).fit(values, labels)
    return cross_entropy(est.predict_proba(values), labels)


def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size < 2:
        raise InsufficientDataError("need at least 2 samples to score features")
    if np.unique(labels).size < 2:
        raise InsufficientDataError("feature scoring needs both classes present")
    return labels


def summarize(features: np.ndarray, how: str = "mean") -> np.ndarray:
    """Reduce ``(J, P, P, Q)`` to one scalar per sample and vertical feature: ``(J, Q)``."""
    if how == "mean":
        return features.mean(axis=(1, 2))
    if how == "max":
        return features.max(axis=(1, 2))
    raise ConfigError(f"unknown summary {how!r}; expected one of {SUMMARIES}")


def score_features(features: np.ndarray, labels, bins: int = 16, summary: str = "mean") -> np.ndarray:
    """Cross-entropy of every vertical feature of one channel. Lower is better.

    ``features`` is ``(J, P, P, Q)`` for the training samples.
    """
    labels = _check_labels(labels)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 4 or feats.shape[0] != labels.size:
        raise ConfigError(f"features must be (J, P, P, Q) with J={labels.size}, got {feats.shape}")
    scalars = summarize(feats, summary)
    return np.array([feature_cross_entropy(scalars[:, q], labels, bins)
                     for q in range(scalars.shape[1])])


def keep_count(q: int, keep_fraction: float) -> int:
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    # round away float noise such as 0.3 * 10 = 3.0000000000000004
    return max(1, math.ceil(round(keep_fraction * q, 9)))


@dataclass
class SelectionMask:
    stage: int
    kept: list[np.ndarray]  # per channel, feature indices by ascending cross-entropy
    scores: list[np.ndarray]  # per channel, all features

    def apply(self, agg: list[np.ndarray]) -> np.ndarray:
        """Flatten one sample's kept features across channels into a vector."""
        return np.concatenate([a[:, :, k].ravel() for a, k in zip(agg, self.kept)])

    @property
    def n_kept(self) -> list[int]:
        return [len(k) for k in self.kept]


def select_top(scores: list[np.ndarray], keep_fraction: float, stage: int = 0) -> SelectionMask:
    """Keep the lowest-scoring ``ceil(keep_fraction * Q)`` features of each channel;
    ties go to the lower index."""
    kept = []
    for s in scores:
        s = np.asarray(s, dtype=np.float64)
        order = np.argsort(s, kind="stable")
        kept.append(order[: keep_count(s.size, keep_fraction)].astype(np.int64))
    return SelectionMask(stage, kept, [np.asarray(s, dtype=np.float64) for s in scores])
