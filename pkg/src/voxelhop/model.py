"""End-to-end model: cascade, per-stage selection and LAG, and the final linear
least-squares classifier. Also metrics, parameter accounting and the
leave-one-out harness."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .config import RunConfig
from .errors import DimensionError, InsufficientDataError
from .hop import HopCascade, fit_cascade, iter_cascade
from .lag import LagUnit, affine_lstsq, apply_lag, fit_lag
from .select import SelectionMask, aggregate, score_features, select_top
from .tensor import validate_volume

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass
class TrainedModel:
    cascade: HopCascade
    masks: list[SelectionMask]
    lags: list[LagUnit]
    weights: np.ndarray  # (M' * I + 1,), bias last
    threshold: float
    config: RunConfig
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        I = self.cascade.n_stages
        if not (len(self.masks) == len(self.lags) == I):
            raise DimensionError("stage count differs between cascade, masks and LAG units")
        if self.weights.shape != (sum(u.out_dim for u in self.lags) + 1,):
            raise DimensionError("classifier weight length does not match the LAG outputs")

    @property
    def n_stages(self) -> int:
        return self.cascade.n_stages

    @property
    def input_dims(self) -> tuple[int, int, int]:
        return self.cascade.input_dims

    def features(self, x: np.ndarray) -> np.ndarray:
        """Concatenated LAG outputs for one volume, length ``M' * I``."""
        S0, K0, C = self.input_dims
        x = np.asarray(x)
        if x.shape != (S0, S0, K0, C):
            raise DimensionError(f"volume shape {x.shape} does not match model dims {(S0, S0, K0, C)}")
        agg: list[list[np.ndarray]] = [[None] * C for _ in range(self.n_stages)]
        for c in range(C):
            for i, out in enumerate(iter_cascade(self.cascade, x, c)):
                agg[i][c] = aggregate(out, self.config.aggregation[i])
        return np.concatenate([
            apply_lag(unit, mask.apply(agg[i]))[0]
            for i, (mask, unit) in enumerate(zip(self.masks, self.lags))
        ])

    def score(self, x: np.ndarray) -> float:
        return float(self.features(x) @ self.weights[:-1] + self.weights[-1])


def _check_labels(labels, need_per_class: int = 2) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if not np.isin(labels, (0, 1)).all():
        raise InsufficientDataError("labels must be 0 (control) or 1 (patient)")
    counts = np.bincount(labels, minlength=2)
    if counts.min() < need_per_class:
        raise InsufficientDataError(
            f"need at least {need_per_class} samples per class, got {counts.tolist()}")
    return labels


def _fit_module1(volumes: Sequence[np.ndarray], config: RunConfig, workers: int = 1):
    """Fit the unsupervised cascade and collect aggregated stage outputs."""
    J, C = len(volumes), volumes[0].shape[3]
    agg = [[[None] * C for _ in range(J)] for _ in config.stages]

    def sink(i, j, c, out):
        agg[i][j][c] = aggregate(out, config.aggregation[i])

    cascade = fit_cascade(volumes, config.stages, sink=sink, row_cap=config.row_cap, workers=workers)
    return cascade, agg


def _fit_head(cascade: HopCascade, agg, labels: np.ndarray, config: RunConfig,
              seed: int, keep_fraction: float | None = None) -> TrainedModel:
    """Supervised part: feature selection, LAG per stage, final regressor."""
    keep = config.keep_fraction if keep_fraction is None else keep_fraction
    C = cascade.channels
    masks, lags, outs = [], [], []
    for i, stage_agg in enumerate(agg):
        scores = [
            score_features(np.stack([sample[c] for sample in stage_agg]), labels,
                           config.bins, config.summary)
            for c in range(C)
        ]
        mask = select_top(scores, keep, stage=i)
        X = np.stack([mask.apply(sample) for sample in stage_agg])
        unit = fit_lag(X, labels, config.L, config.omega, seed=seed, key=(i,))
        masks.append(mask)
        lags.append(unit)
        outs.append(apply_lag(unit, X))
    Z = np.hstack(outs)
    targets = np.where(labels == 1, 1.0, -1.0)[:, None]
    w = affine_lstsq(Z, targets)[0]
    return TrainedModel(cascade, masks, lags, w, 0.0, config)


def _as_volumes(volumes) -> list[np.ndarray]:
    vols = [validate_volume(v) for v in volumes]
    if not vols:
        raise InsufficientDataError("empty dataset")
    shape = vols[0].shape
    for v in vols:
        if v.shape != shape:
            raise DimensionError(f"inconsistent sample dims {v.shape} vs {shape}")
    return vols


def fit(volumes, labels, config: RunConfig, seed: int | None = None, threads: int = 1) -> TrainedModel:
    """Train the full pipeline. Labels only reach selection, LAG and the classifier.

    ``threads`` caps the channels fitted concurrently; it never changes the result.
    """
    vols = _as_volumes(volumes)
    labels = _check_labels(labels)
    if labels.size != len(vols):
        raise DimensionError(f"{len(vols)} volumes but {labels.size} labels")
    if np.bincount(labels).min() < config.L:
        raise InsufficientDataError(f"each class needs at least L={config.L} samples")
    S0, _, K0, C = vols[0].shape
    config.validate((S0, K0, C))
    cascade, agg = _fit_module1(vols, config, threads)
    return _fit_head(cascade, agg, labels, config, config.seed if seed is None else seed)


def predict(model: TrainedModel, x: np.ndarray) -> tuple[float, int]:
    """``(score, label)``; a score equal to the threshold counts as control."""
    s = model.score(x)
    return s, int(s > model.threshold)


# -- metrics -----------------------------------------------------------------------

def _binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape:
        raise DimensionError("scores and labels differ in length")
    if np.unique(labels).size < 2:
        raise InsufficientDataError("AUC / ROC need both classes present")
    return scores, labels


def auc(scores, labels) -> float:
    """Mann-Whitney U over all positive/negative pairs; ties count one half."""
    scores, labels = _binary(scores, labels)
    ranks = rankdata(scores)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc(scores, labels) -> np.ndarray:
    """ROC points ``(fpr, tpr, threshold)`` from (0, 0) to (1, 1), sweeping the
    threshold down through every distinct score."""
    scores, labels = _binary(scores, labels)
    pos = labels == 1
    thresholds = np.unique(scores)[::-1]
    pts = [(0.0, 0.0, np.inf)]
    for t in thresholds:
        hit = scores >= t
        pts.append(((hit & ~pos).sum() / (~pos).sum(), (hit & pos).sum() / pos.sum(), t))
    return np.array(pts)


def accuracy(scores, labels, threshold: float = 0.0) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    return float(np.mean((scores > threshold).astype(int) == np.asarray(labels)))


def best_threshold_accuracy(scores, labels) -> tuple[float, float]:
    """Highest accuracy over all cut points, and a threshold achieving it."""
    scores = np.asarray(scores, dtype=np.float64)
    u = np.unique(scores)
    cuts = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1]]])
    accs = [accuracy(scores, labels, t) for t in cuts]
    k = int(np.argmax(accs))
    return accs[k], float(cuts[k])


def confusion(scores, labels, threshold: float = 0.0) -> dict:
    pred = np.asarray(scores) > threshold
    y = np.asarray(labels) == 1
    return {"tp": int((pred & y).sum()), "fp": int((pred & ~y).sum()),
            "tn": int((~pred & ~y).sum()), "fn": int((~pred & y).sum())}


def count_parameters(model: TrainedModel) -> dict:
    """Learned-parameter breakdown: Saab anchors plus bias, LAG regression and
    centers, and the final classifier."""
    saab = sum(b.F * b.n + 1 for stage in model.cascade.banks for b in stage)
    lag = sum(u.out_dim * (u.n + 1) + u.out_dim * u.n for u in model.lags)
    clf = int(model.weights.size)
    return {"saab": int(saab), "lag": int(lag), "classifier": clf, "total": int(saab + lag + clf)}


# -- leave-one-out -----------------------------------------------------------------

def fold_seed(seed: int, repeat: int, fold: int) -> int:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(repeat), int(fold)))
    return int(ss.generate_state(1)[0])


@dataclass
class FoldResult:
    fold: int
    scores: list[float]  # one per repeat
    parameters: dict
    seconds: float
    models: list[TrainedModel] = field(default_factory=list, repr=False)


def fit_fold(vols: list[np.ndarray], labels: np.ndarray, fold: int, config: RunConfig,
             repeats: int = 1, keep_fractions: Sequence[float] | None = None,
             keep_models: bool = False) -> FoldResult | list[FoldResult]:
    """Fit on every sample except ``fold`` and score the held-out one.

    The unsupervised cascade is fitted once and shared by every repeat (and by
    every entry of ``keep_fractions``, if given); only the seeded supervised
    head is refitted.
    """
    t0 = time.perf_counter()
    train = [j for j in range(len(vols)) if j != fold]
    y = labels[train]
    cascade, agg = _fit_module1([vols[j] for j in train], config)
    held = vols[fold]
    results = []
    for keep in (keep_fractions or [None]):
        scores, models, params = [], [], None
        for r in range(repeats):
            seed = fold_seed(config.seed, r, fold)
            m = _fit_head(cascade, agg, y, config, seed, keep)
            scores.append(m.score(held))
            params = params or count_parameters(m)
            if keep_models:
                models.append(m)
        results.append(FoldResult(fold, scores, params, time.perf_counter() - t0, models))
    return results if keep_fractions else results[0]


@dataclass
class EvalReport:
    ids: list[str]
    labels: list[int]
    scores: list[float]
    threshold: float
    accuracy: float
    auc: float
    roc: list[tuple[float, float, float]]
    confusion: dict
    parameters: dict
    fit_seconds: float
    repeat_scores: list[list[float]] = field(default_factory=list)
    repeat_accuracy: list[float] = field(default_factory=list)
    repeat_auc: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def accuracy_mean(self) -> float:
        return float(np.mean(self.repeat_accuracy))

    @property
    def accuracy_std(self) -> float:
        return float(np.std(self.repeat_accuracy))

    @property
    def auc_mean(self) -> float:
        return float(np.mean(self.repeat_auc))

    @property
    def auc_std(self) -> float:
        return float(np.std(self.repeat_auc))

    def to_dict(self) -> dict:
        return {
            "n_samples": len(self.ids),
            "n_folds": len(self.ids),
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "auc": self.auc,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "repeats": len(self.repeat_auc),
            "repeat_accuracy": self.repeat_accuracy,
            "repeat_auc": self.repeat_auc,
            "confusion": self.confusion,
            "parameters": self.parameters,
            "fit_seconds": self.fit_seconds,
            "samples": [
                {"id": i, "label": l, "score": s}
                for i, l, s in zip(self.ids, self.labels, self.scores)
            ],
            "roc": [list(p) for p in self.roc],
            "config": self.config,
        }


def build_report(ids, labels, repeat_scores: list[list[float]], parameters: dict,
                 seconds: float, config: dict | None = None, threshold: float = 0.0) -> EvalReport:
    labels = [int(l) for l in labels]
    accs = [accuracy(s, labels, threshold) for s in repeat_scores]
    aucs = [auc(s, labels) for s in repeat_scores]
    first = list(map(float, repeat_scores[0]))
    pts = roc(first, labels)
    return EvalReport(
        ids=list(ids), labels=labels, scores=first, threshold=threshold,
        accuracy=accs[0], auc=aucs[0],
        roc=[(float(a), float(b), float(t)) for a, b, t in pts],
        confusion=confusion(first, labels, threshold), parameters=parameters,
        fit_seconds=seconds, repeat_scores=[list(map(float, s)) for s in repeat_scores],
        repeat_accuracy=accs, repeat_auc=aucs, config=config or {},
    )


def _mean_params(folds: list[FoldResult]) -> dict:
    keys = folds[0].parameters.keys()
    return {k: float(np.mean([f.parameters[k] for f in folds])) for k in keys}


def loocv(volumes, labels, config: RunConfig, ids=None, repeats: int | None = None,
          threads: int = 1, keep_fractions: Sequence[float] | None = None):
    """Leave-one-out evaluation with identical hyperparameters in every fold.

    Returns an EvalReport, or a ``{keep_fraction: EvalReport}`` dict when
    ``keep_fractions`` is given (the cascade of each fold is then shared across
    the fractions).
    """
    vols = _as_volumes(volumes)
    labels = _check_labels(labels)
    S0, _, K0, C = vols[0].shape
    config.validate((S0, K0, C))
    repeats = repeats or config.repeats
    ids = list(ids) if ids is not None else [str(j) for j in range(len(vols))]

    def run(j):
        log.info("fold %d/%d", j + 1, len(vols))
        return fit_fold(vols, labels, j, config, repeats, keep_fractions)

    t0 = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            folds = list(ex.map(run, range(len(vols))))
    else:
        folds = [run(j) for j in range(len(vols))]
    seconds = time.perf_counter() - t0

    def report(fs: list[FoldResult], cfg: dict) -> EvalReport:
        rs = [[f.scores[r] for f in fs] for r in range(repeats)]
        return build_report(ids, labels, rs, _mean_params(fs), seconds, cfg)

    if keep_fractions is None:
        return report(folds, config.to_dict())
    out = {}
    for k, keep in enumerate(keep_fractions):
        cfg = dict(config.to_dict(), keep_fraction=keep)
        out[keep] = report([f[k] for f in folds], cfg)
    return out


def save(model: TrainedModel, path) -> None:
    from .serialize import save as _save

    _save(model, path)


def load(path) -> TrainedModel:
    from .serialize import load as _load

    return _load(path)
