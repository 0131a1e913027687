"""Linear-probe evaluation on frozen trunk features.

The probe is multinomial logistic regression fit by full-batch gradient
descent from a zero initialization — the objective is convex, so given
the features the fit is deterministic.  Features are standardized with
the fit split's moments.  The ridge strength is picked on a stratified
tenth of the fit rows, then the probe is refit on all of them.

Label-fraction subsets take per-class prefixes of one seeded shuffle,
so a 1% subset is contained in the 10% subset for the same seed and the
comparison across fractions varies only the amount of supervision.

Robustness evaluation freezes the probe fit on clean features and
re-scores it on each shifted test split, writing one CSV row per
(family, severity) plus a clean reference row.
"""

from __future__ import annotations

import csv
import math
import pathlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import SEVERITY_MAGNITUDES, SHIFT_FAMILIES, Dataset, shift_test_split
from .encoders import EncoderStack
from .training import cosine_lr

_STD_FLOOR = 1e-8


def extract_features(stack: EncoderStack, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Trunk representations for raw records, batched for memory."""
    chunks = [stack.represent(ad.constant(x[i:i + batch_size])).data
              for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(chunks, axis=0)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def brier_score(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean squared distance between the probability row and the one-hot
    label; 0 is perfect, 2 is confidently wrong everywhere."""
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"shape mismatch: probs {probs.shape}, labels {labels.shape}")
    delta = probs.copy()
    delta[np.arange(labels.shape[0]), labels] -= 1.0
    return float(np.mean(np.sum(delta * delta, axis=1)))


@dataclass
class ProbeModel:
    weights: np.ndarray        # [feature_dim, n_classes]
    bias: np.ndarray           # [n_classes]
    feature_mean: np.ndarray
    feature_std: np.ndarray
    ridge: float

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        z = (features - self.feature_mean) / self.feature_std
        return _softmax_rows(z @ self.weights + self.bias)


@dataclass(frozen=True)
class ProbeResult:
    top1: float
    brier: float
    label_fraction: float
    n_eval: int
    n_fit: int
    ridge: float

    def __post_init__(self):
        if not (0.0 <= self.top1 <= 1.0):
            raise ValueError(f"top1 must lie in [0, 1], got {self.top1}")
        if not (0.0 <= self.brier <= 2.0):
            raise ValueError(f"brier must lie in [0, 2], got {self.brier}")
        if not (0.0 < self.label_fraction <= 1.0):
            raise ValueError("label_fraction must lie in (0, 1]")


def label_fraction_indices(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Per-class prefix of a seeded shuffle; prefixes nest across fractions."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    picked = []
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        order = np.random.default_rng([seed, 10, int(cls)]).permutation(rows.shape[0])
        take = max(1, math.ceil(fraction * rows.shape[0]))
        picked.append(rows[order[:take]])
    return np.sort(np.concatenate(picked))


def _stratified_val_split(labels: np.ndarray, fraction: float, seed: int):
    val = []
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        if rows.shape[0] < 2:
            raise ValueError(f"class {cls} has {rows.shape[0]} fit rows; "
                             "cannot hold out a validation share")
        order = np.random.default_rng([seed, 11, int(cls)]).permutation(rows.shape[0])
        take = min(rows.shape[0] - 1, max(1, round(fraction * rows.shape[0])))
        val.append(rows[order[:take]])
    val_idx = np.sort(np.concatenate(val))
    mask = np.ones(labels.shape[0], dtype=bool)
    mask[val_idx] = False
    return np.flatnonzero(mask), val_idx


def _fit_logistic(z: np.ndarray, labels: np.ndarray, n_classes: int, ridge: float,
                  iters: int, base_lr: float):
    n, dim = z.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), labels] = 1.0
    weights = np.zeros((dim, n_classes))
    bias = np.zeros(n_classes)
    for it in range(iters):
        lr = cosine_lr(it, iters, 0, base_lr)
        probs = _softmax_rows(z @ weights + bias)
        resid = (probs - onehot) / n
        weights -= lr * (z.T @ resid + ridge * weights)
        bias -= lr * resid.sum(axis=0)
    return weights, bias


def fit_linear_probe(features: np.ndarray, labels: np.ndarray, n_classes: int,
                     ridge_grid=(1e-6, 1e-4, 1e-2), iters: int = 500,
                     base_lr: float = 0.5, val_fraction: float = 0.1,
                     seed: int = 0) -> ProbeModel:
    if features.shape[0] != labels.shape[0]:
        raise ValueError("features and labels disagree on the row count")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("labels outside [0, n_classes)")
    mean = features.mean(axis=0)
    std = np.maximum(features.std(axis=0), _STD_FLOOR)
    z = (features - mean) / std

    if len(ridge_grid) > 1:
        fit_idx, val_idx = _stratified_val_split(labels, val_fraction, seed)
        best = None
        for ridge in ridge_grid:
            w, b = _fit_logistic(z[fit_idx], labels[fit_idx], n_classes, ridge,
                                 iters, base_lr)
            acc = float(np.mean(np.argmax(z[val_idx] @ w + b, axis=1) == labels[val_idx]))
            # ties go to the stronger ridge
            if best is None or acc >= best[0]:
                best = (acc, ridge)
        ridge = best[1]
    else:
        ridge = ridge_grid[0]

    weights, bias = _fit_logistic(z, labels, n_classes, ridge, iters, base_lr)
    return ProbeModel(weights=weights, bias=bias, feature_mean=mean,
                      feature_std=std, ridge=ridge)


def evaluate_probe(model: ProbeModel, features: np.ndarray,
                   labels: np.ndarray) -> tuple[float, float]:
    """(top-1 accuracy, Brier score) on the given rows."""
    probs = model.predict_proba(features)
    top1 = float(np.mean(np.argmax(probs, axis=1) == labels))
    return top1, brier_score(probs, labels)


def linear_probe(stack: EncoderStack, dataset: Dataset, label_fraction: float = 1.0,
                 seed: int = 0, **fit_kwargs) -> tuple[ProbeResult, ProbeModel]:
    idx = label_fraction_indices(dataset.y_train, label_fraction, seed)
    feats = extract_features(stack, dataset.x_train[idx])
    model = fit_linear_probe(feats, dataset.y_train[idx], dataset.cfg.n_classes,
                             seed=seed, **fit_kwargs)
    test_feats = extract_features(stack, dataset.x_test)
    top1, brier = evaluate_probe(model, test_feats, dataset.y_test)
    return ProbeResult(top1=top1, brier=brier, label_fraction=label_fraction,
                       n_eval=int(dataset.y_test.shape[0]), n_fit=idx.shape[0],
                       ridge=model.ridge), model


def robustness_rows(stack: EncoderStack, model: ProbeModel, dataset: Dataset,
                    rng_seed: int = 0, families=SHIFT_FAMILIES,
                    severities=tuple(sorted(SEVERITY_MAGNITUDES))) -> list[dict]:
    """Frozen-probe accuracy per shift cell, with a clean reference row."""
    rows = []
    clean_feats = extract_features(stack, dataset.x_test)
    top1, _ = evaluate_probe(model, clean_feats, dataset.y_test)
    rows.append({"family": "clean", "severity": 0, "top1": top1,
                 "n": int(dataset.y_test.shape[0])})
    for family in families:
        for severity in severities:
            shifted = shift_test_split(dataset, family, severity, rng_seed)
            feats = extract_features(stack, shifted)
            top1, _ = evaluate_probe(model, feats, dataset.y_test)
            rows.append({"family": family, "severity": int(severity), "top1": top1,
                         "n": int(dataset.y_test.shape[0])})
    return rows


def write_robustness_csv(path, rows: list[dict]) -> None:
    path = pathlib.Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["family", "severity", "top1", "n"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "top1": f"{row['top1']:.6f}"})


def read_robustness_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"family": r["family"], "severity": int(r["severity"]),
                 "top1": float(r["top1"]), "n": int(r["n"])}
                for r in csv.DictReader(fh)]
