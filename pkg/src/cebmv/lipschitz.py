"""Local sensitivity of the encoder distribution to input perturbations.

For a record x and a perturbed copy x', the two encoder distributions
are vMF on the same sphere, so both directed divergences are exact:
KL(p || q) = A_n(kappa_p) (kappa_p - kappa_q mu_p.mu_q) + log C_p - log C_q.
Each pair yields a SmoothnessRecord holding both divergences, the
local estimate max(KL_f, KL_b) / |dx| (the headline statistic), and
the squared bound max(KL_f, KL_b) / |dx|^2, a lower bound on the
squared local smoothness constant of the encoder.

By default both sides use the encoder concentration; ``cross_kappa``
scores the backward side at a different concentration instead, which
changes the values only by scale and an additive constant.
``local_log_ratio`` is the Monte-Carlo counterpart: the z-averaged
encoder log-density ratio divided by |dx|, converging to
KL(e(.|x) || e(.|x')) / |dx|; with n_samples=1 it doubles as the
single-draw estimate.

Pairs are built from test-split records under eight perturbation
families (the augmentation ops plus the shift suites, at one fixed
magnitude).  Row i of family f draws from rng([seed, 12, f, i]), so two
encoders scored with the same seed see byte-identical pairs and their
reports differ only through the encoders.
"""

from __future__ import annotations

import csv
import json
import math
import pathlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import vmf
from .bessel import mean_resultant_length
from .data import Dataset
from .encoders import EncoderStack
from .vmf import log_vmf_normalizer

PERTURBATION_FAMILIES = ("content_noise", "nuisance_resample", "feature_mask",
                         "gain", "gaussian_noise", "scale_drift", "nuisance_shift",
                         "spurious_flip")

_PAIR_STREAM = 12
_RECORD_STREAM = 13
_HIST_BINS = 64
_MIN_DELTA = 1e-9


@dataclass(frozen=True)
class SmoothnessRecord:
    """One input pair's divergence-based sensitivity summary.

    ``local_estimate`` is max(kl_forward, kl_backward) / delta_norm and
    ``squared_bound`` the same numerator over delta_norm**2; both are
    recomputed and checked on construction.
    """

    pair_id: int
    delta_norm: float
    local_estimate: float
    kl_forward: float
    kl_backward: float
    squared_bound: float

    def __post_init__(self):
        vals = (self.delta_norm, self.local_estimate, self.kl_forward,
                self.kl_backward, self.squared_bound)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("smoothness record entries must all be finite")
        if self.delta_norm <= 0.0:
            raise ValueError("perturbation norm must be positive")
        if self.kl_forward < 0.0 or self.kl_backward < 0.0:
            raise ValueError("divergences must be nonnegative")
        top = max(self.kl_forward, self.kl_backward)
        if not math.isclose(self.local_estimate, top / self.delta_norm,
                            rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("local_estimate must equal max(kl)/delta_norm")
        if not math.isclose(self.squared_bound, top / self.delta_norm ** 2,
                            rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("squared_bound must equal max(kl)/delta_norm^2")

    @classmethod
    def from_kls(cls, pair_id: int, delta_norm: float, kl_forward: float,
                 kl_backward: float) -> "SmoothnessRecord":
        delta_norm = float(delta_norm)
        if delta_norm <= 0.0:
            raise ValueError("perturbation norm must be positive")
        top = max(float(kl_forward), float(kl_backward))
        return cls(pair_id=int(pair_id), delta_norm=delta_norm,
                   local_estimate=top / delta_norm,
                   kl_forward=float(kl_forward), kl_backward=float(kl_backward),
                   squared_bound=top / delta_norm ** 2)


RECORD_FIELDS = ("pair_id", "delta_norm", "kl_forward", "kl_backward",
                 "local_estimate", "squared_bound")


def encode_means(stack: EncoderStack, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Unit forward means mu(x), using each variant's own encoder path."""
    rows = []
    for i in range(0, x.shape[0], batch_size):
        chunk = ad.constant(x[i:i + batch_size])
        if stack.cfg.variant in ("byol", "c_byol"):
            mu = stack.predictor_unit(chunk, training=False)
        else:
            _, mu = stack.project_unit(chunk, training=False)
        rows.append(mu.data)
    return np.concatenate(rows, axis=0)


def directed_kl_rows(mu_p: np.ndarray, mu_q: np.ndarray, kappa_p: float,
                     kappa_q: float | None = None,
                     resultant_length: float | None = None) -> np.ndarray:
    """Row-wise exact KL(vMF(mu_p, kappa_p) || vMF(mu_q, kappa_q)).

    ``resultant_length`` overrides A_n(kappa_p); passing 1.0 evaluates
    the log-density ratio at z = mu_p instead of its expectation — the
    deterministic-encoding convention used by the training objectives —
    in which case the result is no longer a divergence and may be
    negative.
    """
    if mu_p.shape != mu_q.shape:
        raise ValueError("mean batches must share a shape")
    kq = kappa_p if kappa_q is None else float(kappa_q)
    n = mu_p.shape[1]
    a = (mean_resultant_length(n, kappa_p) if resultant_length is None
         else float(resultant_length))
    cos = np.sum(mu_p * mu_q, axis=1)
    out = (a * (kappa_p - kq * cos)
           + log_vmf_normalizer(n, kappa_p) - log_vmf_normalizer(n, kq))
    if resultant_length is None:
        return np.maximum(out, 0.0)
    return out


def local_squared_bound(mu_a: np.ndarray, mu_b: np.ndarray, kappa: float,
                        dx_norms: np.ndarray) -> np.ndarray:
    """Per-pair kappa * A_n(kappa) * (1 - mu_a . mu_b) / |dx|^2."""
    if mu_a.shape != mu_b.shape:
        raise ValueError("mean batches must share a shape")
    if np.any(dx_norms <= 0.0):
        raise ValueError("perturbation norms must be positive")
    n = mu_a.shape[1]
    rate = kappa * mean_resultant_length(n, kappa)
    cos = np.sum(mu_a * mu_b, axis=1)
    return rate * np.maximum(1.0 - cos, 0.0) / (dx_norms * dx_norms)


def _pair_means(stack: EncoderStack, x: np.ndarray,
                x_perturbed: np.ndarray) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=np.float64)
    x_perturbed = np.asarray(x_perturbed, dtype=np.float64)
    if x.ndim != 1 or x.shape != x_perturbed.shape:
        raise ValueError("expected two single records of the same shape")
    delta_norm = float(np.linalg.norm(x_perturbed - x))
    if delta_norm <= _MIN_DELTA:
        raise ValueError("perturbation must move the input "
                         f"(|dx| = {delta_norm:.3e} <= {_MIN_DELTA:.0e})")
    return encode_means(stack, np.stack([x, x_perturbed])), delta_norm


def local_log_ratio(stack: EncoderStack, x: np.ndarray, x_perturbed: np.ndarray,
                    kappa: float, n_samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo local sensitivity: the mean encoder log-density ratio
    log e(z|x) - log e(z|x') over z ~ e(.|x), divided by |dx|.

    Estimates KL(e(.|x) || e(.|x')) / |dx|; ``n_samples=1`` gives the
    single-draw variant.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mu, delta_norm = _pair_means(stack, x, x_perturbed)
    z = vmf.sample(vmf.VonMisesFisher(mu[0], kappa), rng, count=n_samples)
    ratios = kappa * (z @ (mu[0] - mu[1]))
    return float(ratios.mean() / delta_norm)


def squared_bound(stack: EncoderStack, x: np.ndarray, x_perturbed: np.ndarray,
                  kappa: float, cross_kappa: float | None = None,
                  pair_id: int = 0) -> SmoothnessRecord:
    """Exact-KL record for one input pair.

    Both directed divergences use the encoder concentration on the
    forward side; ``cross_kappa`` scores the backward side at another
    concentration (with it unset the two divergences coincide).
    """
    mu, delta_norm = _pair_means(stack, x, x_perturbed)
    kl_f = directed_kl_rows(mu[:1], mu[1:], kappa, cross_kappa)[0]
    kl_b = directed_kl_rows(mu[1:], mu[:1], kappa, cross_kappa)[0]
    return SmoothnessRecord.from_kls(pair_id, delta_norm, kl_f, kl_b)


def _perturb_row(row: np.ndarray, family: str, magnitude: float, dataset: Dataset,
                 rng: np.random.Generator) -> np.ndarray:
    gcfg = dataset.cfg
    stds = dataset.feature_stds
    out = row.copy()
    if family == "content_noise":
        out[gcfg.content_slice] += magnitude * rng.normal(size=gcfg.content_dim)
    elif family == "nuisance_resample":
        out[gcfg.nuisance_slice] = (magnitude * gcfg.nuisance_scale
                                    * rng.normal(size=gcfg.nuisance_dim))
    elif family == "feature_mask":
        k = max(1, round(magnitude * gcfg.total_dim))
        idx = rng.choice(gcfg.total_dim, size=k, replace=False)
        out[idx] = 0.0
    elif family == "gain":
        out *= 1.0 + magnitude * rng.uniform(-1.0, 1.0)
    elif family == "gaussian_noise":
        out += magnitude * stds * rng.normal(size=gcfg.total_dim)
    elif family == "scale_drift":
        out *= 1.0 + magnitude
    elif family == "nuisance_shift":
        signs = rng.choice((-1.0, 1.0), size=gcfg.nuisance_dim)
        out[gcfg.nuisance_slice] += magnitude * stds[gcfg.nuisance_slice] * signs
    elif family == "spurious_flip":
        k = max(1, round(magnitude * gcfg.spurious_dim))
        idx = rng.choice(gcfg.spurious_dim, size=k, replace=False)
        block = slice(gcfg.content_dim + gcfg.nuisance_dim, gcfg.total_dim)
        flipped = out[block].copy()
        flipped[idx] *= -1.0
        out[block] = flipped
    else:
        raise ValueError(f"unknown perturbation family {family!r}, expected one of "
                         f"{PERTURBATION_FAMILIES}")
    return out


def build_pairs(dataset: Dataset, family: str, magnitude: float, n_pairs: int,
                seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(originals, perturbed) with per-row counter-based randomness."""
    if magnitude <= 0.0:
        raise ValueError("magnitude must be positive")
    if family not in PERTURBATION_FAMILIES:
        raise ValueError(f"unknown perturbation family {family!r}, expected one of "
                         f"{PERTURBATION_FAMILIES}")
    family_idx = PERTURBATION_FAMILIES.index(family)
    pick = np.random.default_rng([seed, _RECORD_STREAM, family_idx])
    rows = dataset.x_test[pick.choice(dataset.x_test.shape[0], size=n_pairs, replace=True)]
    perturbed = np.stack([
        _perturb_row(rows[i], family, magnitude, dataset,
                     np.random.default_rng([seed, _PAIR_STREAM, family_idx, i]))
        for i in range(n_pairs)])
    return rows, perturbed


def family_records(stack: EncoderStack, dataset: Dataset, family: str, kappa: float,
                   n_pairs: int, magnitude: float, seed: int,
                   cross_kappa: float | None = None) -> list[SmoothnessRecord]:
    """Records for one perturbation family; pairs the perturbation left
    unmoved (|dx| <= 1e-9, e.g. masking zero entries) are dropped, so
    the skip count is n_pairs minus the number of records."""
    rows, perturbed = build_pairs(dataset, family, magnitude, n_pairs, seed)
    dx = np.linalg.norm(perturbed - rows, axis=1)
    keep = np.flatnonzero(dx > _MIN_DELTA)
    mu_a = encode_means(stack, rows[keep])
    mu_b = encode_means(stack, perturbed[keep])
    kl_f = directed_kl_rows(mu_a, mu_b, kappa, cross_kappa)
    kl_b = directed_kl_rows(mu_b, mu_a, kappa, cross_kappa)
    return [SmoothnessRecord.from_kls(int(i), dx[i], kl_f[j], kl_b[j])
            for j, i in enumerate(keep)]


def family_stats(records: list[SmoothnessRecord], n_pairs: int) -> dict:
    """Aggregates over the per-pair local estimates, histogram included."""
    est = np.array([r.local_estimate for r in records], dtype=np.float64)
    if est.size:
        counts, edges = np.histogram(est, bins=_HIST_BINS)
        mean, median = float(est.mean()), float(np.median(est))
        p90, top = float(np.quantile(est, 0.9)), float(est.max())
    else:
        counts, edges = np.histogram(est, bins=_HIST_BINS, range=(0.0, 1.0))
        mean = median = p90 = top = 0.0
    return {"n": int(est.size), "n_skipped": int(n_pairs - est.size),
            "mean": mean, "median": median, "p90": p90, "max": top,
            "mean_squared_bound": float(np.mean([r.squared_bound for r in records]))
                                  if records else 0.0,
            "histogram_edges": [float(e) for e in edges],
            "histogram_counts": [int(c) for c in counts]}


def smoothness_records(stack: EncoderStack, dataset: Dataset, kappa: float,
                       n_pairs: int = 2000, magnitude: float = 0.25, seed: int = 0,
                       families=PERTURBATION_FAMILIES,
                       cross_kappa: float | None = None) -> dict[str, list[SmoothnessRecord]]:
    return {family: family_records(stack, dataset, family, kappa, n_pairs,
                                   magnitude, seed, cross_kappa)
            for family in families}


def smoothness_report(stack: EncoderStack, dataset: Dataset, kappa: float,
                      n_pairs: int = 2000, magnitude: float = 0.25,
                      seed: int = 0, families=PERTURBATION_FAMILIES,
                      cross_kappa: float | None = None) -> dict:
    """Per-family aggregate local-sensitivity statistics for one encoder."""
    records = smoothness_records(stack, dataset, kappa, n_pairs, magnitude,
                                 seed, families, cross_kappa)
    return {family: family_stats(recs, n_pairs) for family, recs in records.items()}


def write_smoothness_outputs(out_dir, report: dict,
                             records: dict[str, list[SmoothnessRecord]] | None = None,
                             meta: dict | None = None) -> None:
    """smoothness.csv: one row per record; smoothness.json: the summary."""
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "smoothness.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", *RECORD_FIELDS])
        for family, recs in (records or {}).items():
            for r in recs:
                writer.writerow([family, r.pair_id,
                                 *(f"{getattr(r, f):.10e}" for f in RECORD_FIELDS[1:])])
    payload = {"families": report}
    if meta:
        payload["meta"] = meta
    with open(out_dir / "smoothness.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def compare_reports(report_a: dict, report_b: dict, statistic: str = "mean") -> dict:
    """Per-family 'is A smoother than B' (strictly smaller statistic)."""
    if report_a.keys() != report_b.keys():
        raise ValueError("reports cover different families")
    return {family: report_a[family][statistic] < report_b[family][statistic]
            for family in report_a}
