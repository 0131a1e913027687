"""Synthetic multiview records with controllable nuisance structure.

Every record is a concatenation [content | nuisance | spurious]:

* content: a class prototype on the unit sphere of the content block,
  plus within-class jitter.  Prototypes are rejection-sampled to pairwise
  Euclidean separation >= class_separation, so class difficulty is a
  dial, not an accident of the seed.
* nuisance: isotropic Gaussian noise, redrawn fresh for every augmented
  view, so it is exactly the information a view-consistent representation
  should discard.
* spurious: the class's fixed sign pattern with probability
  spurious_correlation, otherwise a uniform random sign pattern.  Views
  share the record's pattern, making it a shareable-but-fragile shortcut.

Record i of a split is drawn from np.random.default_rng([seed, tag, i]),
so generation is order-independent and bit-reproducible.

Augmentation draws a fixed number of variates per record regardless of
strength settings (draw, then scale), which keeps augmentation streams
aligned when two runs differ only in one strength, e.g. across the
mask-area sweep.

Distribution-shift suites perturb the test split at severities 1..5 with
magnitudes scaled by the training split's per-feature standard
deviations.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import asdict, dataclass

import numpy as np

SHIFT_FAMILIES = ("gaussian_noise", "feature_mask", "scale_drift", "nuisance_shift",
                  "spurious_flip")
SEVERITY_MAGNITUDES = {1: 0.1, 2: 0.25, 3: 0.5, 4: 1.0, 5: 2.0}

_PROTO_STREAM = 1
_PATTERN_STREAM = 2
_TRAIN_STREAM = 3
_TEST_STREAM = 4


@dataclass(frozen=True)
class GeneratorConfig:
    """Default dials put the task in a hard-but-identifiable regime:
    wide within-class jitter makes class clusters overlap while records
    stay individually distinguishable, and the spurious block is
    correlated enough to tempt but not to carry a classifier."""

    n_classes: int = 10
    content_dim: int = 8
    nuisance_dim: int = 16
    spurious_dim: int = 8
    class_separation: float = 1.0
    content_jitter: float = 1.3
    nuisance_scale: float = 1.0
    spurious_correlation: float = 0.7
    n_train: int = 20000
    n_test: int = 4000
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if min(self.content_dim, self.nuisance_dim, self.spurious_dim) < 1:
            raise ValueError("all blocks need at least one dimension")
        if not (0.0 < self.class_separation <= 2.0):
            raise ValueError("class separation must lie in (0, 2]")
        if not (0.0 <= self.spurious_correlation <= 1.0):
            raise ValueError("spurious correlation must lie in [0, 1]")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("split sizes must be positive")

    @property
    def total_dim(self) -> int:
        return self.content_dim + self.nuisance_dim + self.spurious_dim

    @property
    def content_slice(self) -> slice:
        return slice(0, self.content_dim)

    @property
    def nuisance_slice(self) -> slice:
        return slice(self.content_dim, self.content_dim + self.nuisance_dim)

    @property
    def spurious_slice(self) -> slice:
        return slice(self.content_dim + self.nuisance_dim, self.total_dim)


@dataclass(frozen=True)
class AugmentConfig:
    """Per-view corruption strengths.

    nuisance_resample = None redraws nuisance at the generator's scale
    (the default view construction); 0.0 keeps the record's nuisance
    untouched, so an all-zero-strength config reproduces the record
    exactly.
    """

    content_noise: float = 0.1
    nuisance_resample: float | None = None
    area_lower_bound: float = 0.08
    gain_low: float = 0.6
    gain_high: float = 1.4
    noise_scale: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.area_lower_bound <= 1.0):
            raise ValueError("area_lower_bound must lie in (0, 1]")
        if self.gain_low > self.gain_high:
            raise ValueError("gain_low must not exceed gain_high")
        for name in ("content_noise", "noise_scale"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.nuisance_resample is not None and self.nuisance_resample < 0.0:
            raise ValueError("nuisance_resample must be >= 0 or None")


class Dataset:
    def __init__(self, cfg: GeneratorConfig, x_train, y_train, x_test, y_test,
                 prototypes, patterns):
        self.cfg = cfg
        self.x_train = x_train
        self.y_train = y_train
        self.x_test = x_test
        self.y_test = y_test
        self.prototypes = prototypes
        self.patterns = patterns
        self.feature_stds = x_train.std(axis=0)

    def __repr__(self):
        return (f"Dataset(classes={self.cfg.n_classes}, dim={self.cfg.total_dim}, "
                f"train={len(self.y_train)}, test={len(self.y_test)})")


def _sample_prototypes(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.n_classes == 2 and cfg.class_separation >= 2.0:
        # antipodal pair: the only configuration at the maximum separation
        p = rng.normal(size=cfg.content_dim)
        p /= np.linalg.norm(p)
        return np.stack([p, -p])
    protos = []
    attempts = 0
    max_attempts = 1000 * cfg.n_classes
    while len(protos) < cfg.n_classes:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                f"could not place {cfg.n_classes} prototypes at separation "
                f"{cfg.class_separation} in {cfg.content_dim} content dims "
                f"after {max_attempts} attempts")
        cand = rng.normal(size=cfg.content_dim)
        cand /= np.linalg.norm(cand)
        if all(np.linalg.norm(cand - p) >= cfg.class_separation for p in protos):
            protos.append(cand)
    return np.stack(protos)


def _sample_patterns(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.n_classes > 2 ** cfg.spurious_dim:
        raise ValueError("not enough distinct sign patterns for the class count")
    seen: set[tuple] = set()
    patterns = []
    attempts = 0
    while len(patterns) < cfg.n_classes:
        attempts += 1
        if attempts > 1000 * cfg.n_classes:
            raise ValueError("could not draw distinct spurious sign patterns")
        pat = rng.integers(0, 2, size=cfg.spurious_dim) * 2 - 1
        key = tuple(int(v) for v in pat)
        if key not in seen:
            seen.add(key)
            patterns.append(pat.astype(np.float64))
    return np.stack(patterns)


def _draw_records(cfg: GeneratorConfig, prototypes, patterns, count: int,
                  stream: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.empty((count, cfg.total_dim), dtype=np.float64)
    y = np.empty(count, dtype=np.int64)
    for i in range(count):
        rng = np.random.default_rng([cfg.seed, stream, i])
        label = int(rng.integers(cfg.n_classes))
        content = prototypes[label] + cfg.content_jitter * rng.normal(size=cfg.content_dim)
        nuisance = cfg.nuisance_scale * rng.normal(size=cfg.nuisance_dim)
        if rng.random() < cfg.spurious_correlation:
            spurious = patterns[label].copy()
        else:
            spurious = (rng.integers(0, 2, size=cfg.spurious_dim) * 2 - 1).astype(np.float64)
        x[i, cfg.content_slice] = content
        x[i, cfg.nuisance_slice] = nuisance
        x[i, cfg.spurious_slice] = spurious
        y[i] = label
    return x, y


def generate_dataset(cfg: GeneratorConfig) -> Dataset:
    prototypes = _sample_prototypes(cfg, np.random.default_rng([cfg.seed, _PROTO_STREAM]))
    patterns = _sample_patterns(cfg, np.random.default_rng([cfg.seed, _PATTERN_STREAM]))
    x_train, y_train = _draw_records(cfg, prototypes, patterns, cfg.n_train, _TRAIN_STREAM)
    x_test, y_test = _draw_records(cfg, prototypes, patterns, cfg.n_test, _TEST_STREAM)
    return Dataset(cfg, x_train, y_train, x_test, y_test, prototypes, patterns)


# ---------------------------------------------------------------------------
# view augmentation


def augment_batch(records: np.ndarray, gcfg: GeneratorConfig, acfg: AugmentConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """One augmented view per record row.

    The variate count per record is independent of every strength
    setting: draws are always made, then scaled.
    """
    records = np.asarray(records, dtype=np.float64)
    b, d = records.shape
    if d != gcfg.total_dim:
        raise ValueError(f"records have dim {d}, generator expects {gcfg.total_dim}")
    out = records.copy()

    content_noise = rng.normal(size=(b, gcfg.content_dim))
    out[:, gcfg.content_slice] += acfg.content_noise * content_noise

    fresh_nuisance = rng.normal(size=(b, gcfg.nuisance_dim))
    scale = gcfg.nuisance_scale if acfg.nuisance_resample is None else acfg.nuisance_resample
    if scale > 0.0:
        out[:, gcfg.nuisance_slice] = scale * fresh_nuisance

    # coordinate masking: keep-fraction lower bound maps to a mask-count
    # upper bound of round((1 - bound) * d)
    frac = rng.uniform(0.0, 1.0, size=b) * (1.0 - acfg.area_lower_bound)
    scores = rng.random(size=(b, d))
    counts = np.rint(frac * d).astype(np.int64)
    order = np.argsort(scores, axis=1)
    col = np.arange(d)[None, :]
    to_mask = col < counts[:, None]
    mask = np.ones((b, d), dtype=bool)
    np.put_along_axis(mask, order, ~to_mask, axis=1)
    out *= mask

    gains = rng.uniform(acfg.gain_low, acfg.gain_high, size=b)
    out *= gains[:, None]

    noise = rng.normal(size=(b, d))
    out += acfg.noise_scale * noise
    return out


def view_pair_rng(seed: int, epoch: int, step: int, view: int) -> np.random.Generator:
    """Deterministic augmentation stream for (epoch, step, view)."""
    return np.random.default_rng([seed, 5, epoch, step, view])


# ---------------------------------------------------------------------------
# distribution-shift suites


def shift_test_split(dataset: Dataset, family: str, severity: int,
                     rng_seed: int = 0) -> np.ndarray:
    """Perturbed copy of the test split.

    Magnitudes are multiples of the training split's per-feature standard
    deviations, so severities transfer across generator configs.
    """
    if family not in SHIFT_FAMILIES:
        raise ValueError(f"unknown shift family {family!r}, expected one of {SHIFT_FAMILIES}")
    if severity not in SEVERITY_MAGNITUDES:
        raise ValueError(f"severity must be in 1..5, got {severity}")
    m = SEVERITY_MAGNITUDES[severity]
    cfg = dataset.cfg
    x = dataset.x_test.copy()
    rng = np.random.default_rng([rng_seed, 6, SHIFT_FAMILIES.index(family), severity])

    if family == "gaussian_noise":
        x += m * dataset.feature_stds * rng.normal(size=x.shape)
    elif family == "feature_mask":
        p = min(0.95, m / 2.0)
        x *= rng.random(size=x.shape) >= p
    elif family == "scale_drift":
        x *= 1.0 + m
    elif family == "nuisance_shift":
        signs = rng.integers(0, 2, size=cfg.nuisance_dim) * 2 - 1
        x[:, cfg.nuisance_slice] += m * dataset.feature_stds[cfg.nuisance_slice] * signs
    elif family == "spurious_flip":
        kept = (1.0 - severity / 5.0) * cfg.spurious_correlation
        for i in range(x.shape[0]):
            row_rng = np.random.default_rng([rng_seed, 7, severity, i])
            if row_rng.random() < kept:
                x[i, cfg.spurious_slice] = dataset.patterns[dataset.y_test[i]]
            else:
                pat = row_rng.integers(0, 2, size=cfg.spurious_dim) * 2 - 1
                x[i, cfg.spurious_slice] = pat.astype(np.float64)
    return x


# ---------------------------------------------------------------------------
# serialization


def write_dataset(dataset: Dataset, out_dir, force: bool = False) -> dict[str, pathlib.Path]:
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out_dir / "train.jsonl",
        "test": out_dir / "test.jsonl",
        "meta": out_dir / "dataset.meta.json",
    }
    for p in paths.values():
        if p.exists() and not force:
            raise FileExistsError(f"{p} exists; pass force to overwrite")
    for split, x, y in (("train", dataset.x_train, dataset.y_train),
                        ("test", dataset.x_test, dataset.y_test)):
        with open(paths[split], "w") as fh:
            for row, label in zip(x, y):
                fh.write(json.dumps({"x": [float(v) for v in row], "label": int(label)}))
                fh.write("\n")
    meta = {"format": "cebmv-dataset-v1", "generator": asdict(dataset.cfg),
            "n_train": len(dataset.y_train), "n_test": len(dataset.y_test)}
    paths["meta"].write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return paths


def read_dataset(in_dir) -> Dataset:
    in_dir = pathlib.Path(in_dir)
    meta = json.loads((in_dir / "dataset.meta.json").read_text())
    if meta.get("format") != "cebmv-dataset-v1":
        raise ValueError(f"{in_dir}: unrecognized dataset meta format")
    cfg = GeneratorConfig(**meta["generator"])

    def read_split(path, expected):
        xs, ys = [], []
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                xs.append(rec["x"])
                ys.append(rec["label"])
        if len(ys) != expected:
            raise ValueError(f"{path}: expected {expected} records, found {len(ys)}")
        return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.int64)

    x_train, y_train = read_split(in_dir / "train.jsonl", meta["n_train"])
    x_test, y_test = read_split(in_dir / "test.jsonl", meta["n_test"])
    prototypes = _sample_prototypes(cfg, np.random.default_rng([cfg.seed, _PROTO_STREAM]))
    patterns = _sample_patterns(cfg, np.random.default_rng([cfg.seed, _PATTERN_STREAM]))
    return Dataset(cfg, x_train, y_train, x_test, y_test, prototypes, patterns)
