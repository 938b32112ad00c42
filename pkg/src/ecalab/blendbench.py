"""Synthetic blended-target benchmark: one labeled source, k unlabeled styled targets.

Classes are Gaussian blobs on a circle in the first two ("geometric")
dimensions; remaining dimensions are standard-normal nuisance. Each target
rotates and translates the geometry, rescales its noise, and draws classes
from its own prior. Target rows are mixed with proportions ``mix`` and
shuffled, so row order carries no domain information.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, EcaError

SPLITS = ("source-train", "source-test", "target-blend", "target-test")


class DatasetFormatError(EcaError, ValueError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


@dataclass
class BlendSpec:
    num_classes: int = 6
    input_dim: int = 4
    k: int = 3
    # kept inside half the 60-degree class spacing so each target stays recoverable
    angles_deg: list[float] = field(default_factory=lambda: [10.0, 20.0, 25.0])
    # one vector of length input_dim per target; None -> default_translations()
    translations: list[list[float]] | None = None
    style_offset: float = 0.75
    noise_scales: list[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])
    mix: list[float] = field(default_factory=lambda: [0.5, 0.3, 0.2])
    label_shift: bool = True
    # explicit per-target class priors; None -> drawn from Dirichlet(prior_concentration)
    priors: list[list[float]] | None = None
    prior_concentration: float = 2.0
    radius: float = 3.0
    sigma: float = 0.4
    n_source_train: int = 600
    n_source_test: int = 600
    n_per_target: int = 600
    n_target_test_per_target: int = 300
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes", "num_classes")
        if self.input_dim < 2:
            raise ConfigError("need at least 2 dimensions", "input_dim")
        if self.k < 1:
            raise ConfigError("need at least one target", "k")
        for name in ("angles_deg", "noise_scales", "mix"):
            if len(getattr(self, name)) != self.k:
                raise ConfigError(f"expected {self.k} entries", name)
        if any(w < 0 for w in self.mix) or not math.isclose(sum(self.mix), 1.0, abs_tol=1e-9):
            raise ConfigError(f"mixing proportions {self.mix} must be >=0 and sum to 1", "mix")
        if any(s <= 0 for s in self.noise_scales):
            raise ConfigError("noise scales must be positive", "noise_scales")
        if self.translations is not None:
            if len(self.translations) != self.k or any(
                    len(t) != self.input_dim for t in self.translations):
                raise ConfigError(f"need {self.k} vectors of length {self.input_dim}",
                                  "translations")
        if self.priors is not None:
            if len(self.priors) != self.k:
                raise ConfigError(f"expected {self.k} priors", "priors")
            for p in self.priors:
                if len(p) != self.num_classes or any(v < 0 for v in p) \
                        or not math.isclose(sum(p), 1.0, abs_tol=1e-9):
                    raise ConfigError(f"prior {p} is not a distribution over "
                                      f"{self.num_classes} classes", "priors")
        if self.prior_concentration <= 0:
            raise ConfigError("must be positive", "prior_concentration")
        if self.sigma <= 0 or self.radius <= 0:
            raise ConfigError("radius and sigma must be positive", "sigma")
        for name in ("n_source_train", "n_source_test", "n_per_target",
                     "n_target_test_per_target"):
            if getattr(self, name) < 0:
                raise ConfigError("must be non-negative", name)

    @classmethod
    def from_dict(cls, doc: dict) -> "BlendSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", "blend")
        spec = cls(**doc)
        spec.validate()
        return spec


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    true_domain: np.ndarray  # -1 for source rows
    split: str

    def __len__(self):
        return len(self.labels)

    def __eq__(self, other):
        return (isinstance(other, Dataset) and self.split == other.split
                and self.features.shape == other.features.shape
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.true_domain, other.true_domain))


def class_priors(spec: BlendSpec) -> np.ndarray:
    """k x M class priors of the targets."""
    m = spec.num_classes
    if spec.priors is not None:
        return np.array(spec.priors, dtype=np.float64)
    if not spec.label_shift:
        return np.full((spec.k, m), 1.0 / m)
    rng = np.random.default_rng([spec.seed, 17])
    return rng.dirichlet(np.full(m, spec.prior_concentration), size=spec.k)


def default_translations(spec: BlendSpec) -> np.ndarray:
    """Per-target shifts of +-style_offset along nuisance axes; geometry untouched.

    Targets 0 and 1 use the first nuisance axis with opposite signs, targets
    2 and 3 the next axis, and so on, cycling through the nuisance dims.
    """
    shifts = np.zeros((spec.k, spec.input_dim))
    n_nuisance = spec.input_dim - 2
    if n_nuisance == 0:
        return shifts
    for j in range(spec.k):
        axis = 2 + (j // 2) % n_nuisance
        shifts[j, axis] = spec.style_offset if j % 2 == 0 else -spec.style_offset
    return shifts


def translations(spec: BlendSpec) -> np.ndarray:
    if spec.translations is None:
        return default_translations(spec)
    return np.array(spec.translations, dtype=np.float64).reshape(spec.k, spec.input_dim)


def _class_means(spec: BlendSpec) -> np.ndarray:
    ang = 2 * np.pi * np.arange(spec.num_classes) / spec.num_classes
    return spec.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def _sample(spec, labels, rng, angle_deg=0.0, shift=None, noise_scale=1.0):
    n = len(labels)
    geo = _class_means(spec)[labels] + rng.standard_normal((n, 2)) * spec.sigma * noise_scale
    t = np.deg2rad(angle_deg)
    rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    geo = geo @ rot.T
    nuisance = rng.standard_normal((n, spec.input_dim - 2)) * noise_scale
    x = np.concatenate([geo, nuisance], axis=1)
    if shift is not None:
        x = x + np.asarray(shift, dtype=np.float64)
    return x


def _target_split(spec, priors, n_total, rng, split) -> Dataset:
    domains = rng.choice(spec.k, size=n_total, p=np.asarray(spec.mix))
    shifts = translations(spec)
    xs = np.empty((n_total, spec.input_dim))
    ys = np.empty(n_total, dtype=np.int64)
    for j in range(spec.k):
        rows = np.flatnonzero(domains == j)
        labels = rng.choice(spec.num_classes, size=len(rows), p=priors[j])
        xs[rows] = _sample(spec, labels, rng, spec.angles_deg[j], shifts[j],
                           spec.noise_scales[j])
        ys[rows] = labels
    order = rng.permutation(n_total)
    return Dataset(xs[order], ys[order], domains[order].astype(np.int64), split)


def generate(spec: BlendSpec) -> dict[str, Dataset]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    priors = class_priors(spec)
    out = {}
    for split, n in (("source-train", spec.n_source_train), ("source-test", spec.n_source_test)):
        labels = rng.integers(spec.num_classes, size=n)
        out[split] = Dataset(_sample(spec, labels, rng), labels.astype(np.int64),
                             np.full(n, -1, dtype=np.int64), split)
    out["target-blend"] = _target_split(spec, priors, spec.n_per_target * spec.k, rng,
                                        "target-blend")
    out["target-test"] = _target_split(spec, priors, spec.n_target_test_per_target * spec.k,
                                       rng, "target-test")
    return out


# CSV files

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = ds.features.shape[1]
    w.writerow(["id", *[f"f{i}" for i in range(d)], "label", "true_domain", "split"])
    for i in range(len(ds)):
        w.writerow([i, *[_fmt(v) for v in ds.features[i]], int(ds.labels[i]),
                    int(ds.true_domain[i]), ds.split])
    return buf.getvalue()


def loads(text: str, split: str | None = None) -> Dataset:
    """Parse a dataset file. `split` tags a header-only file and is checked against rows."""
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise DatasetFormatError(1, "empty file") from None
    d = len(header) - 4
    expected = ["id", *[f"f{i}" for i in range(d)], "label", "true_domain", "split"]
    if d < 1 or header != expected:
        raise DatasetFormatError(1, f"bad header {header}")
    feats, labels, doms = [], [], []
    expected_split, split = split, None
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DatasetFormatError(lineno, f"expected {len(header)} fields, got {len(row)}")
        try:
            feats.append([float(v) for v in row[1:1 + d]])
            labels.append(int(row[1 + d]))
            doms.append(int(row[2 + d]))
        except ValueError as exc:
            raise DatasetFormatError(lineno, str(exc)) from None
        if split is None:
            split = row[-1]
        elif row[-1] != split:
            raise DatasetFormatError(lineno, f"mixed splits {split!r} and {row[-1]!r}")
        if split not in SPLITS:
            raise DatasetFormatError(lineno, f"unknown split {split!r}")
        if expected_split is not None and split != expected_split:
            raise DatasetFormatError(lineno, f"expected split {expected_split!r}, got {split!r}")
    features = np.array(feats, dtype=np.float64).reshape(-1, d)
    return Dataset(features, np.array(labels, dtype=np.int64),
                   np.array(doms, dtype=np.int64), split or expected_split or "")


def write(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps(ds))


def read(path) -> Dataset:
    """Read a dataset file; a file named after a split (``target-test.csv``) is tagged with it."""
    path = Path(path)
    hint = path.stem if path.stem in SPLITS else None
    return loads(path.read_text(encoding="utf-8"), hint)
