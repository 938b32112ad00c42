"""Pseudo-domain discovery by k-means and the normalized centroid distance matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError

MAX_ITER = 100
TOL = 1e-8
STD_EPS = 1e-12


@dataclass(frozen=True)
class DomainModel:
    k: int
    centroids: np.ndarray  # k x d', standardized space
    assignment: np.ndarray  # n
    D: np.ndarray  # k x k
    max_distance: float
    inertia_trace: tuple[float, ...] = ()

    def pair_distances(self, samples_a, samples_b=None) -> np.ndarray:
        """Domain distance between samples, via their assigned domains."""
        da = self.assignment[np.asarray(samples_a)]
        db = da if samples_b is None else self.assignment[np.asarray(samples_b)]
        return self.D[np.ix_(da, db)]

    def to_dict(self) -> dict:
        return {"k": self.k, "centroids": self.centroids.tolist(),
                "assignment": self.assignment.tolist(), "D": self.D.tolist()}


def distance_matrix(centroids: np.ndarray) -> tuple[np.ndarray, float]:
    """``1 + ||C_a - C_b|| / max pairwise distance``; all ones if the centroids coincide."""
    c = np.asarray(centroids, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    dmax = float(dist.max()) if dist.size else 0.0
    if dmax == 0.0:
        return np.ones_like(dist), 0.0
    D = 1.0 + dist / dmax
    np.fill_diagonal(D, 1.0)
    return D, dmax


def domain_distance(model: DomainModel, i_domain: int, j_domain: int) -> float:
    if not (0 <= i_domain < model.k and 0 <= j_domain < model.k):
        raise ContractError(f"domain index out of range for k={model.k}")
    if i_domain == j_domain:
        return 1.0
    if model.max_distance == 0.0:
        return 1.0
    gap = np.linalg.norm(model.centroids[i_domain] - model.centroids[j_domain])
    return float(1.0 + gap / model.max_distance)


def standardize(raw, shallow) -> np.ndarray:
    """Concatenate raw inputs with shallow features and z-score each column."""
    parts = [np.asarray(raw, dtype=np.float64)]
    if shallow is not None:
        parts.append(np.asarray(shallow, dtype=np.float64))
    x = np.concatenate(parts, axis=1)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    return (x - mu) / np.maximum(sd, STD_EPS)


def _sq_dists(x, c):
    return np.sum((x[:, None, :] - c[None, :, :]) ** 2, axis=-1)


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining mass sits on chosen centers
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(x[idx])
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def lloyd(x: np.ndarray, centroids: np.ndarray):
    """Lloyd iterations; returns centroids, assignment and per-iteration inertia."""
    c = centroids.copy()
    k = c.shape[0]
    trace = []
    for _ in range(MAX_ITER):
        d2 = _sq_dists(x, c)
        assign = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(x)), assign].sum()))
        new = np.empty_like(c)
        for j in range(k):
            members = assign == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # re-seed at the point farthest from its current centroid
                far = int(np.argmax(d2[np.arange(len(x)), assign]))
                new[j] = x[far]
        shift = float(np.max(np.linalg.norm(new - c, axis=1)))
        c = new
        if shift < TOL:
            break
    d2 = _sq_dists(x, c)
    assign = np.argmin(d2, axis=1)
    trace.append(float(d2[np.arange(len(x)), assign].sum()))
    return c, assign, tuple(trace)


def _check(n: int, k: int):
    if k < 2:
        raise ConfigError(f"k={k} must be at least 2", "k")
    if k > n:
        raise ConfigError(f"k={k} exceeds sample count {n}", "k")


def _build(x, init_centroids, k) -> DomainModel:
    c, assign, trace = lloyd(x, init_centroids)
    D, dmax = distance_matrix(c)
    return DomainModel(k, c, assign, D, dmax, trace)


def cluster_domains(raw, shallow, k: int, seed: int) -> DomainModel:
    """k-means (k-means++ seeding) on the standardized raw+shallow concatenation."""
    x = standardize(raw, shallow)
    _check(x.shape[0], k)
    if not np.all(np.isfinite(x)):
        raise ContractError("non-finite features passed to cluster_domains")
    init = kmeans_pp(x, k, np.random.default_rng(seed))
    return _build(x, init, k)


def refresh(model: DomainModel, raw, shallow, seed: int) -> DomainModel:
    """Re-cluster on new features, warm-starting from the previous assignment.

    Standardization depends on the current features, so the previous
    centroids are re-expressed as means of the new vectors under the old
    assignment before Lloyd runs.
    """
    x = standardize(raw, shallow)
    _check(x.shape[0], model.k)
    if len(model.assignment) != x.shape[0]:
        return cluster_domains(raw, shallow, model.k, seed)
    init = np.empty((model.k, x.shape[1]))
    fallback = kmeans_pp(x, model.k, np.random.default_rng(seed))
    for j in range(model.k):
        members = model.assignment == j
        init[j] = x[members].mean(axis=0) if members.any() else fallback[j]
    return _build(x, init, model.k)


def save(model: DomainModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")


def load(path) -> DomainModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    c = np.array(doc["centroids"], dtype=np.float64)
    D, dmax = distance_matrix(c)
    return DomainModel(int(doc["k"]), c, np.array(doc["assignment"], dtype=np.int64),
                       np.array(doc["D"], dtype=np.float64), dmax)
