"""Two-view augmentation, pseudo-label/embedding graphs and the weighted contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .domain_geometry import DomainModel
from .errors import ConfigError, ContractError
from .evidential import DirichletBelief, SelectionMask

NOISE_FRACTION = 0.05
MAX_ANGLE_DEG = 10.0


@dataclass
class ViewBatch:
    """Views 0..B-1 are the first view of each sample, B..2B-1 the second."""

    x: np.ndarray  # 2B x d
    origin: np.ndarray  # view -> sample position in the batch

    @property
    def pair(self) -> np.ndarray:
        return pair_index(len(self.origin) // 2)


def pair_index(b: int) -> np.ndarray:
    """Index of the partner view for the stacked [view1; view2] layout."""
    half = np.arange(b)
    return np.concatenate([half + b, half])


def _augment(x, sd, rng, noise_fraction, max_angle_deg):
    n, d = x.shape
    out = x + rng.standard_normal((n, d)) * (noise_fraction * sd)
    theta = np.deg2rad(rng.uniform(-max_angle_deg, max_angle_deg, size=n))
    cos, sin = np.cos(theta), np.sin(theta)
    gx, gy = out[:, 0].copy(), out[:, 1].copy()
    out[:, 0] = cos * gx - sin * gy
    out[:, 1] = sin * gx + cos * gy
    return out


def make_views(x, seed, noise_fraction: float = NOISE_FRACTION,
               max_angle_deg: float = MAX_ANGLE_DEG) -> ViewBatch:
    """Two stochastic views per row: Gaussian jitter plus a small rotation of dims 0-1.

    Noise scale is `noise_fraction` times each feature's std over `x`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ContractError(f"make_views needs an n x d (d >= 2) array, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError("make_views got non-finite input")
    rng = np.random.default_rng(seed)
    sd = x.std(axis=0) if len(x) > 1 else np.zeros(x.shape[1])
    v1 = _augment(x, sd, rng, noise_fraction, max_angle_deg)
    v2 = _augment(x, sd, rng, noise_fraction, max_angle_deg)
    b = len(x)
    return ViewBatch(np.concatenate([v1, v2]), np.concatenate([np.arange(b), np.arange(b)]))


@dataclass
class PairGraph:
    A: np.ndarray  # binary pseudo-label adjacency, unit diagonal
    I: np.ndarray  # confidence-uncertainty pair weights
    Ddist: np.ndarray  # per-pair domain distance
    Ae: np.ndarray  # weighted embedding graph
    selected: np.ndarray  # per-view membership in the high-quality set
    labels: np.ndarray  # per-view pseudo label

    @property
    def edge_count(self) -> int:
        off = ~np.eye(len(self.A), dtype=bool)
        return int(self.A[off].sum() // 2)

    @property
    def mean_weight(self) -> float:
        off = (self.A > 0) & ~np.eye(len(self.A), dtype=bool)
        return float(self.Ae[off].mean()) if off.any() else 0.0


def build_graph(belief: DirichletBelief, mask: SelectionMask, domains: DomainModel | None,
                sample_index, unweighted: bool = False) -> PairGraph:
    """Pseudo-label graph and its confidence/uncertainty/domain-weighted version.

    `sample_index[v]` is the position of view v's origin sample in the data the
    DomainModel was fit on. With `domains=None` every pair has distance 1.
    `unweighted=True` forces the embedding graph to equal the binary graph.
    """
    n = len(belief)
    labels = belief.pseudo_label
    sel = np.asarray(mask.selected, dtype=bool)
    if sel.shape != (n,):
        raise ContractError(f"mask covers {sel.shape} views, beliefs cover {n}")
    same = labels[:, None] == labels[None, :]
    A = (same & sel[:, None] & sel[None, :]).astype(np.float64)
    np.fill_diagonal(A, 1.0)

    q = belief.confidence.values * (1.0 - belief.uncertainty.values)
    I = q[:, None] * q[None, :]
    if domains is None:
        Ddist = np.ones((n, n))
    else:
        Ddist = domains.pair_distances(np.asarray(sample_index))
    if unweighted:
        Ae = A.copy()
    else:
        Ae = A * I * Ddist
        np.fill_diagonal(Ae, np.diag(A))
    return PairGraph(A, I, Ddist, Ae, sel, labels)


def contrastive_loss(graph: PairGraph, z, tau: float = 0.1, pair=None, valid=None) -> Tensor:
    """Graph-weighted supervised contrastive loss, summed over anchors.

    For anchor i with partner view j(i), positives P(i) (other selected views
    sharing i's pseudo label, excluding i and j(i)) and candidates Q(i) (all
    views but i)::

        -1/(1+|P(i)|) * [ log softmax_Q(z_i.z_j(i)/tau)
                          + sum_p log(a^e_ip exp(z_i.z_p/tau) / sum_Q exp(z_i.z_q/tau)) ]

    `valid` drops views (zero-norm embeddings) from every role.
    """
    if tau <= 0:
        raise ConfigError(f"tau={tau} must be positive", "tau")
    z = dc.as_tensor(z)
    n = z.shape[0]
    if n < 2:
        raise ContractError("contrastive loss needs at least two views")
    pair = pair_index(n // 2) if pair is None else np.asarray(pair)
    P = (graph.A > 0) & graph.selected[:, None] & graph.selected[None, :]
    np.fill_diagonal(P, False)
    P[np.arange(n), pair] = False
    Q = ~np.eye(n, dtype=bool)
    anchors = np.ones(n, dtype=bool)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        P &= valid[:, None] & valid[None, :]
        Q &= valid[:, None] & valid[None, :]
        anchors = valid & valid[pair]

    sim = dc.matmul(z, dc.transpose(z)) * (1.0 / tau)
    e = dc.exp(sim)
    denom = dc.sum(e * Tensor(Q.astype(np.float64)), axis=1)
    log_denom = dc.log(denom)

    # partner term: sim[i, j(i)] - log denom_i
    pm = np.zeros((n, n))
    pm[np.arange(n), pair] = 1.0
    partner = dc.sum(sim * Tensor(pm), axis=1)

    # positive terms: log(max(a^e_ip * exp(sim_ip), eps)) - log denom_i
    weighted = dc.log(e * Tensor(np.where(P, graph.Ae, 0.0)) + Tensor(np.where(P, 0.0, 1.0)))
    pos = dc.sum(weighted, axis=1)
    n_pos = P.sum(axis=1).astype(np.float64)

    per_anchor = partner - log_denom + pos - log_denom * Tensor(n_pos)
    coef = np.where(anchors, 1.0 / (1.0 + n_pos), 0.0)
    return -dc.sum(per_anchor * Tensor(coef))


def supcon_reference(z: np.ndarray, labels, selected, tau: float, pair=None) -> float:
    """Unweighted supervised contrastive loss written as explicit loops.

    Independent of :func:`contrastive_loss`; used as a cross-check.
    """
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    pair = pair_index(n // 2) if pair is None else np.asarray(pair)
    total = 0.0
    for i in range(n):
        others = [q for q in range(n) if q != i]
        logits = np.array([z[i] @ z[q] / tau for q in others])
        top = logits.max()
        lse = top + np.log(np.sum(np.exp(logits - top)))
        positives = [p for p in range(n)
                     if p != i and p != pair[i] and selected[i] and selected[p]
                     and labels[p] == labels[i]]
        s = z[i] @ z[pair[i]] / tau - lse
        for p in positives:
            s += z[i] @ z[p] / tau - lse
        total -= s / (1 + len(positives))
    return float(total)
