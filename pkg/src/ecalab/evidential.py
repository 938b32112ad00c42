"""Dirichlet beliefs, confidence/uncertainty sample selection and the calibrated evidential loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ContractError


@dataclass
class DirichletBelief:
    evidence: Tensor  # B x M, nonnegative
    alpha: Tensor  # evidence + 1
    strength: Tensor  # B, sum of alpha
    uncertainty: Tensor  # B, M / S
    probs: Tensor  # B x M, alpha / S
    confidence: Tensor  # B, max prob

    @property
    def num_classes(self) -> int:
        return self.alpha.shape[1]

    @property
    def pseudo_label(self) -> np.ndarray:
        return np.argmax(self.probs.values, axis=1)

    def __len__(self):
        return self.alpha.shape[0]


@dataclass
class SelectionMask:
    eta_c: float
    eta_u: float
    selected: np.ndarray  # bool, B

    @property
    def rejected(self) -> np.ndarray:
        return ~self.selected

    @property
    def fraction(self) -> float:
        return float(self.selected.mean()) if self.selected.size else 0.0


@dataclass(frozen=True)
class AnnealSchedule:
    lambda0: float
    total_steps: int

    def __post_init__(self):
        if not 0.0 < self.lambda0 < 1.0:
            raise ContractError(f"lambda0={self.lambda0} not in (0, 1)")
        if self.total_steps < 1:
            raise ContractError(f"total_steps={self.total_steps} must be positive")


def belief_from_logits(logits) -> DirichletBelief:
    """Softplus evidence and the derived Dirichlet quantities, all differentiable."""
    logits = dc.as_tensor(logits)
    m = logits.shape[1]
    evidence = dc.softplus(logits)
    alpha = evidence + 1.0
    strength = dc.sum(alpha, axis=1)
    uncertainty = dc.div(float(m), strength)
    probs = dc.div(alpha, dc.repeat_cols(strength, m))
    confidence = dc.max(probs, axis=1)
    return DirichletBelief(evidence, alpha, strength, uncertainty, probs, confidence)


def select_high_quality(belief: DirichletBelief, u_direction: str = "low") -> SelectionMask:
    """Keep samples more confident than the batch mean and less uncertain than it.

    ``u_direction="high"`` flips the uncertainty comparison to ``u > eta_u``.
    Thresholds and membership are plain numpy values, so no gradient passes.
    """
    c = belief.confidence.values
    u = belief.uncertainty.values
    if c.size == 0:
        raise ContractError("selection on an empty batch")
    eta_c = float(np.mean(c))
    eta_u = float(np.mean(u))
    if u_direction == "low":
        keep_u = u < eta_u
    elif u_direction == "high":
        keep_u = u > eta_u
    else:
        raise ContractError(f"u_direction must be 'low' or 'high', got {u_direction!r}")
    return SelectionMask(eta_c, eta_u, (c > eta_c) & keep_u)


def cel_loss(belief: DirichletBelief, mask: SelectionMask, lambda_t: float) -> Tensor:
    """Calibrated evidential loss over one batch (a sum, not a mean).

    Selected samples pay ``-lambda_t * c * log(1 - u)``; the rest pay
    ``-(1 - lambda_t) * (1 - c) * log(u)``.
    """
    c, u = belief.confidence, belief.uncertainty
    sel = Tensor(mask.selected.astype(np.float64))
    rej = Tensor(mask.rejected.astype(np.float64))
    certain = dc.sum(sel * c * dc.log(1.0 - u))
    uncertain = dc.sum(rej * (1.0 - c) * dc.log(u))
    return -lambda_t * certain - (1.0 - lambda_t) * uncertain


def edl_fit_loss(belief: DirichletBelief, labels, weights=None) -> Tensor:
    """Expected cross-entropy under the Dirichlet, averaged over weighted rows.

    Per row: ``sum_m y_m (digamma(S) - digamma(alpha_m))``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    b, m = belief.alpha.shape
    w = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.sum() == 0:
        return Tensor(0.0)
    onehot = np.zeros((b, m))
    onehot[np.arange(b), labels] = 1.0
    onehot *= w[:, None] / w.sum()
    ds = dc.repeat_cols(dc.digamma(belief.strength), m)
    return dc.sum(Tensor(onehot) * (ds - dc.digamma(belief.alpha)))


def pseudo_label_fit_loss(belief: DirichletBelief, mask: SelectionMask) -> Tensor:
    """EDL fit of the model's own argmax labels on the selected samples; 0 if none."""
    if not mask.selected.any():
        return Tensor(0.0)
    return edl_fit_loss(belief, belief.pseudo_label, mask.selected.astype(np.float64))


def anneal(schedule: AnnealSchedule, t: int) -> float:
    """``lambda0 ** (1 - t/T)``: rises exponentially from lambda0 at t=0 to 1 at t=T."""
    if not 0 <= t <= schedule.total_steps:
        raise ContractError(f"step {t} outside [0, {schedule.total_steps}]")
    return float(schedule.lambda0 ** (1.0 - t / schedule.total_steps))
