"""Ranked list loss over a batch of unit-norm representations.

Per anchor, same-label points outside the positive boundary are pulled in and
other-label points inside the negative boundary are pushed out; informative
negatives are softmax-weighted by temperature.  Normalized negative weights
are treated as constants during differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    alpha_p: float = 0.8
    alpha_n: float = 1.2
    lam: float = 0.5
    temperature: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha_p < self.alpha_n:
            raise ValueError("need 0 <= alpha_p < alpha_n")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if self.temperature < 0.0:
            raise ValueError("temperature must be >= 0")


def pairwise_distances(reps: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix; symmetric with a zero diagonal."""
    sq = np.sum(reps * reps, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (reps @ reps.T)
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


def negative_weights(
    anchor: int, dmat: np.ndarray, informative_negs: np.ndarray, cfg: LossConfig
) -> np.ndarray:
    """Normalized weights exp(T * (alpha_n - d)) over the informative negatives."""
    idx = np.asarray(informative_negs, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("no informative negatives for this anchor")
    margins = cfg.alpha_n - dmat[anchor, idx]
    if np.any(margins <= 0):
        raise ValueError("informative negatives must lie strictly inside alpha_n")
    logits = cfg.temperature * margins
    logits -= logits.max()  # overflow guard; normalization cancels the shift
    w = np.exp(logits)
    return w / w.sum()


@dataclass
class AnchorLossBreakdown:
    anchor: int
    positives: np.ndarray  # informative positive indices (d > alpha_p)
    negatives: np.ndarray  # informative negative indices (d < alpha_n)
    weights: np.ndarray  # normalized weights over `negatives`
    loss_pos: float
    loss_neg: float


def rll_anchor(
    anchor: int, dmat: np.ndarray, labels: np.ndarray, cfg: LossConfig
) -> AnchorLossBreakdown:
    """Loss of one anchor: hinge sum over informative positives plus the
    weighted margin sum over informative negatives."""
    m = dmat.shape[0]
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise ValueError("labels length must match distance matrix")
    if not 0 <= anchor < m:
        raise ValueError("anchor index out of range")
    d = dmat[anchor]
    others = np.arange(m) != anchor
    same = (labels == labels[anchor]) & others
    diff = ~(labels == labels[anchor]) & others
    positives = np.nonzero(same & (d > cfg.alpha_p))[0]
    negatives = np.nonzero(diff & (d < cfg.alpha_n))[0]
    loss_pos = float(np.sum(d[positives] - cfg.alpha_p))
    if negatives.size:
        weights = negative_weights(anchor, dmat, negatives, cfg)
        loss_neg = float(np.sum(weights * (cfg.alpha_n - d[negatives])))
    else:
        weights = np.zeros(0)
        loss_neg = 0.0
    return AnchorLossBreakdown(anchor, positives, negatives, weights, loss_pos, loss_neg)


def rll_batch(
    reps: np.ndarray, labels: np.ndarray, cfg: LossConfig
) -> tuple[float, np.ndarray]:
    """Batch objective sum_i [(1-lam) * L_P(i) + lam * L_N(i)] and its exact
    gradient with respect to the representations (weights held constant)."""
    m = reps.shape[0]
    if m < 2:
        raise ValueError("need at least two points")
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise ValueError("labels length must match representations")
    d = pairwise_distances(reps)
    eye = np.eye(m, dtype=bool)
    same = (labels[:, None] == labels[None, :]) & ~eye
    pos_mask = same & (d > cfg.alpha_p)
    neg_mask = ~same & ~eye & (d < cfg.alpha_n)

    # Per-anchor normalized negative weights, rows without negatives stay 0.
    logits = np.where(neg_mask, cfg.temperature * (cfg.alpha_n - d), -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    has_neg = neg_mask.any(axis=1)
    raw = np.exp(logits - np.where(has_neg[:, None], row_max, 0.0), where=neg_mask, out=np.zeros_like(d))
    wsum = raw.sum(axis=1, keepdims=True)
    weights = np.divide(raw, wsum, where=wsum > 0, out=np.zeros_like(raw))

    loss_p = np.where(pos_mask, d - cfg.alpha_p, 0.0).sum()
    loss_n = (weights * np.where(neg_mask, cfg.alpha_n - d, 0.0)).sum()
    loss = (1.0 - cfg.lam) * loss_p + cfg.lam * loss_n

    # coeff[i, j] is the coefficient of d_ij in the loss for anchor i.
    coeff = (1.0 - cfg.lam) * pos_mask - cfg.lam * weights
    sym = coeff + coeff.T
    ratio = np.divide(sym, d, where=d > 0, out=np.zeros_like(d))
    grad = ratio.sum(axis=1)[:, None] * reps - ratio @ reps
    return float(loss), grad
