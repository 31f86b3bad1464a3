"""Classification metrics on fake-class scores."""

from __future__ import annotations

import numpy as np

from .errors import ContractError

PROB_EPS = 1e-7


def bce_loss(probabilities, labels, eps: float = PROB_EPS) -> float:
    """Mean binary log loss with probabilities clipped to [eps, 1 - eps]."""
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ContractError("log loss of an empty set")
    if p.shape != y.shape:
        raise ContractError(f"{p.size} probabilities for {y.size} labels")
    p = np.clip(p, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def bce_from_logits(logits, labels, eps: float = PROB_EPS) -> float:
    """Same quantity as :func:`bce_loss` for (N, 2) logits, via log-sum-exp."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels).astype(np.intp).reshape(-1)
    if y.size == 0:
        raise ContractError("log loss of an empty set")
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -logp[np.arange(y.size), y]
    return float(np.mean(np.clip(nll, -np.log1p(-eps), -np.log(eps))))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction correct when score >= threshold means fake (label 1)."""
    s = np.asarray(scores).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean((s >= threshold).astype(int) == y))


def roc_curve(scores, labels):
    """ROC points swept over every distinct score, highest threshold first.

    Returns ``(thresholds, fpr, tpr)``. The first point is (0, 0) at an
    infinite threshold, the last is (1, 1) at the smallest score. A sample is
    called positive when its score is >= the threshold.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    pos, neg = int(y.sum()), int((~y).sum())
    if pos == 0 or neg == 0:
        raise ContractError("ROC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    thresholds = np.r_[np.inf, s[ends]]
    fpr = np.r_[0.0, fp / neg]
    tpr = np.r_[0.0, tp / pos]
    return thresholds, fpr, tpr


def auc_trapezoid(fpr, tpr) -> float:
    fpr = np.asarray(fpr, dtype=np.float64)
    tpr = np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))


def roc_auc(scores, labels) -> float:
    _, fpr, tpr = roc_curve(scores, labels)
    return auc_trapezoid(fpr, tpr)


def auc_pairwise_oracle(scores, labels) -> float:
    """AUC as P(score_pos > score_neg) + 0.5 P(tie), by enumerating all pairs."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    sp, sn = s[y == 1], s[y == 0]
    if sp.size == 0 or sn.size == 0:
        raise ContractError("AUC needs both classes present")
    wins = 0.0
    for a in sp:
        for b in sn:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (sp.size * sn.size)
