"""Class-balancing losses.

Supervised modes: plain cross-entropy (ERM), inverse-frequency re-weighting
and balanced softmax. The unsupervised double-balancing term applies the
balanced-softmax logit shift with estimated pseudo-label counts, optionally
adding a reverse cross-entropy term for robustness to noisy pseudo labels.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from iceberg.nn import log_softmax, softmax_cross_entropy

# log(0) replacement inside the reverse cross-entropy term.
RCE_LOG_CLAMP = -4.0


class BalancingMode(str, enum.Enum):
    ERM = "erm"
    REWEIGHT = "rw"
    BALANCED_SOFTMAX = "bs"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"reweight": "rw", "re-weight": "rw", "balancedsoftmax": "bs", "balanced_softmax": "bs"}
        key = str(value).lower()
        return cls(aliases.get(key, key))


@dataclass(frozen=True, eq=False)
class ClassCounts:
    counts: np.ndarray
    source: str = "labeled"

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        if counts.ndim != 1 or np.any(counts < 0):
            raise ValueError("class counts must be a non-negative vector")
        object.__setattr__(self, "counts", counts)

    def __len__(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return float(self.counts.sum())


def count_classes(labels, idx, num_classes, source="labeled") -> ClassCounts:
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.asarray(idx, dtype=np.int64)
    return ClassCounts(np.bincount(labels[idx], minlength=num_classes), source)


def log_prior(counts: ClassCounts) -> np.ndarray:
    # Classes with no examples are floored to one so the shift stays finite.
    return np.log(np.maximum(counts.counts, 1.0))


def adjust_logits(logits, counts: ClassCounts, mu: float = 1.0):
    if not np.isfinite(mu):
        raise ValueError("mu must be finite")
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] != len(counts):
        raise ValueError("logit width does not match the number of classes")
    return z + mu * log_prior(counts)


def reweight_weights(targets, counts: ClassCounts):
    targets = np.asarray(targets, dtype=np.int64)
    per_class = counts.counts[targets]
    if np.any(per_class <= 0):
        raise ValueError("a target class has zero labeled examples; re-weighting is undefined")
    w = 1.0 / per_class
    return w * (w.shape[0] / w.sum())


def supervised_loss(mode, logits, targets, labeled_counts: ClassCounts):
    """Loss and logit gradient of the supervised term under the given balancing mode."""
    mode = BalancingMode.parse(mode)
    if mode is BalancingMode.ERM:
        return softmax_cross_entropy(logits, targets)
    if mode is BalancingMode.REWEIGHT:
        return softmax_cross_entropy(logits, targets, reweight_weights(targets, labeled_counts))
    # Gradient w.r.t. adjusted logits equals gradient w.r.t. raw logits (additive shift).
    return softmax_cross_entropy(adjust_logits(logits, labeled_counts, 1.0), targets)


def reverse_cross_entropy(logits, targets, log_clamp=RCE_LOG_CLAMP):
    """Mean of ``-sum_k p_k log(onehot_k)`` with ``log 0`` replaced by ``log_clamp``.

    Per sample this is ``-log_clamp * (1 - p_target)``, bounded in
    ``[0, -log_clamp]``.
    """
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    b = z.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    p = np.exp(log_softmax(z))
    rows = np.arange(b)
    p_t = p[rows, t]
    loss = float((-log_clamp * (1.0 - p_t)).mean())
    # d(1 - p_t)/dz_k = -p_t (onehot_k - p_k)
    grad = -p * p_t[:, None]
    grad[rows, t] += p_t
    grad *= log_clamp / b
    return loss, grad


def double_balanced_unsup_loss(logits, pseudo_labels, pi: ClassCounts, mu=1.0, beta=0.0,
                               lam=1.0, log_clamp=RCE_LOG_CLAMP):
    """``lam * mean[CE(q, y) + beta * RCE(softmax(q), y)]`` with ``q = logits + mu * log(pi)``.

    An empty pseudo-label batch contributes zero loss and a zero gradient.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[0] == 0:
        return 0.0, np.zeros_like(z)
    q = adjust_logits(z, pi, mu)
    loss, grad = softmax_cross_entropy(q, pseudo_labels)
    if beta:
        rce, rce_grad = reverse_cross_entropy(q, pseudo_labels, log_clamp)
        loss += beta * rce
        grad = grad + beta * rce_grad
    return lam * loss, lam * grad
