"""Single-stage debiased self-training on precomputed diffused features.

Every epoch the current model labels the unlabeled nodes in eval mode, keeps
the predictions whose confidence reaches the threshold (by default the mean
confidence over unlabeled nodes), estimates the pseudo-label class
distribution from them, and adds a balanced-softmax loss on those nodes to
the supervised loss. A multi-stage teacher/student baseline is also provided
for diagnosing how pseudo labels concentrate on majority classes.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from iceberg.balancing import (
    RCE_LOG_CLAMP,
    BalancingMode,
    ClassCounts,
    count_classes,
    double_balanced_unsup_loss,
    supervised_loss,
)
from iceberg.graph import SparseGraph
from iceberg.metrics import MetricReport, evaluate
from iceberg.nn import MlpModel, OptimizerState, adam_step, backward, forward, softmax
from iceberg.propagation import DiffusedFeatures, PropagationConfig, diffuse_graph, graph_digest
from iceberg.splits import SplitMasks

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class StaleDiffusionError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    hops: int = 10
    add_self_loops: bool = True
    hidden: tuple = (256,)
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 1000
    mode: BalancingMode = BalancingMode.ERM
    double_balancing: bool = False
    noise_tolerant: bool = False
    lam: float = 1.0
    mu: float = 1.0
    beta: float = 0.5
    rce_clamp: float = RCE_LOG_CLAMP
    threshold: object = "dynamic"  # "dynamic" or a fixed float in (0, 1)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", BalancingMode.parse(self.mode))
        hidden = (self.hidden,) if isinstance(self.hidden, int) else tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.threshold != "dynamic":
            tau = float(self.threshold)
            if not 0.0 < tau < 1.0:
                raise ValueError("a fixed threshold must lie in (0, 1)")
            object.__setattr__(self, "threshold", tau)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        PropagationConfig(self.alpha, self.hops)

    @property
    def propagation(self) -> PropagationConfig:
        return PropagationConfig(self.alpha, self.hops)

    # JSON keys that differ from attribute names
    _RENAMES = {"lam": "lambda", "double_balancing": "db"}

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, BalancingMode):
                value = value.value
            elif isinstance(value, tuple):
                value = list(value)
            out[self._RENAMES.get(f.name, f.name)] = value
        return out

    @classmethod
    def from_dict(cls, data):
        inverse = {v: k for k, v in cls._RENAMES.items()}
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = inverse.get(key, key)
            if name not in names:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = value
        return cls(**kwargs)


PLUGINS = ("base", "db", "iceberg")


def plugin_config(config: TrainConfig, plugin: str, base_hops: int = 2, iceberg_hops: int = 10) -> TrainConfig:
    """Configuration for a table row: ``base`` (shallow diffusion, supervised
    only), ``db`` (shallow diffusion plus double balancing) or ``iceberg``
    (deep diffusion, double balancing and the noise-tolerant term)."""
    if plugin == "base":
        return replace(config, hops=base_hops, double_balancing=False, noise_tolerant=False)
    if plugin == "db":
        return replace(config, hops=base_hops, double_balancing=True, noise_tolerant=False)
    if plugin == "iceberg":
        return replace(config, hops=iceberg_hops, double_balancing=True, noise_tolerant=True)
    raise ValueError(f"unknown plugin {plugin!r}; expected one of {PLUGINS}")


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    node_idx: np.ndarray
    pred_class: np.ndarray
    confidence: np.ndarray
    pi: ClassCounts
    threshold_used: float

    def __len__(self):
        return int(self.node_idx.shape[0])


@dataclass
class EpochRecord:
    epoch: int
    sup_loss: float
    unsup_loss: float
    threshold: float
    num_pseudo: int
    utilization: float
    pseudo_accuracy: float | None
    pseudo_counts: list
    val_bacc: float
    seconds: float = 0.0

    def as_dict(self, timing=False):
        out = dict(self.__dict__)
        if not timing:
            out.pop("seconds")
        return out


@dataclass
class RunRecord:
    config: TrainConfig
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_bacc: float = -1.0
    val: MetricReport | None = None
    test: MetricReport | None = None
    extras: dict = field(default_factory=dict)

    def summary(self):
        return {
            "config": self.config.to_dict(),
            "epochs_run": len(self.history),
            "best_epoch": self.best_epoch,
            "val": self.val.as_dict() if self.val else None,
            "test": self.test.as_dict() if self.test else None,
            "extras": self.extras,
        }

    def jsonl_lines(self, timing=False):
        import json

        return [json.dumps(rec.as_dict(timing), sort_keys=True) for rec in self.history]


def predict_confidence(model: MlpModel, features):
    """Eval-mode max softmax probability and argmax (ties go to the lowest class id)."""
    matrix = features.matrix if isinstance(features, DiffusedFeatures) else features
    logits, _ = forward(model, matrix, train_mode=False)
    probs = softmax(logits)
    pred = probs.argmax(axis=1)
    return probs[np.arange(probs.shape[0]), pred], pred


def dynamic_threshold(confidence, unlabeled_idx) -> float:
    unlabeled_idx = np.asarray(unlabeled_idx, dtype=np.int64)
    if unlabeled_idx.size == 0:
        raise ValueError("no unlabeled nodes to threshold")
    return float(np.mean(np.asarray(confidence)[unlabeled_idx]))


def select_pseudo(confidence, pred, unlabeled_idx, threshold, num_classes) -> PseudoLabelSet:
    unlabeled_idx = np.asarray(unlabeled_idx, dtype=np.int64)
    conf = np.asarray(confidence)[unlabeled_idx]
    chosen = unlabeled_idx[conf >= threshold]
    classes = np.asarray(pred, dtype=np.int64)[chosen]
    pi = ClassCounts(np.bincount(classes, minlength=num_classes), "pseudo")
    return PseudoLabelSet(chosen, classes, np.asarray(confidence)[chosen], pi, float(threshold))


def _check_diffusion(graph, config, diffused):
    if diffused is None:
        return diffuse_graph(graph, config.propagation, config.add_self_loops)
    expected = graph_digest(graph, config.propagation, config.add_self_loops)
    if diffused.source_hash != expected:
        raise StaleDiffusionError("diffusion-hash mismatch: cached features do not match graph and config")
    return diffused


def train(graph: SparseGraph, masks: SplitMasks, config: TrainConfig,
          diffused: DiffusedFeatures | None = None, extra_labels=None):
    """Train the head and return ``(model, record)``.

    The returned model holds the parameters with the best validation
    balanced accuracy. ``extra_labels`` is an optional ``(node_idx, classes)``
    pair treated as additional labeled nodes (used by the multi-stage
    baseline). Ground-truth labels outside the labeled set are only read for
    diagnostics and evaluation.
    """
    diffused = _check_diffusion(graph, config, diffused)
    x = diffused.matrix
    n, c = graph.num_nodes, graph.num_classes

    train_idx = np.asarray(masks.train_idx, dtype=np.int64)
    train_y = graph.labels[train_idx]
    if extra_labels is not None and len(extra_labels[0]):
        train_idx = np.concatenate([train_idx, np.asarray(extra_labels[0], dtype=np.int64)])
        train_y = np.concatenate([train_y, np.asarray(extra_labels[1], dtype=np.int64)])
    labeled_counts = ClassCounts(np.bincount(train_y, minlength=c), "labeled")
    is_labeled = np.zeros(n, dtype=bool)
    is_labeled[train_idx] = True
    unlabeled_idx = np.flatnonzero(~is_labeled)

    rng = np.random.default_rng(config.seed)
    model = MlpModel.init((x.shape[1], *config.hidden, c), config.dropout, rng)
    opt = OptimizerState.for_model(model, config.lr, config.weight_decay)
    beta = config.beta if config.noise_tolerant else 0.0
    record = RunRecord(config)
    best = model.copy()

    def consider(epoch, pred):
        val_bacc = evaluate(pred, graph.labels, masks.val_idx, c).balanced_accuracy if masks.val_idx.size else 0.0
        if val_bacc >= record.best_val_bacc:  # ties go to the later, better-fit model
            record.best_val_bacc = val_bacc
            record.best_epoch = epoch
            best.load_state(model)
        return val_bacc

    for epoch in range(config.epochs):
        tic = time.perf_counter()
        confidence, pred = predict_confidence(model, x)
        val_bacc = consider(epoch, pred)

        if config.threshold == "dynamic":
            tau = dynamic_threshold(confidence, unlabeled_idx) if unlabeled_idx.size else 1.0
        else:
            tau = config.threshold
        pseudo = select_pseudo(confidence, pred, unlabeled_idx, tau, c)

        use_unsup = config.double_balancing and config.lam != 0 and len(pseudo) > 0
        rows = np.concatenate([train_idx, pseudo.node_idx]) if use_unsup else train_idx
        logits, tape = forward(model, x, train_mode=True, rng=rng, rows=rows)
        n_sup = train_idx.shape[0]
        sup, sup_grad = supervised_loss(config.mode, logits[:n_sup], train_y, labeled_counts)
        grad = np.zeros_like(logits)
        grad[:n_sup] = sup_grad
        unsup = 0.0
        if use_unsup:
            unsup, unsup_grad = double_balanced_unsup_loss(
                logits[n_sup:], pseudo.pred_class, pseudo.pi,
                config.mu, beta, config.lam, config.rce_clamp,
            )
            grad[n_sup:] = unsup_grad
        if not (np.isfinite(sup) and np.isfinite(unsup)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}: supervised={sup}, unsupervised={unsup}")
        adam_step(model, backward(model, tape, grad), opt)

        pseudo_acc = None
        if len(pseudo):
            pseudo_acc = float(np.mean(pseudo.pred_class == graph.labels[pseudo.node_idx]))
        record.history.append(EpochRecord(
            epoch=epoch,
            sup_loss=sup,
            unsup_loss=float(unsup),
            threshold=float(tau),
            num_pseudo=len(pseudo),
            utilization=len(pseudo) / unlabeled_idx.size if unlabeled_idx.size else 0.0,
            pseudo_accuracy=pseudo_acc,
            pseudo_counts=[int(v) for v in pseudo.pi.counts],
            val_bacc=val_bacc,
            seconds=time.perf_counter() - tic,
        ))

    _, pred = predict_confidence(model, x)
    consider(config.epochs, pred)
    model.load_state(best)
    _, pred = predict_confidence(model, x)
    if masks.val_idx.size:
        record.val = evaluate(pred, graph.labels, masks.val_idx, c)
    if masks.test_idx.size:
        record.test = evaluate(pred, graph.labels, masks.test_idx, c)
    return model, record


def multistage_selftrain(graph: SparseGraph, masks: SplitMasks, base_config: TrainConfig, stages: int,
                         fixed_tau: float, top_k_per_stage: int, diffused: DiffusedFeatures | None = None):
    """Classic teacher/student self-training without any balancing.

    Each stage retrains from scratch on the labeled nodes plus all pseudo
    labels accumulated so far, then permanently adds up to
    ``top_k_per_stage`` of its most confident unlabeled predictions with
    confidence at least ``fixed_tau``. Each stage's record carries
    ``extras`` with the added and cumulative per-class pseudo counts and the
    majority-class share of the accumulated pseudo labels.
    """
    if stages < 1:
        raise ValueError("need at least one stage")
    config = replace(base_config, double_balancing=False, noise_tolerant=False)
    diffused = _check_diffusion(graph, config, diffused)
    c = graph.num_classes
    majority = np.flatnonzero(masks.labeled_counts == masks.labeled_counts.max())
    pseudo_idx = np.zeros(0, dtype=np.int64)
    pseudo_cls = np.zeros(0, dtype=np.int64)
    records = []
    for stage in range(stages):
        model, record = train(graph, masks, config, diffused, extra_labels=(pseudo_idx, pseudo_cls))
        confidence, pred = predict_confidence(model, diffused)
        taken = np.zeros(graph.num_nodes, dtype=bool)
        taken[masks.train_idx] = True
        taken[pseudo_idx] = True
        candidates = np.flatnonzero(~taken & (confidence >= fixed_tau))
        order = np.lexsort((candidates, -confidence[candidates]))
        added = candidates[order[:top_k_per_stage]]
        if added.size == 0:
            log.warning("stage %d: no predictions reach confidence %.3f; nothing added", stage, fixed_tau)
        pseudo_idx = np.concatenate([pseudo_idx, added])
        pseudo_cls = np.concatenate([pseudo_cls, pred[added]])
        cumulative = np.bincount(pseudo_cls, minlength=c)
        total = int(cumulative.sum())
        record.extras = {
            "stage": stage,
            "added_counts": np.bincount(pred[added], minlength=c).tolist(),
            "cumulative_counts": cumulative.tolist(),
            "majority_share": float(cumulative[majority].sum() / total) if total else None,
            "pseudo_accuracy": float(np.mean(pseudo_cls == graph.labels[pseudo_idx])) if total else None,
        }
        records.append(record)
    return records
