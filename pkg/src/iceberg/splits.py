"""Seeded train/validation/test partitions: step imbalance and few-shot."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from iceberg.graph import SparseGraph


class SplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SplitMasks:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    labeled_counts: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def imbalance_ratio(self) -> float:
        counts = self.labeled_counts
        if counts.size == 0 or counts.min() <= 0:
            return math.inf
        return float(counts.max() / counts.min())

    def unlabeled_idx(self, num_nodes: int) -> np.ndarray:
        """Every node outside the training set (validation and test included)."""
        mask = np.ones(num_nodes, dtype=bool)
        mask[self.train_idx] = False
        return np.flatnonzero(mask)

    def to_json(self) -> str:
        payload = {
            "params": self.params,
            "train": self.train_idx.tolist(),
            "val": self.val_idx.tolist(),
            "test": self.test_idx.tolist(),
        }
        return json.dumps(payload, sort_keys=True) + "\n"


def _masks(graph, train, val, test, params):
    train = np.sort(np.asarray(train, dtype=np.int64))
    val = np.sort(np.asarray(val, dtype=np.int64))
    test = np.sort(np.asarray(test, dtype=np.int64))
    for idx in (train, val, test):
        idx.setflags(write=False)
    counts = np.bincount(graph.labels[train], minlength=graph.num_classes)
    counts.setflags(write=False)
    masks = SplitMasks(train, val, test, counts, dict(params))
    check_split(graph, masks)
    return masks


def check_split(graph: SparseGraph, masks: SplitMasks):
    n = graph.num_nodes
    seen = np.zeros(n, dtype=np.int64)
    for name in ("train_idx", "val_idx", "test_idx"):
        idx = getattr(masks, name)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise SplitError(f"{name}: node id out of range")
        if np.unique(idx).shape[0] != idx.shape[0]:
            raise SplitError(f"{name}: duplicate node ids")
        seen[idx] += 1
    if np.any(seen > 1):
        raise SplitError("train, val and test sets overlap")


def _per_class_pools(graph, need, rng):
    pools = []
    for c in range(graph.num_classes):
        members = np.flatnonzero(graph.labels == c)
        if members.shape[0] < need:
            raise SplitError(
                f"insufficient nodes in class {c}: {members.shape[0]} available, {need} needed"
            )
        pools.append(rng.permutation(members))
    return pools


def make_balanced(graph: SparseGraph, per_class: int, val_per_class: int, seed: int, params=None) -> SplitMasks:
    rng = np.random.default_rng(seed)
    pools = _per_class_pools(graph, per_class + val_per_class, rng)
    train = np.concatenate([p[:per_class] for p in pools])
    val = np.concatenate([p[per_class:per_class + val_per_class] for p in pools])
    taken = np.zeros(graph.num_nodes, dtype=bool)
    taken[train] = taken[val] = True
    params = params or {"kind": "balanced", "per_class": per_class, "val": val_per_class, "seed": seed}
    return _masks(graph, train, val, np.flatnonzero(~taken), params)


def make_step_imbalance(graph: SparseGraph, base_per_class: int, ratio: float,
                        val_per_class: int, seed: int) -> SplitMasks:
    """Balanced split followed by label removal on the last ``C // 2`` classes.

    Minority classes keep ``floor(base_per_class / ratio)`` training labels;
    the removed nodes join the test pool.
    """
    if ratio < 1:
        raise SplitError("imbalance ratio must be at least 1")
    minority_count = math.floor(base_per_class / ratio)
    if minority_count == 0:
        raise SplitError("imbalance ratio too large: minority classes would keep no labels")
    rng = np.random.default_rng(seed)
    pools = _per_class_pools(graph, base_per_class + val_per_class, rng)
    num_classes = graph.num_classes
    first_minority = num_classes - num_classes // 2
    train_parts = []
    for c, pool in enumerate(pools):
        picked = pool[:base_per_class]
        if c >= first_minority:
            picked = rng.permutation(picked)[:minority_count]
        train_parts.append(picked)
    train = np.concatenate(train_parts)
    val = np.concatenate([p[base_per_class:base_per_class + val_per_class] for p in pools])
    taken = np.zeros(graph.num_nodes, dtype=bool)
    taken[train] = taken[val] = True
    params = {"kind": "step", "base": base_per_class, "ratio": ratio, "val": val_per_class, "seed": seed}
    return _masks(graph, train, val, np.flatnonzero(~taken), params)


def make_fewshot(graph: SparseGraph, labels_per_class: int, val_per_class: int, seed: int) -> SplitMasks:
    params = {"kind": "fewshot", "k": labels_per_class, "val": val_per_class, "seed": seed}
    return make_balanced(graph, labels_per_class, val_per_class, seed, params)


def minority_classes(masks: SplitMasks) -> np.ndarray:
    counts = masks.labeled_counts
    return np.flatnonzero(counts < counts.max())


def unlabeled_class_distribution(graph: SparseGraph, masks: SplitMasks) -> np.ndarray:
    """Ground-truth class histogram over nodes outside the training set (diagnostic only)."""
    idx = masks.unlabeled_idx(graph.num_nodes)
    return np.bincount(graph.labels[idx], minlength=graph.num_classes)


def save_split(masks: SplitMasks, path) -> Path:
    path = Path(path)
    path.write_text(masks.to_json(), encoding="utf-8")
    return path


def load_split(path, graph: SparseGraph) -> SplitMasks:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        train, val, test = payload["train"], payload["val"], payload["test"]
    except FileNotFoundError:
        raise SplitError(f"missing file: {path}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise SplitError(f"{path}: malformed split file ({exc})") from None
    return _masks(graph, train, val, test, payload.get("params", {}))
