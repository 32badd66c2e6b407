"""Graph storage, dataset ingestion and symmetric adjacency normalization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DATASET_FILES = ("meta.json", "edges.txt", "features.txt", "labels.txt")


class GraphFormatError(ValueError):
    """Raised when a dataset directory or graph arrays are invalid."""


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SparseGraph:
    """Undirected graph in CSR form with dense node features and labels.

    Arrays are copied and made read-only on construction.
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "graph"

    def __post_init__(self):
        object.__setattr__(self, "indptr", _frozen(self.indptr, np.int64))
        object.__setattr__(self, "indices", _frozen(self.indices, np.int64))
        object.__setattr__(self, "data", _frozen(self.data, np.float64))
        object.__setattr__(self, "features", _frozen(np.atleast_2d(self.features), np.float64))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        self.validate()

    @property
    def num_nodes(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_stored(self) -> int:
        """Number of stored directed entries (twice the undirected edge count)."""
        return int(self.indices.shape[0])

    @property
    def num_edges(self) -> int:
        return self.num_stored // 2

    @classmethod
    def from_edges(cls, num_nodes, edges, features, labels, num_classes, name="graph"):
        """Build a graph from an undirected edge list.

        Edges are symmetrized and deduplicated; self-edges are dropped.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise GraphFormatError("node id out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]])
        if both.size:
            both = np.unique(both, axis=0)  # lexicographic: rows, then sorted columns
        counts = np.bincount(both[:, 0], minlength=num_nodes) if both.size else np.zeros(num_nodes, np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = both[:, 1] if both.size else np.zeros(0, np.int64)
        return cls(indptr, indices, np.ones(indices.shape[0]), features, labels, num_classes, name)

    def edge_list(self) -> np.ndarray:
        """Undirected edges ``(u, v)`` with ``u < v`` in CSR order."""
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        keep = rows < self.indices
        return np.stack([rows[keep], self.indices[keep]], axis=1)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.num_nodes, self.num_nodes))
        rows = np.repeat(np.arange(self.num_nodes), np.diff(self.indptr))
        dense[rows, self.indices] = self.data
        return dense

    def validate(self):
        n = self.labels.shape[0]
        if n <= 0:
            raise GraphFormatError("graph must have at least one node")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise GraphFormatError(
                f"dimension mismatch: {self.features.shape[0]} feature rows for {n} nodes"
            )
        if self.features.shape[1] <= 0:
            raise GraphFormatError("dimension mismatch: features need at least one column")
        if not np.all(np.isfinite(self.features)):
            raise GraphFormatError("features contain non-finite values")
        if self.num_classes < 2:
            raise GraphFormatError("need at least two classes")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise GraphFormatError("label out of range")
        if np.unique(self.labels).shape[0] != self.num_classes:
            raise GraphFormatError("every class must appear at least once in the labels")
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0 or self.indptr[-1] != self.indices.shape[0]:
            raise GraphFormatError("malformed CSR row offsets")
        if np.any(np.diff(self.indptr) < 0):
            raise GraphFormatError("malformed CSR row offsets")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise GraphFormatError("node id out of range")
        if self.data.shape != self.indices.shape:
            raise GraphFormatError("CSR values and column indices differ in length")
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        # Strictly increasing columns within a row means sorted and duplicate-free.
        same_row = rows[1:] == rows[:-1]
        if np.any(same_row & (self.indices[1:] <= self.indices[:-1])):
            raise GraphFormatError("columns must be sorted and unique within each row")
        forward = rows * n + self.indices
        backward = self.indices * n + rows
        order = np.argsort(backward, kind="stable")
        if not (np.array_equal(backward[order], forward) and np.array_equal(self.data[order], self.data)):
            raise GraphFormatError("adjacency is not symmetric")


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^{-1/2} (A + s I) D^{-1/2}`` in CSR form."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    self_loops_added: bool

    @property
    def num_nodes(self) -> int:
        return int(self.indptr.shape[0] - 1)

    def to_dense(self) -> np.ndarray:
        n = self.num_nodes
        dense = np.zeros((n, n))
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        dense[rows, self.indices] = self.data
        return dense


def normalize_adjacency(graph: SparseGraph, add_self_loops: bool = True) -> NormalizedAdjacency:
    n = graph.num_nodes
    rows = np.repeat(np.arange(n), np.diff(graph.indptr))
    cols = graph.indices
    vals = graph.data
    if add_self_loops:
        diag = np.arange(n)
        rows = np.concatenate([rows, diag])
        cols = np.concatenate([cols, diag])
        vals = np.concatenate([vals, np.ones(n)])
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
    degree = np.bincount(rows, weights=vals, minlength=n)
    inv_sqrt = np.zeros(n)
    positive = degree > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degree[positive])
    # Product of the two scalings first keeps (i, j) and (j, i) bitwise equal.
    values = vals * (inv_sqrt[rows] * inv_sqrt[cols])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    return NormalizedAdjacency(
        _frozen(indptr, np.int64), _frozen(cols, np.int64), _frozen(values, np.float64), add_self_loops
    )


def _read_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped:
                yield lineno, stripped


def load_graph(dataset_dir) -> SparseGraph:
    """Read a dataset directory (``meta.json``, ``edges.txt``, ``features.txt``, ``labels.txt``)."""
    root = Path(dataset_dir)
    for fname in DATASET_FILES:
        if not (root / fname).is_file():
            raise GraphFormatError(f"missing file: {root / fname}")
    try:
        meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
        n = int(meta["num_nodes"])
        d = int(meta["num_features"])
        c = int(meta["num_classes"])
    except (ValueError, KeyError, TypeError) as exc:
        raise GraphFormatError(f"meta.json: malformed ({exc})") from None
    name = str(meta.get("name", root.name))

    edges = []
    for lineno, line in _read_lines(root / "edges.txt"):
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"edges.txt line {lineno}: malformed line {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(f"edges.txt line {lineno}: node id out of range")
        edges.append((u, v))

    features = np.empty((n, d))
    count = 0
    for lineno, line in _read_lines(root / "features.txt"):
        try:
            row = np.array(line.split(), dtype=np.float64)
        except ValueError:
            raise GraphFormatError(f"features.txt line {lineno}: malformed line") from None
        if row.shape[0] != d:
            raise GraphFormatError(
                f"features.txt line {lineno}: dimension mismatch ({row.shape[0]} values, meta says {d})"
            )
        if count >= n:
            raise GraphFormatError(f"features.txt: dimension mismatch (more than {n} rows)")
        features[count] = row
        count += 1
    if count != n:
        raise GraphFormatError(f"features.txt: dimension mismatch ({count} rows, meta says {n})")

    labels = []
    for lineno, line in _read_lines(root / "labels.txt"):
        try:
            y = int(line)
        except ValueError:
            raise GraphFormatError(f"labels.txt line {lineno}: malformed line {line!r}") from None
        if not 0 <= y < c:
            raise GraphFormatError(f"labels.txt line {lineno}: label out of range ({y} with {c} classes)")
        labels.append(y)
    if len(labels) != n:
        raise GraphFormatError(f"labels.txt: dimension mismatch ({len(labels)} labels, meta says {n})")

    return SparseGraph.from_edges(n, np.array(edges, dtype=np.int64), features, labels, c, name)


def save_graph(graph: SparseGraph, dataset_dir) -> Path:
    """Write ``graph`` in the dataset directory format read by :func:`load_graph`."""
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": graph.name,
        "num_nodes": graph.num_nodes,
        "num_features": graph.num_features,
        "num_classes": graph.num_classes,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    np.savetxt(root / "edges.txt", graph.edge_list(), fmt="%d")
    np.savetxt(root / "features.txt", graph.features, fmt="%.17g")
    np.savetxt(root / "labels.txt", graph.labels, fmt="%d")
    return root


def generate_sbm(num_nodes, class_sizes, p_in, p_out, feature_dim, feature_shift, seed) -> SparseGraph:
    """Stochastic block model with class-conditional Gaussian features.

    Nodes are assigned to classes in contiguous blocks following
    ``class_sizes``. Each class mean is ``feature_shift`` along its own axis,
    so ``feature_dim`` must be at least the number of classes.
    """
    sizes = np.asarray(class_sizes, dtype=np.int64)
    if sizes.sum() != num_nodes:
        raise ValueError("class_sizes must sum to num_nodes")
    if np.any(sizes <= 0):
        raise ValueError("class sizes must be positive")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    num_classes = sizes.shape[0]
    if num_classes > feature_dim:
        raise ValueError("more classes than feature dimensions; class means need distinct axes")

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), sizes)
    iu, ju = np.triu_indices(num_nodes, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.shape[0]) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    features = rng.standard_normal((num_nodes, feature_dim))
    features[np.arange(num_nodes), labels] += feature_shift
    return SparseGraph.from_edges(num_nodes, edges, features, labels, num_classes, name="sbm")
