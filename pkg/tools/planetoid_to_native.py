"""Convert Planetoid raw files (ind.<name>.x, .tx, .allx, .y, .ty, .ally,
.graph, .test.index) into the native dataset layout read by ``load_graph``.

    python tools/planetoid_to_native.py RAW_DIR NAME OUT_DIR

Needs scipy to unpickle the sparse feature matrices. Test nodes missing from
the CiteSeer index range become isolated zero-feature nodes and are dropped,
so every class id in the output has at least one node and no node is
unlabeled.
"""

import pickle
import sys
from pathlib import Path

import numpy as np

from iceberg.graph import SparseGraph, save_graph


def _load(raw, name, part):
    with open(raw / f"ind.{name}.{part}", "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert(raw, name, out):
    raw = Path(raw)
    x, tx, allx = (_load(raw, name, p) for p in ("x", "tx", "allx"))
    y, ty, ally = (_load(raw, name, p) for p in ("y", "ty", "ally"))
    graph = _load(raw, name, "graph")
    test_index = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64)
    lo, hi = test_index.min(), test_index.max()

    features = np.zeros((hi + 1, allx.shape[1]))
    labels = np.full(hi + 1, -1, dtype=np.int64)
    features[: allx.shape[0]] = allx.toarray()
    labels[: ally.shape[0]] = np.asarray(ally).argmax(axis=1)
    features[test_index] = tx.toarray()
    labels[test_index] = np.asarray(ty).argmax(axis=1)
    # rows of ty that are all zero carry no label
    labels[test_index[np.asarray(ty).sum(axis=1) == 0]] = -1
    keep = np.flatnonzero(labels >= 0)
    remap = np.full(hi + 1, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)

    edges = [(remap[u], remap[v]) for u, nbrs in graph.items() for v in nbrs
             if u <= hi and v <= hi and remap[u] >= 0 and remap[v] >= 0 and u != v]
    g = SparseGraph.from_edges(keep.size, np.array(edges, dtype=np.int64).reshape(-1, 2),
                               features[keep], labels[keep], int(labels.max()) + 1, name=name)
    save_graph(g, out)
    print(f"{name}: {g.num_nodes} nodes, {g.num_edges} edges, {g.num_features} features, {g.num_classes} classes")


if __name__ == "__main__":
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    convert(*sys.argv[1:])
