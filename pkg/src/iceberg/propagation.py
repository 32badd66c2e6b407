"""Parameter-free feature diffusion, precomputed once and cached on disk."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from iceberg import kernels
from iceberg.graph import NormalizedAdjacency, SparseGraph, normalize_adjacency

_MAGIC = b"ICEBDIFF"
_VERSION = 1
# magic, version, N, D, alpha, hops, sha256 digest
_HEADER = struct.Struct("<8sIQQdQ32s")


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class PropagationConfig:
    alpha: float = 0.1
    hops: int = 10

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0) or not np.isfinite(self.alpha):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if int(self.hops) != self.hops or self.hops < 0:
            raise ValueError(f"hops must be a non-negative integer, got {self.hops}")
        object.__setattr__(self, "hops", int(self.hops))
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True, eq=False)
class DiffusedFeatures:
    matrix: np.ndarray
    config: PropagationConfig
    source_hash: str


def source_digest(features, adj: NormalizedAdjacency, config: PropagationConfig) -> str:
    """SHA-256 over the normalized adjacency, raw features and diffusion settings."""
    h = hashlib.sha256()
    for arr in (adj.indptr, adj.indices):
        h.update(np.ascontiguousarray(arr, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(adj.data, dtype="<f8").tobytes())
    feats = np.ascontiguousarray(features, dtype="<f8")
    h.update(struct.pack("<QQ", *feats.shape))
    h.update(feats.tobytes())
    h.update(struct.pack("<?dQ", adj.self_loops_added, config.alpha, config.hops))
    return h.hexdigest()


def graph_digest(graph: SparseGraph, config: PropagationConfig, add_self_loops: bool = True) -> str:
    return source_digest(graph.features, normalize_adjacency(graph, add_self_loops), config)


def diffuse(features, adj: NormalizedAdjacency, config: PropagationConfig, backend=None) -> DiffusedFeatures:
    """Run ``X(t+1) = (1 - alpha) * A X(t) + alpha * X`` for ``config.hops`` steps from ``X(0) = X``."""
    x0 = np.ascontiguousarray(features, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] != adj.num_nodes:
        raise ValueError(f"features have shape {x0.shape}, adjacency has {adj.num_nodes} nodes")
    if not np.all(np.isfinite(x0)):
        raise ValueError("features contain non-finite values")
    current = x0
    for _ in range(config.hops):
        current = kernels.diffusion_step(
            adj.indptr, adj.indices, adj.data, current, x0, config.alpha, backend=backend
        )
    matrix = np.array(current, copy=True)
    matrix.setflags(write=False)
    return DiffusedFeatures(matrix, config, source_digest(x0, adj, config))


def diffuse_graph(graph: SparseGraph, config: PropagationConfig, add_self_loops: bool = True,
                  backend=None) -> DiffusedFeatures:
    return diffuse(graph.features, normalize_adjacency(graph, add_self_loops), config, backend=backend)


def cache_diffusion(diffused: DiffusedFeatures, path) -> Path:
    path = Path(path)
    n, d = diffused.matrix.shape
    header = _HEADER.pack(
        _MAGIC, _VERSION, n, d, diffused.config.alpha, diffused.config.hops,
        bytes.fromhex(diffused.source_hash),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(diffused.matrix, dtype="<f8").tobytes())
    return path


def load_diffusion(path, expected_hash: str | None = None) -> DiffusedFeatures:
    """Read a cache file; raise :class:`StaleCacheError` if its source hash differs from ``expected_hash``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise StaleCacheError(f"{path}: truncated cache header")
    magic, version, n, d, alpha, hops, digest = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise StaleCacheError(f"{path}: not a diffusion cache (or unsupported version)")
    if expected_hash is not None and digest.hex() != expected_hash:
        raise StaleCacheError(f"{path}: stale cache (source hash mismatch)")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * d:
        raise StaleCacheError(f"{path}: truncated cache body")
    matrix = np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)
    matrix.setflags(write=False)
    return DiffusedFeatures(matrix, PropagationConfig(alpha, hops), digest.hex())
