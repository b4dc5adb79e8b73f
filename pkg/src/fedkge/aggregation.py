"""Server-side personalized aggregation of entity embeddings.

Each client's entity matrix is padded to the global vocabulary, flattened
row-major and stacked into ``G`` (C x N*m). With row-stochastic weights ``W``
and existence matrix ``M`` the raw supplement is ``(W @ G) / (W @ M)``, the
division broadcasting each entity's weight total over its m coordinates. The
result is mixed with ``G`` and cut back into per-client local matrices.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .kg import GlobalRegistry
from .relation_graph import compute_weights


def stack_global(padded: Sequence[np.ndarray]) -> np.ndarray:
    if not padded:
        raise ShapeError("nothing to stack")
    shape = np.shape(padded[0])
    if len(shape) != 2:
        raise ShapeError(f"padded matrices must be 2-D, got {shape}")
    for P in padded:
        if np.shape(P) != shape:
            raise ShapeError(f"padded matrices disagree in shape: {np.shape(P)} vs {shape}")
    return np.stack([np.asarray(P, dtype=np.float64).reshape(-1) for P in padded])


def unstack_global(G: np.ndarray, n_global: int, dim: int) -> list[np.ndarray]:
    if G.shape[1] != n_global * dim:
        raise ShapeError(f"global matrix width {G.shape[1]} != {n_global} * {dim}")
    return [row.reshape(n_global, dim) for row in G]


def norm_divide(X: np.ndarray, Y: np.ndarray, dim: int | None = None) -> np.ndarray:
    """``Z[i, j] = X[i, j] / Y[i, j // m]`` with 0/0 (any x/0) taken as 0."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    if X.shape[0] != Y.shape[0]:
        raise ShapeError(f"row counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if dim is None:
        if Y.shape[1] == 0 or X.shape[1] % Y.shape[1]:
            raise ShapeError("cannot infer the embedding width")
        dim = X.shape[1] // Y.shape[1]
    if X.shape[1] != Y.shape[1] * dim:
        raise ShapeError(f"X width {X.shape[1]} != Y width {Y.shape[1]} * {dim}")
    denom = np.repeat(Y, dim, axis=1)
    return np.divide(X, denom, out=np.zeros_like(X), where=denom != 0)


def aggregate(W: np.ndarray, G: np.ndarray, M: np.ndarray) -> np.ndarray:
    W, G, M = (np.asarray(a, dtype=np.float64) for a in (W, G, M))
    C = W.shape[0]
    if W.shape != (C, C) or G.shape[0] != C or M.shape[0] != C:
        raise ShapeError(f"incompatible shapes W{W.shape} G{G.shape} M{M.shape}")
    return norm_divide(W @ G, W @ M)


def residual_combine(K_raw: np.ndarray, G: np.ndarray, p: float) -> np.ndarray:
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"mixing coefficient must lie in [0, 1], got {p}")
    if K_raw.shape != G.shape:
        raise ShapeError(f"shape mismatch {K_raw.shape} vs {G.shape}")
    return p * K_raw + (1.0 - p) * G


def extract_all(K: np.ndarray, registry: GlobalRegistry) -> list[np.ndarray]:
    if K.shape[0] != registry.n_clients or K.shape[1] % max(registry.n_global, 1):
        raise ShapeError(f"supplement matrix {K.shape} does not fit the registry")
    dim = K.shape[1] // registry.n_global
    return [row.reshape(registry.n_global, dim)[registry.perm_maps[c]].copy()
            for c, row in enumerate(K)]


def server_update(entity_matrices: Sequence[np.ndarray], registry: GlobalRegistry, strategy: str,
                  p: float, reduce: str = "sum", weights: np.ndarray | None = None):
    """Return ``(supplements, W)``, one supplement per client.

    ``weights`` overrides the strategy with a fixed row-stochastic matrix.
    """
    if len(entity_matrices) != registry.n_clients:
        raise ShapeError(f"got {len(entity_matrices)} entity matrices for {registry.n_clients} clients")
    W = weights if weights is not None else compute_weights(strategy, registry, entity_matrices, reduce)
    G = stack_global([registry.pad(c, E) for c, E in enumerate(entity_matrices)])
    K = residual_combine(aggregate(W, G, registry.existence), G, p)
    return extract_all(K, registry), W
