"""Client-to-client affinity weights.

Three strategies produce a raw C x C matrix which ``scale_rows`` turns into a
row-stochastic one:

* ratio: Jaccard overlap of the entity vocabularies, with the self weight set
  to the smallest overlap the client has with anyone else;
* embedding: sum over shared entities of ``exp(cosine)`` between the two
  clients' current vectors, self weight ``exp(-1)``;
* uniform: every entry ``1 / C``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .kg import GlobalRegistry

STRATEGIES = ("ratio", "embedding", "uniform")
SELF_FLOOR = 1e-6
EMBEDDING_SELF_WEIGHT = float(np.exp(-1.0))


def weights_ratio(registry: GlobalRegistry) -> np.ndarray:
    M = np.asarray(registry.existence, dtype=np.float64)
    C = M.shape[0]
    if C == 1:
        return np.ones((1, 1))
    inter = M @ M.T
    sizes = M.sum(axis=1)
    union = sizes[:, None] + sizes[None, :] - inter
    W = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    off = ~np.eye(C, dtype=bool)
    for i in range(C):
        W[i, i] = W[i, off[i]].min()
    return W


def _row_cosines(A, B):
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    denom = na * nb
    dots = np.einsum("ij,ij->i", A, B)
    return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def weights_embedding(n_clients: int, pair_blocks: Mapping[tuple[int, int], tuple[np.ndarray, np.ndarray]],
                      reduce: str = "sum") -> np.ndarray:
    """Raw affinity from shared-entity blocks.

    ``pair_blocks[(i, j)]`` holds ``(E_ij, E_ji)``: the rows of client i and of
    client j for the entities they share, aligned row by row. Missing pairs
    (nothing shared) get weight 0. ``reduce="mean"`` averages instead of
    summing over the shared entities.
    """
    if reduce not in ("sum", "mean"):
        raise ConfigError(f"reduce must be 'sum' or 'mean', got {reduce!r}")
    W = np.zeros((n_clients, n_clients))
    for (i, j), (Eij, Eji) in pair_blocks.items():
        if i == j:
            continue
        Eij, Eji = np.asarray(Eij, float), np.asarray(Eji, float)
        if Eij.shape != Eji.shape:
            raise ShapeError(f"shared blocks for pair ({i}, {j}) differ in shape: {Eij.shape} vs {Eji.shape}")
        if len(Eij) == 0:
            continue
        vals = np.exp(_row_cosines(Eij, Eji))
        W[i, j] = vals.sum() if reduce == "sum" else vals.mean()
    np.fill_diagonal(W, EMBEDDING_SELF_WEIGHT)
    return W


def shared_blocks(registry: GlobalRegistry, entity_matrices: Sequence[np.ndarray]):
    """Build the aligned shared-entity blocks for every ordered client pair."""
    C = registry.n_clients
    local_of = []
    for c in range(C):
        lookup = np.full(registry.n_global, -1, dtype=np.int64)
        lookup[registry.perm_maps[c]] = np.arange(len(registry.perm_maps[c]))
        local_of.append(lookup)
    owned = registry.existence.astype(bool)
    blocks = {}
    for i in range(C):
        for j in range(C):
            if i == j:
                continue
            common = np.flatnonzero(owned[i] & owned[j])
            blocks[(i, j)] = (entity_matrices[i][local_of[i][common]], entity_matrices[j][local_of[j][common]])
    return blocks


def scale_rows(raw: np.ndarray, self_floor: float = SELF_FLOOR) -> np.ndarray:
    """Divide each row by its sum.

    Self weights below ``self_floor`` are raised to it first, so a client that
    shares nothing with some peer still keeps a little of itself; a row that
    sums to zero anyway becomes one-hot on the diagonal.
    """
    W = np.array(raw, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"weight matrix must be square, got {W.shape}")
    if np.any(W < 0):
        raise ConfigError("raw weights must be nonnegative")
    diag = np.diag(W).copy()
    np.fill_diagonal(W, np.maximum(diag, self_floor))
    sums = W.sum(axis=1, keepdims=True)
    zero = sums[:, 0] <= 0
    W[zero] = 0.0
    W[zero, np.flatnonzero(zero)] = 1.0
    sums[zero] = 1.0
    return W / sums


def weights_uniform(n_clients: int) -> np.ndarray:
    if n_clients < 1:
        raise ConfigError("need at least one client")
    return np.full((n_clients, n_clients), 1.0 / n_clients)


def compute_weights(strategy: str, registry: GlobalRegistry, entity_matrices=None, reduce="sum") -> np.ndarray:
    """Row-stochastic weights for ``strategy``."""
    if strategy == "ratio":
        return scale_rows(weights_ratio(registry))
    if strategy == "embedding":
        if entity_matrices is None:
            raise ConfigError("the embedding strategy needs the clients' entity matrices")
        return scale_rows(weights_embedding(registry.n_clients, shared_blocks(registry, entity_matrices), reduce))
    if strategy == "uniform":
        return weights_uniform(registry.n_clients)
    raise ConfigError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
