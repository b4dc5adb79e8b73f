"""Tail-prediction link evaluation with filtered ranking, MRR and Hits@N."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EvaluationError
from .kge import EmbeddingStore, get_scorer

HITS_AT = (1, 5, 10)


@dataclass(frozen=True)
class RankResult:
    query: tuple[int, int, int]
    rank: int
    n_candidates: int


@dataclass(frozen=True)
class MetricReport:
    mrr: float
    hits1: float
    hits5: float
    hits10: float
    count: int

    def as_dict(self) -> dict[str, float]:
        return {"mrr": self.mrr, "hits1": self.hits1, "hits5": self.hits5,
                "hits10": self.hits10, "count": self.count}


def metrics(ranks: Sequence[int]) -> MetricReport:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EvaluationError("cannot compute metrics over an empty rank list")
    if np.any(ranks < 1):
        raise EvaluationError("ranks must be >= 1")
    hits = [float(np.mean(ranks <= n)) for n in HITS_AT]
    return MetricReport(float(np.mean(1.0 / ranks)), *hits, int(ranks.size))


def tail_filter(triples: Iterable[np.ndarray]) -> dict[tuple[int, int], np.ndarray]:
    """Map ``(h, r)`` to the array of all tails known to be true."""
    table = defaultdict(set)
    for arr in triples:
        for h, r, t in np.asarray(arr).reshape(-1, 3):
            table[(int(h), int(r))].add(int(t))
    return {key: np.fromiter(sorted(v), dtype=np.int64) for key, v in table.items()}


def rank_from_scores(scores: np.ndarray, true_tail: int, filtered: np.ndarray | None = None) -> int:
    """Rank of ``true_tail`` among ``scores``; ties count as half above, rounded up."""
    s = np.array(scores, dtype=np.float64)
    if not 0 <= true_tail < len(s):
        raise EvaluationError(f"true tail {true_tail} is not among the {len(s)} candidates")
    target = s[true_tail]
    if filtered is not None and len(filtered):
        s[filtered] = -np.inf
        s[true_tail] = target
    higher = int(np.sum(s > target))
    ties = int(np.sum(s == target)) - 1
    return 1 + higher + (ties + 1) // 2


def _candidate_scores(store: EmbeddingStore, heads, rels, chunk=128):
    sc = get_scorer(store.scorer)
    E, R = store.entity, store.relation
    out = np.empty((len(heads), E.shape[0]))
    for start in range(0, len(heads), chunk):
        sl = slice(start, start + chunk)
        out[sl] = sc.score(E[heads[sl]][:, None, :], R[rels[sl]][:, None, :], E[None, :, :])
    return out


def rank_tail(store: EmbeddingStore, head: int, relation: int, true_tail: int,
              filter_table: dict | None = None) -> RankResult:
    n = store.entity.shape[0]
    if not 0 <= true_tail < n:
        raise EvaluationError(f"query ({head}, {relation}, {true_tail}): true tail not among candidates")
    scores = _candidate_scores(store, np.array([head]), np.array([relation]))[0]
    filtered = None if filter_table is None else filter_table.get((head, relation))
    return RankResult((head, relation, true_tail), rank_from_scores(scores, true_tail, filtered), n)


def rank_split(store: EmbeddingStore, triples: np.ndarray, filter_table: dict | None = None) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = store.entity.shape[0]
    if len(triples) and (triples[:, 2].max() >= n or triples[:, 2].min() < 0):
        bad = triples[(triples[:, 2] >= n) | (triples[:, 2] < 0)][0]
        raise EvaluationError(f"query {tuple(int(x) for x in bad)}: true tail not among candidates")
    scores = _candidate_scores(store, triples[:, 0], triples[:, 1])
    ranks = np.empty(len(triples), dtype=np.int64)
    for i, (h, r, t) in enumerate(triples):
        filtered = None if filter_table is None else filter_table.get((int(h), int(r)))
        ranks[i] = rank_from_scores(scores[i], int(t), filtered)
    return ranks


def evaluate_client(store: EmbeddingStore, triples: np.ndarray, filter_table: dict | None = None) -> MetricReport:
    """Filtered metrics of ``store`` on ``triples``; pass ``filter_table=None`` for raw ranks."""
    if len(triples) == 0:
        raise EvaluationError("cannot evaluate an empty split")
    return metrics(rank_split(store, triples, filter_table))


def weighted_average(values: Sequence[float], counts: Sequence[float]) -> float:
    values = np.asarray(values, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if values.size == 0:
        raise EvaluationError("weighted average over an empty client set is undefined")
    if values.shape != counts.shape or np.any(counts <= 0):
        raise EvaluationError("every evaluated client needs a positive triple count")
    return float(np.sum(counts / counts.sum() * values))


def weighted_report(reports: Sequence[MetricReport], counts: Sequence[float]) -> MetricReport:
    return MetricReport(
        weighted_average([r.mrr for r in reports], counts),
        weighted_average([r.hits1 for r in reports], counts),
        weighted_average([r.hits5 for r in reports], counts),
        weighted_average([r.hits10 for r in reports], counts),
        int(sum(r.count for r in reports)),
    )
