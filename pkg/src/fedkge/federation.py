"""Round loop: client selection, server aggregation, local training, early stopping."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregation import server_update
from .config import TrainingConfig
from .errors import EvaluationError
from .evaluation import MetricReport, evaluate_client, tail_filter, weighted_average, weighted_report
from .kg import FederatedDataset, merge_clients
from .kge import AdamState, EmbeddingStore, TripleIndex, client_update
from .seeding import stream

log = logging.getLogger(__name__)

Evaluator = Callable[[Sequence[EmbeddingStore], Sequence[int], int], dict]


@dataclass
class Checkpoint:
    round: int
    stores: list[EmbeddingStore]
    adams: list[AdamState]
    seed: int
    prev_mrr: float | None = None
    streak: int = 0
    best_mrr: float | None = None

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.round, [s.copy() for s in self.stores], [a.copy() for a in self.adams],
                          self.seed, self.prev_mrr, self.streak, self.best_mrr)


@dataclass
class RoundRecord:
    round: int
    selected: tuple[int, ...]
    client_metrics: dict[int, MetricReport] = field(default_factory=dict)
    weighted_mrr: float | None = None
    seconds: float = 0.0
    losses: dict[int, list[float]] = field(default_factory=dict)
    weights: np.ndarray | None = None

    @property
    def evaluated(self) -> bool:
        return self.weighted_mrr is not None


@dataclass
class RunResult:
    checkpoint: Checkpoint
    final: Checkpoint
    log: list[RoundRecord]
    config: TrainingConfig
    dataset: FederatedDataset
    stopped_early: bool = False

    @property
    def stores(self) -> list[EmbeddingStore]:
        return self.checkpoint.stores


def select_clients(n_clients: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    count = max(1, math.ceil(fraction * n_clients - 1e-9))
    if count >= n_clients:
        return np.arange(n_clients)
    return np.sort(rng.choice(n_clients, size=count, replace=False))


def weighted_mrr(mrrs: Sequence[float], counts: Sequence[float]) -> float:
    return weighted_average(mrrs, counts)


def prepare_dataset(dataset: FederatedDataset, config: TrainingConfig) -> FederatedDataset:
    if config.mode == "collective":
        return FederatedDataset.from_clients([merge_clients(dataset.clients)])
    return dataset


def initial_checkpoint(dataset: FederatedDataset, cfg: TrainingConfig) -> Checkpoint:
    stores, adams = [], []
    for c, kg in enumerate(dataset.clients):
        rng = stream(cfg.seed, "init", client=c)
        stores.append(EmbeddingStore.initialize(kg.n_entities, kg.n_relations, cfg.dim, cfg.scorer,
                                                rng, margin=cfg.margin))
        adams.append(AdamState(lr=cfg.lr))
    return Checkpoint(0, stores, adams, cfg.seed)


def filter_tables(dataset: FederatedDataset) -> list[dict]:
    return [tail_filter([kg.indexed(s) for s in ("train", "valid", "test")]) for kg in dataset.clients]


def default_evaluator(dataset: FederatedDataset, split: str = "valid", raw: bool = False) -> Evaluator:
    tables = None if raw else filter_tables(dataset)

    def evaluate(stores, clients, round_):
        out = {}
        for c in clients:
            triples = dataset.clients[c].indexed(split)
            if len(triples):
                out[c] = evaluate_client(stores[c], triples, None if raw else tables[c])
        return out

    return evaluate


def run(dataset: FederatedDataset, config: TrainingConfig, *, evaluator: Evaluator | None = None,
        on_server_update: Callable | None = None, resume: Checkpoint | None = None) -> RunResult:
    """Train every client for up to ``config.max_rounds`` rounds.

    Returns the stores of the round just before the first drop of a
    ``patience``-long streak of falling validation MRR, or the best evaluated
    round when training runs out of rounds. ``evaluator`` replaces the default
    validation-set evaluation; ``on_server_update(t, supplements, W)`` sees
    every round's aggregation output.
    """
    cfg = config.resolved()
    data = prepare_dataset(dataset, cfg)
    C = data.n_clients
    hp = cfg.local_training()
    evaluate = evaluator or default_evaluator(data, "valid", raw=cfg.raw_eval)
    counts = data.triple_counts()
    train = [kg.indexed("train") for kg in data.clients]
    known = [TripleIndex(train[c], kg.n_entities, kg.n_relations) for c, kg in enumerate(data.clients)]

    state = resume.copy() if resume is not None else initial_checkpoint(data, cfg)
    prev_ckpt = state.copy()
    anchor: Checkpoint | None = None
    best: Checkpoint | None = None
    records: list[RoundRecord] = []
    stopped = False

    for t in range(state.round + 1, cfg.max_rounds + 1):
        started = time.perf_counter()
        selected = select_clients(C, cfg.fraction, stream(cfg.seed, "select", round_=t))
        record = RoundRecord(t, tuple(int(c) for c in selected))
        supplements = [None] * C
        if cfg.federated:
            supplements, W = server_update([s.entity for s in state.stores], data.registry,
                                           cfg.strategy, cfg.mix_coef, cfg.weight_reduce)
            record.weights = W
            if on_server_update is not None:
                on_server_update(t, supplements, W)
        for c in record.selected:
            result = client_update(state.stores[c], train[c], supplements[c], hp, state.adams[c],
                                   stream(cfg.seed, "shuffle", c, t), stream(cfg.seed, "negatives", c, t),
                                   known[c])
            record.losses[c] = result.epoch_losses
        state.round = t

        if t % cfg.eval_every == 0:
            reports = evaluate(state.stores, record.selected, t)
            if reports:
                record.client_metrics = dict(reports)
                ids = sorted(reports)
                mrr = weighted_mrr([reports[c].mrr for c in ids], counts[ids])
                record.weighted_mrr = mrr
                if state.prev_mrr is not None and mrr < state.prev_mrr:
                    if state.streak == 0:
                        anchor = prev_ckpt
                    state.streak += 1
                else:
                    state.streak = 0
                    anchor = None
                state.prev_mrr = mrr
                improved = state.best_mrr is None or mrr > state.best_mrr
                if improved:
                    state.best_mrr = mrr
                snapshot = state.copy()
                if improved:
                    best = snapshot
                prev_ckpt = snapshot
        record.seconds = time.perf_counter() - started
        records.append(record)
        log.info("round %d done in %.2fs%s", t, record.seconds,
                 f", weighted MRR {record.weighted_mrr:.4f}" if record.evaluated else "")
        if state.streak >= cfg.patience:
            stopped = True
            break

    final = state.copy()
    if stopped:
        chosen = anchor
    elif best is not None:
        chosen = best
    else:
        chosen = final
    return RunResult(chosen, final, records, cfg, data, stopped)


def evaluate_stores(dataset: FederatedDataset, stores: Sequence[EmbeddingStore], split: str = "test",
                    raw: bool = False) -> tuple[dict[int, MetricReport], MetricReport]:
    """Per-client reports on ``split`` plus their triple-count-weighted aggregate."""
    evaluate = default_evaluator(dataset, split, raw)
    reports = evaluate(stores, range(dataset.n_clients), 0)
    if not reports:
        raise EvaluationError(f"no client has triples in split {split!r}")
    counts = dataset.triple_counts()
    ids = sorted(reports)
    return reports, weighted_report([reports[c] for c in ids], counts[ids])
