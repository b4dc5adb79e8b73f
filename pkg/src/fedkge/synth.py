"""Synthetic federated KGs drawn from a latent translational model.

Every entity of the federation has a latent vector. Clients are split into
groups (by default one client per group); each group sees its own noisy copy
of the shared vectors, with ``heterogeneity`` setting the noise scale, so
clients of one group agree on shared entities and clients of different groups
agree only approximately. Each client has its own
relation set. A triple ``(h, r, t)`` picks ``h`` and ``r`` uniformly and draws
``t`` with probability proportional to ``exp(-||x_h + v_r - x_t|| / temperature)``.

All clients share one core of ``round(overlap * n_entities)`` entities and own
the rest privately, so any two clients share exactly that fraction of their
vocabularies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .kg import ClientKG, FederatedDataset, Triple
from .seeding import stream


@dataclass(frozen=True)
class SynthSpec:
    n_clients: int = 3
    n_entities: int = 500
    n_relations: int = 20
    n_triples: int = 3750
    overlap: float = 0.4
    latent_dim: int = 8
    heterogeneity: float = 0.0
    relation_scale: float = 1.0
    temperature: float = 0.1
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    groups: tuple[int, ...] | None = None

    def validate(self):
        if self.n_clients < 1:
            raise InvalidInputError("n_clients must be >= 1")
        if self.n_entities < 2 or self.n_relations < 1:
            raise InvalidInputError("need at least 2 entities and 1 relation per client")
        if not 0.0 <= self.overlap <= 1.0:
            raise InvalidInputError("overlap must lie in [0, 1]")
        if self.temperature <= 0 or self.heterogeneity < 0 or self.relation_scale < 0:
            raise InvalidInputError("temperature must be > 0; heterogeneity and relation_scale >= 0")
        if self.groups is not None and len(self.groups) != self.n_clients:
            raise InvalidInputError("groups needs one label per client")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise InvalidInputError("split must be three nonnegative fractions summing to 1")
        n_train = round(self.split[0] * self.n_triples)
        if n_train < self.n_entities:
            raise InvalidInputError(
                f"{n_train} training triples cannot cover {self.n_entities} entities; raise n_triples"
            )
        max_triples = self.n_entities * self.n_relations * (self.n_entities - 1)
        if self.n_triples > max_triples // 4:
            raise InvalidInputError("n_triples too large for the vocabulary; triples must be distinct")

    def split_sizes(self) -> tuple[int, int, int]:
        n_train = round(self.split[0] * self.n_triples)
        n_valid = round(self.split[1] * self.n_triples)
        return n_train, n_valid, self.n_triples - n_train - n_valid


def _sample_tails(x, heads, rel_vecs, temperature, rng):
    # x: (n, d) client latent; heads: (b,); rel_vecs: (b, d)
    query = x[heads] + rel_vecs
    dist = np.linalg.norm(query[:, None, :] - x[None, :, :], axis=-1)
    dist[np.arange(len(heads)), heads] = np.inf
    logits = -(dist - dist.min(axis=1, keepdims=True)) / temperature
    prob = np.exp(logits)
    prob /= prob.sum(axis=1, keepdims=True)
    cdf = np.cumsum(prob, axis=1)
    u = rng.random(len(heads))[:, None]
    return np.minimum((cdf < u).sum(axis=1), x.shape[0] - 1)


def generate_synthetic(spec: SynthSpec, seed: int) -> FederatedDataset:
    spec.validate()
    n, d = spec.n_entities, spec.latent_dim
    n_shared = round(spec.overlap * n)
    n_private = n - n_shared

    base = stream(seed, "synth", client=spec.n_clients, round_=0)
    shared_latent = base.standard_normal((n_shared, d))
    shared_names = [f"s{j:05d}" for j in range(n_shared)]

    clients = []
    groups = spec.groups if spec.groups is not None else tuple(range(spec.n_clients))
    views = {}
    for g in sorted(set(groups)):
        noise = stream(seed, "synth", client=spec.n_clients + 1 + g, round_=0).standard_normal((n_shared, d))
        views[g] = shared_latent + spec.heterogeneity * noise

    for c in range(spec.n_clients):
        rng = stream(seed, "synth", client=c, round_=0)
        names = shared_names + [f"c{c}_e{j:05d}" for j in range(n_private)]
        latent = np.vstack([views[groups[c]], rng.standard_normal((n_private, d))])
        rel_names = [f"c{c}_r{k:03d}" for k in range(spec.n_relations)]
        rel_vecs = spec.relation_scale * rng.standard_normal((spec.n_relations, d))

        # coverage block: every entity appears once as a head, every relation at least once
        cover_heads = rng.permutation(n)
        cover_rels = np.arange(n) % spec.n_relations
        rng.shuffle(cover_rels)
        cover_tails = _sample_tails(latent, cover_heads, rel_vecs[cover_rels], spec.temperature, rng)

        seen = set()
        forced = []
        for h, r, t in zip(cover_heads, cover_rels, cover_tails):
            key = (int(h), int(r), int(t))
            seen.add(key)
            forced.append(key)

        extra = []
        need = spec.n_triples - len(forced)
        while len(extra) < need:
            b = max(64, 2 * (need - len(extra)))
            heads = rng.integers(0, n, size=b)
            rels = rng.integers(0, spec.n_relations, size=b)
            tails = _sample_tails(latent, heads, rel_vecs[rels], spec.temperature, rng)
            for h, r, t in zip(heads, rels, tails):
                key = (int(h), int(r), int(t))
                if key not in seen:
                    seen.add(key)
                    extra.append(key)
                    if len(extra) == need:
                        break

        n_train, n_valid, _ = spec.split_sizes()
        n_fill = n_train - len(forced)
        train = forced + extra[:n_fill]
        train = [train[i] for i in rng.permutation(len(train))]
        valid = extra[n_fill:n_fill + n_valid]
        test = extra[n_fill + n_valid:]

        def to_triples(rows):
            return tuple(Triple(names[h], rel_names[r], names[t]) for h, r, t in rows)

        clients.append(ClientKG(
            c,
            tuple(sorted(names)),
            tuple(rel_names),
            to_triples(train),
            to_triples(valid),
            to_triples(test),
        ))
    return FederatedDataset.from_clients(clients)
