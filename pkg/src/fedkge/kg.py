"""Federated knowledge-graph data model.

Clients hold string triples split into train/valid/test. The server side keeps
a sorted global entity vocabulary, a client-by-entity existence matrix and,
per client, an index map from local entity rows to global entity rows. The
index map plays the role of a permutation matrix without ever materialising
one: padding is a scatter and extraction is a gather.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError, InvalidInputError, ShapeError

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str

    def __post_init__(self):
        for name in ("head", "relation", "tail"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise InvalidInputError(f"triple {name} must be a nonempty string, got {value!r}")

    def as_tsv(self) -> str:
        return f"{self.head}\t{self.relation}\t{self.tail}"


@dataclass(frozen=True)
class ClientKG:
    client_id: int
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    train: tuple[Triple, ...] = ()
    valid: tuple[Triple, ...] = ()
    test: tuple[Triple, ...] = ()

    def __post_init__(self):
        for name in ("entities", "relations", *SPLITS):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(set(self.relations)) != len(self.relations):
            raise InvalidInputError(f"client {self.client_id}: duplicate relation in vocabulary")
        ents = set(self.entities)
        rels = set(self.relations)
        for split in SPLITS:
            for t in getattr(self, split):
                if t.head not in ents or t.tail not in ents:
                    raise InvalidInputError(
                        f"client {self.client_id}: {split} triple {t.as_tsv()!r} uses an entity outside the vocabulary"
                    )
                if t.relation not in rels:
                    raise InvalidInputError(
                        f"client {self.client_id}: {split} triple {t.as_tsv()!r} uses an unknown relation"
                    )
        seen = {s: set(getattr(self, s)) for s in SPLITS}
        for a, b in (("train", "valid"), ("train", "test"), ("valid", "test")):
            common = seen[a] & seen[b]
            if common:
                example = next(iter(sorted(common, key=Triple.as_tsv)))
                raise InvalidInputError(
                    f"client {self.client_id}: {a} and {b} share triple {example.as_tsv()!r}"
                )

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    @cached_property
    def entity_index(self) -> dict[str, int]:
        return {e: i for i, e in enumerate(self.entities)}

    @cached_property
    def relation_index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.relations)}

    def indexed(self, split: str) -> np.ndarray:
        """Return ``split`` as an ``(n, 3)`` int64 array of local (h, r, t) ids."""
        return self._indexed[split]

    @cached_property
    def _indexed(self) -> dict[str, np.ndarray]:
        out = {}
        for split in SPLITS:
            rows = [
                (self.entity_index[t.head], self.relation_index[t.relation], self.entity_index[t.tail])
                for t in getattr(self, split)
            ]
            arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
            arr.flags.writeable = False
            out[split] = arr
        return out

    def vocab_hash(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.entities).encode())
        h.update(b"\x00")
        h.update("\n".join(self.relations).encode())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class GlobalRegistry:
    global_entities: tuple[str, ...]
    existence: np.ndarray
    perm_maps: tuple[np.ndarray, ...]

    @property
    def n_clients(self) -> int:
        return self.existence.shape[0]

    @property
    def n_global(self) -> int:
        return len(self.global_entities)

    def shared_counts(self) -> np.ndarray:
        """C x C matrix of shared-entity counts; the diagonal holds n_c."""
        return self.existence @ self.existence.T

    def pad(self, client: int, local: np.ndarray) -> np.ndarray:
        return pad_to_global(local, self.perm_maps[client], self.n_global)

    def extract(self, client: int, padded: np.ndarray) -> np.ndarray:
        return extract_from_global(padded, self.perm_maps[client], self.n_global)


@dataclass(frozen=True)
class FederatedDataset:
    clients: tuple[ClientKG, ...]
    registry: GlobalRegistry = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "clients", tuple(self.clients))
        if not self.clients:
            raise InvalidInputError("a federated dataset needs at least one client")

    @classmethod
    def from_clients(cls, clients: Sequence[ClientKG]) -> "FederatedDataset":
        return cls(tuple(clients), build_registry(clients))

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def triple_counts(self) -> np.ndarray:
        return np.array([c.n_triples for c in self.clients], dtype=np.int64)


def build_registry(clients: Sequence[ClientKG]) -> GlobalRegistry:
    if not clients:
        raise InvalidInputError("cannot build a registry without clients")
    for c in clients:
        if len(set(c.entities)) != len(c.entities):
            dupes = sorted({e for e in c.entities if c.entities.count(e) > 1})
            raise InvalidInputError(f"client {c.client_id}: duplicate entity names {dupes[:5]}")
    names = sorted(set().union(*(c.entities for c in clients)))
    position = {e: j for j, e in enumerate(names)}
    existence = np.zeros((len(clients), len(names)), dtype=np.float64)
    maps = []
    for row, c in enumerate(clients):
        idx = np.array([position[e] for e in c.entities], dtype=np.int64)
        existence[row, idx] = 1.0
        idx.flags.writeable = False
        maps.append(idx)
    existence.flags.writeable = False
    return GlobalRegistry(tuple(names), existence, tuple(maps))


def pad_to_global(local: np.ndarray, perm_map: np.ndarray, n_global: int) -> np.ndarray:
    """Scatter local rows into an ``n_global x m`` zero matrix."""
    local = np.asarray(local)
    if local.ndim != 2 or local.shape[0] != len(perm_map):
        raise ShapeError(f"local matrix has shape {local.shape}, expected ({len(perm_map)}, m)")
    out = np.zeros((n_global, local.shape[1]), dtype=local.dtype)
    out[perm_map] = local
    return out


def extract_from_global(padded: np.ndarray, perm_map: np.ndarray, n_global: int | None = None) -> np.ndarray:
    padded = np.asarray(padded)
    if padded.ndim != 2:
        raise ShapeError(f"padded matrix must be 2-D, got shape {padded.shape}")
    if n_global is not None and padded.shape[0] != n_global:
        raise ShapeError(f"padded matrix has {padded.shape[0]} rows, expected {n_global}")
    if len(perm_map) and perm_map.max() >= padded.shape[0]:
        raise ShapeError("index map points past the padded matrix")
    return padded[perm_map].copy()


def _parse_tsv(path: Path) -> list[tuple[int, Triple]]:
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise DatasetError(path, lineno, "expected head<TAB>relation<TAB>tail")
            triples.append((lineno, Triple(*parts)))
    return triples


def load_dataset(path) -> FederatedDataset:
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(root, None, "dataset directory does not exist")
    dirs = {}
    for d in root.iterdir():
        if d.is_dir() and d.name.startswith("client_"):
            try:
                dirs[int(d.name[len("client_"):])] = d
            except ValueError:
                raise DatasetError(d, None, "client directory suffix must be an integer") from None
    if not dirs:
        raise DatasetError(root, None, "no client_<c> directories found")
    if sorted(dirs) != list(range(len(dirs))):
        raise DatasetError(root, None, f"client indices must be 0..C-1, found {sorted(dirs)}")

    clients = []
    for cid in range(len(dirs)):
        numbered = {}
        for split in SPLITS:
            f = dirs[cid] / f"{split}.tsv"
            if not f.is_file():
                raise DatasetError(f, None, "missing split file")
            numbered[split] = _parse_tsv(f)
        splits = {s: [t for _, t in rows] for s, rows in numbered.items()}
        ents = sorted({x for t in splits["train"] for x in (t.head, t.tail)})
        rels = sorted({t.relation for t in splits["train"]})
        ent_set, rel_set = set(ents), set(rels)
        earlier = set(splits["train"])
        for split in ("valid", "test"):
            f = dirs[cid] / f"{split}.tsv"
            for lineno, t in numbered[split]:
                for name in (t.head, t.tail):
                    if name not in ent_set:
                        raise DatasetError(f, lineno, f"entity {name!r} does not occur in train.tsv")
                if t.relation not in rel_set:
                    raise DatasetError(f, lineno, f"relation {t.relation!r} does not occur in train.tsv")
                if t in earlier:
                    raise DatasetError(f, lineno, "triple also appears in an earlier split")
            earlier |= set(splits[split])
        clients.append(ClientKG(cid, tuple(ents), tuple(rels), *(tuple(splits[s]) for s in SPLITS)))
    return FederatedDataset.from_clients(clients)


def save_dataset(dataset: FederatedDataset, path) -> None:
    root = Path(path)
    for c in dataset.clients:
        d = root / f"client_{c.client_id}"
        d.mkdir(parents=True, exist_ok=True)
        for split in SPLITS:
            with open(d / f"{split}.tsv", "w", encoding="utf-8", newline="\n") as fh:
                for t in getattr(c, split):
                    fh.write(t.as_tsv() + "\n")


def merge_clients(clients: Iterable[ClientKG]) -> ClientKG:
    """Union of all clients as one KG; a triple keeps its earliest split."""
    clients = list(clients)
    seen: set[Triple] = set()
    merged = {}
    for split in SPLITS:
        out = []
        for c in clients:
            for t in getattr(c, split):
                if t not in seen:
                    seen.add(t)
                    out.append(t)
        merged[split] = tuple(out)
    ents = sorted(set().union(*(c.entities for c in clients)))
    rels = sorted(set().union(*(c.relations for c in clients)))
    return ClientKG(0, tuple(ents), tuple(rels), merged["train"], merged["valid"], merged["test"])
