"""On-disk checkpoints: one ``client_<c>.npz`` per client plus ``manifest.txt``."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import TrainingConfig, config_hash
from .errors import CheckpointError
from .federation import Checkpoint
from .kg import FederatedDataset
from .kge import AdamState, EmbeddingStore

MANIFEST = "manifest.txt"


def _opt(value):
    return "none" if value is None else repr(float(value))


def save_checkpoint(ckpt: Checkpoint, dataset: FederatedDataset, config: TrainingConfig, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if len(ckpt.stores) != dataset.n_clients:
        raise CheckpointError(f"checkpoint has {len(ckpt.stores)} stores, dataset {dataset.n_clients} clients")
    for c, (store, adam) in enumerate(zip(ckpt.stores, ckpt.adams)):
        arrays = {"entity": store.entity, "relation": store.relation, "adam_step": np.array(adam.step)}
        for name, arr in adam.first.items():
            arrays[f"first_{name}"] = arr
        for name, arr in adam.second.items():
            arrays[f"second_{name}"] = arr
        np.savez(path / f"client_{c}.npz", **arrays)
    lines = [
        f"round={ckpt.round}",
        f"seed={ckpt.seed}",
        f"config_hash={config_hash(config)}",
        f"scorer={store.scorer}",
        f"dim={store.dim}",
        f"mode={config.mode}",
        f"n_clients={dataset.n_clients}",
        f"prev_mrr={_opt(ckpt.prev_mrr)}",
        f"streak={ckpt.streak}",
        f"best_mrr={_opt(ckpt.best_mrr)}",
    ]
    lines += [f"vocab_{c}={kg.vocab_hash()}" for c, kg in enumerate(dataset.clients)]
    (path / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict[str, str]:
    file = Path(path) / MANIFEST
    if not file.is_file():
        raise CheckpointError(f"no checkpoint manifest at {file}")
    out = {}
    for line in file.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key] = value
    return out


def load_checkpoint(path, dataset: FederatedDataset, lr: float = 1e-3) -> Checkpoint:
    """Load a checkpoint, refusing it when the dataset's vocabularies differ."""
    path = Path(path)
    meta = read_manifest(path)
    try:
        n_clients = int(meta["n_clients"])
        scorer = meta["scorer"]
        rnd, seed, streak = int(meta["round"]), int(meta["seed"]), int(meta["streak"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path / MANIFEST}: malformed manifest ({exc})") from None
    if n_clients != dataset.n_clients:
        raise CheckpointError(f"checkpoint has {n_clients} clients but the dataset has {dataset.n_clients}")
    for c, kg in enumerate(dataset.clients):
        if meta.get(f"vocab_{c}") != kg.vocab_hash():
            raise CheckpointError(f"vocabulary of client {c} does not match the checkpoint; wrong dataset?")

    stores, adams = [], []
    for c in range(n_clients):
        file = path / f"client_{c}.npz"
        if not file.is_file():
            raise CheckpointError(f"missing {file}")
        with np.load(file) as data:
            stores.append(EmbeddingStore(data["entity"].copy(), data["relation"].copy(), scorer))
            adam = AdamState(lr=lr, step=int(data["adam_step"]))
            for key in data.files:
                if key.startswith("first_"):
                    adam.first[key[6:]] = data[key].copy()
                elif key.startswith("second_"):
                    adam.second[key[7:]] = data[key].copy()
            adams.append(adam)

    def opt(key):
        value = meta.get(key, "none")
        return None if value == "none" else float(value)

    return Checkpoint(rnd, stores, adams, seed, opt("prev_mrr"), streak, opt("best_mrr"))
