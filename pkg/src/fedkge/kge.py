"""Knowledge-graph embedding: scorers, self-adversarial loss, Adam, local training.

Entity rows have ``dim`` real entries. RotatE and ComplEx read them as
``dim // 2`` complex numbers stored as interleaved (real, imaginary) pairs.
RotatE relations are phase vectors of length ``dim // 2`` so every rotation
has modulus one by construction; TransE and ComplEx relations have ``dim``
real entries.

Gradients are written out by hand and checked against finite differences in
the test suite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, SamplingError, ShapeError

log = logging.getLogger(__name__)

SCORERS = ("TransE", "RotatE", "ComplEx")


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def _pairs(x):
    return x.reshape(*x.shape[:-1], x.shape[-1] // 2, 2)


class TransE:
    name = "TransE"

    @staticmethod
    def relation_width(dim):
        return dim

    @staticmethod
    def score(h, r, t):
        return -np.abs(h + r - t).sum(axis=-1)

    @staticmethod
    def forward(h, r, t):
        diff = h + r - t
        return -np.abs(diff).sum(axis=-1), np.sign(diff)

    @staticmethod
    def backward(cache, up):
        # up: dL/ds with the broadcast shape of the score
        g = cache * -up[..., None]
        return g, g, -g

    @classmethod
    def grad(cls, h, r, t, up):
        return cls.backward(cls.forward(h, r, t)[1], up)


class RotatE:
    name = "RotatE"

    @staticmethod
    def relation_width(dim):
        return dim // 2

    @staticmethod
    def forward(h, r, t):
        hp, tp = _pairs(h), _pairs(t)
        a, b = hp[..., 0], hp[..., 1]
        cos, sin = np.cos(r), np.sin(r)
        x = a * cos - b * sin
        y = a * sin + b * cos
        dx, dy = x - tp[..., 0], y - tp[..., 1]
        rho = np.hypot(dx, dy)
        return -rho.sum(axis=-1), (cos, sin, x, y, dx, dy, rho)

    @classmethod
    def score(cls, h, r, t):
        return cls.forward(h, r, t)[0]

    @staticmethod
    def backward(cache, up):
        cos, sin, x, y, dx, dy, rho = cache
        safe = np.where(rho > 0, rho, 1.0)
        scale = np.where(rho > 0, -up[..., None] / safe, 0.0)
        gdx, gdy = scale * dx, scale * dy
        gh = np.stack([gdx * cos + gdy * sin, gdy * cos - gdx * sin], axis=-1)
        gr = gdy * x - gdx * y
        gt = np.stack([-gdx, -gdy], axis=-1)
        return gh.reshape(*gh.shape[:-2], -1), gr, gt.reshape(*gt.shape[:-2], -1)

    @classmethod
    def grad(cls, h, r, t, up):
        return cls.backward(cls.forward(h, r, t)[1], up)


class ComplEx:
    name = "ComplEx"

    @staticmethod
    def relation_width(dim):
        return dim

    @staticmethod
    def forward(h, r, t):
        hp, rp, tp = _pairs(h), _pairs(r), _pairs(t)
        a, b = hp[..., 0], hp[..., 1]
        p, q = rp[..., 0], rp[..., 1]
        c, d = tp[..., 0], tp[..., 1]
        re, im = a * p - b * q, a * q + b * p
        return (re * c + im * d).sum(axis=-1), (a, b, p, q, c, d, re, im)

    @classmethod
    def score(cls, h, r, t):
        return cls.forward(h, r, t)[0]

    @staticmethod
    def backward(cache, up):
        a, b, p, q, c, d, re, im = cache
        u = up[..., None]
        gh = np.stack([(p * c + q * d) * u, (p * d - q * c) * u], axis=-1)
        gr = np.stack([(a * c + b * d) * u, (a * d - b * c) * u], axis=-1)
        gt = np.stack([re * u, im * u], axis=-1)
        return tuple(g.reshape(*g.shape[:-2], -1) for g in (gh, gr, gt))

    @classmethod
    def grad(cls, h, r, t, up):
        return cls.backward(cls.forward(h, r, t)[1], up)


_SCORER_CLASSES = {cls.name: cls for cls in (TransE, RotatE, ComplEx)}


def get_scorer(name: str):
    try:
        return _SCORER_CLASSES[name]
    except KeyError:
        raise ConfigError(f"unknown scorer {name!r}; choose from {', '.join(SCORERS)}") from None


def score(scorer: str, h, r, t):
    """Plausibility of ``(h, r, t)``; higher is more plausible."""
    return get_scorer(scorer).score(np.asarray(h, float), np.asarray(r, float), np.asarray(t, float))


@dataclass
class EmbeddingStore:
    entity: np.ndarray
    relation: np.ndarray
    scorer: str

    def __post_init__(self):
        cls = get_scorer(self.scorer)
        dim = self.entity.shape[1]
        if self.scorer in ("RotatE", "ComplEx") and dim % 2:
            raise ConfigError(f"{self.scorer} needs an even embedding dimension, got {dim}")
        if self.relation.shape[1] != cls.relation_width(dim):
            raise ShapeError(
                f"{self.scorer} relation width must be {cls.relation_width(dim)}, got {self.relation.shape[1]}"
            )

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    @classmethod
    def initialize(cls, n_entities, n_relations, dim, scorer, rng, margin=10.0):
        if scorer in ("RotatE", "ComplEx") and dim % 2:
            raise ConfigError(f"{scorer} needs an even embedding dimension, got {dim}")
        bound = (margin + 2.0) / dim
        entity = rng.uniform(-bound, bound, size=(n_entities, dim))
        width = get_scorer(scorer).relation_width(dim)
        if scorer == "RotatE":
            relation = rng.uniform(-np.pi, np.pi, size=(n_relations, width))
        else:
            relation = rng.uniform(-bound, bound, size=(n_relations, width))
        return cls(entity, relation, scorer)

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.entity.copy(), self.relation.copy(), self.scorer)

    def params(self) -> dict[str, np.ndarray]:
        return {"entity": self.entity, "relation": self.relation}


@dataclass
class NegativeBatch:
    """Positives ``(B, 3)`` and their corrupted tails (and optionally heads) ``(B, k)``.

    ``neg_heads`` is None when only tails are corrupted; the positive head is
    then broadcast across the k negatives.
    """

    positives: np.ndarray
    neg_tails: np.ndarray
    neg_heads: np.ndarray | None = None
    temperature: float = 1.0
    margin: float = 10.0

    def __post_init__(self):
        if self.neg_tails.ndim != 2 or self.neg_tails.shape[1] < 1:
            raise ShapeError("a negative batch needs k >= 1 negatives per positive")


class TripleIndex:
    """Fast membership tests for (h, r, t) id triples of one client."""

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.codes = np.unique(self.encode(np.asarray(triples).reshape(-1, 3)))

    def encode(self, triples):
        h, r, t = triples[..., 0], triples[..., 1], triples[..., 2]
        return (h * self.n_relations + r) * self.n_entities + t

    def contains(self, h, r, t) -> np.ndarray:
        code = (np.asarray(h) * self.n_relations + np.asarray(r)) * self.n_entities + np.asarray(t)
        pos = np.searchsorted(self.codes, code)
        pos = np.minimum(pos, len(self.codes) - 1)
        return self.codes[pos] == code if len(self.codes) else np.zeros(np.shape(code), bool)


def sample_negatives(positives, k, rng, n_entities, known: TripleIndex | None = None,
                     corrupt_head=False, temperature=1.0, margin=10.0, max_tries=100) -> NegativeBatch:
    """Draw ``k`` corrupted triples per positive, uniformly over the local entities.

    Corruptions that are themselves known training triples are redrawn, so the
    positive never shows up among its own negatives.
    """
    pos = np.asarray(positives, dtype=np.int64).reshape(-1, 3)
    if k < 1:
        raise ConfigError("number of negatives must be >= 1")
    if n_entities < 2:
        raise SamplingError("cannot corrupt a triple on a client with a single entity")
    B = len(pos)
    h = np.broadcast_to(pos[:, :1], (B, k)).copy()
    r = np.broadcast_to(pos[:, 1:2], (B, k))
    t = rng.integers(0, n_entities, size=(B, k))
    flip = rng.random((B, k)) < 0.5 if corrupt_head else np.zeros((B, k), bool)
    t[flip] = pos[:, 2:3].repeat(k, axis=1)[flip]
    h[flip] = rng.integers(0, n_entities, size=int(flip.sum()))

    def bad(hh, tt):
        clash = (hh == pos[:, :1]) & (tt == pos[:, 2:3])
        if known is not None:
            clash |= known.contains(hh, r, tt)
        return clash

    mask = bad(h, t)
    tries = 0
    while mask.any():
        tries += 1
        if tries > max_tries:
            raise SamplingError("could not draw enough negatives; every candidate is a known triple")
        redraw = rng.integers(0, n_entities, size=int(mask.sum()))
        head_slot = mask & flip
        tail_slot = mask & ~flip
        fill = np.empty((B, k), dtype=np.int64)
        fill[mask] = redraw
        h[head_slot] = fill[head_slot]
        t[tail_slot] = fill[tail_slot]
        mask = bad(h, t)
    return NegativeBatch(pos, t, h if corrupt_head else None, temperature, margin)


def _scatter_rows(shape, index, values):
    """Sum ``values`` rows into a zero matrix at ``index``, in input order."""
    n, m = shape
    flat = (index[:, None] * m + np.arange(m)).ravel()
    return np.bincount(flat, weights=values.ravel(), minlength=n * m).reshape(n, m)


def frobenius_distance(E, K) -> float:
    return float(np.sqrt(np.sum((E - K) ** 2)))


def adversarial_weights(neg_scores, temperature):
    z = temperature * neg_scores
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def loss_and_grad(store: EmbeddingStore, batch: NegativeBatch, K=None, beta=0.0,
                  detach_weights=False) -> tuple[float, dict[str, np.ndarray]]:
    """Mean self-adversarial loss over the batch plus ``beta * ||E - K||_F``.

    Per positive the loss is
    ``-log sig(margin + s_pos) - sum_i p_i log sig(-s_neg_i - margin)`` with
    ``p = softmax(temperature * s_neg)``. By default the gradient flows
    through ``p`` as well; ``detach_weights=True`` treats ``p`` as constant.
    """
    if beta < 0:
        raise ConfigError(f"regularization coefficient must be >= 0, got {beta}")
    sc = get_scorer(store.scorer)
    E, R = store.entity, store.relation
    pos = batch.positives
    B, k = batch.neg_tails.shape
    gamma, alpha = batch.margin, batch.temperature

    hp, rp, tp = E[pos[:, 0]], R[pos[:, 1]], E[pos[:, 2]]
    s_pos, pos_cache = sc.forward(hp, rp, tp)
    hn = hp[:, None, :] if batch.neg_heads is None else E[batch.neg_heads]
    rn = rp[:, None, :]
    tn = E[batch.neg_tails]
    s_neg, neg_cache = sc.forward(hn, rn, tn)

    p = adversarial_weights(s_neg, alpha)
    neg_terms = np.logaddexp(0.0, s_neg + gamma)  # -log sig(-s - gamma)
    weighted = (p * neg_terms).sum(axis=1)
    per_triple = np.logaddexp(0.0, -(gamma + s_pos)) + weighted
    loss = float(per_triple.mean())

    d_pos = -_sigmoid(-(gamma + s_pos)) / B
    d_neg = p * _sigmoid(s_neg + gamma)
    if not detach_weights:
        d_neg = d_neg + alpha * p * (neg_terms - weighted[:, None])
    d_neg = d_neg / B

    gh_p, gr_p, gt_p = sc.backward(pos_cache, d_pos)
    gh_n, gr_n, gt_n = sc.backward(neg_cache, d_neg)
    width = E.shape[1]
    if batch.neg_heads is None:
        ent_idx = [pos[:, 0], pos[:, 2], batch.neg_tails.ravel()]
        ent_val = [gh_p + gh_n.sum(axis=1), gt_p, gt_n.reshape(-1, width)]
    else:
        ent_idx = [pos[:, 0], pos[:, 2], batch.neg_heads.ravel(), batch.neg_tails.ravel()]
        ent_val = [gh_p, gt_p, gh_n.reshape(-1, width), gt_n.reshape(-1, width)]
    gE = _scatter_rows(E.shape, np.concatenate(ent_idx), np.concatenate(ent_val))
    gr_n = gr_n.sum(axis=1) if gr_n.shape[1] == k else gr_n[:, 0] * k
    gR = _scatter_rows(R.shape, pos[:, 1], gr_p + gr_n)

    if K is not None:
        if K.shape != E.shape:
            raise ShapeError(f"supplementary matrix shape {K.shape} != entity matrix shape {E.shape}")
        if beta > 0:
            diff = E - K
            D = float(np.sqrt(np.sum(diff * diff)))
            loss += beta * D
            if D > 0:
                gE += (beta / D) * diff
    return loss, {"entity": gE, "relation": gR}


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: v.copy() for k, v in self.first.items()},
                         {k: v.copy() for k, v in self.second.items()})


def adam_step(store: EmbeddingStore, state: AdamState, grads: dict[str, np.ndarray]) -> EmbeddingStore:
    params = store.params()
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for '{name}' has shape {g.shape}, expected {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(name)
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        if name not in state.first:
            state.first[name] = np.zeros_like(params[name])
            state.second[name] = np.zeros_like(params[name])
        m, v = state.first[name], state.second[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return store


@dataclass
class LocalTraining:
    """Hyperparameters of one client's local update."""

    epochs: int = 3
    batch_size: int = 512
    lr: float = 1e-3
    reg_coef: float = 3e-3
    margin: float = 10.0
    adv_temperature: float = 1.0
    num_negatives: int = 256
    corrupt_head: bool = False
    detach_weights: bool = False
    init_from_supplement: bool = True
    regularize: bool = True
    reg_per_epoch: bool = False  # spread one distance term over the epoch's batches


@dataclass
class UpdateResult:
    store: EmbeddingStore
    epoch_losses: list[float]
    skipped: bool = False


def client_update(store: EmbeddingStore, train: np.ndarray, K, hp: LocalTraining,
                  adam: AdamState, shuffle_rng, negative_rng, known: TripleIndex | None = None) -> UpdateResult:
    """Run the local epochs of one round, mutating ``store`` and ``adam``.

    ``K`` is the supplementary matrix received this round, or None when the
    client trains in isolation.
    """
    if K is not None and hp.init_from_supplement:
        if K.shape != store.entity.shape:
            raise ShapeError(f"supplementary matrix shape {K.shape} != {store.entity.shape}")
        store.entity[...] = K
    train = np.asarray(train).reshape(-1, 3)
    if len(train) == 0:
        log.warning("client has no training triples; skipping local update")
        return UpdateResult(store, [], skipped=True)
    beta = hp.reg_coef if (K is not None and hp.regularize) else 0.0
    if hp.reg_per_epoch:
        beta /= -(-len(train) // hp.batch_size)
    n_entities = store.entity.shape[0]
    losses = []
    for _ in range(hp.epochs):
        order = shuffle_rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(train), hp.batch_size):
            pos = train[order[start:start + hp.batch_size]]
            batch = sample_negatives(pos, hp.num_negatives, negative_rng, n_entities, known,
                                     corrupt_head=hp.corrupt_head, temperature=hp.adv_temperature,
                                     margin=hp.margin)
            loss, grads = loss_and_grad(store, batch, K, beta, detach_weights=hp.detach_weights)
            adam_step(store, adam, grads)
            total += loss * len(pos)
        losses.append(total / len(train))
    return UpdateResult(store, losses)
