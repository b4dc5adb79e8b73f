import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedkge.errors import DatasetError, InvalidInputError, ShapeError
from fedkge.kg import (
    ClientKG,
    FederatedDataset,
    Triple,
    build_registry,
    extract_from_global,
    load_dataset,
    merge_clients,
    pad_to_global,
    save_dataset,
)
from fedkge.synth import SynthSpec, generate_synthetic


def client(cid, ents, rels=("r",), train=()):
    return ClientKG(cid, tuple(ents), tuple(rels), tuple(Triple(*t) for t in train))


def test_triple_rejects_empty_fields():
    with pytest.raises(InvalidInputError):
        Triple("a", "", "b")


def test_client_rejects_unknown_entity_and_overlapping_splits():
    with pytest.raises(InvalidInputError):
        client(0, ["a"], train=[("a", "r", "b")])
    t = Triple("a", "r", "b")
    with pytest.raises(InvalidInputError):
        ClientKG(0, ("a", "b"), ("r",), (t,), (t,), ())


def test_indexed_uses_dense_local_ids():
    kg = client(0, ["x", "y", "z"], train=[("z", "r", "x"), ("y", "r", "z")])
    np.testing.assert_array_equal(kg.indexed("train"), [[2, 0, 0], [1, 0, 2]])
    assert kg.indexed("valid").shape == (0, 3)


def test_registry_single_client():
    reg = build_registry([client(0, ["a", "b"])])
    assert reg.n_global == 2
    np.testing.assert_array_equal(reg.existence, [[1, 1]])


def test_registry_two_clients_sorted_union():
    reg = build_registry([client(0, ["a", "b", "c"]), client(1, ["b", "c", "d"])])
    assert reg.global_entities == ("a", "b", "c", "d")
    np.testing.assert_array_equal(reg.existence, [[1, 1, 1, 0], [0, 1, 1, 1]])
    np.testing.assert_array_equal(reg.perm_maps[1], [1, 2, 3])


def test_registry_disjoint_clients():
    reg = build_registry([client(0, ["a"]), client(1, ["b"])])
    assert reg.n_global == 2
    np.testing.assert_array_equal(reg.existence.sum(axis=0), [1, 1])
    assert reg.shared_counts()[0, 1] == 0


def test_registry_rejects_duplicate_entity():
    with pytest.raises(InvalidInputError):
        build_registry([client(0, ["a", "a"])])


vocab = st.lists(st.sampled_from("abcdefghij"), min_size=1, max_size=10, unique=True)


@given(st.lists(vocab, min_size=1, max_size=5))
def test_registry_invariants(vocabs):
    clients = [client(i, sorted(v)) for i, v in enumerate(vocabs)]
    reg = build_registry(clients)
    M = reg.existence
    assert np.all(M.sum(axis=0) >= 1)
    for c, kg in enumerate(clients):
        image = reg.perm_maps[c]
        assert len(set(image.tolist())) == kg.n_entities
        assert set(image.tolist()) == set(np.flatnonzero(M[c]).tolist())
        assert M[c].sum() == kg.n_entities
        assert [reg.global_entities[j] for j in image] == list(kg.entities)


@given(st.lists(vocab, min_size=2, max_size=5), st.randoms())
def test_registry_order_independent(vocabs, rnd):
    clients = [client(i, sorted(v)) for i, v in enumerate(vocabs)]
    order = list(range(len(clients)))
    rnd.shuffle(order)
    a = build_registry(clients)
    b = build_registry([clients[i] for i in order])
    assert a.global_entities == b.global_entities
    np.testing.assert_array_equal(a.existence[order], b.existence)


def test_pad_identity_and_placement():
    E = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(pad_to_global(E, np.arange(3), 3), E)
    np.testing.assert_array_equal(pad_to_global(np.array([[1.0, 2.0]]), np.array([1]), 2), [[0, 0], [1, 2]])
    np.testing.assert_array_equal(pad_to_global(np.zeros((2, 3)), np.array([0, 3]), 4), np.zeros((4, 3)))


def test_extract_inverse_of_pad():
    padded = np.array([[0.0, 0.0], [1.0, 2.0]])
    np.testing.assert_array_equal(extract_from_global(padded, np.array([1])), [[1, 2]])
    np.testing.assert_array_equal(extract_from_global(padded, np.arange(2)), padded)


def test_pad_shape_errors():
    with pytest.raises(ShapeError):
        pad_to_global(np.zeros((2, 2)), np.array([0]), 3)
    with pytest.raises(ShapeError):
        extract_from_global(np.zeros((2, 2)), np.array([0]), n_global=3)


@settings(max_examples=50)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 10_000))
def test_pad_extract_round_trip(n_local, m, seed):
    rng = np.random.default_rng(seed)
    N = n_local + rng.integers(0, 5)
    perm = rng.permutation(N)[:n_local]
    E = rng.standard_normal((n_local, m))
    padded = pad_to_global(E, perm, N)
    back = extract_from_global(padded, perm)
    assert np.array_equal(back, E)
    mask = np.ones(N, bool)
    mask[perm] = False
    assert not padded[mask].any()


def write_split(root, cid, train, valid="", test=""):
    d = root / f"client_{cid}"
    d.mkdir(parents=True)
    (d / "train.tsv").write_text(train, encoding="utf-8")
    (d / "valid.tsv").write_text(valid, encoding="utf-8")
    (d / "test.tsv").write_text(test, encoding="utf-8")


def test_load_dataset_with_empty_split(tmp_path):
    write_split(tmp_path, 0, "a\tr\tb\nb\tr\tc\n", "a\tr\tc\n", "")
    write_split(tmp_path, 1, "c\tq\td\n")
    ds = load_dataset(tmp_path)
    assert ds.n_clients == 2
    assert ds.clients[0].test == ()
    assert ds.registry.global_entities == ("a", "b", "c", "d")


def test_load_rejects_malformed_line(tmp_path):
    write_split(tmp_path, 0, "a\tr\tb\nbroken line\n")
    with pytest.raises(DatasetError) as err:
        load_dataset(tmp_path)
    assert err.value.line == 2 and "train.tsv" in str(err.value)


def test_load_rejects_unseen_entity_in_test(tmp_path):
    write_split(tmp_path, 0, "a\tr\tb\n", "", "\na\tr\tz\n")
    with pytest.raises(DatasetError) as err:
        load_dataset(tmp_path)
    assert err.value.line == 2 and "test.tsv" in str(err.value)


def test_save_load_round_trip(tmp_path):
    ds = generate_synthetic(SynthSpec(n_clients=2, n_entities=20, n_relations=3, n_triples=60), seed=3)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    for a, b in zip(ds.clients, back.clients):
        assert a.train == b.train and a.valid == b.valid and a.test == b.test
        assert a.entities == b.entities


def test_synthetic_is_deterministic():
    spec = SynthSpec(n_clients=2, n_entities=30, n_relations=4, n_triples=100)
    a, b = generate_synthetic(spec, 11), generate_synthetic(spec, 11)
    assert a.clients == b.clients
    assert generate_synthetic(spec, 12).clients != a.clients


def test_synthetic_overlap_zero_shares_nothing():
    ds = generate_synthetic(SynthSpec(n_clients=3, n_entities=30, n_relations=4, n_triples=100, overlap=0.0), 0)
    shared = ds.registry.shared_counts()
    assert np.all(shared[~np.eye(3, dtype=bool)] == 0)


def test_synthetic_overlap_fraction_and_splits():
    spec = SynthSpec(n_clients=3, n_entities=50, n_relations=5, n_triples=1000, overlap=0.4)
    ds = generate_synthetic(spec, 0)
    shared = ds.registry.shared_counts()
    assert shared[0, 1] == 20 and shared[1, 2] == 20
    for kg in ds.clients:
        assert (len(kg.train), len(kg.valid), len(kg.test)) == (800, 100, 100)
        assert len(set(kg.relations) & set(ds.clients[(kg.client_id + 1) % 3].relations)) == 0


def test_merge_clients_dedupes():
    t = ("a", "r", "b")
    a = client(0, ["a", "b"], train=[t])
    b = client(1, ["a", "b", "c"], train=[t, ("b", "r", "c")])
    merged = merge_clients([a, b])
    assert merged.train == (Triple(*t), Triple("b", "r", "c"))
    assert merged.n_entities == build_registry([a, b]).n_global


def test_dataset_needs_a_client():
    with pytest.raises(InvalidInputError):
        FederatedDataset((), None)
