"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines appear
under "acceptance criteria" at the end of the report. Criteria 5 and 6 train
25 desk-scale models and take roughly a quarter of an hour on one core.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fedkge.aggregation import aggregate, stack_global
from fedkge.cli import main
from fedkge.config import TrainingConfig
from fedkge.evaluation import metrics, rank_from_scores
from fedkge.federation import evaluate_stores, run
from fedkge.kg import ClientKG, build_registry
from fedkge.relation_graph import scale_rows, weights_embedding, weights_ratio
from fedkge.synth import SynthSpec, generate_synthetic
from oracles import brute_force_supplement, check_gradient, random_problem

# desk-scale trend experiment
TREND_DATA = SynthSpec(n_clients=3, n_entities=500, n_relations=20, n_triples=3750, overlap=0.4,
                       latent_dim=8, temperature=0.1, heterogeneity=0.0)
TREND_TRAINING = dict(scorer="TransE", dim=32, max_rounds=150, eval_every=5, lr=0.01, local_epochs=1,
                      batch_size=256, num_negatives=32)
TREND_SEEDS = (1, 2, 3, 4, 5)
TREND_MODES = {
    "PFedEG+": dict(mode="personalized-embedding"),
    "FedEAvg": dict(mode="fedavg"),
    "Single": dict(mode="single"),
    "reg_only": dict(mode="personalized-embedding", ablation="reg_only"),
    "init_only": dict(mode="personalized-embedding", ablation="init_only"),
}
MIN_GAP = 0.005
ABLATION_TIE = 0.002


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    assert ok, line


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    worst = {}
    for scorer in ("TransE", "RotatE", "ComplEx"):
        rng = np.random.default_rng(100)
        worst[scorer] = max(check_gradient(*random_problem(scorer, rng), beta=3e-3) for _ in range(100))
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 30
    detail = ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items())
    record(1, ok, f"{detail}; {elapsed:.1f}s")


def test_criterion_2_aggregation_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        C, N, m = int(rng.integers(1, 5)), int(rng.integers(1, 21)), int(rng.integers(1, 9))
        owners = rng.random((C, N)) < 0.6
        owners[rng.integers(0, C, N), np.arange(N)] = True
        padded = [np.where(owners[c][:, None], rng.normal(size=(N, m)), 0.0) for c in range(C)]
        W = rng.random((C, C))
        W /= W.sum(axis=1, keepdims=True)
        K = aggregate(W, stack_global(padded), owners.astype(float)).reshape(C, N, m)
        worst = max(worst, float(np.max(np.abs(K - brute_force_supplement(W, padded, owners)))))
    elapsed = time.perf_counter() - start
    record(2, worst <= 1e-12 and elapsed < 10, f"max abs diff {worst:.1e} over 200 instances; {elapsed:.1f}s")


def test_criterion_3_fede_reduction():
    start = time.perf_counter()
    ds = generate_synthetic(SynthSpec(n_clients=3, n_entities=60, n_relations=4, n_triples=300), seed=3)
    common = dict(dim=16, local_epochs=1, batch_size=64, num_negatives=8, max_rounds=10, eval_every=5)

    def supplements(**kw):
        seen = []
        run(ds, TrainingConfig(**common, **kw), evaluator=lambda *a: {},
            on_server_update=lambda t, K, W: seen.append([k.copy() for k in K]))
        return seen

    a = supplements(mode="FedEAvg")
    b = supplements(mode="PFedEGStar", strategy="uniform", mix_coef=1.0, reg_coef=0.0, ablation="init_only")
    same = len(a) == len(b) == 10 and all(
        np.array_equal(x, y) for ka, kb in zip(a, b) for x, y in zip(ka, kb))
    elapsed = time.perf_counter() - start
    record(3, same and elapsed < 120, f"supplements bitwise equal for {len(a)} rounds: {same}; {elapsed:.1f}s")


def test_criterion_4_weight_values():
    def reg(*vocabs):
        return build_registry([ClientKG(i, tuple(v), ("r",)) for i, v in enumerate(vocabs)])

    errors = [
        abs(weights_ratio(reg("abc", "bcd"))[0, 1] - 0.5),
        abs(weights_ratio(reg("abc", "abc"))[0, 1] - 1.0),
        abs(weights_ratio(reg("ab", "bc", "cd"))[0, 2] - 0.0),
        abs(weights_ratio(reg("ab", "bc", "cd"))[0, 0] - 0.0),
    ]
    X = np.random.default_rng(4).normal(size=(3, 5))
    We = weights_embedding(2, {(0, 1): (X, X), (1, 0): (X, X)})
    errors += [abs(We[0, 1] - 3 * np.e), abs(We[0, 0] - np.exp(-1)), abs(We[1, 1] - np.exp(-1))]
    rng = np.random.default_rng(44)
    for _ in range(1000):
        n = int(rng.integers(1, 8))
        raw = rng.random((n, n)) * rng.choice([1e-3, 1.0, 1e3])
        raw[rng.random((n, n)) < 0.2] = 0.0
        errors.append(float(np.max(np.abs(scale_rows(raw).sum(axis=1) - 1.0))))
    worst = max(errors)
    record(4, worst <= 1e-12, f"max deviation {worst:.1e} over fixtures and 1000 random matrices")


@pytest.fixture(scope="module")
def trend_runs():
    ds = generate_synthetic(TREND_DATA, seed=0)
    start = time.perf_counter()
    results = {name: [] for name in TREND_MODES}
    reports = []
    for name, overrides in TREND_MODES.items():
        for seed in TREND_SEEDS:
            res = run(ds, TrainingConfig(seed=seed, **TREND_TRAINING, **overrides))
            per_client, overall = evaluate_stores(res.dataset, res.stores, "test")
            results[name].append(overall.mrr)
            reports += [m for r in res.log for m in r.client_metrics.values()] + list(per_client.values())
    return results, reports, time.perf_counter() - start


@pytest.mark.slow
def test_criterion_5_trend(trend_runs):
    results, _, elapsed = trend_runs
    med = {k: float(np.median(v)) for k, v in results.items()}
    gap_top = med["PFedEG+"] - med["FedEAvg"]
    gap_low = med["FedEAvg"] - med["Single"]
    ok = gap_top >= MIN_GAP and gap_low >= MIN_GAP and elapsed < 1800
    record(5, ok, f"median test MRR PFedEG+ {med['PFedEG+']:.4f}, FedEAvg {med['FedEAvg']:.4f}, "
                  f"Single {med['Single']:.4f} (gaps {gap_top:+.4f}, {gap_low:+.4f}); {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_criterion_6_ablation(trend_runs):
    results, _, _ = trend_runs
    med = {k: float(np.median(v)) for k, v in results.items()}
    ok = all(med["PFedEG+"] >= med[v] - ABLATION_TIE for v in ("reg_only", "init_only"))
    record(6, ok, f"median test MRR full {med['PFedEG+']:.4f}, reg_only {med['reg_only']:.4f}, "
                  f"init_only {med['init_only']:.4f}")


def test_criterion_7_early_stop():
    ds = generate_synthetic(SynthSpec(n_clients=3, n_entities=30, n_relations=3, n_triples=120), seed=7)
    cfg = TrainingConfig(dim=8, local_epochs=1, batch_size=32, num_negatives=4, max_rounds=20, eval_every=1,
                         patience=3)
    from fedkge.evaluation import MetricReport

    script = iter([0.1, 0.2, 0.35, 0.3, 0.32, 0.31, 0.3, 0.29, 0.5])

    def evaluate(stores, clients, round_):
        mrr = next(script)
        return {c: MetricReport(mrr, 0.0, 0.0, 0.0, 1) for c in clients}

    res = run(ds, cfg, evaluator=evaluate)
    log = {r.round: r.weighted_mrr for r in res.log if r.evaluated}
    ckpt = res.checkpoint.round
    streak = [log[t] for t in sorted(log) if t > ckpt]
    ok = (res.stopped_early and ckpt == 5 and len(streak) == cfg.patience
          and all(log[ckpt] >= m for m in streak))
    record(7, ok, f"stopped at round {res.log[-1].round}, checkpoint round {ckpt} "
                  f"(MRR {log[ckpt]}) precedes streak {streak}")


def test_criterion_8_metrics(trend_runs_or_small):
    example = abs(metrics([1, 2, 4]).mrr - 0.58333) <= 1e-5 and abs(metrics([1, 2, 4]).mrr - 7 / 12) <= 1e-9
    rng = np.random.default_rng(8)
    filtered_ok = True
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        scores = rng.integers(0, 6, n).astype(float)
        true = int(rng.integers(0, n))
        filt = rng.choice(n, size=int(rng.integers(0, n)), replace=False)
        filtered_ok &= rank_from_scores(scores, true, filt) <= rank_from_scores(scores, true)
    reports = trend_runs_or_small
    mono = all(r.hits1 <= r.hits5 <= r.hits10 for r in reports)
    record(8, example and filtered_ok and mono,
           f"metrics([1,2,4]) ok: {example}; filtered <= raw on 1000 instances: {filtered_ok}; "
           f"Hits monotone on {len(reports)} reports: {mono}")


@pytest.fixture(scope="module")
def trend_runs_or_small(request):
    """Reports from the trend experiment when it ran, else from a small three-mode run."""
    if request.config.getoption("-m") == "not slow":
        ds = generate_synthetic(SynthSpec(n_clients=3, n_entities=60, n_relations=4, n_triples=300), seed=8)
        reports = []
        for mode in ("personalized-embedding", "fedavg", "single"):
            res = run(ds, TrainingConfig(mode=mode, dim=16, local_epochs=1, batch_size=64, num_negatives=8,
                                         max_rounds=10, eval_every=2))
            reports += [m for r in res.log for m in r.client_metrics.values()]
        return reports
    return request.getfixturevalue("trend_runs")[1]


def test_criterion_9_determinism(tmp_path):
    data = tmp_path / "data"
    main(["synth", "--out", str(data), "--entities", "60", "--relations", "4", "--triples", "300", "--seed", "9"])
    flags = ["--set", "dim=16", "--set", "local_epochs=1", "--set", "num_negatives=8", "--rounds", "10"]
    main(["train", "--dataset", str(data), "--out", str(tmp_path / "a"), *flags])
    main(["train", "--config", str(tmp_path / "a" / "manifest.txt"), "--out", str(tmp_path / "b")])
    a = (tmp_path / "a" / "rounds.csv").read_bytes()
    b = (tmp_path / "b" / "rounds.csv").read_bytes()
    record(9, a == b and len(a) > 0, f"rounds.csv byte-identical across manifest reruns: {a == b} ({len(a)} bytes)")
