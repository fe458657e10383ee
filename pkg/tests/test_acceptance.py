"""Release gate: the eight guarantees the engine is sold on.

Each test states one guarantee end to end and carries its own tolerance
and, where the guarantee includes a budget, its own wall-clock limit.
Run with -v to get one pass/fail line per guarantee. Everything here
goes through public entry points only; the white-box details live in
the per-module suites.
"""

import dataclasses
import json
import time

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from prepal.acquisition import (
    ACQUISITION_NAMES,
    AcquisitionContext,
    bald_from_samples,
    entropy,
    joint_entropy,
    score_bald,
    score_egl,
    select_batchbald,
    select_coreset,
    top_b,
)
from prepal.cli import main as cli_main
from prepal.dataset import generate_synthetic, save_embeddings, save_manifest
from prepal.evaluation import PHASES, ExperimentGrid, curve, timing_table
from prepal.models import (
    TrainConfig,
    batch_loss,
    flat_parameters,
    init_model,
    loss_gradient,
    predict_proba,
    train_probe,
    training_gradients,
    with_flat_parameters,
)
from prepal.protocol import SessionConfig, run_session
from prepal.service import create_app

from conftest import strip_run_times


@pytest.fixture(scope="module")
def ident_bench():
    # no holdout: this benchmark only audits the acquisition log
    return generate_synthetic(
        seed=77, n=10_000, d=32, num_classes=4, separation=3.5,
        secondary_fraction=0.08, holdout_fraction=0.0, name="ident",
    )


@pytest.fixture(scope="module")
def accuracy_bench():
    return generate_synthetic(
        seed=500, n=10_000, d=32, num_classes=4, separation=3.5,
        secondary_fraction=0.08, holdout_fraction=0.2, name="bench",
    )


# ------------------------------------------------------- protocol identity

def test_probe_protocols_share_identical_acquisition_logs(ident_bench):
    # the cheap-final and expensive-final loops run the same probe on the
    # same frozen features, so their acquisition logs must agree exactly,
    # for every strategy and every seed, within a ten minute budget
    emb, man = ident_bench
    started = time.perf_counter()

    records = []
    for scorer in ACQUISITION_NAMES:
        for seed in range(5):
            for protocol in ("AL_LR", "PRepAL"):
                cfg = SessionConfig(
                    scorer=scorer, protocol=protocol,
                    T=3, b=5, n_init=50, m=8, seed=seed,
                )
                records.append(run_session(emb, man, cfg))

    by_cell = {
        (r.config.scorer, r.config.protocol, r.config.seed): r
        for r in records
    }
    for scorer in ACQUISITION_NAMES:
        for seed in range(5):
            cheap = by_cell[(scorer, "AL_LR", seed)]
            rich = by_cell[(scorer, "PRepAL", seed)]
            assert cheap.initial_indices == rich.initial_indices
            assert len(cheap.iterations) == len(rich.iterations) == 3
            for it_a, it_b in zip(cheap.iterations, rich.iterations):
                assert it_a.acquired == it_b.acquired, (scorer, seed, it_a.t)
                assert it_a.scores == it_b.scores, (scorer, seed, it_a.t)

    rows = curve(ExperimentGrid(records), "jaccard_vs_reference",
                 reference="AL_LR")
    assert rows
    for row in rows:
        assert row.mean == 1.0 and row.std == 0.0, row

    assert time.perf_counter() - started < 600.0


# ----------------------------------------------------------- oracle suite

def greedy_center_oracle(points, labeled, candidates, b):
    """Brute-force farthest-first: scan every candidate each round."""
    chosen = []
    anchors = list(labeled)
    for _ in range(b):
        best_idx, best_dist = None, -1.0
        for cand in candidates:
            if cand in chosen:
                continue
            dist = min(np.linalg.norm(points[cand] - points[a])
                       for a in anchors)
            if dist > best_dist + 1e-12:
                best_idx, best_dist = cand, dist
        chosen.append(best_idx)
        anchors.append(best_idx)
    return chosen


def test_selection_matches_reference_enumeration():
    # four independent checks, each against an implementation so plain
    # it is obviously correct; the whole suite fits in five minutes
    started = time.perf_counter()

    # coverage selection equals exhaustive farthest-first greedy
    rng = np.random.default_rng(23)
    for trial in range(50):
        n = int(rng.integers(8, 51))
        d = int(rng.integers(2, 7))
        b = int(rng.integers(1, 6))
        X = rng.standard_normal((n, d))
        n_lab = int(rng.integers(1, max(2, n - b)))
        labeled = np.sort(rng.choice(n, size=n_lab, replace=False))
        candidates = np.setdiff1d(np.arange(n), labeled)
        b = min(b, int(candidates.size))
        ctx = AcquisitionContext(
            model=None, features=X, dynamic_features=X,
            labeled=labeled, candidates=candidates, seed=0,
        )
        picked, _ = select_coreset(ctx, b)
        want = greedy_center_oracle(X, labeled.tolist(),
                                    candidates.tolist(), b)
        assert [int(i) for i in picked] == want, f"coreset trial {trial}"

    # gradient-length scores equal the per-label enumeration
    rng = np.random.default_rng(29)
    for trial in range(200):
        d = int(rng.integers(2, 7))
        num_classes = int(rng.integers(2, 6))
        model = init_model(d, num_classes, seed=trial)
        x = rng.standard_normal(d)
        ctx = AcquisitionContext(
            model=model,
            features=np.vstack([x, np.zeros(d)]),
            dynamic_features=np.vstack([x, np.zeros(d)]),
            labeled=np.array([1]), candidates=np.array([0]), seed=0,
        )
        got = float(score_egl(ctx)[0])
        p = predict_proba(model, x[None, :])[0]
        want = sum(
            p[c] * float(np.sum(loss_gradient(model, x, c) ** 2))
            for c in range(num_classes)
        )
        assert got == pytest.approx(want, rel=1e-10), f"egl trial {trial}"

    # sampled joint entropy tracks the exact enumeration
    rng = np.random.default_rng(42)
    for trial in range(30):
        n = int(rng.integers(2, 11))
        probs = rng.dirichlet(np.ones(2) * rng.uniform(0.3, 3.0),
                              size=(8, n))
        exact = joint_entropy(probs, list(range(n)), exact=True)
        sampled = joint_entropy(probs, list(range(n)), exact=False,
                                num_config_samples=4000, seed=trial)
        assert abs(exact - sampled) < 0.05, f"joint entropy trial {trial}"

    # a batch of one reduces to the plain disagreement argmax
    for trial in range(50):
        rng = np.random.default_rng(1000 + trial)
        n = int(rng.integers(5, 40))
        d = int(rng.integers(2, 8))
        K = int(rng.integers(2, 5))
        X = rng.standard_normal((n, d))
        model = init_model(d, K, dropout_rate=0.3, seed=trial)
        labeled = np.array([0])
        candidates = np.arange(1, n)
        ctx = AcquisitionContext(
            model=model, features=X, dynamic_features=X,
            labeled=labeled, candidates=candidates,
            seed=trial, mc_samples=8,
        )
        picked, _ = select_batchbald(ctx, 1)
        want, _ = top_b(score_bald(ctx), ctx.candidates, 1)
        assert int(picked[0]) == int(want[0]), f"b=1 trial {trial}"

    assert time.perf_counter() - started < 300.0


# ------------------------------------------------------ gradient identity

def test_analytic_gradients_match_finite_differences():
    # central differences on the batch loss, one coordinate at a time;
    # 120 random model and batch draws inside a one minute budget
    started = time.perf_counter()
    rng = np.random.default_rng(7)

    for trial in range(120):
        d = int(rng.integers(2, 9))
        K = int(rng.integers(2, 6))
        widths = () if trial % 2 == 0 else (int(rng.integers(2, 7)),)
        model = init_model(d, K, widths=widths, seed=trial)
        n = int(rng.integers(1, 7))
        X = rng.standard_normal((n, d))
        y = rng.integers(0, K, size=n)

        analytic = training_gradients(model, X, y)
        theta = flat_parameters(model)
        h = 1e-5
        fd = np.empty_like(theta)
        for i in range(len(theta)):
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            fd[i] = (
                batch_loss(with_flat_parameters(model, up), X, y)
                - batch_loss(with_flat_parameters(model, down), X, y)
            ) / (2 * h)
        np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-8)

    assert time.perf_counter() - started < 60.0


# -------------------------------------------------------- score identities

def test_uncertainty_scores_respect_their_bounds():
    # 1,000 random posterior-sample stacks (8 draws each), split across
    # class counts; every score must land in its analytic range
    rng = np.random.default_rng(11)
    per_k = 250
    for K in (2, 3, 5, 10):
        alpha = rng.uniform(0.2, 3.0)
        samples = rng.dirichlet(np.ones(K) * alpha, size=(8, per_k))
        mean = samples.mean(axis=0)

        me = entropy(mean)
        vr = 1.0 - mean.max(axis=1)
        bald = bald_from_samples(samples)

        assert np.all(me >= 0.0) and np.all(me <= np.log(K) + 1e-12)
        assert np.all(vr >= 0.0) and np.all(vr <= 1.0 - 1.0 / K + 1e-12)
        assert np.all(bald >= -1e-12) and np.all(bald <= me + 1e-12)

        if K == 2:
            # two classes leave a single degree of freedom, so entropy
            # and margin-to-certainty must rank candidates identically
            order_me = np.argsort(me, kind="stable")
            order_vr = np.argsort(vr, kind="stable")
            assert np.array_equal(order_me, order_vr)


# ------------------------------------------------------- accuracy ordering

def test_informed_selection_beats_random_and_rich_final_beats_probe(
        accuracy_bench):
    # on a benchmark with a deliberately confusable secondary mode,
    # entropy selection must beat random selection, and the expensive
    # final model must beat the linear probe, each by at least one
    # pooled standard error over five seeds; thirty minute budget
    emb, man = accuracy_bench
    started = time.perf_counter()
    seeds = range(100, 105)

    def final_accuracies(scorer, protocol):
        out = []
        for seed in seeds:
            cfg = SessionConfig(scorer=scorer, protocol=protocol,
                                T=39, b=50, n_init=50, m=8, seed=seed)
            out.append(run_session(emb, man, cfg).final_accuracy)
        return np.asarray(out, dtype=np.float64)

    informed = final_accuracies("max_entropy", "PRepAL")
    uninformed = final_accuracies("random", "PRepAL")
    probe_only = final_accuracies("max_entropy", "AL_LR")

    def pooled_se(a, b):
        return np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))

    gap_selection = informed.mean() - uninformed.mean()
    gap_model = informed.mean() - probe_only.mean()
    assert gap_selection >= pooled_se(informed, uninformed), (
        f"selection gap {gap_selection:.4f} under one pooled SE"
    )
    assert gap_model >= pooled_se(informed, probe_only), (
        f"final-model gap {gap_model:.4f} under one pooled SE"
    )

    assert time.perf_counter() - started < 1800.0


# ----------------------------------------------------------- cost profile

def test_probe_refits_stay_cheap_relative_to_final_training():
    # wide features, long session: every probe refit on 2,000 labeled
    # rows stays under five seconds, and all retraining together costs
    # less than sixty final-model trainings
    emb, man = generate_synthetic(
        seed=600, n=2500, d=768, num_classes=4, separation=2.0,
        holdout_fraction=0.1, name="wide",
    )

    pool = man.pool_indices()[:2000]
    feats = emb.features(pool)
    labels = man.labels_array()[pool]
    t0 = time.perf_counter()
    train_probe(feats, labels, 4, TrainConfig())
    single_refit = time.perf_counter() - t0
    assert single_refit < 5.0, f"one probe refit took {single_refit:.2f}s"

    cfg = SessionConfig(scorer="max_entropy", protocol="PRepAL",
                        T=39, b=50, n_init=50, m=8, seed=1)
    record = run_session(emb, man, cfg)
    assert len(record.labeled_final) == 2000
    assert record.retraining_seconds < 60.0 * record.final_training_seconds

    table = timing_table(record)
    assert set(PHASES) < set(table)
    assert table["total"] == pytest.approx(
        sum(table[p] for p in PHASES))


# -------------------------------------------------------- transfer sanity

def test_selected_indices_survive_a_backbone_rotation(small_bench):
    # labels bought under one embedding keep their value under another:
    # train the final model on a rotated copy of the features using the
    # unchanged acquisition log, and accuracy moves by at most 0.02
    emb, man = small_bench
    cfg = SessionConfig(scorer="max_entropy", protocol="PRepAL",
                        T=9, b=50, n_init=50, m=8, seed=3)
    record = run_session(emb, man, cfg)

    q, _ = np.linalg.qr(np.random.default_rng(7).standard_normal((16, 16)))
    rotated = type(emb)((emb.features() @ q).astype(np.float32))
    man_b = dataclasses.replace(man, name="rotated")

    chosen = record.labeled_final
    final = TrainConfig()
    X = rotated.features(chosen)
    y = man_b.labels_array()[chosen]
    model = train_probe(X, y, man_b.num_classes, final,
                        widths=(cfg.proxy_width,),
                        dropout_rate=cfg.dropout_rate)
    holdout = man_b.holdout_indices
    probs = predict_proba(model, rotated.features(holdout))
    moved = float(np.mean(
        probs.argmax(axis=1) == man_b.labels_array()[holdout]))

    assert abs(record.final_accuracy - moved) <= 0.02, (
        f"native {record.final_accuracy:.4f} vs rotated {moved:.4f}"
    )


# --------------------------------------------------- interface equivalence

def test_http_session_reproduces_a_cli_run_index_for_index(tmp_path):
    # identical config, identical dataset files: the command line and the
    # annotation service must produce byte-identical run records once
    # wall-clock fields are zeroed
    emb, man = generate_synthetic(
        seed=13, n=400, d=8, num_classes=3, separation=3.0,
        holdout_fraction=0.2, name="gate",
    )
    emb_path = tmp_path / "gate.emb"
    man_path = tmp_path / "gate.json"
    save_embeddings(emb, str(emb_path))
    save_manifest(man, str(man_path))

    config = {
        "scorer": "max_entropy", "protocol": "AL_LR",
        "T": 3, "b": 10, "n_init": 20, "m": 4, "seed": 4,
        "probe": {"max_epochs": 60}, "final": {"max_epochs": 60},
    }

    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    out = tmp_path / "cli-out"
    result = CliRunner().invoke(cli_main, [
        "run", "--config", str(cfg_path),
        "--embeddings", str(emb_path), "--manifest", str(man_path),
        "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    cli_record = json.loads((out / "record.json").read_text())

    client = TestClient(create_app(tmp_path / "state"))
    resp = client.post("/datasets", json={
        "embeddings_path": str(emb_path), "manifest_path": str(man_path),
    })
    assert resp.status_code == 200, resp.text
    resp = client.post("/sessions", json={
        "dataset": "gate", "config": config,
    })
    assert resp.status_code == 200, resp.text
    sid = resp.json()["session_id"]
    for _ in range(10):
        q = client.get(f"/sessions/{sid}/query").json()
        if q["status"] == "complete":
            break
        labels = {str(i): int(man.labels[i]) for i in q["indices"]}
        resp = client.post(f"/sessions/{sid}/labels",
                           json={"labels": labels})
        assert resp.status_code == 200, resp.text
    http_record = json.loads(
        client.get(f"/sessions/{sid}/export").content)["record"]

    left = strip_run_times(cli_record)
    right = strip_run_times(http_record)
    assert left["initial_indices"] == right["initial_indices"]
    for it_a, it_b in zip(left["iterations"], right["iterations"]):
        assert it_a["acquired"] == it_b["acquired"]
    assert left == right
