"""Acceptance gate: one test per release criterion, each printing a PASS line
with its measured evidence. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import math
import random
import time

import numpy as np
import pytest

from papercode import pipeline
from papercode.classifier import (
    LossConfig,
    TrainConfig,
    batch_loss,
    init_model,
    loss_gradient,
    loss_value,
    predict_probabilities,
    train,
)
from papercode.config import load_config
from papercode.dataset import SamplingConfig, assemble_dataset, split_by_project
from papercode.embedding import EmbeddingVector, cosine
from papercode.evaluation import (
    ConfusionMatrix,
    binarize,
    confusion,
    load_external_scores,
    metrics,
    report_at,
)
from papercode.fixtures import generate_fixture_corpus
from papercode.pairing import FunctionIndex, retrieve_top_k
from papercode.workspace import Project, init_workspace, register_project


def _announce(name: str, detail: str) -> None:
    print(f"\nACCEPTANCE PASS: {name} ({detail})")


def _build_workspace(root, corpus_manifest, cfg):
    ws = init_workspace(root)
    manifest = ws.load_manifest()
    for meta in corpus_manifest["projects"]:
        manifest = register_project(
            manifest, Project(meta["project_id"], meta["paper_path"], meta["repo_path"])
        )
    ws.save_manifest(manifest)
    for project in manifest.projects:
        pipeline.stage_ingest_paper(ws, cfg, project)
        pipeline.stage_ingest_code(ws, cfg, project)
    pipeline.stage_embed(ws, cfg)
    pipeline.stage_retrieve(ws, cfg)
    pipeline.stage_tasks(ws, cfg)
    pipeline.stage_decisions_import(ws, cfg, corpus_manifest["labels_path"])
    pipeline.stage_split(ws, cfg)
    return ws


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def planted_workspace(tmp_path_factory, cfg):
    """18 projects (14/2/2 after the 8:1:1 split), 14 positives each."""
    root = tmp_path_factory.mktemp("planted")
    corpus = generate_fixture_corpus(root / "corpus", cfg, n_projects=18,
                                     positives_per_project=14)
    ws = _build_workspace(root / "ws", corpus, cfg)
    pipeline.stage_assemble(ws, cfg, "bench")
    return ws


@pytest.fixture(scope="session")
def planted_features(planted_workspace):
    out = {}
    for split in ("train", "validation", "test"):
        out[split] = pipeline.load_feature_matrix(planted_workspace, "bench", split)
    return out


def test_a01_table2_structural_reproduction(tmp_path_factory, cfg):
    """48 synthetic projects -> 957/90/83 positives -> 5742/540/498 examples."""
    started = time.monotonic()
    root = tmp_path_factory.mktemp("table2")
    corpus = generate_fixture_corpus(root / "corpus", cfg, n_projects=48,
                                     positives_per_split=(957, 90, 83))
    ws = _build_workspace(root / "ws", corpus, cfg)
    assembled = pipeline.stage_assemble(ws, cfg, "bench")
    elapsed = time.monotonic() - started

    expected = {
        "train": {"projects": 38, "consistent": 957, "inconsistent": 4785, "total": 5742},
        "validation": {"projects": 5, "consistent": 90, "inconsistent": 450, "total": 540},
        "test": {"projects": 5, "consistent": 83, "inconsistent": 415, "total": 498},
    }
    assert assembled.counts == expected
    for counts in assembled.counts.values():
        assert counts["inconsistent"] == 5 * counts["consistent"]
    assert elapsed < 120.0
    _announce("Table-2 structural reproduction",
              f"counts {assembled.counts['train']['total']}/{assembled.counts['validation']['total']}"
              f"/{assembled.counts['test']['total']} in {elapsed:.1f}s")


def test_a02_loss_correctness():
    """gamma=0, alpha=1 equals cross-entropy at 1e-12; worked focal value 0.8664."""
    rng = np.random.default_rng(42)
    ce = LossConfig(gamma=0.0, alpha=(1.0, 1.0))
    worst = 0.0
    for _ in range(1000):
        p = float(rng.uniform(1e-6, 1.0))
        y = int(rng.integers(0, 2))
        worst = max(worst, abs(loss_value(p, y, ce) - (-math.log(p))))
    assert worst <= 1e-12
    worked = loss_value(0.5, 1, LossConfig(gamma=2.0, alpha=(1.0, 5.0)))
    assert worked == pytest.approx(0.8664, abs=1e-4)
    _announce("loss correctness", f"max CE deviation {worst:.2e}; worked value {worked:.6f}")


def test_a03_gradient_check():
    """Analytic gradients vs central differences across 100+ randomized cases."""
    rng = np.random.default_rng(7)
    h = 1e-5
    cases = 0
    worst = 0.0
    for gamma in (0.0, 1.0, 2.0):
        for alpha in ((1.0, 1.0), (1.0, 5.0)):
            for _ in range(17):
                dim = int(rng.integers(3, 10))
                n = int(rng.integers(2, 14))
                model = init_model(dim, LossConfig(gamma=gamma, alpha=alpha),
                                   seed=int(rng.integers(10_000)))
                model.params["W"] = rng.normal(scale=0.6, size=(2, dim))
                model.params["b"] = rng.normal(scale=0.6, size=2)
                features = rng.normal(size=(n, dim))
                labels = rng.integers(0, 2, size=n)
                grads = loss_gradient(model, features, labels)
                for key in ("W", "b"):
                    fd = np.zeros_like(model.params[key])
                    flat, fd_flat = model.params[key].reshape(-1), fd.reshape(-1)
                    for i in range(flat.size):
                        original = flat[i]
                        flat[i] = original + h
                        up = batch_loss(model, features, labels)
                        flat[i] = original - h
                        down = batch_loss(model, features, labels)
                        flat[i] = original
                        fd_flat[i] = (up - down) / (2 * h)
                    denom = max(np.linalg.norm(grads[key]), np.linalg.norm(fd), 1e-12)
                    worst = max(worst, float(np.linalg.norm(grads[key] - fd) / denom))
                cases += 1
    assert cases >= 100
    assert worst <= 1e-4
    _announce("gradient check", f"{cases} cases, worst relative error {worst:.2e}")


def test_a04_metric_oracle_equivalence():
    """acc/macro-F1/MCC vs brute force on 10,000 random matrices at 1e-12."""

    def brute(tp, fp, fn, tn):
        n = tp + fp + fn + tn
        acc = (tp + tn) / n
        def f1(a, b, c):
            return 2 * a / (2 * a + b + c) if 2 * a + b + c else 0.0
        macro = (f1(tp, fp, fn) + f1(tn, fn, fp)) / 2
        denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else 0.0
        return acc, macro, mcc

    rng = random.Random(99)
    worst = 0.0
    for _ in range(10_000):
        tp, fp, fn, tn = (rng.randint(0, 50) for _ in range(4))
        if tp + fp + fn + tn == 0:
            tn = 1
        got = metrics(ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn))
        expected = brute(tp, fp, fn, tn)
        worst = max(worst, *(abs(g - e) for g, e in zip(got, expected)))
    assert worst <= 1e-12
    assert metrics(ConfusionMatrix(tp=0, fp=0, fn=7, tn=13))[2] == 0.0
    assert metrics(ConfusionMatrix(tp=4, fp=1, fn=2, tn=13))[2] == pytest.approx(0.6299, abs=1e-4)
    _announce("metric oracle equivalence", f"10k matrices, worst deviation {worst:.2e}")


def test_a05_retrieval_oracle():
    """Top-10 equals brute-force full-sort ranking on pools up to 1,000, ties included."""

    def brute(query, pool, k):
        scored = [(v.unit_id, cosine(query, v)) for v in pool]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return [fid for fid, _ in scored[:k]]

    def unit(values, unit_id):
        arr = np.asarray(values, dtype=np.float64)
        return EmbeddingVector(unit_id=unit_id, values=arr / np.linalg.norm(arr))

    rng = np.random.default_rng(31)
    checked = 0
    for n in (10, 100, 500, 1000):
        query = unit(rng.normal(size=24), "q")
        pool = [unit(rng.normal(size=24), f"f{i:04d}") for i in range(n)]
        # plant exact-duplicate tie groups
        pool.append(EmbeddingVector("tie-b", pool[0].values.copy()))
        pool.append(EmbeddingVector("tie-a", pool[0].values.copy()))
        got = retrieve_top_k(query, FunctionIndex(pool), k=10)
        assert [fid for fid, _ in got.ranked] == brute(query, pool, 10)
        checked += 1
    _announce("retrieval oracle", f"pools 10..1000 incl tie groups, {checked} pools exact")


def test_a06_leakage_suite(planted_workspace, cfg):
    """100 seeded assemblies: no split leakage, no cross-split functions, no dup pairs."""
    positives, ranked, pools = pipeline.collect_positives(planted_workspace)
    project_ids = planted_workspace.load_manifest().project_ids()
    for seed in range(100):
        split = split_by_project(project_ids, ratios=(8, 1, 1), seed=seed)
        all_splits = split.train + split.validation + split.test
        assert len(all_splits) == len(set(all_splits)) == len(project_ids)
        assembled = assemble_dataset(
            positives, ranked, pools, split,
            SamplingConfig(seed=seed, constrain_random_to_split=True),
        )
        pairs = set()
        for name in ("train", "validation", "test"):
            members = set(getattr(split, name))
            for example in assembled.examples[name]:
                assert example.source_project in members
                assert split.split_of(example.function_project) == name
                pair = (example.sentence_id, example.function_id)
                assert pair not in pairs
                pairs.add(pair)
    _announce("leakage suite", "100 seeded assemblies clean")


def test_a07_synthetic_separability(planted_features):
    """Weighted focal training reaches val MCC >= 0.9 and beats the all-negative baseline."""
    started = time.monotonic()
    features_train, labels_train, _ = planted_features["train"]
    features_val, labels_val, _ = planted_features["validation"]
    model, _ = train(
        features_train, labels_train, features_val, labels_val,
        TrainConfig(batch_size=16, max_epochs=10, patience=3),
        LossConfig(gamma=2.0, alpha=(1.0, 5.0)), seed=13,
    )
    p_positive = predict_probabilities(model, features_val)[:, 1].tolist()
    report = report_at(p_positive, labels_val.tolist(), 0.5)
    baseline = sum(1 for y in labels_val if y == 0) / len(labels_val)
    elapsed = time.monotonic() - started
    assert baseline == pytest.approx(5 / 6, abs=1e-9)
    assert report.mcc >= 0.9
    assert report.acc > baseline
    assert elapsed < 60.0
    _announce("synthetic separability",
              f"val MCC {report.mcc:.4f}, acc {report.acc:.4f} vs baseline {baseline:.4f}, "
              f"{elapsed:.1f}s")


def test_a08_ablation_and_sweep_shape(planted_workspace, cfg):
    """4-row ablation table and 5-row sweep, every row recomputable from stored scores."""
    fast_cfg = {**cfg, "training": {**cfg["training"], "seeds": [13], "max_epochs": 5}}
    ws = planted_workspace
    rows = pipeline.stage_ablate(ws, fast_cfg, "bench", "acc8", eval_split="validation")
    assert [name for name, _ in rows] == ["CE", "Focal", "WeightedCE", "WeightedFocal"]

    examples = pipeline.load_examples(ws, "bench", "validation")
    ids = [e.example_id for e in examples]
    labels = [e.label for e in examples]
    for variant, report in rows:
        stored = ws.dir("reports") / f"acc8.ablate.{variant}.seed13.validation.scores"
        p = load_external_scores(stored, ids)
        recomputed = report_at(p, labels, 0.5)
        assert recomputed.acc == pytest.approx(report.acc, abs=1e-12)
        assert recomputed.mcc == pytest.approx(report.mcc, abs=1e-12)

    pipeline.stage_train(ws, fast_cfg, "bench", "acc8run")
    pipeline.stage_predict(ws, fast_cfg, "bench", "acc8run", "validation")
    sweep = pipeline.stage_sweep(ws, fast_cfg, "bench", run="acc8run", split_name="validation")
    assert sweep.grid == [0.40, 0.45, 0.50, 0.55, 0.60]
    assert len(sweep.rows) == 5
    stored = ws.dir("reports") / "acc8run.seed13.validation.scores"
    p = load_external_scores(stored, ids)
    for row in sweep.rows:
        cm = confusion(binarize(p, row.threshold), labels)
        acc, macro, mcc = metrics(cm)
        assert (row.acc, row.macro_f1, row.mcc) == (acc, macro, mcc)
    _announce("ablation and sweep shape", "4 ablation rows + 5 sweep rows, all recomputable")


def test_a09_truncation_contract():
    """1,000 oversized functions: every sequence <= 512 tokens, sentence intact."""
    from papercode.dataset import Example, export_joint_sequences

    rng = random.Random(17)
    sentences = {}
    bodies = {}
    examples = []
    for i in range(1000):
        sid, fid = f"s{i:04d}", f"f{i:04d}"
        sentence_len = rng.randint(8, 30)
        sentences[sid] = " ".join(f"word{j}" for j in range(sentence_len))
        body_len = rng.randint(600, 2600)  # always over budget
        bodies[fid] = "\n".join(
            f"v{j} = step_{j}(v{j - 1})" for j in range(1, body_len // 3 + 1)
        )
        examples.append(Example(
            example_id=f"x{i:04d}", sentence_id=sid, function_id=fid,
            label=i % 6 == 0 and 1 or 0,
            origin="positive" if i % 6 == 0 else "hard_negative",
            source_project="p", function_project="p",
        ))
    records, errors = export_joint_sequences(examples, sentences, bodies, token_budget=512)
    assert errors == []
    assert len(records) == 1000
    violations = 0
    for record, example in zip(records, examples):
        recount = len(record["text"].split())  # independent recount
        if recount > 512:
            violations += 1
        sentence = sentences[example.sentence_id]
        assert record["text"].startswith(f"[CLS] {sentence} [SEP]")
        assert record["truncated"] is True
    assert violations == 0
    _announce("truncation contract", "1000 oversized records, 0 recount violations")


def test_a10_determinism(tmp_path_factory, cfg):
    """Two independent runs: byte-identical datasets, checkpoints, and reports."""
    root = tmp_path_factory.mktemp("determinism")
    corpus = generate_fixture_corpus(root / "corpus", cfg, n_projects=12,
                                     positives_per_project=6)
    fast_cfg = {**cfg, "training": {**cfg["training"], "seeds": [13], "max_epochs": 3}}

    def run(name):
        ws = _build_workspace(root / name, corpus, fast_cfg)
        pipeline.stage_assemble(ws, fast_cfg, "bench")
        pipeline.stage_export_seq(ws, fast_cfg, "bench")
        pipeline.stage_train(ws, fast_cfg, "bench", "r")
        pipeline.stage_predict(ws, fast_cfg, "bench", "r", "validation")
        pipeline.stage_eval(ws, fast_cfg, "bench", "validation", run="r")
        return ws

    ws_a, ws_b = run("a"), run("b")
    compared = []
    for rel in (
        "datasets/bench/train.examples",
        "datasets/bench/validation.examples",
        "datasets/bench/test.examples",
        "datasets/bench/manifest.json",
        "datasets/bench/train.seq",
        "datasets/bench/validation.seq",
        "datasets/bench/test.seq",
        "models/r.seed13.model.json",
        "reports/r.seed13.validation.scores",
        "reports/r.validation.report",
        "reports/r.validation.txt",
    ):
        assert (ws_a.root / rel).read_bytes() == (ws_b.root / rel).read_bytes(), rel
        compared.append(rel)
    _announce("determinism", f"{len(compared)} artifacts byte-identical across runs")
