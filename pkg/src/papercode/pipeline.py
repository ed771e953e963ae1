"""Stage implementations shared by the CLI and the fixture generator.

Each stage reads and writes workspace artifacts; all randomness flows from the
config seed so identical configs reproduce identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import annotation, classifier, evaluation
from .code_ingest import FunctionUnit, extract_functions, scan_repository
from .config import config_digest
from .dataset import (
    SPLITS,
    AssembledDataset,
    Example,
    SamplingConfig,
    SplitAssignment,
    assemble_dataset,
    count_tokens,
    export_joint_sequences,
    split_by_project,
)
from .embedding import (
    EmbeddingVector,
    FileProvider,
    LexicalProvider,
    RemoteProvider,
    function_text,
    read_vectors,
    write_vectors,
    write_vectors_text,
)
from .ioutil import (
    DependencyError,
    ValidationError,
    load_records,
    read_json,
    write_json,
    write_records,
)
from .paper_ingest import SentenceUnit, extract_candidate_sentences, load_paper
from .pairing import (
    AnnotationTask,
    FunctionIndex,
    RankedCandidates,
    generate_annotation_tasks,
    retrieve_top_k,
)
from .workspace import Project, Workspace, compute_project_stats, mean_stats

NATIVE_MODEL_NOTE = (
    "native classifier scores pairs from provider embeddings via the "
    "[u; v; u*v; |u-v|] pair feature; joint-sequence exports plus external "
    "score files are the path for full cross-encoder models"
)


# --- ingestion -----------------------------------------------------------------


def stage_ingest_paper(ws: Workspace, cfg: dict[str, Any], project: Project) -> dict[str, int]:
    doc = load_paper(Path(project.paper_path))
    units = extract_candidate_sentences(doc, project.project_id, cfg["paper"])
    write_records(ws.sentences_path(project.project_id), (u.to_record() for u in units))
    return {"sentences": len(units), "sections": len(doc.sections)}


def stage_ingest_code(ws: Workspace, cfg: dict[str, Any], project: Project) -> dict[str, int]:
    files, warnings = scan_repository(Path(project.repo_path), cfg["code"])
    functions: list[FunctionUnit] = []
    for file in files:
        units, parse_warnings = extract_functions(
            file, project.project_id, min_statements=cfg["code"]["min_statements"]
        )
        functions.extend(units)
        warnings.extend(parse_warnings)
    write_records(ws.functions_path(project.project_id), (u.to_record() for u in functions))
    write_records(ws.files_path(project.project_id), (
        {
            "file_path": f.file_path,
            "line_count": f.line_count,
            "nonempty_lines": f.nonempty_lines,
            "decode_errors": f.decode_errors,
        }
        for f in files
    ))
    warnings_path = ws.dir("corpus") / f"{project.project_id}.warnings"
    write_records(warnings_path, (w.to_record() for w in warnings))
    return {"files": len(files), "functions": len(functions), "warnings": len(warnings)}


def stage_stats(ws: Workspace, cfg: dict[str, Any]) -> dict[str, Any]:
    manifest = ws.load_manifest()
    per_project = {}
    updated = []
    for project in manifest.projects:
        stats = compute_project_stats(ws, project)
        per_project[project.project_id] = stats.to_record()
        updated.append(Project(project.project_id, project.paper_path, project.repo_path, stats))
    manifest.projects = updated
    ws.save_manifest(manifest)
    report = {
        "per_project": per_project,
        "mean": mean_stats([p.stats for p in updated if p.stats is not None]),
        "aggregation": "mean",
    }
    write_json(ws.dir("reports") / "stats.report", report)
    return report


# --- embedding -----------------------------------------------------------------


def _load_sentences(ws: Workspace, project_id: str) -> list[SentenceUnit]:
    path = ws.sentences_path(project_id)
    if not path.exists():
        raise DependencyError(f"missing {path}; run ingest-paper for {project_id}")
    return [SentenceUnit.from_record(r) for r in load_records(path)]


def _load_functions(ws: Workspace, project_id: str) -> list[FunctionUnit]:
    path = ws.functions_path(project_id)
    if not path.exists():
        raise DependencyError(f"missing {path}; run ingest-code for {project_id}")
    return [FunctionUnit.from_record(r) for r in load_records(path)]


def _make_provider(ws: Workspace, cfg: dict[str, Any], corpus: list[str]):
    emb = cfg["embedding"]
    if emb["provider"] == "lexical":
        provider = LexicalProvider.fit(corpus, hash_dim=emb["hash_dim"])
        state_path = ws.dir("embeddings") / "lexical.model"
        state_path.write_text(provider.state.to_json() + "\n", encoding="utf-8")
        return provider
    if emb["provider"] == "file":
        if not emb["file_path"]:
            raise ValidationError("embedding.file_path required for the file provider")
        return FileProvider(Path(emb["file_path"]))
    if emb["provider"] == "remote":
        if not emb["endpoint"]:
            raise ValidationError("embedding.endpoint required for the remote provider")
        return RemoteProvider(
            emb["endpoint"], timeout=emb["timeout"], batch_size=emb["batch_size"],
            max_retries=emb["max_retries"],
        )
    raise ValidationError(f"unknown embedding provider: {emb['provider']}")


def stage_embed(ws: Workspace, cfg: dict[str, Any], text_mirror: bool = False) -> dict[str, int]:
    """Fit/load the provider and write per-project, per-side vector stores."""
    manifest = ws.load_manifest()
    project_ids = sorted(manifest.project_ids())
    sentences = {pid: _load_sentences(ws, pid) for pid in project_ids}
    functions = {pid: _load_functions(ws, pid) for pid in project_ids}
    corpus: list[str] = []
    for pid in project_ids:
        corpus.extend(s.text for s in sentences[pid])
        corpus.extend(function_text(f) for f in functions[pid])
    provider = _make_provider(ws, cfg, corpus)

    skipped: list[dict[str, str]] = []
    written = 0
    dim: int | None = None
    for pid in project_ids:
        for side, units in (
            ("sentences", [(s.sentence_id, s.text) for s in sentences[pid]]),
            ("functions", [(f.function_id, function_text(f)) for f in functions[pid]]),
        ):
            vectors, unembeddable = provider.embed_units(units)
            for unit_id in unembeddable:
                skipped.append({"project_id": pid, "side": side, "unit_id": unit_id})
            if dim is None and vectors:
                dim = vectors[0].dim
            side_dim = dim if dim is not None else 0
            write_vectors(ws.vectors_path(pid, side), side_dim, vectors)
            if text_mirror:
                write_vectors_text(
                    ws.vectors_path(pid, side).with_suffix(".vec.txt"), side_dim, vectors
                )
            written += len(vectors)
    write_records(ws.dir("embeddings") / "unembeddable.jsonl", skipped)
    return {"vectors": written, "unembeddable": len(skipped), "dim": dim or 0}


def _load_vector_map(ws: Workspace, project_ids: Sequence[str], side: str) -> dict[str, EmbeddingVector]:
    out: dict[str, EmbeddingVector] = {}
    for pid in project_ids:
        path = ws.vectors_path(pid, side)
        if not path.exists():
            raise DependencyError(f"missing {path}; run embed first")
        _, vectors = read_vectors(path)
        for vector in vectors:
            out[vector.unit_id] = vector
    return out


# --- retrieval and tasks ----------------------------------------------------------


def stage_retrieve(ws: Workspace, cfg: dict[str, Any]) -> dict[str, int]:
    manifest = ws.load_manifest()
    k = cfg["retrieval"]["top_k"]
    total = 0
    skipped = 0
    for pid in sorted(manifest.project_ids()):
        functions = _load_functions(ws, pid)
        nontrivial = {f.function_id for f in functions if not f.trivial}
        _, function_vectors = read_vectors(ws.vectors_path(pid, "functions"))
        pool = [v for v in function_vectors if v.unit_id in nontrivial]
        _, sentence_vectors = read_vectors(ws.vectors_path(pid, "sentences"))
        ranked_records = []
        if pool:
            index = FunctionIndex(pool)
            for vector in sentence_vectors:
                ranked = retrieve_top_k(vector, index, k=k)
                ranked_records.append(ranked.to_record())
                total += 1
        else:
            skipped += len(sentence_vectors)
        write_records(ws.ranked_path(pid), ranked_records)
    return {"ranked": total, "skipped": skipped}


def stage_tasks(ws: Workspace, cfg: dict[str, Any]) -> dict[str, int]:
    manifest = ws.load_manifest()
    n_tasks = 0
    n_skips = 0
    for pid in sorted(manifest.project_ids()):
        ranked_path = ws.ranked_path(pid)
        if not ranked_path.exists():
            raise DependencyError(f"missing {ranked_path}; run retrieve first")
        ranked_lists = [RankedCandidates.from_record(r) for r in load_records(ranked_path)]
        sentences = {s.sentence_id: s for s in _load_sentences(ws, pid)}
        functions = {f.function_id: f for f in _load_functions(ws, pid)}
        tasks, skips = generate_annotation_tasks(ranked_lists, sentences, functions)
        write_records(ws.tasks_path(pid), (t.to_record() for t in tasks))
        if skips:
            write_records(ws.dir("annotations") / f"{pid}.skips", skips)
        n_tasks += len(tasks)
        n_skips += len(skips)
    return {"tasks": n_tasks, "skipped": n_skips}


def stage_decisions_import(ws: Workspace, cfg: dict[str, Any], labels_path: Path) -> dict[str, int]:
    store = annotation.load_store(ws, required_annotators=cfg["annotation"]["required_annotators"])
    imported = annotation.import_labels(store, labels_path)
    count = annotation.write_decisions(ws.decisions_path, list(store.decisions.values()))
    return {"labels": imported, "decisions": count,
            "positives": sum(1 for d in store.decisions.values() if d.outcome == "positive")}


def stage_decisions_export(ws: Workspace, cfg: dict[str, Any], out_path: Path) -> dict[str, int]:
    store = annotation.load_store(ws, required_annotators=cfg["annotation"]["required_annotators"])
    count = annotation.write_decisions(out_path, list(store.decisions.values()))
    return {"decisions": count}


# --- split / assemble ----------------------------------------------------------------


def stage_split(ws: Workspace, cfg: dict[str, Any]) -> SplitAssignment:
    manifest = ws.load_manifest()
    ratios = tuple(cfg["split"]["ratios"])
    split = split_by_project(manifest.project_ids(), ratios=ratios, seed=cfg["seed"])
    write_json(ws.split_path, {
        "assignment": split.to_record(),
        "ratios": list(ratios),
        "seed": cfg["seed"],
    })
    return split


def load_split(ws: Workspace) -> SplitAssignment:
    if not ws.split_path.exists():
        raise DependencyError(f"missing {ws.split_path}; run split first")
    return SplitAssignment.from_record(read_json(ws.split_path)["assignment"])


def _sampling_config(cfg: dict[str, Any]) -> SamplingConfig:
    sampling = cfg["sampling"]
    return SamplingConfig(
        n_hard=sampling["n_hard"],
        n_random=sampling["n_random"],
        hard_band=tuple(sampling["hard_band"]),
        seed=cfg["seed"],
        constrain_random_to_split=sampling["constrain_random_to_split"],
    )


def collect_positives(ws: Workspace) -> tuple[list[Example], dict[str, RankedCandidates], dict[str, str]]:
    """(positive examples, ranked lists by sentence, non-trivial function pool)."""
    manifest = ws.load_manifest()
    if not ws.decisions_path.exists():
        raise DependencyError(f"missing {ws.decisions_path}; import or export decisions first")
    decisions = annotation.read_decisions(ws.decisions_path)
    tasks_by_id: dict[str, AnnotationTask] = {}
    sentence_project: dict[str, str] = {}
    ranked_by_sentence: dict[str, RankedCandidates] = {}
    function_projects: dict[str, str] = {}
    for pid in sorted(manifest.project_ids()):
        tasks_path = ws.tasks_path(pid)
        if tasks_path.exists():
            for record in load_records(tasks_path):
                task = AnnotationTask.from_record(record)
                tasks_by_id[task.task_id] = task
                sentence_project[task.sentence_id] = pid
        ranked_path = ws.ranked_path(pid)
        if ranked_path.exists():
            for record in load_records(ranked_path):
                ranked = RankedCandidates.from_record(record)
                ranked_by_sentence[ranked.sentence_id] = ranked
        for function in _load_functions(ws, pid):
            if not function.trivial:
                function_projects[function.function_id] = pid
    positives = []
    for decision in decisions:
        if decision.outcome != "positive":
            continue
        task = tasks_by_id.get(decision.task_id)
        if task is None:
            raise ValidationError(f"decision references unknown task {decision.task_id}")
        pid = sentence_project[task.sentence_id]
        positives.append(Example(
            example_id=f"p-{decision.task_id}",
            sentence_id=task.sentence_id,
            function_id=task.function_id,
            label=1,
            origin="positive",
            source_project=pid,
            function_project=pid,
        ))
    return positives, ranked_by_sentence, function_projects


def stage_assemble(
    ws: Workspace, cfg: dict[str, Any], name: str, force: bool = False
) -> AssembledDataset:
    positives, ranked_by_sentence, function_projects = collect_positives(ws)
    split = load_split(ws)
    sampling_cfg = _sampling_config(cfg)
    assembled = assemble_dataset(positives, ranked_by_sentence, function_projects, split, sampling_cfg)

    out_dir = ws.dataset_dir(name)
    manifest_path = out_dir / "manifest.json"
    digest = config_digest(cfg)
    if manifest_path.exists() and not force:
        existing = read_json(manifest_path)
        if existing.get("config_digest") != digest:
            raise ValidationError(
                f"dataset {name} exists with a different config digest; use --force to overwrite"
            )
    for split_name in SPLITS:
        write_records(
            out_dir / f"{split_name}.examples",
            (e.to_record() for e in assembled.examples[split_name]),
        )
    if assembled.warnings:
        write_records(out_dir / "warnings.jsonl", ({"warning": w} for w in assembled.warnings))
    write_json(manifest_path, {
        "name": name,
        "seed": cfg["seed"],
        "config_digest": digest,
        "sampling": {
            "n_hard": sampling_cfg.n_hard,
            "n_random": sampling_cfg.n_random,
            "hard_band": list(sampling_cfg.hard_band),
            "constrain_random_to_split": sampling_cfg.constrain_random_to_split,
        },
        "counts": assembled.counts,
        "native_model_note": NATIVE_MODEL_NOTE,
    })
    return assembled


def load_examples(ws: Workspace, name: str, split_name: str) -> list[Example]:
    path = ws.dataset_dir(name) / f"{split_name}.examples"
    if not path.exists():
        raise DependencyError(f"missing {path}; run assemble first")
    return [Example.from_record(r) for r in load_records(path)]


def stage_export_seq(ws: Workspace, cfg: dict[str, Any], name: str) -> dict[str, int]:
    manifest = ws.load_manifest()
    sentence_texts: dict[str, str] = {}
    function_bodies: dict[str, str] = {}
    for pid in sorted(manifest.project_ids()):
        for sentence in _load_sentences(ws, pid):
            sentence_texts[sentence.sentence_id] = sentence.text
        for function in _load_functions(ws, pid):
            function_bodies[function.function_id] = function.normalized_body
    budget = cfg["sequences"]["token_budget"]
    totals = {"records": 0, "truncated": 0, "errors": 0}
    for split_name in SPLITS:
        examples = load_examples(ws, name, split_name)
        records, errors = export_joint_sequences(
            examples, sentence_texts, function_bodies, token_budget=budget,
            token_counter=count_tokens,
        )
        write_records(ws.dataset_dir(name) / f"{split_name}.seq", records)
        if errors:
            write_records(ws.dataset_dir(name) / f"{split_name}.seq.errors", errors)
        totals["records"] += len(records)
        totals["truncated"] += sum(1 for r in records if r["truncated"])
        totals["errors"] += len(errors)
    return totals


# --- features / training / evaluation --------------------------------------------------


def load_feature_matrix(
    ws: Workspace, name: str, split_name: str
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """(pair features, labels, example ids) for one dataset split."""
    examples = load_examples(ws, name, split_name)
    manifest = ws.load_manifest()
    project_ids = sorted(manifest.project_ids())
    sentence_vectors = _load_vector_map(ws, project_ids, "sentences")
    function_vectors = _load_vector_map(ws, project_ids, "functions")
    rows = []
    labels = []
    ids = []
    for example in examples:
        u = sentence_vectors.get(example.sentence_id)
        v = function_vectors.get(example.function_id)
        if u is None or v is None:
            raise DependencyError(
                f"missing embeddings for example {example.example_id}; run embed first"
            )
        rows.append(classifier.build_pair_feature(u.values, v.values).astype(np.float32))
        labels.append(example.label)
        ids.append(example.example_id)
    if rows:
        features = np.stack(rows)
    else:
        features = np.zeros((0, 0), dtype=np.float32)
    return features, np.asarray(labels, dtype=np.int64), ids


def _loss_config(cfg: dict[str, Any]) -> classifier.LossConfig:
    return classifier.LossConfig(gamma=cfg["loss"]["gamma"], alpha=tuple(cfg["loss"]["alpha"]))


def _train_config(cfg: dict[str, Any]) -> classifier.TrainConfig:
    training = cfg["training"]
    return classifier.TrainConfig(
        learning_rate=training["learning_rate"],
        batch_size=training["batch_size"],
        max_epochs=training["max_epochs"],
        patience=training["patience"],
        seeds=tuple(training["seeds"]),
        hidden_dim=training["hidden_dim"],
        weight_decay=training["weight_decay"],
        early_stopping_metric=training["early_stopping_metric"],
        encoder_finetune_lr=training["encoder_finetune_lr"],
    )


def stage_train(ws: Workspace, cfg: dict[str, Any], name: str, run: str) -> dict[str, Any]:
    features_train, labels_train, _ = load_feature_matrix(ws, name, "train")
    features_val, labels_val, _ = load_feature_matrix(ws, name, "validation")
    train_cfg = _train_config(cfg)
    loss_cfg = _loss_config(cfg)
    summary = {}
    for seed in train_cfg.seeds:
        model, log = classifier.train(
            features_train, labels_train, features_val, labels_val,
            train_cfg, loss_cfg, seed=seed,
        )
        checkpoint = ws.dir("models") / f"{run}.seed{seed}.model.json"
        classifier.save_checkpoint(model, train_cfg, checkpoint)
        summary[str(seed)] = {
            "best_val_metric": model.best_val_metric,
            "epochs": model.trained_epochs,
            "checkpoint": checkpoint.name,
        }
    return summary


def stage_predict(
    ws: Workspace, cfg: dict[str, Any], name: str, run: str, split_name: str
) -> list[Path]:
    train_cfg = _train_config(cfg)
    features, _, ids = load_feature_matrix(ws, name, split_name)
    out_paths = []
    for seed in train_cfg.seeds:
        checkpoint = ws.dir("models") / f"{run}.seed{seed}.model.json"
        if not checkpoint.exists():
            raise DependencyError(f"missing {checkpoint}; run train first")
        model, _ = classifier.load_checkpoint(checkpoint)
        predictions = classifier.predict(model, features, ids)
        out = ws.dir("reports") / f"{run}.seed{seed}.{split_name}.scores"
        write_scores(out, predictions)
        out_paths.append(out)
    return out_paths


def write_scores(path: Path, predictions: Sequence[classifier.Prediction]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for prediction in predictions:
            fh.write(f"{prediction.example_id}\t{prediction.p_positive!r}\n")


def stage_eval(
    ws: Workspace,
    cfg: dict[str, Any],
    name: str,
    split_name: str,
    run: str | None = None,
    scores_path: Path | None = None,
) -> dict[str, Any]:
    examples = load_examples(ws, name, split_name)
    ids = [e.example_id for e in examples]
    labels = [e.label for e in examples]
    threshold = cfg["evaluation"]["threshold"]
    reports = []
    if scores_path is not None:
        p = evaluation.load_external_scores(scores_path, ids)
        reports.append(evaluation.report_at(p, labels, threshold))
        run = run or Path(scores_path).stem
    else:
        if run is None:
            raise ValidationError("eval needs either a run name or an external scores file")
        train_cfg = _train_config(cfg)
        for seed in train_cfg.seeds:
            path = ws.dir("reports") / f"{run}.seed{seed}.{split_name}.scores"
            if not path.exists():
                raise DependencyError(f"missing {path}; run predict first")
            p = evaluation.load_external_scores(path, ids)
            reports.append(evaluation.report_at(p, labels, threshold, seed=seed))
    averaged = evaluation.average_runs(reports)
    baseline = evaluation.baseline_accuracy(labels)
    report = {
        "run": run,
        "dataset": name,
        "split": split_name,
        "threshold": threshold,
        "averaged": averaged.to_record(),
        "per_seed": [r.to_record() for r in reports],
        "baseline_acc": baseline,
        "beats_baseline": averaged.acc > baseline,
    }
    write_json(ws.dir("reports") / f"{run}.{split_name}.report", report)
    table = evaluation.render_metric_table(
        [(f"{run} @ {threshold}", averaged)], "Run", baseline_acc=baseline
    )
    (ws.dir("reports") / f"{run}.{split_name}.txt").write_text(table, encoding="utf-8")
    return report


def stage_sweep(
    ws: Workspace,
    cfg: dict[str, Any],
    name: str,
    run: str | None = None,
    split_name: str = "validation",
    scores_path: Path | None = None,
    allow_test_sweep: bool = False,
) -> evaluation.SweepReport:
    if split_name == "test" and not (allow_test_sweep or cfg["evaluation"]["allow_test_sweep"]):
        raise ValidationError(
            "threshold sweeps on the test split are a protocol violation; "
            "pass --allow-test-sweep to override"
        )
    examples = load_examples(ws, name, split_name)
    ids = [e.example_id for e in examples]
    labels = [e.label for e in examples]
    grid = cfg["evaluation"]["threshold_grid"]
    if scores_path is not None:
        p = evaluation.load_external_scores(scores_path, ids)
        run = run or Path(scores_path).stem
    else:
        if run is None:
            raise ValidationError("sweep needs either a run name or an external scores file")
        train_cfg = _train_config(cfg)
        seed = train_cfg.seeds[0]
        path = ws.dir("reports") / f"{run}.seed{seed}.{split_name}.scores"
        if not path.exists():
            raise DependencyError(f"missing {path}; run predict first")
        p = evaluation.load_external_scores(path, ids)
    sweep = evaluation.threshold_sweep(p, labels, grid)
    write_json(ws.dir("reports") / f"{run}.{split_name}.sweep.report", sweep.to_record())
    rows = [(f"{row.threshold:.2f}", row) for row in sweep.rows]
    table = evaluation.render_metric_table(rows, "Threshold")
    (ws.dir("reports") / f"{run}.{split_name}.sweep.txt").write_text(table, encoding="utf-8")
    return sweep


def stage_ablate(
    ws: Workspace, cfg: dict[str, Any], name: str, run: str, eval_split: str = "validation"
) -> list[tuple[str, evaluation.MetricReport]]:
    features_train, labels_train, _ = load_feature_matrix(ws, name, "train")
    features_val, labels_val, _ = load_feature_matrix(ws, name, "validation")
    features_eval, labels_eval, eval_ids = load_feature_matrix(ws, name, eval_split)
    train_cfg = _train_config(cfg)
    rows, scores = evaluation.loss_ablation(
        features_train, labels_train, features_val, labels_val,
        features_eval, labels_eval.tolist(), train_cfg,
        gamma=cfg["loss"]["gamma"], alpha=tuple(cfg["loss"]["alpha"]),
        threshold=cfg["evaluation"]["threshold"],
    )
    # Store per-variant predictions so every row is recomputable.
    for (variant, seed), p_positive in scores.items():
        path = ws.dir("reports") / f"{run}.ablate.{variant}.seed{seed}.{eval_split}.scores"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for example_id, p in zip(eval_ids, p_positive):
                fh.write(f"{example_id}\t{p!r}\n")
    write_json(ws.dir("reports") / f"{run}.ablate.report", {
        "dataset": name,
        "split": eval_split,
        "threshold": cfg["evaluation"]["threshold"],
        "rows": [{"variant": v, **r.to_record()} for v, r in rows],
    })
    table = evaluation.render_metric_table(
        rows, "Loss", baseline_acc=evaluation.baseline_accuracy(labels_eval.tolist())
    )
    (ws.dir("reports") / f"{run}.ablate.txt").write_text(table, encoding="utf-8")
    return rows
