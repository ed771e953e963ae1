"""Synthetic multi-project corpus generator for end-to-end pipeline runs.

Each project gets a paper whose method sentences carry a four-token signal
code (one token from each of four global eight-token groups) and a repository
whose paired function carries the same code. Codes are unique across the whole
corpus, so a sentence's own function shares all four tokens while every other
function anywhere shares at most three. That makes Top-1 retrieval land on the
paired function, and gives classifiers a split-generalizable signal: the 32
code tokens are global dimensions, not per-pair identifiers.

The generator runs the real ingest/embed/retrieve/task stages in a scratch
workspace to learn task ids, verifies Top-1 retrieval hit every planted pair,
and writes a scripted labels file: unanimous verdicts for the planted
positives, dissent or unsure verdicts for the rest.
"""

from __future__ import annotations

import random
import shutil
import tempfile
from pathlib import Path
from typing import Any

from . import pipeline
from .dataset import split_by_project
from .ioutil import ValidationError, load_records, write_json, write_records
from .pairing import AnnotationTask
from .workspace import Project, init_workspace, register_project

ANNOTATORS = ("a1", "a2", "a3")

# Verdict patterns for the scripted non-positive tasks; all resolve to discarded.
_DISCARD_PATTERNS = (
    ("consistent", "consistent", "inconsistent"),
    ("consistent", "unsure", "consistent"),
    ("inconsistent", "inconsistent", "inconsistent"),
    ("unsure", "consistent", "consistent"),
)

_EXTRA_SENTENCES = len(_DISCARD_PATTERNS)
_N_DISTRACTORS = 8
_N_TRIVIAL = 3
_CODE_SPACE = 8 ** 4  # four base-8 digits

_SENTENCE_TMPL = "We compute the {a} {b} {c} {d} score for each aligned input read."

_PAIRED_TMPL = '''def {a}_{b}_{c}_{d}_step_{i}(values, weights):
    """Compute the {a} {b} {c} {d} score for aligned reads."""
    total = 0.0
    for value, weight in zip(values, weights):
        total = total + value * weight
    if total < 0.0:
        total = 0.0
    return total
'''

_DISTRACTOR_TMPL = '''def helper_{fill}_{d}(items, limit):
    """Trim the {fill} entries against the given limit."""
    kept = []
    for item in items:
        if item > limit:
            kept.append(item)
    return kept
'''

_TRIVIAL_TMPL = '''def tiny_{t}(value):
    return value
'''

_INTRO = [
    "This area of inquiry has grown quickly over recent years.",
    "Earlier efforts in this space relied on laborious by-hand review.",
]
_RESULTS = [
    "The observed gains were stable across repeated sessions.",
    "Every comparison here used identical settings throughout.",
]
_CONCLUSION = ["We computed final scores for every aligned read and filtered the outputs."]
_REFERENCES = ["Assorted citations appear in this list."]


def _code_tokens(code: int) -> tuple[str, str, str, str]:
    return (
        f"asig{(code // 512) % 8}",
        f"bsig{(code // 64) % 8}",
        f"csig{(code // 8) % 8}",
        f"dsig{code % 8}",
    )


def _allocate(total: int, k: int) -> list[int]:
    base, remainder = divmod(total, k)
    return [base + 1 if j < remainder else base for j in range(k)]


def _paper_doc(pid: str, method_sentences: list[str]) -> dict[str, Any]:
    paragraphs = [
        " ".join(method_sentences[i:i + 2]) for i in range(0, len(method_sentences), 2)
    ]
    return {
        "title": f"Synthetic pipeline study {pid}",
        "sections": [
            {"heading": "Introduction", "paragraphs": [" ".join(_INTRO)]},
            {"heading": "Methods", "paragraphs": paragraphs},
            {"heading": "Results", "paragraphs": [" ".join(_RESULTS)]},
            {"heading": "Conclusion", "paragraphs": _CONCLUSION},
            {"heading": "References", "paragraphs": _REFERENCES},
        ],
    }


def generate_fixture_corpus(
    out_dir: Path,
    cfg: dict[str, Any],
    n_projects: int = 18,
    positives_per_split: tuple[int, int, int] | None = None,
    positives_per_project: int = 14,
) -> dict[str, Any]:
    """Write papers, repositories, scripted labels, and a fixture manifest."""
    out_dir = Path(out_dir)
    if (out_dir / "fixture.json").exists():
        raise ValidationError(f"fixture already generated at {out_dir}")
    seed = cfg["seed"]
    width = max(2, len(str(n_projects - 1)))
    project_ids = [f"proj{i:0{width}d}" for i in range(n_projects)]

    # The split must match what the pipeline's split stage will compute.
    split = split_by_project(project_ids, ratios=tuple(cfg["split"]["ratios"]), seed=seed)
    positives: dict[str, int] = {}
    for split_name, total in zip(("train", "validation", "test"), positives_per_split or ()):
        members = sorted(getattr(split, split_name))
        for pid, count in zip(members, _allocate(total, len(members))):
            positives[pid] = count
    if positives_per_split is None:
        positives = {pid: positives_per_project for pid in project_ids}

    total_sentences = sum(positives[pid] + _EXTRA_SENTENCES for pid in project_ids)
    if total_sentences > _CODE_SPACE:
        raise ValidationError(f"fixture needs {total_sentences} signal codes; max {_CODE_SPACE}")
    rng = random.Random(seed ^ 0x5F1C)
    codes = rng.sample(range(_CODE_SPACE), total_sentences)

    projects_meta = []
    expected: dict[str, list[tuple[str, int, str]]] = {}
    cursor = 0
    for p_index, pid in enumerate(project_ids):
        n_sent = positives[pid] + _EXTRA_SENTENCES
        project_dir = out_dir / "projects" / pid
        repo_dir = project_dir / "repo"
        sentences = []
        paired_functions = []
        expected[pid] = []
        for i in range(n_sent):
            a, b, c, d = _code_tokens(codes[cursor])
            cursor += 1
            sentences.append(_SENTENCE_TMPL.format(a=a, b=b, c=c, d=d))
            paired_functions.append(_PAIRED_TMPL.format(a=a, b=b, c=c, d=d, i=i))
            expected[pid].append((f"{a}_{b}_{c}_{d}_step_{i}", i, sentences[-1]))
        distractors = [
            _DISTRACTOR_TMPL.format(fill=f"fill{(p_index * 11 + d * 3) % 40:02d}", d=d)
            for d in range(_N_DISTRACTORS)
        ]
        trivials = [_TRIVIAL_TMPL.format(t=t) for t in range(_N_TRIVIAL)]

        (repo_dir / "src").mkdir(parents=True)
        (repo_dir / "src" / "core.py").write_text(
            '"""Core scoring routines."""\n\n\n' + "\n\n".join(paired_functions),
            encoding="utf-8",
        )
        (repo_dir / "src" / "util.py").write_text(
            '"""Support helpers."""\n\n\n' + "\n\n".join(distractors + trivials),
            encoding="utf-8",
        )
        (repo_dir / "tests").mkdir(parents=True)
        (repo_dir / "tests" / "test_core.py").write_text(
            "def test_placeholder():\n    assert True\n", encoding="utf-8",
        )
        write_json(project_dir / "paper.json", _paper_doc(pid, sentences))
        projects_meta.append({
            "project_id": pid,
            "paper_path": str(project_dir / "paper.json"),
            "repo_path": str(repo_dir),
        })

    labels = _script_labels(out_dir, cfg, projects_meta, positives, expected)
    write_records(out_dir / "labels.jsonl", labels)
    manifest = {
        "n_projects": n_projects,
        "seed": seed,
        "projects": projects_meta,
        "positives_per_project": positives,
        "expected_positive_totals": {
            name: sum(positives[pid] for pid in getattr(split, name))
            for name in ("train", "validation", "test")
        },
        "labels_path": str(out_dir / "labels.jsonl"),
    }
    write_json(out_dir / "fixture.json", manifest)
    return manifest


def _script_labels(
    out_dir: Path,
    cfg: dict[str, Any],
    projects_meta: list[dict[str, str]],
    positives: dict[str, int],
    expected: dict[str, list[tuple[str, int, str]]],
) -> list[dict[str, str]]:
    """Run the real early pipeline in a scratch workspace to learn task ids."""
    scratch = Path(tempfile.mkdtemp(prefix="fixture-gen-"))
    try:
        ws = init_workspace(scratch / "ws")
        manifest = ws.load_manifest()
        for meta in projects_meta:
            project = Project(meta["project_id"], meta["paper_path"], meta["repo_path"])
            manifest = register_project(manifest, project)
        ws.save_manifest(manifest)
        for project in manifest.projects:
            pipeline.stage_ingest_paper(ws, cfg, project)
            pipeline.stage_ingest_code(ws, cfg, project)
        pipeline.stage_embed(ws, cfg)
        pipeline.stage_retrieve(ws, cfg)
        pipeline.stage_tasks(ws, cfg)

        labels: list[dict[str, str]] = []
        for meta in projects_meta:
            pid = meta["project_id"]
            sentences = {s.sentence_id: s for s in pipeline._load_sentences(ws, pid)}
            functions = {f.function_id: f for f in pipeline._load_functions(ws, pid)}
            tasks = {}
            for record in load_records(ws.tasks_path(pid)):
                task = AnnotationTask.from_record(record)
                tasks[task.sentence_id] = task
            n_sent = positives[pid] + _EXTRA_SENTENCES
            if len(sentences) != n_sent:
                raise RuntimeError(
                    f"fixture self-check: {pid} extracted {len(sentences)} sentences, "
                    f"expected {n_sent}"
                )
            for name, i, text in expected[pid]:
                sentence_id = f"{pid}:s{i:05d}"
                sentence = sentences.get(sentence_id)
                if sentence is None or sentence.text != text:
                    raise RuntimeError(f"fixture self-check: sentence order drifted in {pid}")
                task = tasks.get(sentence_id)
                if task is None:
                    raise RuntimeError(f"fixture self-check: no task for {sentence_id}")
                top1 = functions[task.function_id]
                if top1.qualified_name != name:
                    raise RuntimeError(
                        f"fixture self-check: Top-1 for {sentence_id} is "
                        f"{top1.qualified_name}, expected {name}"
                    )
                if i < positives[pid]:
                    verdicts = ("consistent", "consistent", "consistent")
                else:
                    verdicts = _DISCARD_PATTERNS[(i - positives[pid]) % len(_DISCARD_PATTERNS)]
                for annotator, verdict in zip(ANNOTATORS, verdicts):
                    labels.append({
                        "task_id": task.task_id,
                        "annotator_id": annotator,
                        "verdict": verdict,
                    })
        return labels
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
