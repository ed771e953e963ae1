"""Top-k candidate retrieval and annotation-task generation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .code_ingest import FunctionUnit
from .embedding import EmbeddingVector
from .ioutil import ValidationError, stable_id


@dataclass
class RankedCandidates:
    sentence_id: str
    ranked: list[tuple[str, float]]  # (function_id, score), scores non-increasing
    k: int

    def to_record(self) -> dict[str, Any]:
        return {
            "sentence_id": self.sentence_id,
            "ranked": [[function_id, score] for function_id, score in self.ranked],
            "k": self.k,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "RankedCandidates":
        return cls(
            sentence_id=record["sentence_id"],
            ranked=[(fid, float(score)) for fid, score in record["ranked"]],
            k=int(record["k"]),
        )


class FunctionIndex:
    """Frozen per-project index over unit-norm function vectors."""

    def __init__(self, vectors: Sequence[EmbeddingVector]):
        if not vectors:
            raise ValidationError("cannot build an index from zero vectors")
        dims = {v.dim for v in vectors}
        if len(dims) != 1:
            raise ValidationError(f"inconsistent vector dims in index: {sorted(dims)}")
        # Sort by id so equal-score ties resolve without a secondary sort pass.
        ordered = sorted(vectors, key=lambda v: v.unit_id)
        self.ids = [v.unit_id for v in ordered]
        self.matrix = np.stack([v.values for v in ordered])

    def __len__(self) -> int:
        return len(self.ids)


def retrieve_top_k(
    sentence_vec: EmbeddingVector, index: FunctionIndex, k: int = 10
) -> RankedCandidates:
    """Exact top-k by cosine; ties broken by ascending function_id."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if sentence_vec.dim != index.matrix.shape[1]:
        raise ValidationError(
            f"dimension mismatch: sentence {sentence_vec.dim}, index {index.matrix.shape[1]}"
        )
    scores = np.clip(index.matrix @ sentence_vec.values, -1.0, 1.0)
    # stable sort over id-ordered rows = descending score with ascending-id ties
    order = np.argsort(-scores, kind="stable")[:k]
    ranked = [(index.ids[i], float(scores[i])) for i in order]
    return RankedCandidates(sentence_id=sentence_vec.unit_id, ranked=ranked, k=k)


@dataclass
class AnnotationTask:
    task_id: str
    sentence_id: str
    function_id: str
    sentence_text: str
    function_body: str  # normalized
    file_path: str
    qualified_name: str
    doc_comment: str | None
    keyword_hits: list[str]
    status: str = "open"  # open | complete | discarded

    def to_record(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "sentence_id": self.sentence_id,
            "function_id": self.function_id,
            "sentence_text": self.sentence_text,
            "function_body": self.function_body,
            "context": {
                "file_path": self.file_path,
                "qualified_name": self.qualified_name,
                "doc_comment": self.doc_comment,
            },
            "keyword_hits": self.keyword_hits,
            "status": self.status,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "AnnotationTask":
        context = record["context"]
        return cls(
            task_id=record["task_id"],
            sentence_id=record["sentence_id"],
            function_id=record["function_id"],
            sentence_text=record["sentence_text"],
            function_body=record["function_body"],
            file_path=context["file_path"],
            qualified_name=context["qualified_name"],
            doc_comment=context["doc_comment"],
            keyword_hits=list(record["keyword_hits"]),
            status=record["status"],
        )


def task_id_for(sentence_id: str, function_id: str) -> str:
    return stable_id(sentence_id, function_id, prefix="t")


def generate_annotation_tasks(
    ranked_lists: Sequence[RankedCandidates],
    sentences_by_id: dict[str, Any],
    functions_by_id: dict[str, FunctionUnit],
) -> tuple[list[AnnotationTask], list[dict[str, str]]]:
    """One open task per retrievable sentence, pairing it with its Top-1 candidate.

    Sentences with empty candidate lists are skipped and recorded.
    """
    tasks: list[AnnotationTask] = []
    skips: list[dict[str, str]] = []
    for candidates in ranked_lists:
        if not candidates.ranked:
            skips.append({"sentence_id": candidates.sentence_id, "reason": "no candidates"})
            continue
        function_id = candidates.ranked[0][0]
        sentence = sentences_by_id[candidates.sentence_id]
        function = functions_by_id[function_id]
        tasks.append(AnnotationTask(
            task_id=task_id_for(candidates.sentence_id, function_id),
            sentence_id=candidates.sentence_id,
            function_id=function_id,
            sentence_text=sentence.text,
            function_body=function.normalized_body,
            file_path=function.file_path,
            qualified_name=function.qualified_name,
            doc_comment=function.doc_comment,
            keyword_hits=list(sentence.keyword_hits),
        ))
    return tasks, skips
