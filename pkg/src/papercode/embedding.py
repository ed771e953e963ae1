"""Unit-norm embeddings via pluggable providers; self-contained lexical tf-idf default."""

from __future__ import annotations

import hashlib
import json
import math
import re
import struct
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .code_ingest import FunctionUnit
from .ioutil import ValidationError

NORM_TOLERANCE = 1e-6

_CHUNK = re.compile(r"[A-Za-z0-9]+")
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


def tokenize_mixed(text: str) -> list[str]:
    """Lowercased subtokens: identifiers split on underscores and camelCase,
    punctuation stripped, numbers kept."""
    tokens: list[str] = []
    for chunk in _CHUNK.findall(text):
        for part in _CAMEL.split(chunk):
            if part:
                tokens.append(part.lower())
    return tokens


@dataclass
class EmbeddingVector:
    unit_id: str
    values: np.ndarray  # unit L2 norm

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Dot product of unit vectors, clamped to [-1, 1]."""
    if u.dim != v.dim:
        raise ValidationError(f"dimension mismatch: {u.dim} vs {v.dim}")
    return float(min(1.0, max(-1.0, float(np.dot(u.values, v.values)))))


def _normalize(values: np.ndarray) -> np.ndarray | None:
    norm = float(np.linalg.norm(values))
    if norm == 0.0 or not math.isfinite(norm):
        return None
    return values / norm


# --- lexical provider -------------------------------------------------------------


@dataclass
class LexicalModelState:
    vocabulary: dict[str, int]
    idf: np.ndarray
    dim: int
    hash_dim: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "vocabulary": self.vocabulary,
            "idf": [float(x) for x in self.idf],
            "dim": self.dim,
            "hash_dim": self.hash_dim,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "LexicalModelState":
        raw = json.loads(text)
        return cls(
            vocabulary=raw["vocabulary"],
            idf=np.asarray(raw["idf"], dtype=np.float64),
            dim=int(raw["dim"]),
            hash_dim=int(raw["hash_dim"]),
        )


def _hash_index(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


def fit_lexical(corpus: Iterable[str], hash_dim: int = 0) -> LexicalModelState:
    """Fit idf weights over the combined corpus: idf = ln((1+N)/(1+df)) + 1."""
    doc_count = 0
    df: Counter[str] = Counter()
    for text in corpus:
        doc_count += 1
        df.update(set(tokenize_mixed(text)))
    if doc_count == 0:
        raise ValidationError("cannot fit lexical model on an empty corpus")
    vocab_tokens = sorted(df)
    vocabulary = {token: i for i, token in enumerate(vocab_tokens)}
    idf = np.array(
        [math.log((1 + doc_count) / (1 + df[token])) + 1.0 for token in vocab_tokens],
        dtype=np.float64,
    )
    dim = hash_dim if hash_dim > 0 else len(vocab_tokens)
    return LexicalModelState(vocabulary=vocabulary, idf=idf, dim=dim, hash_dim=hash_dim)


def embed_lexical(state: LexicalModelState, text: str) -> np.ndarray | None:
    """tf*idf vector, unit-normalized; None when no token is in vocabulary."""
    counts = Counter(t for t in tokenize_mixed(text) if t in state.vocabulary)
    if not counts:
        return None
    values = np.zeros(state.dim, dtype=np.float64)
    for token, tf in counts.items():
        col = state.vocabulary[token]
        weight = tf * state.idf[col]
        index = _hash_index(token, state.dim) if state.hash_dim > 0 else col
        values[index] += weight
    return _normalize(values)


class LexicalProvider:
    """Self-contained default embedder (bag of subtokens, tf-idf weighted)."""

    kind = "lexical"

    def __init__(self, state: LexicalModelState):
        self.state = state

    @classmethod
    def fit(cls, corpus: Iterable[str], hash_dim: int = 0) -> "LexicalProvider":
        return cls(fit_lexical(corpus, hash_dim=hash_dim))

    @property
    def dim(self) -> int:
        return self.state.dim

    def embed_units(
        self, units: Sequence[tuple[str, str]]
    ) -> tuple[list[EmbeddingVector], list[str]]:
        vectors: list[EmbeddingVector] = []
        unembeddable: list[str] = []
        for unit_id, text in units:
            values = embed_lexical(self.state, text)
            if values is None:
                unembeddable.append(unit_id)
            else:
                vectors.append(EmbeddingVector(unit_id=unit_id, values=values))
        return vectors, unembeddable


class FileProvider:
    """Serves pre-computed vectors from a vector store file, re-normalized."""

    kind = "file"

    def __init__(self, path: Path):
        self.dim, vectors = read_vectors(Path(path))
        self._by_id = {v.unit_id: v for v in vectors}

    def embed_units(
        self, units: Sequence[tuple[str, str]]
    ) -> tuple[list[EmbeddingVector], list[str]]:
        missing = [unit_id for unit_id, _ in units if unit_id not in self._by_id]
        if missing:
            raise ValidationError(
                "file provider is missing vectors for: " + ", ".join(sorted(missing))
            )
        return [self._by_id[unit_id] for unit_id, _ in units], []


class RemoteProvider:
    """Batched requests to an embedding service; retries with exponential backoff."""

    kind = "remote"

    def __init__(self, endpoint: str, timeout: float = 10.0, batch_size: int = 32,
                 max_retries: int = 3, backoff: float = 0.2):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.backoff = backoff

    def _post(self, texts: list[str]) -> list[list[float]]:
        payload = json.dumps({"texts": texts}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint + "/embed", data=payload,
            headers={"Content-Type": "application/json"}, method="POST",
        )
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    body = json.loads(response.read().decode("utf-8"))
                vectors = body.get("vectors")
                if not isinstance(vectors, list) or len(vectors) != len(texts):
                    raise ValidationError("embedding service returned a malformed response")
                return vectors
            except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise ValidationError(f"embedding service unreachable after retries: {last_error}")

    def embed_units(
        self, units: Sequence[tuple[str, str]]
    ) -> tuple[list[EmbeddingVector], list[str]]:
        vectors: list[EmbeddingVector] = []
        unembeddable: list[str] = []
        dim: int | None = None
        for start in range(0, len(units), self.batch_size):
            batch = units[start:start + self.batch_size]
            raw = self._post([text for _, text in batch])
            for (unit_id, _), row in zip(batch, raw):
                values = np.asarray(row, dtype=np.float64)
                if dim is None:
                    dim = values.shape[0]
                elif values.shape[0] != dim:
                    raise ValidationError("embedding service returned inconsistent dimensions")
                normalized = _normalize(values)
                if normalized is None:
                    unembeddable.append(unit_id)
                else:
                    vectors.append(EmbeddingVector(unit_id=unit_id, values=normalized))
        return vectors, unembeddable


def function_text(unit: FunctionUnit) -> str:
    """Embedding text for a function: body plus name and doc-comment cues."""
    parts = [unit.normalized_body, unit.qualified_name]
    if unit.doc_comment:
        parts.append(unit.doc_comment)
    return "\n".join(parts)


# --- vector store -----------------------------------------------------------------

_MAGIC = b"PCV1"


def write_vectors(path: Path, dim: int, vectors: Sequence[EmbeddingVector]) -> None:
    """Binary store: header (magic, dim, count), then (id, float32-LE array) records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", dim, len(vectors)))
        for vector in vectors:
            if vector.dim != dim:
                raise ValidationError(f"vector {vector.unit_id} has dim {vector.dim}, expected {dim}")
            encoded = vector.unit_id.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(vector.values.astype("<f4").tobytes())


def read_vectors(path: Path) -> tuple[int, list[EmbeddingVector]]:
    """Read a binary vector store; vectors are re-normalized after f32 storage."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValidationError(f"{path}: not a vector store")
        dim, count = struct.unpack("<II", fh.read(8))
        vectors: list[EmbeddingVector] = []
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            unit_id = fh.read(id_len).decode("utf-8")
            values = np.frombuffer(fh.read(4 * dim), dtype="<f4").astype(np.float64)
            normalized = _normalize(values)
            if normalized is None:
                raise ValidationError(f"{path}: zero vector for {unit_id}")
            vectors.append(EmbeddingVector(unit_id=unit_id, values=normalized))
    return dim, vectors


def write_vectors_text(path: Path, dim: int, vectors: Sequence[EmbeddingVector]) -> None:
    """Line-delimited debugging mirror of the binary store."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{dim} {len(vectors)}\n")
        for vector in vectors:
            row = " ".join(repr(float(x)) for x in vector.values)
            fh.write(f"{vector.unit_id}\t{row}\n")


def read_vectors_text(path: Path) -> tuple[int, list[EmbeddingVector]]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValidationError(f"{path}: malformed vector store header")
        dim, count = int(header[0]), int(header[1])
        vectors = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            unit_id, _, row = line.rstrip("\n").partition("\t")
            values = np.asarray([float(x) for x in row.split()], dtype=np.float64)
            if values.shape[0] != dim:
                raise ValidationError(f"{path}:{lineno}: expected dim {dim}")
            normalized = _normalize(values)
            if normalized is None:
                raise ValidationError(f"{path}:{lineno}: zero vector")
            vectors.append(EmbeddingVector(unit_id=unit_id, values=normalized))
    if len(vectors) != count:
        raise ValidationError(f"{path}: header count {count} != {len(vectors)} records")
    return dim, vectors
