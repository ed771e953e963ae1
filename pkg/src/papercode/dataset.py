"""Labeled dataset assembly: hybrid negative sampling, project-level splits,
and joint-sequence export."""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass
from typing import Any, Callable, Sequence

from .ioutil import ValidationError, stable_id
from .pairing import RankedCandidates

ORIGINS = ("positive", "hard_negative", "random_negative")
SPLITS = ("train", "validation", "test")


@dataclass
class Example:
    example_id: str
    sentence_id: str
    function_id: str
    label: int  # 1 iff origin == positive
    origin: str
    source_project: str  # project of the sentence
    function_project: str

    def __post_init__(self) -> None:
        if self.origin not in ORIGINS:
            raise ValidationError(f"unknown origin: {self.origin}")
        if (self.label == 1) != (self.origin == "positive"):
            raise ValidationError("label must be 1 exactly for positive origin")
        if self.origin == "hard_negative" and self.function_project != self.source_project:
            raise ValidationError("hard negatives must come from the sentence's own project")
        if self.origin == "random_negative" and self.function_project == self.source_project:
            raise ValidationError("random negatives must come from a different project")

    def to_record(self) -> dict[str, Any]:
        return {
            "example_id": self.example_id,
            "sentence_id": self.sentence_id,
            "function_id": self.function_id,
            "label": self.label,
            "origin": self.origin,
            "source_project": self.source_project,
            "function_project": self.function_project,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "Example":
        return cls(**{f: record[f] for f in (
            "example_id", "sentence_id", "function_id", "label", "origin",
            "source_project", "function_project",
        )})


@dataclass
class SplitAssignment:
    train: list[str]
    validation: list[str]
    test: list[str]

    def split_of(self, project_id: str) -> str:
        for name in SPLITS:
            if project_id in set(getattr(self, name)):
                return name
        raise ValidationError(f"project not assigned to any split: {project_id}")

    def to_record(self) -> dict[str, Any]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "SplitAssignment":
        return cls(train=list(record["train"]), validation=list(record["validation"]),
                   test=list(record["test"]))


@dataclass
class SamplingConfig:
    n_hard: int = 2
    n_random: int = 3
    hard_band: tuple[int, int] = (5, 10)  # inclusive ranks
    seed: int = 13
    constrain_random_to_split: bool = True

    def __post_init__(self) -> None:
        lo, hi = self.hard_band
        if not (1 <= lo <= hi):
            raise ValidationError("hard band must satisfy 1 <= lo <= hi")
        if self.n_hard > hi - lo + 1:
            raise ValidationError("n_hard exceeds the band size")
        if self.n_random < 0:
            raise ValidationError("n_random must be >= 0")


def derived_rng(seed: int, *parts: str) -> random.Random:
    """Per-positive RNG stream so parallel and serial sampling runs agree."""
    digest = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return random.Random(seed ^ int.from_bytes(digest[:8], "big"))


def _example_id(sentence_id: str, function_id: str) -> str:
    return stable_id(sentence_id, function_id, prefix="x")


def sample_hard_negatives(
    positive: Example,
    ranked: RankedCandidates,
    cfg: SamplingConfig,
) -> tuple[list[Example], list[str]]:
    """Uniform draws without replacement from the same-repository rank band.

    The annotated-positive function is excluded. When the band is short or
    empty the draw shrinks with a warning; random negatives are never
    substituted in silently.
    """
    warnings: list[str] = []
    lo, hi = cfg.hard_band
    if hi > len(ranked.ranked):
        hi = len(ranked.ranked)
        warnings.append(
            f"{positive.sentence_id}: hard band truncated to ranks {lo}..{hi} "
            f"({len(ranked.ranked)} candidates)"
        )
    band = [fid for fid, _ in ranked.ranked[lo - 1:hi] if fid != positive.function_id]
    if len(band) < cfg.n_hard:
        warnings.append(
            f"{positive.sentence_id}: only {len(band)} hard candidates for n_hard={cfg.n_hard}"
        )
    rng = derived_rng(cfg.seed, "hard", positive.sentence_id)
    drawn = rng.sample(band, min(cfg.n_hard, len(band)))
    examples = [
        Example(
            example_id=_example_id(positive.sentence_id, fid),
            sentence_id=positive.sentence_id,
            function_id=fid,
            label=0,
            origin="hard_negative",
            source_project=positive.source_project,
            function_project=positive.source_project,
        )
        for fid in drawn
    ]
    return examples, warnings


def sample_random_negatives(
    positive: Example,
    pool: dict[str, str],  # function_id -> project_id, cross-project candidates
    cfg: SamplingConfig,
    split: SplitAssignment | None = None,
) -> tuple[list[Example], list[str]]:
    """Uniform draws from other projects, constrained to the sentence's split."""
    warnings: list[str] = []
    source_split = split.split_of(positive.source_project) if split is not None else None
    eligible = sorted(
        fid for fid, project_id in pool.items()
        if project_id != positive.source_project
        and (
            source_split is None
            or not cfg.constrain_random_to_split
            or split.split_of(project_id) == source_split
        )
    )
    if len(eligible) < cfg.n_random:
        warnings.append(
            f"{positive.sentence_id}: only {len(eligible)} random candidates "
            f"for n_random={cfg.n_random}"
        )
    rng = derived_rng(cfg.seed, "random", positive.sentence_id)
    drawn = rng.sample(eligible, min(cfg.n_random, len(eligible)))
    examples = [
        Example(
            example_id=_example_id(positive.sentence_id, fid),
            sentence_id=positive.sentence_id,
            function_id=fid,
            label=0,
            origin="random_negative",
            source_project=positive.source_project,
            function_project=pool[fid],
        )
        for fid in drawn
    ]
    return examples, warnings


def split_by_project(
    project_ids: Sequence[str], ratios: tuple[int, int, int] = (8, 1, 1), seed: int = 13
) -> SplitAssignment:
    """Seeded shuffle, then contiguous cuts at rounded ratio boundaries."""
    if len(project_ids) < 3:
        raise ValidationError("need at least 3 projects to form three splits")
    if len(set(project_ids)) != len(project_ids):
        raise ValidationError("duplicate project ids in split input")
    total = sum(ratios)
    if total <= 0 or any(r < 0 for r in ratios):
        raise ValidationError("split ratios must be non-negative with a positive sum")
    ids = sorted(project_ids)
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    n_train = round(n * ratios[0] / total)
    n_val = round(n * ratios[1] / total)
    counts = [n_train, n_val, n - n_train - n_val]
    # Rounding on tiny registries can zero a split; move one from the largest.
    for i in range(3):
        while counts[i] < 1:
            donor = max(range(3), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return SplitAssignment(
        train=ids[:counts[0]],
        validation=ids[counts[0]:counts[0] + counts[1]],
        test=ids[counts[0] + counts[1]:],
    )


@dataclass
class AssembledDataset:
    examples: dict[str, list[Example]]  # split name -> examples
    warnings: list[str]
    counts: dict[str, dict[str, int]]

    def split_examples(self, name: str) -> list[Example]:
        return self.examples[name]


def assemble_dataset(
    positives: Sequence[Example],
    ranked_by_sentence: dict[str, RankedCandidates],
    function_projects: dict[str, str],
    split: SplitAssignment,
    cfg: SamplingConfig,
) -> AssembledDataset:
    """Per positive: the positive itself, n_hard in-repo draws, n_random
    cross-repo draws, all landing in the sentence's project split."""
    by_split: dict[str, list[Example]] = {name: [] for name in SPLITS}
    warnings: list[str] = []
    seen_pairs: set[tuple[str, str]] = set()
    for positive in sorted(positives, key=lambda p: p.sentence_id):
        ranked = ranked_by_sentence.get(positive.sentence_id)
        if ranked is None:
            raise ValidationError(
                f"missing retrieval artifacts for positive {positive.sentence_id}"
            )
        split_name = split.split_of(positive.source_project)
        hard, hard_warnings = sample_hard_negatives(positive, ranked, cfg)
        rand, rand_warnings = sample_random_negatives(positive, function_projects, cfg, split)
        warnings.extend(hard_warnings)
        warnings.extend(rand_warnings)
        for example in (positive, *hard, *rand):
            pair = (example.sentence_id, example.function_id)
            if pair in seen_pairs:
                raise ValidationError(f"duplicate pair in dataset: {pair}")
            seen_pairs.add(pair)
            by_split[split_name].append(example)
    for name in SPLITS:
        rng = derived_rng(cfg.seed, "shuffle", name)
        rng.shuffle(by_split[name])
    counts = {
        name: {
            "projects": len(getattr(split, name)),
            "consistent": sum(1 for e in by_split[name] if e.label == 1),
            "inconsistent": sum(1 for e in by_split[name] if e.label == 0),
            "total": len(by_split[name]),
        }
        for name in SPLITS
    }
    return AssembledDataset(examples=by_split, warnings=warnings, counts=counts)


# --- joint-sequence export ------------------------------------------------------

_TOKEN = re.compile(r"\S+")

CLS = "[CLS]"
SEP = "[SEP]"


def count_tokens(text: str) -> int:
    """Default whitespace token count ([CLS]/[SEP] markers count as one each)."""
    return len(_TOKEN.findall(text))


def _prefix_by_tokens(text: str, n_tokens: int) -> str:
    """Cut at a whitespace-token boundary, preserving original inner whitespace."""
    if n_tokens <= 0:
        return ""
    spans = list(_TOKEN.finditer(text))
    if n_tokens >= len(spans):
        return text
    return text[:spans[n_tokens - 1].end()]


def _assemble(sentence: str, code: str) -> str:
    return f"{CLS} {sentence} {SEP} {code} {SEP}" if code else f"{CLS} {sentence} {SEP} {SEP}"


def export_joint_sequences(
    examples: Sequence[Example],
    sentence_texts: dict[str, str],
    function_bodies: dict[str, str],
    token_budget: int = 512,
    token_counter: Callable[[str], int] = count_tokens,
) -> tuple[list[dict[str, Any]], list[dict[str, str]]]:
    """Records of `[CLS] sentence [SEP] code [SEP]` capped at the token budget.

    Over-budget records lose code tokens from the end; the sentence is never
    truncated. Records whose sentence alone busts the budget are skipped with
    an error entry.
    """
    records: list[dict[str, Any]] = []
    errors: list[dict[str, str]] = []
    for example in examples:
        sentence = sentence_texts[example.sentence_id]
        code = function_bodies[example.function_id]
        full = _assemble(sentence, code)
        if token_counter(full) <= token_budget:
            records.append({
                "example_id": example.example_id,
                "label": example.label,
                "text": full,
                "truncated": False,
                "token_count": token_counter(full),
            })
            continue
        if token_counter(_assemble(sentence, "")) > token_budget:
            errors.append({
                "example_id": example.example_id,
                "reason": "sentence plus markers exceeds the token budget",
            })
            continue
        # Largest code-token prefix that fits, found by bisection so external
        # token counters (which may not be whitespace-additive) still work.
        code_tokens = len(_TOKEN.findall(code))
        lo, hi = 0, code_tokens  # fits at lo; full text at hi does not fit
        while lo < hi - 1:
            mid = (lo + hi) // 2
            candidate = _assemble(sentence, _prefix_by_tokens(code, mid))
            if token_counter(candidate) <= token_budget:
                lo = mid
            else:
                hi = mid
        text = _assemble(sentence, _prefix_by_tokens(code, lo))
        records.append({
            "example_id": example.example_id,
            "label": example.label,
            "text": text,
            "truncated": True,
            "token_count": token_counter(text),
        })
    return records, errors
