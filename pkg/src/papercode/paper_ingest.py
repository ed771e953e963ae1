"""Structured paper documents -> filtered, implementation-relevant sentence units."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .ioutil import ValidationError, read_json

SECTION_KINDS = frozenset({
    "methods", "experiments", "background", "related_work", "results",
    "conclusion", "acknowledgments", "references", "appendix", "abstract", "other",
})

# Sections that never describe implementation; sentences inside them are dropped.
EXCLUDED_KINDS = frozenset({"references", "appendix", "conclusion", "acknowledgments"})

# First matching rule wins; ordering resolves compound headings like
# "Background and Related Work" deterministically.
_SECTION_RULES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("references", ("reference", "bibliograph")),
    ("acknowledgments", ("acknowledg",)),
    ("appendix", ("appendi",)),
    ("conclusion", ("conclusion", "concluding")),
    ("abstract", ("abstract",)),
    ("related_work", ("related work", "prior work")),
    ("background", ("background", "introduction", "preliminar")),
    ("methods", ("method", "approach", "implementation")),
    ("experiments", ("result", "evaluation", "experiment")),
)


@dataclass
class Section:
    heading: str
    kind: str
    paragraphs: list[str]


@dataclass
class StructuredPaperDocument:
    title: str
    sections: list[Section]


@dataclass
class SentenceUnit:
    sentence_id: str
    text: str
    section_heading: str
    section_kind: str
    section_index: int
    paragraph_index: int
    char_span: tuple[int, int]
    keyword_hits: list[str] = field(default_factory=list)

    def to_record(self) -> dict[str, Any]:
        return {
            "sentence_id": self.sentence_id,
            "text": self.text,
            "section_heading": self.section_heading,
            "section_kind": self.section_kind,
            "section_index": self.section_index,
            "paragraph_index": self.paragraph_index,
            "char_span": list(self.char_span),
            "keyword_hits": self.keyword_hits,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "SentenceUnit":
        return cls(
            sentence_id=record["sentence_id"],
            text=record["text"],
            section_heading=record["section_heading"],
            section_kind=record["section_kind"],
            section_index=record["section_index"],
            paragraph_index=record["paragraph_index"],
            char_span=(record["char_span"][0], record["char_span"][1]),
            keyword_hits=list(record["keyword_hits"]),
        )


def classify_section(heading: str) -> str:
    """Map a heading to a section kind by case-insensitive keyword rules."""
    lowered = heading.lower()
    for kind, needles in _SECTION_RULES:
        if any(needle in lowered for needle in needles):
            return kind
    return "other"


def _schema_error(location: str, message: str) -> ValidationError:
    return ValidationError(f"paper document: {location}: {message}")


def parse_paper_document(raw: Any) -> StructuredPaperDocument:
    """Validate the native schema; unknown extra fields are ignored."""
    if not isinstance(raw, dict):
        raise _schema_error("$", "expected an object")
    title = raw.get("title", "")
    if not isinstance(title, str):
        raise _schema_error("title", "expected a string")
    sections_raw = raw.get("sections")
    if not isinstance(sections_raw, list):
        raise _schema_error("sections", "expected a list")
    if not sections_raw:
        raise _schema_error("sections", "document has no sections")
    sections = []
    for i, sec in enumerate(sections_raw):
        loc = f"sections[{i}]"
        if not isinstance(sec, dict):
            raise _schema_error(loc, "expected an object")
        heading = sec.get("heading")
        if not isinstance(heading, str):
            raise _schema_error(f"{loc}.heading", "expected a string")
        paragraphs = sec.get("paragraphs")
        if not isinstance(paragraphs, list) or not all(isinstance(p, str) for p in paragraphs):
            raise _schema_error(f"{loc}.paragraphs", "expected a list of strings")
        heading = heading.strip()
        sections.append(Section(heading=heading, kind=classify_section(heading), paragraphs=paragraphs))
    return StructuredPaperDocument(title=title.strip(), sections=sections)


def load_paper(path: Path) -> StructuredPaperDocument:
    return parse_paper_document(read_json(Path(path)))


# --- sentence segmentation ---------------------------------------------------

# Tokens whose trailing period does not end a sentence.
_ABBREVIATIONS = frozenset({
    "al", "et", "fig", "figs", "eq", "eqs", "sec", "secs", "ref", "refs",
    "tab", "no", "vs", "cf", "etc", "resp", "approx", "ca", "i.e", "e.g",
    "dr", "mr", "mrs", "ms", "prof", "st", "vol", "pp", "ed", "eds",
})

_BOUNDARY = re.compile(r"[.!?]+(?=\s+[A-Z0-9])")


def _protected(paragraph: str, terminator_start: int) -> bool:
    """True when the terminator run starting at `terminator_start` must not split."""
    match = re.search(r"(\S+)$", paragraph[:terminator_start])
    if not match:
        return True
    core = match.group(1).strip("()[]{}\"'")
    if not core:
        return False
    lowered = core.lower()
    if lowered in _ABBREVIATIONS or lowered.rstrip(".") in _ABBREVIATIONS:
        return True
    # Single-letter initials ("J. Smith").
    if len(core) == 1 and core.isalpha() and core.isupper():
        return True
    return False


def segment_sentences(paragraph: str) -> list[tuple[str, tuple[int, int]]]:
    """Split a paragraph into (text, (start, end)) sentence spans.

    Splits on ./?/! followed by whitespace and an uppercase letter, digit, or
    opening parenthesis, with protection for common abbreviations and initials.
    Periods inside decimals and version strings never match (no whitespace
    follows them). Spans index the original paragraph, never overlap, and
    joining the texts with single spaces reproduces the paragraph modulo
    whitespace.
    """
    if not paragraph or not paragraph.strip():
        return []
    breaks: list[int] = []
    for match in _BOUNDARY.finditer(paragraph):
        end = match.end()
        if not _protected(paragraph, match.start()):
            breaks.append(end)
    sentences: list[tuple[str, tuple[int, int]]] = []
    start = 0
    for brk in [*breaks, len(paragraph)]:
        chunk = paragraph[start:brk]
        stripped = chunk.strip()
        if stripped:
            lead = len(chunk) - len(chunk.lstrip())
            s = start + lead
            e = s + len(stripped)
            sentences.append((paragraph[s:e], (s, e)))
        start = brk
    return sentences


# --- keyword filtering --------------------------------------------------------

_WORD = re.compile(r"[A-Za-z0-9]+")


def keyword_hits(text: str, keywords: list[str]) -> list[str]:
    """Keywords (stems) that prefix-match any word token, in keyword-list order."""
    tokens = {t.lower() for t in _WORD.findall(text)}
    hits = []
    for keyword in keywords:
        stem = keyword.lower()
        if any(token.startswith(stem) for token in tokens):
            hits.append(keyword)
    return hits


def extract_candidate_sentences(
    doc: StructuredPaperDocument,
    project_id: str,
    paper_cfg: dict[str, Any],
) -> list[SentenceUnit]:
    """Drop excluded sections, segment, and keep implementation-relevant sentences."""
    keywords = list(paper_cfg["keywords"])
    filtering = bool(paper_cfg["keyword_filtering"])
    if filtering and not keywords:
        raise ValidationError("keyword filtering enabled with empty keyword list")
    min_hits = int(paper_cfg["min_keyword_hits"])
    min_tokens = int(paper_cfg["min_sentence_tokens"])
    methods_free_pass = bool(paper_cfg["methods_pass_unconditionally"])

    units: list[SentenceUnit] = []
    ordinal = 0
    for section_index, section in enumerate(doc.sections):
        if section.kind in EXCLUDED_KINDS:
            continue
        for paragraph_index, paragraph in enumerate(section.paragraphs):
            for text, span in segment_sentences(paragraph):
                if len(_WORD.findall(text)) < min_tokens:
                    continue
                hits = keyword_hits(text, keywords)
                if filtering and len(hits) < min_hits:
                    if not (methods_free_pass and section.kind == "methods"):
                        continue
                unit = SentenceUnit(
                    sentence_id=f"{project_id}:s{ordinal:05d}",
                    text=text,
                    section_heading=section.heading,
                    section_kind=section.kind,
                    section_index=section_index,
                    paragraph_index=paragraph_index,
                    char_span=span,
                    keyword_hits=hits,
                )
                units.append(unit)
                ordinal += 1
    return units


# --- TEI-style XML converter ---------------------------------------------------


def _strip_ns(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _text_of(elem: ET.Element) -> str:
    return " ".join("".join(elem.itertext()).split())


def tei_to_native(xml_text: str) -> dict[str, Any]:
    """Convert TEI-style XML (as emitted by academic PDF parsers) to the native schema."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise ValidationError(f"malformed TEI XML: {exc}") from exc

    title = ""
    sections: list[dict[str, Any]] = []
    for elem in root.iter():
        tag = _strip_ns(elem.tag)
        if tag == "title" and not title:
            title = _text_of(elem)
        elif tag == "div":
            heading = ""
            paragraphs = []
            for child in elem:
                child_tag = _strip_ns(child.tag)
                if child_tag == "head":
                    heading = _text_of(child)
                elif child_tag == "p":
                    text = _text_of(child)
                    if text:
                        paragraphs.append(text)
            if heading or paragraphs:
                sections.append({"heading": heading, "paragraphs": paragraphs})
    if not sections:
        raise ValidationError("TEI document contains no sections")
    return {"title": title, "sections": sections}
