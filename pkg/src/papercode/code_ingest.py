"""Repository walking and syntax-tree function extraction."""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .ioutil import ValidationError


@dataclass
class SourceFile:
    file_path: str  # repo-relative, forward slashes
    content: str
    line_count: int
    nonempty_lines: int
    decode_errors: bool = False


@dataclass
class FunctionUnit:
    function_id: str
    project_id: str
    qualified_name: str
    file_path: str
    start_line: int  # 1-based inclusive, the `def` line
    end_line: int
    raw_body: str
    normalized_body: str
    doc_comment: str | None
    decorator_names: list[str]
    is_method: bool
    trivial: bool
    complexity: int

    def to_record(self) -> dict[str, Any]:
        return {
            "function_id": self.function_id,
            "project_id": self.project_id,
            "qualified_name": self.qualified_name,
            "file_path": self.file_path,
            "start_line": self.start_line,
            "end_line": self.end_line,
            "raw_body": self.raw_body,
            "normalized_body": self.normalized_body,
            "doc_comment": self.doc_comment,
            "decorator_names": self.decorator_names,
            "is_method": self.is_method,
            "trivial": self.trivial,
            "complexity": self.complexity,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "FunctionUnit":
        return cls(**{f: record[f] for f in (
            "function_id", "project_id", "qualified_name", "file_path", "start_line",
            "end_line", "raw_body", "normalized_body", "doc_comment", "decorator_names",
            "is_method", "trivial", "complexity",
        )})


@dataclass
class IngestWarning:
    file_path: str
    kind: str  # unreadable | parse_failure | decode_errors
    detail: str

    def to_record(self) -> dict[str, Any]:
        return {"file_path": self.file_path, "kind": self.kind, "detail": self.detail}


def scan_repository(
    repo_path: Path, code_cfg: dict[str, Any]
) -> tuple[list[SourceFile], list[IngestWarning]]:
    """Collect source files recursively in stable lexicographic path order."""
    repo_path = Path(repo_path)
    if not repo_path.is_dir():
        raise ValidationError(f"repository path does not exist: {repo_path}")
    extensions = tuple(code_cfg["source_extensions"])
    excluded = set(code_cfg["exclude_dirs"])

    files: list[SourceFile] = []
    warnings: list[IngestWarning] = []
    candidates = []
    for path in repo_path.rglob("*"):
        if not path.is_file() or path.suffix not in extensions:
            continue
        rel_parts = path.relative_to(repo_path).parts
        if any(part in excluded or part.startswith(".") for part in rel_parts[:-1]):
            continue
        if rel_parts[-1].startswith("."):
            continue
        candidates.append(path)
    for path in sorted(candidates, key=lambda p: p.relative_to(repo_path).as_posix()):
        rel = path.relative_to(repo_path).as_posix()
        try:
            data = path.read_bytes()
        except OSError as exc:
            warnings.append(IngestWarning(rel, "unreadable", str(exc)))
            continue
        try:
            content = data.decode("utf-8")
            decode_errors = False
        except UnicodeDecodeError:
            content = data.decode("utf-8", errors="replace")
            decode_errors = True
            warnings.append(IngestWarning(rel, "decode_errors", "invalid UTF-8 replaced"))
        lines = content.split("\n")
        files.append(SourceFile(
            file_path=rel,
            content=content,
            line_count=len(lines),
            nonempty_lines=sum(1 for line in lines if line.strip()),
            decode_errors=decode_errors,
        ))
    return files, warnings


# --- complexity ----------------------------------------------------------------

_BRANCH_NODES = (ast.If, ast.IfExp, ast.For, ast.AsyncFor, ast.While, ast.ExceptHandler)


def _complexity(node: ast.AST) -> int:
    """1 + branching constructs lexically inside `node`, excluding nested defs."""
    count = 1
    stack = list(ast.iter_child_nodes(node))
    while stack:
        child = stack.pop()
        if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            continue  # nested definitions are separate units
        if isinstance(child, _BRANCH_NODES):
            count += 1
        elif isinstance(child, ast.BoolOp):
            count += len(child.values) - 1
        elif isinstance(child, ast.comprehension):
            count += len(child.ifs)
        elif isinstance(child, ast.match_case):
            count += 1
        stack.extend(ast.iter_child_nodes(child))
    return count


def _decorator_name(expr: ast.expr) -> str:
    target = expr.func if isinstance(expr, ast.Call) else expr
    try:
        return ast.unparse(target)
    except Exception:
        return "<decorator>"


def _body_statements(node: ast.FunctionDef | ast.AsyncFunctionDef) -> int:
    """Statements in the immediate body, not counting a leading docstring."""
    body = node.body
    if body and isinstance(body[0], ast.Expr) and isinstance(body[0].value, ast.Constant) \
            and isinstance(body[0].value.value, str):
        body = body[1:]
    return len(body)


def extract_functions(
    file: SourceFile, project_id: str, min_statements: int = 2
) -> tuple[list[FunctionUnit], list[IngestWarning]]:
    """Emit one unit per function/method definition, nested definitions included."""
    try:
        tree = ast.parse(file.content)
    except (SyntaxError, ValueError) as exc:
        return [], [IngestWarning(file.file_path, "parse_failure", str(exc))]

    lines = file.content.split("\n")
    units: list[FunctionUnit] = []

    def visit(node: ast.AST, scope: list[str], in_class: bool) -> None:
        for child in ast.iter_child_nodes(node):
            if isinstance(child, ast.ClassDef):
                visit(child, [*scope, child.name], True)
            elif isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef)):
                qualified = ".".join([*scope, child.name])
                start, end = child.lineno, child.end_lineno or child.lineno
                raw_body = "\n".join(lines[start - 1:end])
                normalized = normalize_code(raw_body)
                units.append(FunctionUnit(
                    function_id=f"{project_id}:{file.file_path}:{qualified}:{start}",
                    project_id=project_id,
                    qualified_name=qualified,
                    file_path=file.file_path,
                    start_line=start,
                    end_line=end,
                    raw_body=raw_body,
                    normalized_body=normalized,
                    doc_comment=ast.get_docstring(child),
                    decorator_names=[_decorator_name(d) for d in child.decorator_list],
                    is_method=in_class,
                    trivial=_body_statements(child) < min_statements,
                    complexity=_complexity(child),
                ))
                visit(child, [*scope, child.name], False)
            else:
                visit(child, scope, in_class)

    visit(tree, [], False)
    return units, []


# --- normalization ---------------------------------------------------------------

_QUOTES = ("'''", '"""', "'", '"')
_PREFIX = re.compile(r"[rRbBuUfF]{0,3}$")


def _string_mask(text: str) -> list[bool]:
    """Per-character flag: inside a string literal (delimiters included)."""
    mask = [False] * len(text)
    i = 0
    delim: str | None = None
    while i < len(text):
        ch = text[i]
        if delim is None:
            if ch == "#":
                # Comment runs to end of line; quotes inside it open nothing.
                j = text.find("\n", i)
                i = len(text) if j == -1 else j
                continue
            if ch in "\"'":
                for q in _QUOTES:
                    if text.startswith(q, i):
                        delim = q
                        for k in range(i, i + len(q)):
                            mask[k] = True
                        i += len(q)
                        break
                continue
            i += 1
        else:
            mask[i] = True
            if ch == "\\" and len(delim) == 1:
                if i + 1 < len(text):
                    mask[i + 1] = True
                i += 2
                continue
            if text.startswith(delim, i):
                for k in range(i, i + len(delim)):
                    mask[k] = True
                i += len(delim)
                delim = None
                continue
            i += 1
    return mask


def normalize_code(raw_body: str) -> str:
    """Canonical whitespace form: no blank lines, no trailing whitespace, and
    runs of 2+ spaces outside string literals collapsed to one (leading
    indentation preserved). Idempotent."""
    mask = _string_mask(raw_body)
    out_lines: list[str] = []
    offset = 0
    for line in raw_body.split("\n"):
        line_mask = mask[offset:offset + len(line)]
        offset += len(line) + 1
        if not line.strip():
            continue
        indent_len = len(line) - len(line.lstrip(" \t"))
        chars: list[str] = list(line[:indent_len])
        i = indent_len
        while i < len(line):
            ch = line[i]
            if ch == " " and not line_mask[i]:
                j = i
                while j < len(line) and line[j] == " " and not line_mask[j]:
                    j += 1
                chars.append(" ")
                i = j
            else:
                chars.append(ch)
                i += 1
        out_lines.append("".join(chars).rstrip())
    return "\n".join(out_lines)
