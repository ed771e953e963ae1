"""Annotation labels, unanimity resolution, and the embedded HTTP service."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlparse

from .ioutil import ValidationError, dumps_record, read_records
from .pairing import AnnotationTask
from .workspace import Workspace

VERDICTS = ("consistent", "inconsistent", "unsure")
OUTCOMES = ("positive", "discarded")


@dataclass
class AnnotatorLabel:
    task_id: str
    annotator_id: str
    verdict: str
    timestamp: str = ""
    client_token: str | None = None

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "task_id": self.task_id,
            "annotator_id": self.annotator_id,
            "verdict": self.verdict,
            "timestamp": self.timestamp,
        }
        if self.client_token:
            record["client_token"] = self.client_token
        return record


@dataclass
class ResolvedDecision:
    task_id: str
    outcome: str  # positive | discarded
    labels: list[AnnotatorLabel]
    required_annotators: int

    def to_record(self) -> dict[str, Any]:
        # Canonical form: annotator-sorted labels without timestamps, so the
        # same label multiset always serializes to identical bytes.
        return {
            "task_id": self.task_id,
            "outcome": self.outcome,
            "labels": [
                {"annotator_id": l.annotator_id, "verdict": l.verdict}
                for l in sorted(self.labels, key=lambda l: l.annotator_id)
            ],
            "required_annotators": self.required_annotators,
        }


def resolve_labels(labels: list[AnnotatorLabel], required_annotators: int) -> ResolvedDecision:
    """Unanimity rule: positive iff all required annotators agree on `consistent`.

    Pure function of the label multiset; order and timing never matter.
    """
    by_annotator = {label.annotator_id for label in labels}
    if len(by_annotator) < required_annotators:
        raise ValidationError(
            f"insufficient labels: {len(by_annotator)} of {required_annotators} annotators"
        )
    unanimous = all(label.verdict == "consistent" for label in labels)
    return ResolvedDecision(
        task_id=labels[0].task_id,
        outcome="positive" if unanimous else "discarded",
        labels=list(labels),
        required_annotators=required_annotators,
    )


class LabelStore:
    """Append-logged label store with auto-resolution and crash-safe writes."""

    def __init__(self, tasks: list[AnnotationTask], log_path: Path, required_annotators: int = 3):
        self.tasks: dict[str, AnnotationTask] = {t.task_id: t for t in tasks}
        self.log_path = Path(log_path)
        self.required_annotators = required_annotators
        self.labels: dict[tuple[str, str], AnnotatorLabel] = {}
        self.decisions: dict[str, ResolvedDecision] = {}
        self.finalized = False
        self._lock = threading.Lock()
        if self.log_path.exists():
            self._replay_log()
        if self._freeze_marker.exists():
            self.finalized = True

    @property
    def _freeze_marker(self) -> Path:
        return self.log_path.with_name("FINALIZED")

    def _replay_log(self) -> None:
        with open(self.log_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    label = AnnotatorLabel(
                        task_id=record["task_id"],
                        annotator_id=record["annotator_id"],
                        verdict=record["verdict"],
                        timestamp=record.get("timestamp", ""),
                        client_token=record.get("client_token"),
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValidationError(
                        f"corrupted annotation store {self.log_path}:{lineno}: {exc}"
                    ) from exc
                if label.verdict not in VERDICTS:
                    raise ValidationError(
                        f"corrupted annotation store {self.log_path}:{lineno}: "
                        f"unknown verdict {label.verdict!r}"
                    )
                if label.task_id in self.tasks:
                    self.labels[(label.task_id, label.annotator_id)] = label
        for task_id in self.tasks:
            self._maybe_resolve(task_id)

    def _append(self, label: AnnotatorLabel) -> None:
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(dumps_record(label.to_record()))
            fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _labels_for(self, task_id: str) -> list[AnnotatorLabel]:
        return [label for (tid, _), label in self.labels.items() if tid == task_id]

    def _maybe_resolve(self, task_id: str) -> None:
        labels = self._labels_for(task_id)
        annotators = {label.annotator_id for label in labels}
        if len(annotators) >= self.required_annotators:
            self.decisions[task_id] = resolve_labels(labels, self.required_annotators)

    def task_status(self, task_id: str) -> str:
        decision = self.decisions.get(task_id)
        if decision is None:
            return "open"
        return "complete" if decision.outcome == "positive" else "discarded"

    def submit(
        self, task_id: str, annotator_id: str, verdict: str, client_token: str | None = None
    ) -> AnnotatorLabel:
        """Persist one label (write-ahead) and auto-resolve when quorum is reached."""
        if verdict not in VERDICTS:
            raise ValidationError(f"unknown verdict: {verdict!r}")
        if not annotator_id:
            raise ValidationError("annotator_id must be non-empty")
        with self._lock:
            if task_id not in self.tasks:
                raise KeyError(f"unknown task: {task_id}")
            if self.finalized:
                raise PermissionError("annotation store is finalized")
            if task_id in self.decisions:
                raise PermissionError(f"task already finalized: {task_id}")
            existing = self.labels.get((task_id, annotator_id))
            if existing is not None and client_token and existing.client_token == client_token:
                return existing  # duplicate submission, acknowledged once
            label = AnnotatorLabel(
                task_id=task_id,
                annotator_id=annotator_id,
                verdict=verdict,
                timestamp=datetime.now(timezone.utc).isoformat(timespec="microseconds"),
                client_token=client_token,
            )
            self._append(label)  # overwrites stay in the log as the audit trail
            self.labels[(task_id, annotator_id)] = label
            self._maybe_resolve(task_id)
            return label

    def my_verdict(self, task_id: str, annotator_id: str) -> str | None:
        label = self.labels.get((task_id, annotator_id))
        return label.verdict if label else None

    def progress(self) -> dict[str, int]:
        counts = {"open": 0, "complete": 0, "discarded": 0}
        for task_id in self.tasks:
            counts[self.task_status(task_id)] += 1
        counts["labels"] = len(self.labels)
        counts["tasks"] = len(self.tasks)
        return counts

    def finalize(self, decisions_path: Path) -> int:
        with self._lock:
            self.finalized = True
            self._freeze_marker.write_text("finalized\n", encoding="utf-8")
            return write_decisions(decisions_path, list(self.decisions.values()))


def write_decisions(path: Path, decisions: list[ResolvedDecision]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(decisions, key=lambda d: d.task_id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for decision in ordered:
            fh.write(dumps_record(decision.to_record()))
            fh.write("\n")
    return len(ordered)


def read_decisions(path: Path) -> list[ResolvedDecision]:
    """Load and validate a decisions file; tampered records are rejected by line."""
    decisions = []
    for lineno, record in enumerate(read_records(Path(path)), start=1):
        try:
            labels = [
                AnnotatorLabel(task_id=record["task_id"], annotator_id=l["annotator_id"],
                               verdict=l["verdict"])
                for l in record["labels"]
            ]
            decision = ResolvedDecision(
                task_id=record["task_id"],
                outcome=record["outcome"],
                labels=labels,
                required_annotators=int(record["required_annotators"]),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: malformed decision record: {exc}") from exc
        if decision.outcome not in OUTCOMES:
            raise ValidationError(f"{path}:{lineno}: unknown outcome {decision.outcome!r}")
        for label in decision.labels:
            if label.verdict not in VERDICTS:
                raise ValidationError(f"{path}:{lineno}: unknown verdict {label.verdict!r}")
        expected = resolve_labels(decision.labels, decision.required_annotators)
        if expected.outcome != decision.outcome:
            raise ValidationError(
                f"{path}:{lineno}: outcome {decision.outcome!r} contradicts the unanimity rule"
            )
        decisions.append(decision)
    return decisions


def import_labels(store: LabelStore, labels_path: Path) -> int:
    """Headless replay of a labels file through the store (no service required)."""
    count = 0
    for lineno, record in enumerate(read_records(Path(labels_path)), start=1):
        try:
            task_id = record["task_id"]
            annotator_id = record["annotator_id"]
            verdict = record["verdict"]
        except KeyError as exc:
            raise ValidationError(f"{labels_path}:{lineno}: missing field {exc}") from exc
        if task_id not in store.tasks:
            raise ValidationError(f"{labels_path}:{lineno}: unknown task {task_id}")
        store.submit(task_id, annotator_id, verdict, client_token=record.get("client_token"))
        count += 1
    return count


# --- HTTP service -------------------------------------------------------------------

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
    ".map": "application/json",
}


class AnnotationServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False

    def __init__(self, address: tuple[str, int], store: LabelStore,
                 decisions_path: Path, ui_dir: Path | None = None):
        self.store = store
        self.decisions_path = Path(decisions_path)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        super().__init__(address, AnnotationHandler)


class AnnotationHandler(BaseHTTPRequestHandler):
    server: AnnotationServer  # set by ThreadingHTTPServer

    protocol_version = "HTTP/1.1"

    def log_message(self, format: str, *args: Any) -> None:  # silence stderr chatter
        pass

    def _send_json(self, status: int, payload: dict[str, Any]) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, error: str, detail: str) -> None:
        self._send_json(status, {"error": error, "detail": detail})

    def _task_view(self, task: AnnotationTask, annotator_id: str | None) -> dict[str, Any]:
        """Blind view: other annotators' verdicts are hidden until resolution."""
        store = self.server.store
        status = store.task_status(task.task_id)
        view = task.to_record()
        view["status"] = status
        view["my_verdict"] = (
            store.my_verdict(task.task_id, annotator_id) if annotator_id else None
        )
        decision = store.decisions.get(task.task_id)
        view["resolution"] = decision.to_record() if decision is not None else None
        return view

    def do_GET(self) -> None:
        parsed = urlparse(self.path)
        if parsed.path == "/tasks":
            query = parse_qs(parsed.query)
            status = query.get("status", [None])[0]
            annotator = query.get("annotator", [None])[0]
            store = self.server.store
            tasks = []
            for task in store.tasks.values():
                if status and store.task_status(task.task_id) != status:
                    continue
                tasks.append(self._task_view(task, annotator))
            tasks.sort(key=lambda view: view["task_id"])
            self._send_json(200, {"tasks": tasks})
        elif parsed.path == "/progress":
            self._send_json(200, self.server.store.progress())
        elif parsed.path == "/ui" or parsed.path.startswith("/ui/"):
            self._serve_static(parsed.path)
        else:
            self._send_error_json(404, "not_found", f"no route for {parsed.path}")

    def do_POST(self) -> None:
        parsed = urlparse(self.path)
        if parsed.path == "/finalize":
            count = self.server.store.finalize(self.server.decisions_path)
            self._send_json(200, {"finalized": True, "decisions": count})
            return
        if parsed.path.startswith("/tasks/") and parsed.path.endswith("/label"):
            task_id = parsed.path[len("/tasks/"):-len("/label")]
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
                annotator_id = payload["annotator_id"]
                verdict = payload["verdict"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                self._send_error_json(400, "bad_request", f"malformed label payload: {exc}")
                return
            try:
                label = self.server.store.submit(
                    task_id, annotator_id, verdict, client_token=payload.get("client_token")
                )
            except KeyError as exc:
                self._send_error_json(404, "unknown_task", str(exc))
                return
            except PermissionError as exc:
                self._send_error_json(409, "conflict", str(exc))
                return
            except ValidationError as exc:
                self._send_error_json(400, "validation", str(exc))
                return
            self._send_json(200, {
                "accepted": True,
                "task_id": label.task_id,
                "annotator_id": label.annotator_id,
                "verdict": label.verdict,
                "status": self.server.store.task_status(task_id),
            })
            return
        self._send_error_json(404, "not_found", f"no route for {parsed.path}")

    def _serve_static(self, path: str) -> None:
        ui_dir = self.server.ui_dir
        if ui_dir is None or not ui_dir.is_dir():
            self._send_error_json(404, "no_ui", "no UI assets directory configured")
            return
        rel = path[len("/ui"):].lstrip("/") or "index.html"
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            self._send_error_json(404, "not_found", f"no asset {rel}")
            return
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def load_store(ws: Workspace, required_annotators: int = 3) -> LabelStore:
    """Build the label store from every project's task file plus the label log."""
    tasks: list[AnnotationTask] = []
    tasks_dir = ws.dir("annotations")
    for path in sorted(tasks_dir.glob("*.tasks")):
        for record in read_records(path):
            tasks.append(AnnotationTask.from_record(record))
    return LabelStore(tasks, ws.labels_log_path, required_annotators=required_annotators)


def serve(
    ws: Workspace,
    bind: str = "127.0.0.1",
    port: int = 0,
    required_annotators: int = 3,
    ui_dir: Path | None = None,
) -> AnnotationServer:
    """Start the annotation service (returns a live server; caller owns shutdown)."""
    store = load_store(ws, required_annotators=required_annotators)
    if not store.tasks:
        raise ValidationError("workspace has no annotation tasks; run the tasks stage first")
    try:
        server = AnnotationServer((bind, port), store, ws.decisions_path, ui_dir=ui_dir)
    except OSError as exc:
        raise OSError(f"cannot bind {bind}:{port}: {exc}") from exc
    return server
