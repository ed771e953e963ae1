"""On-disk workspace: project registry plus a fixed artifact directory layout."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .ioutil import (
    DependencyError,
    ValidationError,
    dump_json_stable,
    load_records,
    read_json,
    write_json,
)

MANIFEST_NAME = "manifest.json"
LAYOUT_DIRS = ("corpus", "embeddings", "candidates", "annotations", "datasets", "models", "reports")

STAT_FIELDS = ("lines_of_code", "num_files", "num_functions", "cyclomatic_complexity", "stars", "citations")


@dataclass
class ProjectStats:
    lines_of_code: int = 0
    num_files: int = 0
    num_functions: int = 0
    cyclomatic_complexity: int = 0
    stars: int = 0
    citations: int = 0

    def __post_init__(self) -> None:
        for name in STAT_FIELDS:
            if getattr(self, name) < 0:
                raise ValidationError(f"project stat {name} must be >= 0")

    def to_record(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in STAT_FIELDS}

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "ProjectStats":
        return cls(**{name: int(record.get(name, 0)) for name in STAT_FIELDS})


@dataclass
class Project:
    project_id: str
    paper_path: str
    repo_path: str
    stats: ProjectStats | None = None

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "project_id": self.project_id,
            "paper_path": self.paper_path,
            "repo_path": self.repo_path,
        }
        if self.stats is not None:
            record["stats"] = self.stats.to_record()
        return record

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "Project":
        stats = ProjectStats.from_record(record["stats"]) if "stats" in record else None
        return cls(
            project_id=record["project_id"],
            paper_path=record["paper_path"],
            repo_path=record["repo_path"],
            stats=stats,
        )


@dataclass
class WorkspaceManifest:
    projects: list[Project] = field(default_factory=list)
    created_at: str = ""
    config_digest: str = ""

    def project_ids(self) -> list[str]:
        return [p.project_id for p in self.projects]

    def get(self, project_id: str) -> Project:
        for project in self.projects:
            if project.project_id == project_id:
                return project
        raise ValidationError(f"unknown project: {project_id}")

    def to_record(self) -> dict[str, Any]:
        return {
            "projects": [p.to_record() for p in self.projects],
            "created_at": self.created_at,
            "config_digest": self.config_digest,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> "WorkspaceManifest":
        return cls(
            projects=[Project.from_record(r) for r in record.get("projects", [])],
            created_at=record.get("created_at", ""),
            config_digest=record.get("config_digest", ""),
        )


class Workspace:
    """Handle to an initialized workspace directory."""

    def __init__(self, root: Path):
        self.root = Path(root)

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def dir(self, name: str) -> Path:
        if name not in LAYOUT_DIRS:
            raise ValidationError(f"not a workspace directory: {name}")
        return self.root / name

    # Per-project artifact paths.
    def sentences_path(self, project_id: str) -> Path:
        return self.root / "corpus" / f"{project_id}.sentences"

    def functions_path(self, project_id: str) -> Path:
        return self.root / "corpus" / f"{project_id}.functions"

    def files_path(self, project_id: str) -> Path:
        return self.root / "corpus" / f"{project_id}.files"

    def vectors_path(self, project_id: str, side: str) -> Path:
        return self.root / "embeddings" / f"{project_id}.{side}.vec"

    def ranked_path(self, project_id: str) -> Path:
        return self.root / "candidates" / f"{project_id}.ranked"

    def tasks_path(self, project_id: str) -> Path:
        return self.root / "annotations" / f"{project_id}.tasks"

    @property
    def labels_log_path(self) -> Path:
        return self.root / "annotations" / "labels.log"

    @property
    def decisions_path(self) -> Path:
        return self.root / "annotations" / "decisions.jsonl"

    @property
    def split_path(self) -> Path:
        return self.root / "datasets" / "split.json"

    def dataset_dir(self, name: str) -> Path:
        return self.root / "datasets" / name

    def load_manifest(self) -> WorkspaceManifest:
        if not self.manifest_path.exists():
            raise DependencyError(f"no workspace at {self.root} (missing {MANIFEST_NAME})")
        return WorkspaceManifest.from_record(read_json(self.manifest_path))

    def save_manifest(self, manifest: WorkspaceManifest) -> None:
        self.manifest_path.write_text(dump_json_stable(manifest.to_record()), encoding="utf-8")


def init_workspace(root: Path, config_digest: str = "") -> Workspace:
    """Create the directory layout and an empty manifest. Refuses re-init."""
    root = Path(root)
    ws = Workspace(root)
    if ws.manifest_path.exists():
        raise ValidationError(f"workspace already initialized: {root}")
    root.mkdir(parents=True, exist_ok=True)
    for name in LAYOUT_DIRS:
        (root / name).mkdir(exist_ok=True)
    manifest = WorkspaceManifest(
        projects=[],
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        config_digest=config_digest,
    )
    ws.save_manifest(manifest)
    return ws


def register_project(manifest: WorkspaceManifest, project: Project) -> WorkspaceManifest:
    """Add a project; its id must be new and both paths must exist."""
    if project.project_id in manifest.project_ids():
        raise ValidationError(f"duplicate project id: {project.project_id}")
    if not Path(project.paper_path).exists():
        raise ValidationError(f"paper path does not exist: {project.paper_path}")
    if not Path(project.repo_path).exists():
        raise ValidationError(f"repo path does not exist: {project.repo_path}")
    return WorkspaceManifest(
        projects=[*manifest.projects, project],
        created_at=manifest.created_at,
        config_digest=manifest.config_digest,
    )


def remove_project(manifest: WorkspaceManifest, project_id: str) -> WorkspaceManifest:
    if project_id not in manifest.project_ids():
        raise ValidationError(f"unknown project: {project_id}")
    return WorkspaceManifest(
        projects=[p for p in manifest.projects if p.project_id != project_id],
        created_at=manifest.created_at,
        config_digest=manifest.config_digest,
    )


def compute_project_stats(ws: Workspace, project: Project) -> ProjectStats:
    """Derive code-size stats from ingested corpus artifacts.

    lines_of_code counts non-empty source lines; cyclomatic complexity is the
    sum over functions of (1 + branching constructs), computed at extraction
    time and stored on each function record.
    """
    files_path = ws.files_path(project.project_id)
    functions_path = ws.functions_path(project.project_id)
    if not files_path.exists() or not functions_path.exists():
        raise DependencyError(
            f"project {project.project_id} not ingested yet (run ingest-code first)"
        )
    files = load_records(files_path)
    functions = load_records(functions_path)
    prior = project.stats or ProjectStats()
    return ProjectStats(
        lines_of_code=sum(f["nonempty_lines"] for f in files),
        num_files=len(files),
        num_functions=len(functions),
        cyclomatic_complexity=sum(f["complexity"] for f in functions),
        stars=prior.stars,
        citations=prior.citations,
    )


def mean_stats(stats: list[ProjectStats]) -> dict[str, float]:
    """Mean of each stat field across projects (reported and labeled as means)."""
    if not stats:
        return {name: 0.0 for name in STAT_FIELDS}
    return {name: sum(getattr(s, name) for s in stats) / len(stats) for name in STAT_FIELDS}
