"""Command-line pipeline: one subcommand per stage, shared workspace/config flags.

Exit codes: 0 success, 1 usage, 2 validation, 3 I/O, 4 missing stage dependency.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

from filelock import FileLock, Timeout

from . import annotation, fixtures, pipeline
from .config import DEFAULT_CONFIG_YAML, config_digest, load_config
from .ioutil import (
    DependencyError,
    ValidationError,
    digest_of,
    dumps_record,
    file_digest,
    read_json,
    write_json,
)
from .paper_ingest import tei_to_native
from .workspace import Project, ProjectStats, Workspace, init_workspace, register_project

ENV_WORKSPACE = "PAPERCODE_WORKSPACE"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_DEPENDENCY = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _log(ws: Workspace | None, stage: str, message: str, **fields: Any) -> None:
    print(f"[{stage}] {message}", file=sys.stderr)
    if ws is not None and ws.root.exists():
        record = {"ts": time.time(), "stage": stage, "message": message, **fields}
        with open(ws.root / "events.log", "a", encoding="utf-8") as fh:
            fh.write(dumps_record(record) + "\n")


# --- content-addressed stage stamps ----------------------------------------------


def _digest_paths(paths: Sequence[Path]) -> dict[str, str]:
    out = {}
    for path in sorted(paths):
        if path.is_file():
            out[str(path)] = file_digest(path)
        elif path.is_dir():
            entries = sorted(p for p in path.rglob("*") if p.is_file())
            out[str(path)] = digest_of([[p.as_posix(), file_digest(p)] for p in entries])
    return out


def _stage_fresh(
    ws: Workspace, key: str, cfg: dict[str, Any], inputs: Sequence[Path],
    outputs: Sequence[Path], force: bool,
) -> bool:
    """True when the stage must run; False when its stamp is still valid."""
    if force:
        return True
    stamp_path = ws.root / ".stamps" / f"{key}.json"
    if not stamp_path.exists():
        return True
    stamp = read_json(stamp_path)
    if stamp.get("config_digest") != config_digest(cfg):
        return True
    if stamp.get("inputs") != _digest_paths(inputs):
        return True
    if not all(Path(o).exists() for o in stamp.get("outputs", [])):
        return True
    return False


def _write_stamp(
    ws: Workspace, key: str, cfg: dict[str, Any], inputs: Sequence[Path],
    outputs: Sequence[Path],
) -> None:
    write_json(ws.root / ".stamps" / f"{key}.json", {
        "config_digest": config_digest(cfg),
        "inputs": _digest_paths(inputs),
        "outputs": [str(o) for o in outputs],
    })


# --- command implementations -------------------------------------------------------


def _workspace(args: argparse.Namespace) -> Workspace:
    root = args.workspace or os.environ.get(ENV_WORKSPACE)
    if not root:
        raise UsageError("no workspace given (use --workspace or set PAPERCODE_WORKSPACE)")
    return Workspace(Path(root))


def _config(args: argparse.Namespace, ws: Workspace | None = None) -> dict[str, Any]:
    path = args.config
    if path is None and ws is not None and (ws.root / "config.yaml").exists():
        path = ws.root / "config.yaml"
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else None
    return load_config(Path(path) if path else None, overrides=overrides)


def cmd_init(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args)
    init_workspace(ws.root, config_digest=config_digest(cfg))
    config_path = ws.root / "config.yaml"
    if not config_path.exists():
        config_path.write_text(DEFAULT_CONFIG_YAML, encoding="utf-8")
    _log(ws, "init", f"initialized workspace at {ws.root}")
    return EXIT_OK


def cmd_register(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    with _lock(ws):
        manifest = ws.load_manifest()
        stats = None
        if args.stars is not None or args.citations is not None:
            stats = ProjectStats(stars=args.stars or 0, citations=args.citations or 0)
        project = Project(
            project_id=args.project_id,
            paper_path=str(Path(args.paper).resolve()),
            repo_path=str(Path(args.repo).resolve()),
            stats=stats,
        )
        manifest = register_project(manifest, project)
        ws.save_manifest(manifest)
    _log(ws, "register", f"registered {args.project_id} ({len(manifest.projects)} total)")
    return EXIT_OK


def _each_project(ws: Workspace, args: argparse.Namespace):
    manifest = ws.load_manifest()
    if getattr(args, "project", None):
        return [manifest.get(args.project)]
    return list(manifest.projects)


def cmd_ingest_paper(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        for project in _each_project(ws, args):
            key = f"ingest-paper.{project.project_id}"
            inputs = [Path(project.paper_path)]
            outputs = [ws.sentences_path(project.project_id)]
            if not _stage_fresh(ws, key, cfg, inputs, outputs, args.force):
                _log(ws, "ingest-paper", f"{project.project_id}: up to date")
                continue
            counts = pipeline.stage_ingest_paper(ws, cfg, project)
            _write_stamp(ws, key, cfg, inputs, outputs)
            _log(ws, "ingest-paper", f"{project.project_id}: {counts['sentences']} sentences")
    return EXIT_OK


def cmd_ingest_code(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        for project in _each_project(ws, args):
            key = f"ingest-code.{project.project_id}"
            inputs = [Path(project.repo_path)]
            outputs = [ws.functions_path(project.project_id), ws.files_path(project.project_id)]
            if not _stage_fresh(ws, key, cfg, inputs, outputs, args.force):
                _log(ws, "ingest-code", f"{project.project_id}: up to date")
                continue
            counts = pipeline.stage_ingest_code(ws, cfg, project)
            _write_stamp(ws, key, cfg, inputs, outputs)
            _log(
                ws, "ingest-code",
                f"{project.project_id}: {counts['functions']} functions "
                f"from {counts['files']} files",
            )
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        report = pipeline.stage_stats(ws, cfg)
    header = f"{'project':<16}{'loc':>8}{'files':>7}{'funcs':>7}{'cyclo':>8}{'stars':>7}{'cites':>7}"
    print(header)
    for pid, stats in sorted(report["per_project"].items()):
        print(f"{pid:<16}{stats['lines_of_code']:>8}{stats['num_files']:>7}"
              f"{stats['num_functions']:>7}{stats['cyclomatic_complexity']:>8}"
              f"{stats['stars']:>7}{stats['citations']:>7}")
    mean = report["mean"]
    print(f"{'mean':<16}{mean['lines_of_code']:>8.1f}{mean['num_files']:>7.1f}"
          f"{mean['num_functions']:>7.1f}{mean['cyclomatic_complexity']:>8.1f}"
          f"{mean['stars']:>7.1f}{mean['citations']:>7.1f}")
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        manifest = ws.load_manifest()
        inputs = []
        for pid in manifest.project_ids():
            inputs.extend([ws.sentences_path(pid), ws.functions_path(pid)])
        outputs = [ws.vectors_path(pid, side)
                   for pid in manifest.project_ids() for side in ("sentences", "functions")]
        if not _stage_fresh(ws, "embed", cfg, inputs, outputs, args.force):
            _log(ws, "embed", "up to date")
            return EXIT_OK
        counts = pipeline.stage_embed(ws, cfg, text_mirror=args.text_vectors)
        _write_stamp(ws, "embed", cfg, inputs, outputs)
    _log(ws, "embed", f"{counts['vectors']} vectors (dim {counts['dim']}, "
                      f"{counts['unembeddable']} unembeddable)")
    return EXIT_OK


def cmd_retrieve(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        manifest = ws.load_manifest()
        inputs = [ws.vectors_path(pid, side)
                  for pid in manifest.project_ids() for side in ("sentences", "functions")]
        outputs = [ws.ranked_path(pid) for pid in manifest.project_ids()]
        if not _stage_fresh(ws, "retrieve", cfg, inputs, outputs, args.force):
            _log(ws, "retrieve", "up to date")
            return EXIT_OK
        counts = pipeline.stage_retrieve(ws, cfg)
        _write_stamp(ws, "retrieve", cfg, inputs, outputs)
    _log(ws, "retrieve", f"{counts['ranked']} sentences ranked, {counts['skipped']} skipped")
    return EXIT_OK


def cmd_tasks(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        manifest = ws.load_manifest()
        inputs = [ws.ranked_path(pid) for pid in manifest.project_ids()]
        outputs = [ws.tasks_path(pid) for pid in manifest.project_ids()]
        if not _stage_fresh(ws, "tasks", cfg, inputs, outputs, args.force):
            _log(ws, "tasks", "up to date")
            return EXIT_OK
        counts = pipeline.stage_tasks(ws, cfg)
        _write_stamp(ws, "tasks", cfg, inputs, outputs)
    _log(ws, "tasks", f"{counts['tasks']} tasks ({counts['skipped']} sentences skipped)")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    server = annotation.serve(
        ws, bind=args.bind, port=args.port,
        required_annotators=cfg["annotation"]["required_annotators"],
        ui_dir=Path(args.ui_dir) if args.ui_dir else None,
    )
    host, port = server.server_address[:2]
    _log(ws, "serve", f"annotation service on http://{host}:{port} (Ctrl-C stops)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
    return EXIT_OK


def cmd_decisions_import(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        counts = pipeline.stage_decisions_import(ws, cfg, Path(args.labels))
    _log(ws, "decisions-import", f"{counts['labels']} labels -> {counts['decisions']} decisions "
                                 f"({counts['positives']} positive)")
    return EXIT_OK


def cmd_decisions_export(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    out = Path(args.out) if args.out else ws.decisions_path
    counts = pipeline.stage_decisions_export(ws, cfg, out)
    _log(ws, "decisions-export", f"{counts['decisions']} decisions -> {out}")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        split = pipeline.stage_split(ws, cfg)
    _log(ws, "split", f"train {len(split.train)} / validation {len(split.validation)} "
                      f"/ test {len(split.test)} projects")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    """Sampling preview: draws negatives and reports counts without assembling."""
    ws = _workspace(args)
    cfg = _config(args, ws)
    positives, ranked, pools = pipeline.collect_positives(ws)
    split = pipeline.load_split(ws)
    from .dataset import assemble_dataset
    assembled = assemble_dataset(positives, ranked, pools, split, pipeline._sampling_config(cfg))
    preview = {"counts": assembled.counts, "warnings": assembled.warnings[:50]}
    out = ws.dataset_dir(args.dataset) / "sampling_preview.json"
    write_json(out, preview)
    _log(ws, "sample", json.dumps(assembled.counts))
    return EXIT_OK


def cmd_assemble(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        assembled = pipeline.stage_assemble(ws, cfg, args.dataset, force=args.force)
    for name in ("train", "validation", "test"):
        counts = assembled.counts[name]
        _log(ws, "assemble", f"{name}: {counts['projects']} projects, "
                             f"{counts['consistent']} consistent, "
                             f"{counts['inconsistent']} inconsistent, {counts['total']} total")
    return EXIT_OK


def cmd_export_seq(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        counts = pipeline.stage_export_seq(ws, cfg, args.dataset)
    _log(ws, "export-seq", f"{counts['records']} sequences ({counts['truncated']} truncated, "
                           f"{counts['errors']} skipped)")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        summary = pipeline.stage_train(ws, cfg, args.dataset, args.run)
    for seed, info in summary.items():
        _log(ws, "train", f"seed {seed}: best val {info['best_val_metric']:.4f} "
                          f"after {info['epochs']} epochs -> {info['checkpoint']}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    paths = pipeline.stage_predict(ws, cfg, args.dataset, args.run, args.split)
    _log(ws, "predict", f"wrote {len(paths)} score files for split {args.split}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    report = pipeline.stage_eval(
        ws, cfg, args.dataset, args.split,
        run=args.run, scores_path=Path(args.scores) if args.scores else None,
    )
    averaged = report["averaged"]
    _log(ws, "eval", f"{report['run']} on {args.split}: acc {averaged['acc']:.4f}, "
                     f"macro-F1 {averaged['macro_f1']:.4f}, mcc {averaged['mcc']:.4f}"
                     + ("" if report["beats_baseline"] else "  [does NOT beat baseline]"))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    sweep = pipeline.stage_sweep(
        ws, cfg, args.dataset, run=args.run, split_name=args.split,
        scores_path=Path(args.scores) if args.scores else None,
        allow_test_sweep=args.allow_test_sweep,
    )
    for row in sweep.rows:
        _log(ws, "sweep", f"threshold {row.threshold:.2f}: acc {row.acc:.4f}, "
                          f"macro-F1 {row.macro_f1:.4f}, mcc {row.mcc:.4f}")
    _log(ws, "sweep", f"best by mcc: {sweep.best_by['mcc']:.2f}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    cfg = _config(args, ws)
    with _lock(ws):
        rows = pipeline.stage_ablate(ws, cfg, args.dataset, args.run, eval_split=args.split)
    for variant, report in rows:
        _log(ws, "ablate", f"{variant}: acc {report.acc:.4f}, macro-F1 {report.macro_f1:.4f}, "
                           f"mcc {report.mcc:.4f}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    ws = _workspace(args)
    reports_dir = ws.dir("reports")
    found = sorted(reports_dir.glob(f"{args.run}*.txt"))
    if not found:
        raise DependencyError(f"no rendered reports for run {args.run!r}; run eval/sweep/ablate")
    for path in found:
        print(f"=== {path.name} ===")
        print(path.read_text(encoding="utf-8"))
    return EXIT_OK


def cmd_fixture_gen(args: argparse.Namespace) -> int:
    cfg = _config(args)
    positives = None
    if args.positives:
        parts = [int(x) for x in args.positives.split(",")]
        if len(parts) != 3:
            raise UsageError("--positives takes three comma-separated totals")
        positives = (parts[0], parts[1], parts[2])
    manifest = fixtures.generate_fixture_corpus(
        Path(args.out), cfg, n_projects=args.projects,
        positives_per_split=positives, positives_per_project=args.per_project,
    )
    _log(None, "fixture-gen", f"{manifest['n_projects']} projects under {args.out} "
                              f"(expected positives {manifest['expected_positive_totals']})")
    return EXIT_OK


def cmd_convert_tei(args: argparse.Namespace) -> int:
    xml_text = Path(args.input).read_text(encoding="utf-8")
    write_json(Path(args.output), tei_to_native(xml_text))
    _log(None, "convert-tei", f"{args.input} -> {args.output}")
    return EXIT_OK


def _lock(ws: Workspace) -> FileLock:
    return FileLock(str(ws.root / ".lock"), timeout=30)


# --- parser -----------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="papercode", description=__doc__)
    parser.add_argument("--workspace", help="workspace root (or set PAPERCODE_WORKSPACE)")
    parser.add_argument("--config", help="config YAML (defaults to <workspace>/config.yaml)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name: str, fn: Callable[[argparse.Namespace], int], help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        return p

    add("init", cmd_init, "create the workspace layout and default config")

    p = add("register", cmd_register, "register a project (paper + repository)")
    p.add_argument("project_id")
    p.add_argument("--paper", required=True)
    p.add_argument("--repo", required=True)
    p.add_argument("--stars", type=int)
    p.add_argument("--citations", type=int)

    for name, fn, help_text in (
        ("ingest-paper", cmd_ingest_paper, "extract candidate sentences from papers"),
        ("ingest-code", cmd_ingest_code, "extract function units from repositories"),
    ):
        p = add(name, fn, help_text)
        p.add_argument("--project", help="restrict to one project id")
        p.add_argument("--force", action="store_true")

    add("stats", cmd_stats, "compute and print per-project and mean code stats")

    p = add("embed", cmd_embed, "fit/apply the embedding provider, write vector stores")
    p.add_argument("--force", action="store_true")
    p.add_argument("--text-vectors", action="store_true", help="write debug text mirrors")

    p = add("retrieve", cmd_retrieve, "rank top-k candidate functions per sentence")
    p.add_argument("--force", action="store_true")

    p = add("tasks", cmd_tasks, "generate annotation tasks from Top-1 candidates")
    p.add_argument("--force", action="store_true")

    p = add("serve", cmd_serve, "run the annotation HTTP service")
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8731)
    p.add_argument("--ui-dir", help="static assets served under /ui")

    p = add("decisions-import", cmd_decisions_import, "headless label replay -> decisions file")
    p.add_argument("--labels", required=True)

    p = add("decisions-export", cmd_decisions_export, "write the resolved decisions file")
    p.add_argument("--out")

    add("split", cmd_split, "assign projects to train/validation/test")

    p = add("sample", cmd_sample, "preview negative sampling counts and warnings")
    p.add_argument("--dataset", required=True)

    p = add("assemble", cmd_assemble, "build the labeled dataset with negatives")
    p.add_argument("--dataset", required=True)
    p.add_argument("--force", action="store_true")

    p = add("export-seq", cmd_export_seq, "export joint sequences under the token budget")
    p.add_argument("--dataset", required=True)

    p = add("train", cmd_train, "train the native classifier (one model per seed)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--run", required=True)

    p = add("predict", cmd_predict, "write p_positive score files for a split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))

    p = add("eval", cmd_eval, "confusion metrics at the configured threshold")
    p.add_argument("--dataset", required=True)
    p.add_argument("--run")
    p.add_argument("--scores", help="external score file (example_id<TAB>probability)")
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))

    p = add("sweep", cmd_sweep, "threshold sweep over the configured grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--run")
    p.add_argument("--scores")
    p.add_argument("--split", default="validation", choices=("train", "validation", "test"))
    p.add_argument("--allow-test-sweep", action="store_true")

    p = add("ablate", cmd_ablate, "train and score the four loss variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--split", default="validation", choices=("validation", "test"))

    p = add("report", cmd_report, "print rendered report tables for a run")
    p.add_argument("--run", required=True)

    p = add("fixture-gen", cmd_fixture_gen, "generate the synthetic multi-project corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--projects", type=int, default=18)
    p.add_argument("--positives", help="train,validation,test positive totals (e.g. 957,90,83)")
    p.add_argument("--per-project", type=int, default=14)

    p = add("convert-tei", cmd_convert_tei, "convert TEI-style XML to the native paper schema")
    p.add_argument("input")
    p.add_argument("output")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Timeout as exc:
        print(f"workspace is locked by another invocation: {exc}", file=sys.stderr)
        return EXIT_IO
    except DependencyError as exc:
        print(f"missing dependency: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
