/** Integration scaffolding: build twin fixture workspaces and run the real
 * annotation service as a child process. */

import { type ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

const SETUP_SCRIPT = `
import json, sys
from pathlib import Path

from papercode import pipeline
from papercode.config import load_config
from papercode.fixtures import generate_fixture_corpus
from papercode.workspace import Project, init_workspace, register_project

root = Path(sys.argv[1])
cfg = load_config()
corpus = generate_fixture_corpus(root / "corpus", cfg, n_projects=6, positives_per_project=2)
for name in ("ws_a", "ws_b"):
    ws = init_workspace(root / name)
    manifest = ws.load_manifest()
    for meta in corpus["projects"]:
        manifest = register_project(
            manifest, Project(meta["project_id"], meta["paper_path"], meta["repo_path"])
        )
    ws.save_manifest(manifest)
    for project in manifest.projects:
        pipeline.stage_ingest_paper(ws, cfg, project)
        pipeline.stage_ingest_code(ws, cfg, project)
    pipeline.stage_embed(ws, cfg)
    pipeline.stage_retrieve(ws, cfg)
    pipeline.stage_tasks(ws, cfg)
print(json.dumps({"ws_a": str(root / "ws_a"), "ws_b": str(root / "ws_b")}))
`;

export interface TwinWorkspaces {
  root: string;
  wsA: string;
  wsB: string;
}

export function pythonAvailable(): boolean {
  const probe = spawnSync("python3", ["-c", "import papercode"], { encoding: "utf-8" });
  return probe.status === 0;
}

export function buildTwinWorkspaces(): TwinWorkspaces {
  const root = mkdtempSync(join(tmpdir(), "annotation-ui-"));
  const result = spawnSync("python3", ["-", root], {
    input: SETUP_SCRIPT,
    encoding: "utf-8",
  });
  if (result.status !== 0) {
    throw new Error(`workspace setup failed: ${result.stderr}`);
  }
  const lines = result.stdout.trim().split("\n");
  const parsed = JSON.parse(lines[lines.length - 1]) as { ws_a: string; ws_b: string };
  return { root, wsA: parsed.ws_a, wsB: parsed.ws_b };
}

export interface LiveService {
  proc: ChildProcess;
  baseUrl: string;
  stop: () => Promise<void>;
}

export async function startService(workspace: string, uiDir?: string): Promise<LiveService> {
  const args = ["-m", "papercode.cli", "--workspace", workspace, "serve", "--port", "0"];
  if (uiDir) args.push("--ui-dir", uiDir);
  const proc = spawn("python3", args, { stdio: ["ignore", "pipe", "pipe"] });
  const baseUrl = await new Promise<string>((resolve, reject) => {
    let buffer = "";
    const timer = setTimeout(() => reject(new Error(`service start timeout: ${buffer}`)), 30_000);
    proc.stderr!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const match = buffer.match(/http:\/\/[\d.]+:(\d+)/);
      if (match) {
        clearTimeout(timer);
        resolve(`http://127.0.0.1:${match[1]}`);
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`service exited early (${code}): ${buffer}`));
    });
  });
  // confirm it answers before handing it to tests
  for (let attempt = 0; attempt < 50; attempt += 1) {
    try {
      const response = await fetch(`${baseUrl}/progress`);
      if (response.ok) break;
    } catch {
      await new Promise((r) => setTimeout(r, 100));
    }
  }
  const stop = () =>
    new Promise<void>((resolve) => {
      proc.once("exit", () => resolve());
      proc.kill("SIGINT");
      setTimeout(() => proc.kill("SIGKILL"), 5_000).unref();
    });
  return { proc, baseUrl, stop };
}

export function headlessDecisionsImport(workspace: string, labelsPath: string): void {
  const result = spawnSync(
    "python3",
    ["-m", "papercode.cli", "--workspace", workspace, "decisions-import", "--labels", labelsPath],
    { encoding: "utf-8" },
  );
  if (result.status !== 0) {
    throw new Error(`decisions-import failed: ${result.stderr}`);
  }
}
