/** Acceptance round-trip: three scripted sessions submit the unanimity truth
 * table through the live service; the finalized decisions file must be
 * byte-identical to a headless replay of the same labels. */

import { readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { AnnotationSession } from "../src/state.js";
import type { Verdict } from "../src/types.js";
import {
  type LiveService,
  type TwinWorkspaces,
  buildTwinWorkspaces,
  headlessDecisionsImport,
  pythonAvailable,
  startService,
} from "./helpers.js";

const hasPython = pythonAvailable();

// Truth table applied per task index: annotators a1, a2, a3 in order.
const PATTERNS: { verdicts: [Verdict, Verdict, Verdict]; outcome: "positive" | "discarded" }[] = [
  { verdicts: ["consistent", "consistent", "consistent"], outcome: "positive" },
  { verdicts: ["consistent", "consistent", "inconsistent"], outcome: "discarded" },
  { verdicts: ["consistent", "unsure", "consistent"], outcome: "discarded" },
  { verdicts: ["inconsistent", "inconsistent", "inconsistent"], outcome: "discarded" },
];

describe.skipIf(!hasPython)("annotation round-trip", () => {
  let twins: TwinWorkspaces;
  let service: LiveService;
  const submitted: { task_id: string; annotator_id: string; verdict: Verdict }[] = [];
  let taskOrder: string[] = [];

  beforeAll(async () => {
    twins = buildTwinWorkspaces();
    service = await startService(twins.wsA);
  });

  afterAll(async () => {
    await service?.stop();
  });

  it("three scripted sessions label every task per the truth table", async () => {
    const annotators = ["a1", "a2", "a3"];
    for (let round = 0; round < annotators.length; round += 1) {
      const annotator = annotators[round];
      const session = new AnnotationSession(
        annotator,
        new ApiClient(service.baseUrl),
      );
      await session.refresh();
      if (round === 0) {
        taskOrder = session.queue.map((t) => t.task_id);
        expect(taskOrder.length).toBeGreaterThanOrEqual(8);
      } else {
        // earlier rounds never resolve anything, so the queue is unchanged
        expect(session.queue.map((t) => t.task_id)).toEqual(taskOrder);
      }
      for (let index = 0; index < session.queue.length; index += 1) {
        session.cursor = index;
        const task = session.current()!;
        const verdict = PATTERNS[index % PATTERNS.length].verdicts[round];
        const accepted = await session.submitVerdict(verdict);
        expect(accepted).toBe(true);
        submitted.push({ task_id: task.task_id, annotator_id: annotator, verdict });
      }
    }
    expect(submitted.length).toBe(taskOrder.length * 3);
  });

  it("resolution matches the truth table and counts match /progress", async () => {
    const client = new ApiClient(service.baseUrl);
    const all = await client.listTasks({});
    const byId = new Map(all.map((t) => [t.task_id, t]));
    let positive = 0;
    taskOrder.forEach((taskId, index) => {
      const expected = PATTERNS[index % PATTERNS.length].outcome;
      const view = byId.get(taskId)!;
      expect(view.resolution?.outcome).toBe(expected);
      if (expected === "positive") positive += 1;
    });
    const progress = await client.progress();
    expect(progress.open).toBe(0);
    expect(progress.complete).toBe(positive);
    expect(progress.discarded).toBe(taskOrder.length - positive);
  });

  it("finalize writes a decisions file identical to a headless import", async () => {
    const client = new ApiClient(service.baseUrl);
    const result = await client.finalize();
    expect(result.finalized).toBe(true);
    expect(result.decisions).toBe(taskOrder.length);

    const labelsPath = join(twins.root, "session-labels.jsonl");
    writeFileSync(
      labelsPath,
      submitted.map((row) => JSON.stringify(row)).join("\n") + "\n",
      "utf-8",
    );
    headlessDecisionsImport(twins.wsB, labelsPath);

    const fromService = readFileSync(join(twins.wsA, "annotations", "decisions.jsonl"));
    const fromImport = readFileSync(join(twins.wsB, "annotations", "decisions.jsonl"));
    expect(fromService.length).toBeGreaterThan(0);
    expect(fromService.equals(fromImport)).toBe(true);
  });
});
