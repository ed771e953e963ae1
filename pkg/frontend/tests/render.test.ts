import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { renderApp, renderProgress, renderTask } from "../src/render.js";
import { AnnotationSession } from "../src/state.js";
import type { TaskView } from "../src/types.js";

function task(id: string, overrides: Partial<TaskView> = {}): TaskView {
  return {
    task_id: id,
    sentence_id: `s-${id}`,
    function_id: `f-${id}`,
    sentence_text: "We compute the alignment score for each read.",
    function_body: 'def score(reads):\n    """Score reads."""\n    return len(reads)',
    context: { file_path: "src/core.py", qualified_name: "score", doc_comment: "Score reads." },
    keyword_hits: ["compute", "score", "align"],
    status: "open",
    my_verdict: null,
    resolution: null,
    ...overrides,
  };
}

function sessionWith(tasks: TaskView[]): AnnotationSession {
  const session = new AnnotationSession("a1", new ApiClient("http://unused"));
  session.queue = tasks;
  return session;
}

describe("renderTask", () => {
  it("shows sentence and code side by side with context", () => {
    const html = renderTask(task("t1"));
    expect(html).toContain('class="pane pane-sentence"');
    expect(html).toContain('class="pane pane-code"');
    expect(html).toContain("<mark>compute</mark>");
    expect(html).toContain('<span class="tok-keyword">def</span>');
    expect(html).toContain("src/core.py");
    expect(html).toContain("score");
  });

  it("renders verdict buttons for all three verdicts", () => {
    const html = renderTask(task("t1"));
    for (const verdict of ["consistent", "inconsistent", "unsure"]) {
      expect(html).toContain(`data-verdict="${verdict}"`);
    }
  });

  it("shows the server resolution verbatim, never a local computation", () => {
    const resolved = task("t1", {
      status: "complete",
      resolution: {
        task_id: "t1",
        outcome: "positive",
        labels: [
          { annotator_id: "a1", verdict: "consistent" },
          { annotator_id: "a2", verdict: "consistent" },
          { annotator_id: "a3", verdict: "consistent" },
        ],
        required_annotators: 3,
      },
    });
    const html = renderTask(resolved);
    expect(html).toContain("badge-positive");
    expect(html).toContain("resolved positive by 3 annotators");
  });

  it("escapes task content before inserting it", () => {
    const hostile = task("t1", {
      sentence_text: "We <script>alert(1)</script> compute.",
      keyword_hits: [],
    });
    const html = renderTask(hostile);
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
  });

  it("renders an empty state when the queue is exhausted", () => {
    expect(renderTask(null)).toContain("No open tasks");
  });
});

describe("renderProgress", () => {
  it("reflects exactly the /progress payload", () => {
    const html = renderProgress({ open: 3, complete: 5, discarded: 2, labels: 21, tasks: 10 });
    expect(html).toContain("open 3");
    expect(html).toContain("complete 5");
    expect(html).toContain("discarded 2");
    expect(html).toContain("width:50.00%");
    expect(html).toContain("width:20.00%");
  });
});

describe("renderApp", () => {
  it("lists the queue and highlights the cursor", () => {
    const session = sessionWith([task("t-aaaa"), task("t-bbbb")]);
    session.cursor = 1;
    const html = renderApp(session);
    expect(html).toContain("Queue (2)");
    expect(html).toContain('class="queue-item active" data-index="1"');
    expect(html).toContain("annotator: a1");
  });
});
