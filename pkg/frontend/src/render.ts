/** Pure view functions: session state in, HTML strings out. */

import { escapeHtml, highlightCode, highlightSentence } from "./highlight.js";
import type { AnnotationSession } from "./state.js";
import type { Progress, TaskView } from "./types.js";

function statusBadge(task: TaskView): string {
  if (task.resolution?.outcome === "positive") return `<span class="badge badge-positive">positive</span>`;
  if (task.resolution?.outcome === "discarded") return `<span class="badge badge-discarded">discarded</span>`;
  return `<span class="badge badge-open">open</span>`;
}

export function renderQueue(session: AnnotationSession): string {
  const rows = session.queue
    .map((task, index) => {
      const active = index === session.cursor ? " active" : "";
      const done = task.my_verdict ? " labeled" : "";
      const verdict = task.my_verdict ? ` &middot; ${escapeHtml(task.my_verdict)}` : "";
      return `<li class="queue-item${active}${done}" data-index="${index}">` +
        `${escapeHtml(task.task_id.slice(0, 10))}${verdict}</li>`;
    })
    .join("");
  return `<ul class="queue">${rows}</ul>`;
}

export function renderProgress(progress: Progress | null): string {
  if (!progress) return `<div class="progress-bar" aria-hidden="true"></div>`;
  const total = Math.max(progress.tasks, 1);
  const completePct = (100 * progress.complete) / total;
  const discardedPct = (100 * progress.discarded) / total;
  return (
    `<div class="progress-bar" role="progressbar" title="complete ${progress.complete}, ` +
    `discarded ${progress.discarded}, open ${progress.open}">` +
    `<div class="progress-complete" style="width:${completePct.toFixed(2)}%"></div>` +
    `<div class="progress-discarded" style="width:${discardedPct.toFixed(2)}%"></div>` +
    `</div>` +
    `<div class="progress-counts">open ${progress.open} &middot; complete ${progress.complete} ` +
    `&middot; discarded ${progress.discarded}</div>`
  );
}

export function renderNotices(session: AnnotationSession): string {
  const banners = session.notices
    .slice(-3)
    .map((n) => `<div class="notice notice-${n.kind}">${escapeHtml(n.message)}</div>`)
    .join("");
  const retry = session.offline
    ? `<div class="notice notice-offline">service unreachable &mdash; ` +
      `<button id="retry">retry</button> (unsent verdicts are kept)</div>`
    : "";
  return banners + retry;
}

export function renderTask(task: TaskView | null): string {
  if (task === null) {
    return `<section class="empty">No open tasks. Press r to refresh.</section>`;
  }
  const mine = task.my_verdict
    ? `<span class="my-verdict my-${task.my_verdict}">${escapeHtml(task.my_verdict)}</span>`
    : `<span class="my-verdict my-none">unlabeled</span>`;
  const doc = task.context.doc_comment
    ? `<div class="ctx-doc">${escapeHtml(task.context.doc_comment)}</div>`
    : "";
  const resolution = task.resolution
    ? `<div class="resolution">resolved ${escapeHtml(task.resolution.outcome)} by ` +
      `${task.resolution.labels.length} annotators</div>`
    : "";
  return (
    `<section class="task" data-task="${escapeHtml(task.task_id)}">` +
    `<header class="task-head">${statusBadge(task)} ${mine} ` +
    `<span class="task-id">${escapeHtml(task.task_id)}</span></header>` +
    `<div class="panes">` +
    `<article class="pane pane-sentence"><h2>Sentence</h2>` +
    `<p class="sentence">${highlightSentence(task.sentence_text, task.keyword_hits)}</p>` +
    `<div class="hits">keywords: ${task.keyword_hits.map(escapeHtml).join(", ") || "none"}</div>` +
    `</article>` +
    `<article class="pane pane-code"><h2>Function</h2>` +
    `<pre class="code"><code>${highlightCode(task.function_body)}</code></pre>` +
    `</article>` +
    `</div>` +
    `<footer class="context">` +
    `<span class="ctx-path">${escapeHtml(task.context.file_path)}</span>` +
    `<span class="ctx-name">${escapeHtml(task.context.qualified_name)}</span>` +
    doc +
    resolution +
    `</footer>` +
    `<div class="verdict-buttons">` +
    `<button data-verdict="consistent">1 consistent</button>` +
    `<button data-verdict="inconsistent">2 inconsistent</button>` +
    `<button data-verdict="unsure">3 unsure</button>` +
    `</div>` +
    `</section>`
  );
}

export function renderApp(session: AnnotationSession): string {
  return (
    `<header class="top">` +
    `<h1>Annotation: does the function implement the sentence?</h1>` +
    `<div class="annotator">annotator: ${escapeHtml(session.annotatorId)}</div>` +
    renderProgress(session.progressCounts) +
    `</header>` +
    renderNotices(session) +
    `<main class="layout">` +
    `<aside class="sidebar"><h2>Queue (${session.queue.length})</h2>${renderQueue(session)}</aside>` +
    renderTask(session.current()) +
    `</main>` +
    `<footer class="help">j/k or arrows: navigate &middot; 1/2/3: verdict &middot; r: refresh</footer>`
  );
}
