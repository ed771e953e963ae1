/** Wire types mirroring the annotation service API. */

export type Verdict = "consistent" | "inconsistent" | "unsure";

export type TaskStatus = "open" | "complete" | "discarded";

export interface TaskContext {
  file_path: string;
  qualified_name: string;
  doc_comment: string | null;
}

export interface ResolutionLabel {
  annotator_id: string;
  verdict: Verdict;
}

export interface Resolution {
  task_id: string;
  outcome: "positive" | "discarded";
  labels: ResolutionLabel[];
  required_annotators: number;
}

export interface TaskView {
  task_id: string;
  sentence_id: string;
  function_id: string;
  sentence_text: string;
  function_body: string;
  context: TaskContext;
  keyword_hits: string[];
  status: TaskStatus;
  my_verdict: Verdict | null;
  /** Server-computed only; the client never derives resolution itself. */
  resolution: Resolution | null;
}

export interface Progress {
  open: number;
  complete: number;
  discarded: number;
  labels: number;
  tasks: number;
}

export interface SubmitResult {
  accepted: boolean;
  task_id: string;
  annotator_id: string;
  verdict: Verdict;
  status: TaskStatus;
}

export const VERDICTS: readonly Verdict[] = ["consistent", "inconsistent", "unsure"];
