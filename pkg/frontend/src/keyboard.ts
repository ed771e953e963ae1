/** Keyboard-first controls: j/k navigate, 1/2/3 submit verdicts. */

import type { Verdict } from "./types.js";

export type KeyAction =
  | { kind: "next" }
  | { kind: "prev" }
  | { kind: "verdict"; verdict: Verdict }
  | { kind: "none" };

const VERDICT_KEYS: Record<string, Verdict> = {
  "1": "consistent",
  "2": "inconsistent",
  "3": "unsure",
};

export function actionForKey(key: string, typingInField: boolean, modifier: boolean): KeyAction {
  if (typingInField || modifier) return { kind: "none" };
  if (key === "j" || key === "ArrowDown") return { kind: "next" };
  if (key === "k" || key === "ArrowUp") return { kind: "prev" };
  const verdict = VERDICT_KEYS[key];
  if (verdict) return { kind: "verdict", verdict };
  return { kind: "none" };
}
