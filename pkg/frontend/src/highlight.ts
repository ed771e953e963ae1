/** HTML builders: keyword marks in prose, light syntax colors in code. */

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

/** Wrap words whose lowercase form starts with any keyword stem in <mark>. */
export function highlightSentence(text: string, keywordHits: string[]): string {
  if (keywordHits.length === 0) return escapeHtml(text);
  const stems = keywordHits.map((k) => k.toLowerCase());
  return text
    .split(/(\w+)/)
    .map((piece, index) => {
      const isWord = index % 2 === 1;
      const lowered = piece.toLowerCase();
      if (isWord && stems.some((stem) => lowered.startsWith(stem))) {
        return `<mark>${escapeHtml(piece)}</mark>`;
      }
      return escapeHtml(piece);
    })
    .join("");
}

const PY_KEYWORDS = new Set([
  "def", "class", "return", "if", "elif", "else", "for", "while", "in", "not",
  "and", "or", "try", "except", "finally", "with", "as", "import", "from",
  "pass", "break", "continue", "lambda", "yield", "raise", "assert", "None",
  "True", "False", "is", "del", "global", "nonlocal", "async", "await", "match", "case",
]);

const CODE_TOKEN = /(#.*$|"""[\s\S]*?"""|'''[\s\S]*?'''|"(?:\\.|[^"\\])*"|'(?:\\.|[^'\\])*'|\b\d+(?:\.\d+)?\b|\b\w+\b)/gm;

/** Minimal Python-aware coloring; everything is escaped before insertion. */
export function highlightCode(code: string): string {
  let out = "";
  let last = 0;
  for (const match of code.matchAll(CODE_TOKEN)) {
    const index = match.index ?? 0;
    out += escapeHtml(code.slice(last, index));
    const token = match[0];
    const escaped = escapeHtml(token);
    if (token.startsWith("#")) {
      out += `<span class="tok-comment">${escaped}</span>`;
    } else if (/^("""|'''|"|')/.test(token)) {
      out += `<span class="tok-string">${escaped}</span>`;
    } else if (/^\d/.test(token)) {
      out += `<span class="tok-number">${escaped}</span>`;
    } else if (PY_KEYWORDS.has(token)) {
      out += `<span class="tok-keyword">${escaped}</span>`;
    } else {
      out += escaped;
    }
    last = index + token.length;
  }
  out += escapeHtml(code.slice(last));
  return out;
}
