import { Sentiment } from "./types.js";

// Local mirror of the service's rule for instant badges; the service
// response stays authoritative whenever one is available.

const NEGATIVE_LEADS = new Set(["avoid", "exclude", "no"]);

function firstWord(text: string): string {
  const match = text.match(/[^\W\d_]+/u);
  return match ? match[0] : "";
}

export function classifyLocally(text: string): Sentiment {
  return NEGATIVE_LEADS.has(firstWord(text).toLowerCase()) ? "negative" : "positive";
}

/** Swap the leading Avoid/Exclude/No for "Find"; remainder unchanged. */
export function invertLocally(text: string): string {
  if (classifyLocally(text) !== "negative") {
    throw new Error(`not a negative preference: ${text}`);
  }
  const stripped = text.replace(/^\s+/, "");
  const match = stripped.match(/[^\W\d_]+/u);
  if (!match || match.index === undefined) throw new Error("no leading word");
  return stripped.slice(0, match.index) + "Find" + stripped.slice(match.index + match[0].length);
}
