import { classifyLocally } from "./sentiment.js";
import { RecommendResponse, Sentiment } from "./types.js";

export interface PreferenceDraft {
  text: string;
  sentiment: Sentiment; // badge; refreshed from /preferences/classify
  invertedText?: string; // service-provided inversion, when classified
}

export interface ConsoleSession {
  user: string | null;
  k: number;
  drafts: PreferenceDraft[];
  // most recent last; only the latest two are kept (compare view)
  responses: RecommendResponse[];
}

export function emptySession(k = 10): ConsoleSession {
  return { user: null, k, drafts: [], responses: [] };
}

export function pushResponse(session: ConsoleSession, response: RecommendResponse): void {
  session.responses.push(response);
  if (session.responses.length > 2) session.responses.splice(0, session.responses.length - 2);
}

/** Compare view is only meaningful over two responses for the same user
 * and the same k. */
export function compareActive(session: ConsoleSession): boolean {
  if (session.responses.length !== 2) return false;
  const [a, b] = session.responses;
  return a.user === b.user && a.k === b.k;
}

// session state round-trips through URL query parameters so a steering
// setup can be shared as a link

export function sessionToQuery(session: ConsoleSession): string {
  const params = new URLSearchParams();
  if (session.user) params.set("user", session.user);
  params.set("k", String(session.k));
  for (const draft of session.drafts) params.append("pref", draft.text);
  return params.toString();
}

export function sessionFromQuery(query: string): ConsoleSession {
  const params = new URLSearchParams(query);
  const session = emptySession();
  session.user = params.get("user");
  const k = Number(params.get("k"));
  if (Number.isInteger(k) && k >= 1) session.k = k;
  for (const text of params.getAll("pref")) {
    session.drafts.push({ text, sentiment: classifyLocally(text) });
  }
  return session;
}
