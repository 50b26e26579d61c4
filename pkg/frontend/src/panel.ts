import { debounce, Debounced } from "./debounce.js";
import { rankingRows, RankedRow } from "./ranking.js";
import { classifyLocally, invertLocally } from "./sentiment.js";
import { ConsoleSession, pushResponse } from "./session.js";
import { PreferenceInput, ServiceClient, ServiceHttpError } from "./types.js";

export interface PanelError {
  status: number | null;
  message: string;
}

/** Steering loop controller.
 *
 * Every draft edit schedules one debounced refresh; a settled burst issues
 * exactly one /recommend. At most one request is in flight: edits landing
 * mid-flight mark the panel dirty and the freshest state is re-requested
 * when the running call returns (its stale response is discarded).
 */
export class SteerPanel {
  rows: RankedRow[] = [];
  error: PanelError | null = null;
  private settle: Debounced<[]>;
  private inFlight = false;
  private dirty = false;
  private listeners: Array<() => void> = [];

  constructor(
    private readonly client: ServiceClient,
    readonly session: ConsoleSession,
    waitMs = 300,
  ) {
    this.settle = debounce(() => {
      void this.refresh();
    }, waitMs);
  }

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  setUser(user: string): void {
    this.session.user = user;
    this.session.responses.length = 0;
    this.rows = [];
    this.scheduleRefresh();
  }

  setK(k: number): void {
    this.session.k = k;
    this.scheduleRefresh();
  }

  addDraft(text: string): void {
    this.session.drafts.push({ text, sentiment: classifyLocally(text) });
    this.scheduleRefresh();
  }

  editDraft(index: number, text: string): void {
    const draft = this.session.drafts[index];
    draft.text = text;
    draft.sentiment = classifyLocally(text);
    draft.invertedText = undefined;
    this.scheduleRefresh();
  }

  removeDraft(index: number): void {
    this.session.drafts.splice(index, 1);
    this.scheduleRefresh();
  }

  /** One-click inversion of a negative draft; prefers the inversion the
   * classify endpoint reported, falling back to the local rule. */
  invertDraft(index: number): void {
    const draft = this.session.drafts[index];
    const inverted = draft.invertedText ?? invertLocally(draft.text);
    this.editDraft(index, inverted);
  }

  scheduleRefresh(): void {
    this.settle();
  }

  /** Test hook: run the pending refresh immediately. */
  flush(): void {
    this.settle.flush();
  }

  private async refreshBadges(): Promise<void> {
    for (const draft of this.session.drafts) {
      if (!draft.text.trim()) continue;
      try {
        const verdict = await this.client.classify(draft.text);
        draft.sentiment = verdict.sentiment;
        draft.invertedText = verdict.inverted_text;
      } catch {
        // offline badge already set by the local rule
      }
    }
  }

  async refresh(): Promise<void> {
    if (this.inFlight) {
      this.dirty = true;
      return;
    }
    if (!this.session.user) return;
    this.inFlight = true;
    try {
      await this.refreshBadges();
      const preferences: PreferenceInput[] = this.session.drafts
        .filter((draft) => draft.text.trim().length > 0)
        .map((draft) => ({ text: draft.text }));
      const response = await this.client.recommend(this.session.user, preferences, this.session.k);
      if (!this.dirty) {
        this.error = null;
        const previous = this.session.responses[this.session.responses.length - 1];
        pushResponse(this.session, response);
        this.rows = rankingRows(response, previous);
      }
    } catch (err) {
      if (!this.dirty) {
        this.error =
          err instanceof ServiceHttpError
            ? { status: err.status, message: err.message }
            : { status: null, message: String(err) };
      }
    } finally {
      this.inFlight = false;
      if (this.dirty) {
        this.dirty = false;
        await this.refresh(); // latest state wins; the stale response was dropped
      } else {
        this.notify();
      }
    }
  }
}
