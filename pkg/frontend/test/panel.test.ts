import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { FixtureServiceClient } from "../src/fixtures.js";
import { SteerPanel } from "../src/panel.js";
import { emptySession } from "../src/session.js";
import {
  ClassifyResponse,
  PreferenceInput,
  RecommendResponse,
  ServiceClient,
  UsersResponse,
  HistoryResponse,
} from "../src/types.js";
import { AVOID_TEXT, FIND_TEXT, RECOMMEND_AVOID, RECOMMEND_FIND, fixtures } from "./recorded.js";

function makePanel(waitMs = 300) {
  const client = new FixtureServiceClient(fixtures());
  const session = emptySession(5);
  session.user = "user000";
  const panel = new SteerPanel(client, session, waitMs);
  return { client, session, panel };
}

async function settle(ms = 301) {
  await vi.advanceTimersByTimeAsync(ms);
}

describe("steer panel request discipline", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("issues exactly one /recommend per settled edit burst", async () => {
    const { client, panel } = makePanel();
    panel.addDraft("A");
    panel.editDraft(0, "Av");
    panel.editDraft(0, AVOID_TEXT);
    expect(client.calls.recommend).toBe(0); // nothing until the edit settles
    await settle();
    expect(client.calls.recommend).toBe(1);

    panel.editDraft(0, FIND_TEXT);
    await settle();
    expect(client.calls.recommend).toBe(2);
  });

  it("does not fire while typing continues", async () => {
    const { client, panel } = makePanel();
    panel.addDraft("A");
    for (const text of ["Av", "Avo", "Avoi", "Avoid", "Avoid g"]) {
      await vi.advanceTimersByTimeAsync(100); // under the 300ms window
      panel.editDraft(0, text);
    }
    expect(client.calls.recommend).toBe(0);
    await settle();
    expect(client.calls.recommend).toBe(1);
  });

  it("sends only non-empty drafts and the session k", async () => {
    const { client, panel } = makePanel();
    panel.addDraft("");
    panel.addDraft(AVOID_TEXT);
    await settle();
    expect(client.recommendLog).toHaveLength(1);
    expect(client.recommendLog[0]).toEqual({
      user: "user000",
      preferences: [{ text: AVOID_TEXT }],
      k: 5,
    });
  });
});

describe("steer panel rendering", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("renders service-provided ranks and scores unmodified", async () => {
    const { panel } = makePanel();
    panel.addDraft(FIND_TEXT);
    await settle();
    expect(panel.rows.map((r) => r.id)).toEqual(RECOMMEND_FIND.items.map((i) => i.id));
    expect(panel.rows.map((r) => r.score)).toEqual(RECOMMEND_FIND.items.map((i) => i.score));
    expect(panel.rows.map((r) => r.rank)).toEqual([1, 2, 3, 4, 5]);
    expect(panel.rows[0].similarity).toEqual(RECOMMEND_FIND.items[0].preference_similarity);
  });

  it("marks risers and fallers against the previous response", async () => {
    const { panel } = makePanel();
    panel.addDraft(AVOID_TEXT);
    await settle();
    panel.editDraft(0, FIND_TEXT);
    await settle();
    const byId = new Map(panel.rows.map((r) => [r.id, r]));
    // it001 was absent under the avoid preference and enters under find
    expect(byId.get("it001")?.movement).toBeNull();
    // it007 was rank 1 under avoid, rank 2 under find -> fell by 1
    expect(byId.get("it007")?.movement).toBe(-1);
    // it000 was rank 3 under avoid, rank 3 under find -> unchanged
    expect(byId.get("it000")?.movement).toBe(0);
  });

  it("keeps the sentiment badge in sync with the classify endpoint", async () => {
    const { panel, session } = makePanel();
    panel.addDraft(AVOID_TEXT);
    await settle();
    expect(session.drafts[0].sentiment).toBe("negative");
    expect(session.drafts[0].invertedText).toBe(FIND_TEXT);
  });

  it("surfaces request errors inline", async () => {
    const { panel } = makePanel();
    const session = panel.session;
    session.user = "user999"; // no recorded history; recommend falls back to "*"
    panel.addDraft("zz-unrecorded-zz");
    // remove the fallback so the fixture answers 422
    const { client } = makePanel();
    void client;
    const broken = new FixtureServiceClient({ ...fixtures(), recommends: {} });
    const errPanel = new SteerPanel(broken, { ...emptySession(5), user: "user000", drafts: [], responses: [] }, 300);
    errPanel.addDraft("anything");
    await settle();
    expect(errPanel.error).not.toBeNull();
    expect(errPanel.error?.status).toBe(422);
  });
});

describe("invert button", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("applies the service-provided inversion after classification", async () => {
    const { panel, session } = makePanel();
    panel.addDraft(AVOID_TEXT);
    await settle();
    panel.invertDraft(0);
    expect(session.drafts[0].text).toBe(FIND_TEXT);
    expect(session.drafts[0].sentiment).toBe("positive");
  });

  it("falls back to the local rule before any classification", () => {
    const { panel, session } = makePanel();
    panel.addDraft("Avoid glitter polish");
    panel.invertDraft(0);
    expect(session.drafts[0].text).toBe("Find glitter polish");
    expect(session.drafts[0].sentiment).toBe("positive");
  });

  it("conforms to the word-swap rule on lowercase and spaced input", () => {
    const { panel, session } = makePanel();
    panel.addDraft("  no parabens");
    panel.invertDraft(0);
    expect(session.drafts[0].text).toBe("Find parabens");
    panel.addDraft("Exclude strategy games");
    panel.invertDraft(1);
    expect(session.drafts[1].text).toBe("Find strategy games");
  });
});

describe("latest-wins with at most one request in flight", () => {
  it("drops the stale response and re-requests the freshest state", async () => {
    const pending: Array<{ resolve: (r: RecommendResponse) => void; request: PreferenceInput[] }> = [];
    const manual: ServiceClient = {
      listUsers: async (): Promise<UsersResponse> => ({ total: 0, offset: 0, users: [] }),
      history: async (): Promise<HistoryResponse> => ({ user: "u", items: [], truncated: false }),
      classify: async (): Promise<ClassifyResponse> => ({ sentiment: "positive" }),
      recommend: (user, preferences) =>
        new Promise<RecommendResponse>((resolve) => {
          pending.push({ resolve, request: preferences });
        }),
    };
    const session = emptySession(5);
    session.user = "user000";
    const panel = new SteerPanel(manual, session, 0);

    session.drafts.push({ text: "first", sentiment: "positive" });
    void panel.refresh();
    await vi.waitFor(() => expect(pending).toHaveLength(1)); // request 1 in flight

    panel.session.drafts[0].text = "second";
    void panel.refresh(); // lands mid-flight: marks dirty, no second socket yet
    await Promise.resolve();
    expect(pending).toHaveLength(1);

    pending[0].resolve({ ...RECOMMEND_AVOID, items: [] });
    await vi.waitFor(() => expect(pending).toHaveLength(2)); // re-issued with fresh state
    expect(pending[1].request).toEqual([{ text: "second" }]);
    expect(session.responses).toHaveLength(0); // stale response never applied

    pending[1].resolve(RECOMMEND_FIND);
    await vi.waitFor(() => expect(session.responses).toHaveLength(1));
    expect(session.responses[0]).toEqual(RECOMMEND_FIND);
  });
});
