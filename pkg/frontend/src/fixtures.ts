import {
  ClassifyResponse,
  HistoryResponse,
  PreferenceInput,
  RecommendResponse,
  ServiceClient,
  ServiceHttpError,
  UsersResponse,
} from "./types.js";

export function recommendKey(user: string, preferences: PreferenceInput[], k: number): string {
  return JSON.stringify([user, preferences.map((p) => p.text), k]);
}

export interface RecordedFixtures {
  users?: UsersResponse;
  histories?: Record<string, HistoryResponse>;
  classify?: Record<string, ClassifyResponse>;
  // keyed by recommendKey(); "*" is the fallback response
  recommends?: Record<string, RecommendResponse>;
}

/** Offline client replaying recorded service responses; used by tests and
 * the demo mode. Every call is logged so tests can count requests. */
export class FixtureServiceClient implements ServiceClient {
  calls = { listUsers: 0, history: 0, recommend: 0, classify: 0 };
  recommendLog: Array<{ user: string; preferences: PreferenceInput[]; k: number }> = [];

  constructor(private readonly fixtures: RecordedFixtures) {}

  async listUsers(offset: number, limit: number): Promise<UsersResponse> {
    this.calls.listUsers += 1;
    const all = this.fixtures.users;
    if (!all) throw new ServiceHttpError(503, "no recorded user list");
    return { total: all.total, offset, users: all.users.slice(offset, offset + limit) };
  }

  async history(user: string): Promise<HistoryResponse> {
    this.calls.history += 1;
    const recorded = this.fixtures.histories?.[user];
    if (!recorded) throw new ServiceHttpError(404, `unknown user '${user}'`);
    return recorded;
  }

  async recommend(user: string, preferences: PreferenceInput[], k: number): Promise<RecommendResponse> {
    this.calls.recommend += 1;
    this.recommendLog.push({ user, preferences: preferences.map((p) => ({ ...p })), k });
    const recorded =
      this.fixtures.recommends?.[recommendKey(user, preferences, k)] ?? this.fixtures.recommends?.["*"];
    if (!recorded) throw new ServiceHttpError(422, "no recorded recommendation for this request");
    return recorded;
  }

  async classify(text: string): Promise<ClassifyResponse> {
    this.calls.classify += 1;
    const recorded = this.fixtures.classify?.[text];
    if (recorded) return recorded;
    throw new ServiceHttpError(400, `no recorded classification for '${text}'`);
  }
}
