import {
  ClassifyResponse,
  HistoryResponse,
  PreferenceInput,
  RecommendResponse,
  ServiceClient,
  ServiceHttpError,
  UsersResponse,
} from "./types.js";

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ServiceHttpError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class HttpServiceClient implements ServiceClient {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  listUsers(offset: number, limit: number): Promise<UsersResponse> {
    return fetch(this.url(`/users?offset=${offset}&limit=${limit}`)).then((r) =>
      asJson<UsersResponse>(r),
    );
  }

  history(user: string): Promise<HistoryResponse> {
    return fetch(this.url(`/users/${encodeURIComponent(user)}/history`)).then((r) =>
      asJson<HistoryResponse>(r),
    );
  }

  recommend(user: string, preferences: PreferenceInput[], k: number): Promise<RecommendResponse> {
    return fetch(this.url("/recommend"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ user, preferences, k }),
    }).then((r) => asJson<RecommendResponse>(r));
  }

  classify(text: string): Promise<ClassifyResponse> {
    return fetch(this.url("/preferences/classify"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ text }),
    }).then((r) => asJson<ClassifyResponse>(r));
  }
}
