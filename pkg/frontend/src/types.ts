// Wire types of the steering service (see GET /spec on the backend).

export interface UsersResponse {
  total: number;
  offset: number;
  users: string[];
}

export interface HistoryItem {
  id: string;
  position: number;
}

export interface HistoryResponse {
  user: string;
  items: HistoryItem[];
  truncated: boolean;
}

export type Sentiment = "positive" | "negative";

export interface PreferenceInput {
  text: string;
  sentiment?: Sentiment;
}

export interface AppliedPreference {
  text: string;
  sentiment: Sentiment;
  embedded_via: string;
}

export interface RankedItem {
  id: string;
  score: number;
  preference_similarity: Record<string, number>;
}

export interface RecommendResponse {
  user: string;
  k: number;
  preferences: AppliedPreference[];
  items: RankedItem[];
}

export interface ClassifyResponse {
  sentiment: Sentiment;
  inverted_text?: string;
}

export interface ServiceClient {
  listUsers(offset: number, limit: number): Promise<UsersResponse>;
  history(user: string): Promise<HistoryResponse>;
  recommend(user: string, preferences: PreferenceInput[], k: number): Promise<RecommendResponse>;
  classify(text: string): Promise<ClassifyResponse>;
}

export class ServiceHttpError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ServiceHttpError";
  }
}
