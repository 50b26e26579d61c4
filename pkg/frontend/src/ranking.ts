import { RecommendResponse } from "./types.js";

// View models are pure projections of service responses: every rank, score
// and similarity shown in the UI is copied from the payload, never computed.

export interface RankedRow {
  rank: number;
  id: string;
  score: number;
  similarity: Record<string, number>;
  /** previousRank - rank; positive rose, negative fell, null = newly listed */
  movement: number | null;
}

export function rankingRows(response: RecommendResponse, previous?: RecommendResponse): RankedRow[] {
  const previousRank = new Map<string, number>();
  previous?.items.forEach((item, index) => previousRank.set(item.id, index + 1));
  return response.items.map((item, index) => {
    const rank = index + 1;
    const before = previousRank.get(item.id);
    return {
      rank,
      id: item.id,
      score: item.score,
      similarity: item.preference_similarity,
      movement: before === undefined ? null : before - rank,
    };
  });
}

export interface CompareRow {
  id: string;
  rankA: number | null;
  rankB: number | null;
}

/** Side-by-side ranks over the union of both result lists, ordered by the
 * best rank either side assigned. */
export function compareRows(a: RecommendResponse, b: RecommendResponse): CompareRow[] {
  const rankA = new Map<string, number>();
  const rankB = new Map<string, number>();
  a.items.forEach((item, index) => rankA.set(item.id, index + 1));
  b.items.forEach((item, index) => rankB.set(item.id, index + 1));
  const ids = [...new Set([...rankA.keys(), ...rankB.keys()])];
  const best = (id: string) =>
    Math.min(rankA.get(id) ?? Number.POSITIVE_INFINITY, rankB.get(id) ?? Number.POSITIVE_INFINITY);
  ids.sort((x, y) => best(x) - best(y) || (x < y ? -1 : 1));
  return ids.map((id) => ({ id, rankA: rankA.get(id) ?? null, rankB: rankB.get(id) ?? null }));
}
