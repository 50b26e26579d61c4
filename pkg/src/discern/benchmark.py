"""Construction of the five-axis preference benchmark.

Every axis is derived from a filtered catalog, the generated preference
sets, and three embedding namespaces (items, preferences keyed by their
text, reviews keyed by ``user#position``):

* recommendation: each leave-last-out target paired with the single
  preference from the previous timestep whose embedding is most similar to
  the target embedding.
* fine / coarse steering: for every target, the most similar and the least
  similar other item, each matched to the best preference from the global
  preference pool; (preference, target) tuples stay globally unique by
  advancing to the next-best preference on collision.
* sentiment following: each rule-negative preference matched to the
  negatively-reviewed item in the visible history that triggered it, plus
  an inverted positive twin over the same target; no interaction history.
* history consolidation: all five final-timestep preferences at once, with
  the usual last-item target.

All matching is exact cosine over float64 with deterministic tie-breaking,
so each rule can be (and is, in the tests) checked against an independent
brute-force scan.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Catalog, truncate_history, leave_last_out
from .embeddings import EmbeddingMatrix, EmbeddingError, top_k_similar, least_similar
from .preferences import PreferenceSet, classify_preference_sentiment, invert_negative_preference

AXES = ("recommendation", "fine", "coarse", "sentiment_pos", "sentiment_neg", "consolidation")
SPLITS = ("train", "val", "test")


class BenchmarkError(ValueError):
    pass


def review_key(user: str, position: int) -> str:
    """Embedding id for the review at 1-based ``position`` of ``user``."""
    return f"{user}#{position}"


@dataclass
class EvalInstance:
    axis: str
    user: str
    preferences: list[str]
    history: list[str]
    target: str
    split: str
    t: int | None = None  # 1-based target position, when derived from one
    pair: int | None = None  # twin id linking sentiment pos/neg instances

    def __post_init__(self):
        if self.axis not in AXES:
            raise BenchmarkError(f"unknown axis {self.axis!r}")
        if self.split not in SPLITS:
            raise BenchmarkError(f"unknown split {self.split!r}")
        if self.axis.startswith("sentiment") and self.history:
            raise BenchmarkError("sentiment instances carry no interaction history")
        if self.axis == "consolidation" and len(self.preferences) != 5:
            raise BenchmarkError("consolidation instances carry exactly 5 preferences")
        if self.axis in ("recommendation", "fine", "coarse", "sentiment_pos", "sentiment_neg"):
            if len(self.preferences) != 1:
                raise BenchmarkError(f"{self.axis} instances carry exactly 1 preference")

    def to_json(self) -> dict:
        out = {
            "axis": self.axis,
            "split": self.split,
            "user": self.user,
            "preferences": self.preferences,
            "history": self.history,
            "target": self.target,
        }
        if self.t is not None:
            out["t"] = self.t
        if self.pair is not None:
            out["pair"] = self.pair
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "EvalInstance":
        return cls(
            axis=obj["axis"],
            split=obj["split"],
            user=obj["user"],
            preferences=list(obj["preferences"]),
            history=list(obj["history"]),
            target=obj["target"],
            t=obj.get("t"),
            pair=obj.get("pair"),
        )


@dataclass
class EmbeddingBundle:
    item: EmbeddingMatrix
    pref: EmbeddingMatrix
    review: EmbeddingMatrix | None = None


@dataclass
class BenchmarkSuite:
    instances: dict[str, dict[str, list[EvalInstance]]]
    provenance: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def all_instances(self):
        for axis in AXES:
            for split in SPLITS:
                yield from self.instances.get(axis, {}).get(split, [])

    def size(self, axis: str, split: str | None = None) -> int:
        per_axis = self.instances.get(axis, {})
        if split is not None:
            return len(per_axis.get(split, []))
        return sum(len(v) for v in per_axis.values())


def _empty_axes() -> dict[str, dict[str, list[EvalInstance]]]:
    return {axis: {split: [] for split in SPLITS} for axis in AXES}


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine undefined for zero-norm vector")
    return float(a @ b / (na * nb))


def match_preference_to_target(
    preferences: list[str],
    target: str,
    pref_embeddings: EmbeddingMatrix,
    item_embeddings: EmbeddingMatrix,
) -> str:
    """The preference most cosine-similar to the target item; ties go to the
    lowest index in the given order."""
    target_vec = item_embeddings.get(target)
    best: tuple[float, int] | None = None
    for idx, pref in enumerate(preferences):
        score = _cos(pref_embeddings.get(pref), target_vec)
        if best is None or score > best[0]:
            best = (score, idx)
    assert best is not None
    return preferences[best[1]]


def build_recommendation_split(
    catalog: Catalog,
    pref_sets: dict[tuple[str, int], PreferenceSet],
    embeddings: EmbeddingBundle,
    max_history: int = 20,
) -> tuple[list[EvalInstance], int]:
    """One instance per leave-last-out target, conditioned on the best-matching
    preference from the set generated one step earlier."""
    split = leave_last_out(catalog)
    out: list[EvalInstance] = []
    skipped = 0
    for split_name, entries in (("train", split.train), ("val", split.val), ("test", split.test)):
        for entry in entries:
            pset = pref_sets.get((entry.user, entry.t - 1))
            if pset is None:
                skipped += 1
                continue
            pref = match_preference_to_target(pset.preferences, entry.target, embeddings.pref, embeddings.item)
            out.append(
                EvalInstance(
                    axis="recommendation",
                    split=split_name,
                    user=entry.user,
                    preferences=[pref],
                    history=truncate_history(entry.history, max_history),
                    target=entry.target,
                    t=entry.t,
                )
            )
    return out, skipped


class _PreferencePool:
    """Accumulated preference pool with ranked-walk selection."""

    def __init__(self, pref_sets: dict[tuple[str, int], PreferenceSet], pref_embeddings: EmbeddingMatrix):
        texts = sorted({p for ps in pref_sets.values() for p in ps.preferences})
        if not texts:
            raise BenchmarkError("empty preference pool")
        self.texts = texts
        rows = []
        for text in texts:
            vec = pref_embeddings.get(text).astype(np.float64)
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise EmbeddingError(f"zero-norm preference embedding for {text!r}")
            rows.append(vec / norm)
        self.matrix = np.stack(rows)

    def ranked(self, query: np.ndarray) -> list[int]:
        query = np.asarray(query, dtype=np.float64)
        qnorm = np.linalg.norm(query)
        if qnorm == 0.0:
            raise EmbeddingError("zero-norm query for preference pool")
        scores = self.matrix @ (query / qnorm)
        order = sorted(range(len(self.texts)), key=lambda i: (-scores[i], self.texts[i]))
        return order

    def first_unused(self, query: np.ndarray, target: str, used: set[tuple[str, str]]) -> str | None:
        for idx in self.ranked(query):
            if (self.texts[idx], target) not in used:
                return self.texts[idx]
        return None


def build_fine_coarse(
    catalog: Catalog,
    pref_sets: dict[tuple[str, int], PreferenceSet],
    embeddings: EmbeddingBundle,
    max_history: int = 20,
) -> tuple[list[EvalInstance], list[EvalInstance], int]:
    """Fine- and coarse-grained steering instances with globally unique
    (preference, target) tuples."""
    pool = _PreferencePool(pref_sets, embeddings.pref)
    split = leave_last_out(catalog)
    used: set[tuple[str, str]] = set()
    fine: list[EvalInstance] = []
    coarse: list[EvalInstance] = []
    dropped = 0

    for split_name, entries in (("train", split.train), ("val", split.val), ("test", split.test)):
        # same-target lookup for the swapped-history user
        by_target: dict[str, list] = {}
        for entry in entries:
            by_target.setdefault(entry.target, []).append(entry)
        for entry in entries:
            target_vec = embeddings.item.get(entry.target)
            similar = top_k_similar(embeddings.item, target_vec, k=1, exclude={entry.target})[0].id
            distinct = least_similar(embeddings.item, target_vec, exclude={entry.target}).id

            p1 = pool.first_unused(embeddings.item.get(similar), similar, used)
            p2 = None
            if p1 is not None:
                used.add((p1, similar))
                p2 = pool.first_unused(embeddings.item.get(distinct), distinct, used)
                if p2 is None:
                    used.discard((p1, similar))
            if p1 is None or p2 is None:
                dropped += 1
                continue
            used.add((p2, distinct))

            donor = entry
            for cand in sorted(by_target.get(entry.target, []), key=lambda e: (e.user, e.t)):
                if cand.history != entry.history:
                    donor = cand
                    break
            fine.append(
                EvalInstance(
                    axis="fine",
                    split=split_name,
                    user=donor.user,
                    preferences=[p1],
                    history=truncate_history(donor.history, max_history),
                    target=similar,
                    t=entry.t,
                )
            )
            coarse.append(
                EvalInstance(
                    axis="coarse",
                    split=split_name,
                    user=entry.user,
                    preferences=[p2],
                    history=truncate_history(entry.history, max_history),
                    target=distinct,
                    t=entry.t,
                )
            )
    return fine, coarse, dropped


def build_sentiment_pairs(
    catalog: Catalog,
    pref_sets: dict[tuple[str, int], PreferenceSet],
    embeddings: EmbeddingBundle,
    inversion_style: str = "find",
) -> tuple[list[EvalInstance], list[EvalInstance], int]:
    """Negative-preference/item pairs plus their inverted positive twins.

    A negative preference at timestep t is matched against the items in the
    first t interactions whose review carries a negative label: a single
    candidate is taken outright, otherwise the review embedding closest to
    the preference embedding wins.
    """
    if embeddings.review is None:
        raise BenchmarkError("sentiment pairing needs the review embedding namespace")
    neg: list[EvalInstance] = []
    pos: list[EvalInstance] = []
    skipped = 0
    seen_pairs: set[tuple[str, str]] = set()
    pair_id = 0
    for user, t in sorted(pref_sets):
        pset = pref_sets[(user, t)]
        seq = catalog.sequences.get(user)
        if seq is None:
            continue
        horizon = len(seq)
        split_name = "test" if t == horizon - 1 else ("val" if t == horizon - 2 else "train")
        for pref in pset.preferences:
            if classify_preference_sentiment(pref) != "negative":
                continue
            candidates = [pos_i for pos_i in range(1, t + 1) if seq.sentiments[pos_i - 1] == "negative"]
            if not candidates:
                skipped += 1
                continue
            if len(candidates) == 1:
                chosen = candidates[0]
            else:
                pref_vec = embeddings.pref.get(pref)
                best: tuple[float, int] | None = None
                for position in candidates:
                    score = _cos(embeddings.review.get(review_key(user, position)), pref_vec)
                    if best is None or score > best[0]:
                        best = (score, position)
                chosen = best[1]
            target = seq.items[chosen - 1]
            if (pref, target) in seen_pairs:
                continue
            seen_pairs.add((pref, target))
            neg.append(
                EvalInstance(
                    axis="sentiment_neg", split=split_name, user=user,
                    preferences=[pref], history=[], target=target, t=t, pair=pair_id,
                )
            )
            pos.append(
                EvalInstance(
                    axis="sentiment_pos", split=split_name, user=user,
                    preferences=[invert_negative_preference(pref, style=inversion_style)],
                    history=[], target=target, t=t, pair=pair_id,
                )
            )
            pair_id += 1
    return pos, neg, skipped


def build_history_consolidation(
    catalog: Catalog,
    pref_sets: dict[tuple[str, int], PreferenceSet],
    max_history: int = 20,
) -> tuple[list[EvalInstance], int]:
    """All five final-timestep preferences at once, predicting the last item."""
    out: list[EvalInstance] = []
    skipped = 0
    for user in sorted(catalog.sequences):
        seq = catalog.sequences[user]
        if len(seq) < 4:
            continue
        pset = pref_sets.get((user, len(seq) - 1))
        if pset is None:
            skipped += 1
            continue
        out.append(
            EvalInstance(
                axis="consolidation",
                split="test",
                user=user,
                preferences=list(pset.preferences),
                history=truncate_history(seq.items[:-1], max_history),
                target=seq.items[-1],
                t=len(seq),
            )
        )
    return out, skipped


def build_suite(
    catalog: Catalog,
    pref_sets: dict[tuple[str, int], PreferenceSet],
    embeddings: EmbeddingBundle,
    max_history: int = 20,
    inversion_style: str = "find",
    sid_digest: str = "",
) -> BenchmarkSuite:
    instances = _empty_axes()
    counts: dict[str, int] = {}

    rec, counts["recommendation_skipped"] = build_recommendation_split(catalog, pref_sets, embeddings, max_history)
    for inst in rec:
        instances["recommendation"][inst.split].append(inst)

    fine, coarse, counts["steering_dropped"] = build_fine_coarse(catalog, pref_sets, embeddings, max_history)
    for inst in fine:
        instances["fine"][inst.split].append(inst)
    for inst in coarse:
        instances["coarse"][inst.split].append(inst)

    if embeddings.review is not None:
        pos, negi, counts["sentiment_skipped"] = build_sentiment_pairs(catalog, pref_sets, embeddings, inversion_style)
        for inst in pos:
            instances["sentiment_pos"][inst.split].append(inst)
        for inst in negi:
            instances["sentiment_neg"][inst.split].append(inst)
    else:
        counts["sentiment_skipped"] = 0

    consolidation, counts["consolidation_skipped"] = build_history_consolidation(catalog, pref_sets, max_history)
    for inst in consolidation:
        instances["consolidation"][inst.split].append(inst)

    provenance = {
        "catalog_digest": catalog.digest(),
        "item_embeddings_digest": embeddings.item.digest(),
        "pref_embeddings_digest": embeddings.pref.digest(),
        "review_embeddings_digest": embeddings.review.digest() if embeddings.review else None,
        "max_history": max_history,
        "inversion_style": inversion_style,
        "sid_digest": sid_digest,
    }
    return BenchmarkSuite(instances=instances, provenance=provenance, counts=counts)


def save_suite(suite: BenchmarkSuite, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for inst in suite.all_instances():
        lines.append(json.dumps(inst.to_json(), ensure_ascii=False, sort_keys=True))
    payload = ("\n".join(lines) + "\n") if lines else ""
    (out_dir / "instances.jsonl").write_text(payload, encoding="utf-8")
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    manifest = {
        "provenance": suite.provenance,
        "counts": suite.counts,
        "sizes": {axis: {split: suite.size(axis, split) for split in SPLITS} for axis in AXES},
        "instances_sha256": digest,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_suite(suite_dir: str | Path) -> BenchmarkSuite:
    suite_dir = Path(suite_dir)
    manifest = json.loads((suite_dir / "manifest.json").read_text(encoding="utf-8"))
    instances = _empty_axes()
    with open(suite_dir / "instances.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            inst = EvalInstance.from_json(json.loads(line))
            instances[inst.axis][inst.split].append(inst)
    suite = BenchmarkSuite(
        instances=instances,
        provenance=manifest.get("provenance", {}),
        counts=manifest.get("counts", {}),
    )
    return suite


def suite_digest(suite_dir: str | Path) -> str:
    payload = (Path(suite_dir) / "instances.jsonl").read_bytes()
    return hashlib.sha256(payload).hexdigest()
