"""Interaction-log ingestion and preprocessing.

Turns raw interaction dumps (JSONL or TSV) into an immutable
:class:`Catalog` of per-user, time-ordered item sequences, and applies the
standard preprocessing used throughout the toolkit: iterative 5-core
filtering, leave-last-out splitting, and most-recent-history truncation.

A catalog records, per interaction, the item id, the epoch timestamp, and
optionally the review text, a rating, and a binary review sentiment label.
Review sentiment labels are ingested here (they come from an external
classifier); nothing in this module computes sentiment.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import _binio

SENTIMENTS = ("positive", "negative")


class CorpusError(ValueError):
    """Raised for malformed inputs or degenerate catalogs."""


@dataclass(frozen=True)
class InteractionRecord:
    """One user-item interaction at a point in time."""

    user: str
    item: str
    timestamp: int
    review: str | None = None
    rating: float | None = None
    review_sentiment: str | None = None

    def __post_init__(self):
        if not self.user or not self.item:
            raise CorpusError("user and item must be non-empty")
        if self.review_sentiment is not None and self.review_sentiment not in SENTIMENTS:
            raise CorpusError(f"bad sentiment label {self.review_sentiment!r}")


@dataclass
class UserSequence:
    """A user's interactions in ascending time order.

    ``items``, ``reviews``, ``timestamps``, ``ratings`` and ``sentiments``
    are parallel lists; optional slots hold ``None``.
    """

    user: str
    items: list[str]
    reviews: list[str | None]
    timestamps: list[int]
    ratings: list[float | None]
    sentiments: list[str | None]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class Catalog:
    """Immutable-by-convention view of all user sequences.

    ``provenance`` carries the source digest and any filter parameters so
    downstream artifacts can be tied back to their inputs.
    """

    sequences: dict[str, UserSequence]
    items: set[str]
    provenance: dict = field(default_factory=dict)

    @property
    def n_users(self) -> int:
        return len(self.sequences)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_actions(self) -> int:
        return sum(len(s) for s in self.sequences.values())

    def digest(self) -> str:
        """Content digest over users, items, timestamps and reviews."""
        h = hashlib.sha256()
        for user in sorted(self.sequences):
            seq = self.sequences[user]
            h.update(user.encode("utf-8"))
            for item, ts, review, sent in zip(seq.items, seq.timestamps, seq.reviews, seq.sentiments):
                h.update(f"\x1f{item}\x1f{ts}\x1f{review or ''}\x1f{sent or ''}".encode("utf-8"))
            h.update(b"\x1e")
        return h.hexdigest()


@dataclass
class SplitEntry:
    user: str
    history: list[str]
    target: str
    # 1-based position of the target within the full user sequence
    t: int


@dataclass
class DatasetSplit:
    train: list[SplitEntry]
    val: list[SplitEntry]
    test: list[SplitEntry]
    skipped_users: int = 0


def _record_from_json(obj: dict, lineno: int) -> InteractionRecord:
    try:
        user = str(obj["user"])
        item = str(obj["item"])
        ts = int(obj["ts"])
    except KeyError as exc:
        raise CorpusError(f"line {lineno}: missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError):
        raise CorpusError(f"line {lineno}: non-integer timestamp {obj.get('ts')!r}") from None
    rating = obj.get("rating")
    sentiment = obj.get("sentiment")
    try:
        return InteractionRecord(
            user=user,
            item=item,
            timestamp=ts,
            review=obj.get("review"),
            rating=float(rating) if rating is not None else None,
            review_sentiment=sentiment,
        )
    except CorpusError as exc:
        raise CorpusError(f"line {lineno}: {exc}") from None


def _record_from_tsv(line: str, lineno: int) -> InteractionRecord:
    cols = line.rstrip("\n").split("\t")
    if len(cols) < 3:
        raise CorpusError(f"line {lineno}: expected at least 3 tab-separated columns, got {len(cols)}")
    user, item, ts_raw = cols[0], cols[1], cols[2]
    try:
        ts = int(ts_raw)
    except ValueError:
        raise CorpusError(f"line {lineno}: non-integer timestamp {ts_raw!r}") from None
    review = cols[3] if len(cols) > 3 and cols[3] != "" else None
    rating = float(cols[4]) if len(cols) > 4 and cols[4] != "" else None
    sentiment = cols[5] if len(cols) > 5 and cols[5] != "" else None
    try:
        return InteractionRecord(user, item, ts, review, rating, sentiment)
    except CorpusError as exc:
        raise CorpusError(f"line {lineno}: {exc}") from None


def build_catalog(records: list[InteractionRecord], provenance: dict | None = None) -> Catalog:
    """Assemble a catalog from records: dedup exact (user, item, ts) triples,
    then sort each user's interactions by timestamp (ties keep input order).
    """
    seen: set[tuple[str, str, int]] = set()
    per_user: dict[str, list[InteractionRecord]] = {}
    for rec in records:
        key = (rec.user, rec.item, rec.timestamp)
        if key in seen:
            continue
        seen.add(key)
        per_user.setdefault(rec.user, []).append(rec)

    sequences: dict[str, UserSequence] = {}
    items: set[str] = set()
    for user, recs in per_user.items():
        recs = sorted(recs, key=lambda r: r.timestamp)  # stable: ties keep input order
        sequences[user] = UserSequence(
            user=user,
            items=[r.item for r in recs],
            reviews=[r.review for r in recs],
            timestamps=[r.timestamp for r in recs],
            ratings=[r.rating for r in recs],
            sentiments=[r.review_sentiment for r in recs],
        )
        items.update(seq_item for seq_item in sequences[user].items)
    return Catalog(sequences=sequences, items=items, provenance=dict(provenance or {}))


def ingest_interactions(path: str | Path, format: str = "jsonl") -> Catalog:
    """Read an interaction log into a catalog.

    JSONL records carry the fields ``user``, ``item``, ``ts`` and optionally
    ``review``, ``rating``, ``sentiment``. TSV rows carry the same fields in
    that column order. Duplicate (user, item, ts) triples are dropped.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    if format not in ("jsonl", "tsv"):
        raise CorpusError(f"unknown format {format!r}")

    raw = path.read_bytes()
    records: list[InteractionRecord] = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if format == "jsonl":
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            records.append(_record_from_json(obj, lineno))
        else:
            records.append(_record_from_tsv(line, lineno))

    if not records:
        raise CorpusError(f"{path}: no interaction records found")
    provenance = {
        "source": str(path),
        "source_sha256": hashlib.sha256(raw).hexdigest(),
        "format": format,
    }
    return build_catalog(records, provenance)


def five_core_filter(catalog: Catalog, min_user: int = 5, min_item: int = 5) -> Catalog:
    """Iteratively drop users with < ``min_user`` interactions and items with
    < ``min_item`` occurrences until both conditions hold simultaneously.

    Each round removes light users first, then light items; the fixpoint is
    order-independent but the fixed order keeps iteration counts reproducible.
    """
    if catalog.n_users == 0:
        raise CorpusError("cannot filter an empty catalog")

    # Work on (user, item) interaction multisets; positions keep parallel data.
    kept: dict[str, list[int]] = {
        user: list(range(len(seq))) for user, seq in catalog.sequences.items()
    }
    rounds = 0
    changed = True
    while changed:
        changed = False
        rounds += 1
        for user in list(kept):
            if len(kept[user]) < min_user:
                del kept[user]
                changed = True
        item_counts: dict[str, int] = {}
        for user, idxs in kept.items():
            seq = catalog.sequences[user]
            for i in idxs:
                item_counts[seq.items[i]] = item_counts.get(seq.items[i], 0) + 1
        light_items = {item for item, c in item_counts.items() if c < min_item}
        if light_items:
            changed = True
            for user, idxs in kept.items():
                seq = catalog.sequences[user]
                kept[user] = [i for i in idxs if seq.items[i] not in light_items]

    sequences: dict[str, UserSequence] = {}
    items: set[str] = set()
    for user, idxs in kept.items():
        if not idxs:
            continue
        seq = catalog.sequences[user]
        sequences[user] = UserSequence(
            user=user,
            items=[seq.items[i] for i in idxs],
            reviews=[seq.reviews[i] for i in idxs],
            timestamps=[seq.timestamps[i] for i in idxs],
            ratings=[seq.ratings[i] for i in idxs],
            sentiments=[seq.sentiments[i] for i in idxs],
        )
        items.update(sequences[user].items)

    if not sequences:
        raise CorpusError(f"catalog empty after 5-core filtering ({rounds} rounds)")
    provenance = dict(catalog.provenance)
    provenance.update({"five_core": {"min_user": min_user, "min_item": min_item, "rounds": rounds}})
    return Catalog(sequences=sequences, items=items, provenance=provenance)


def leave_last_out(catalog: Catalog) -> DatasetSplit:
    """Per-user split: last item is the test target, penultimate the
    validation target, and every earlier item except the first is a training
    target (no preferences exist for the first item). Sequences shorter than
    4 cannot contribute a training target and are skipped with a warning
    count.
    """
    split = DatasetSplit(train=[], val=[], test=[])
    for user in sorted(catalog.sequences):
        seq = catalog.sequences[user]
        n = len(seq)
        if n < 4:
            split.skipped_users += 1
            continue
        split.test.append(SplitEntry(user, seq.items[: n - 1], seq.items[n - 1], n))
        split.val.append(SplitEntry(user, seq.items[: n - 2], seq.items[n - 2], n - 1))
        for t in range(2, n - 1):  # 1-based targets 2 .. n-2
            split.train.append(SplitEntry(user, seq.items[: t - 1], seq.items[t - 1], t))
    return split


def truncate_history(history: list[str], max_len: int = 20) -> list[str]:
    """Keep the ``max_len`` most recent items, order preserved."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    return history[-max_len:] if len(history) > max_len else list(history)


def sub_sample_users(catalog: Catalog, fraction: float, seed: int) -> Catalog:
    """Seeded uniform sub-sample over users (the exact procedure used for the
    original Steam reduction is unpublished; this is the exposed option)."""
    if not 0.0 < fraction <= 1.0:
        raise CorpusError("fraction must be in (0, 1]")
    import random

    users = sorted(catalog.sequences)
    rng = random.Random(seed)
    n_keep = max(1, round(fraction * len(users)))
    keep = set(rng.sample(users, n_keep))
    sequences = {u: catalog.sequences[u] for u in users if u in keep}
    items = {i for s in sequences.values() for i in s.items}
    provenance = dict(catalog.provenance)
    provenance["sub_sample"] = {"fraction": fraction, "seed": seed}
    return Catalog(sequences=sequences, items=items, provenance=provenance)


_CATALOG_MAGIC = "PDCAT"
_CATALOG_VERSION = 1
_SENT_CODE = {None: 0, "positive": 1, "negative": 2}
_SENT_NAME = {0: None, 1: "positive", 2: "negative"}


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    """Persist as the versioned PDCAT binary format."""
    with open(path, "wb") as fh:
        _binio.write_magic(fh, _CATALOG_MAGIC, _CATALOG_VERSION)
        _binio.write_long_str(fh, json.dumps(catalog.provenance, sort_keys=True))
        _binio.write_u64(fh, catalog.n_users)
        for user in sorted(catalog.sequences):
            seq = catalog.sequences[user]
            _binio.write_str(fh, user)
            _binio.write_u64(fh, len(seq))
            for i in range(len(seq)):
                _binio.write_str(fh, seq.items[i])
                _binio.write_i64(fh, seq.timestamps[i])
                review = seq.reviews[i]
                _binio.write_u8(fh, 1 if review is not None else 0)
                if review is not None:
                    _binio.write_long_str(fh, review)
                rating = seq.ratings[i]
                _binio.write_u8(fh, 1 if rating is not None else 0)
                if rating is not None:
                    _binio.write_f64(fh, rating)
                _binio.write_u8(fh, _SENT_CODE[seq.sentiments[i]])


def load_catalog(path: str | Path) -> Catalog:
    with open(path, "rb") as fh:
        version = _binio.read_magic(fh, _CATALOG_MAGIC)
        if version != _CATALOG_VERSION:
            raise _binio.FormatError(f"unsupported PDCAT version {version}")
        provenance = json.loads(_binio.read_long_str(fh))
        n_users = _binio.read_u64(fh)
        sequences: dict[str, UserSequence] = {}
        items: set[str] = set()
        for _ in range(n_users):
            user = _binio.read_str(fh)
            n = _binio.read_u64(fh)
            seq = UserSequence(user, [], [], [], [], [])
            for _ in range(n):
                seq.items.append(_binio.read_str(fh))
                seq.timestamps.append(_binio.read_i64(fh))
                seq.reviews.append(_binio.read_long_str(fh) if _binio.read_u8(fh) else None)
                seq.ratings.append(_binio.read_f64(fh) if _binio.read_u8(fh) else None)
                seq.sentiments.append(_SENT_NAME[_binio.read_u8(fh)])
            sequences[user] = seq
            items.update(seq.items)
    return Catalog(sequences=sequences, items=items, provenance=provenance)
