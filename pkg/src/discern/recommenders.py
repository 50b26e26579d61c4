"""Reference recommenders for exercising the benchmark end to end.

Neither model here is a neural recommender; they exist so the benchmark,
decoding and metrics stack can be driven without GPU training. The
unconditioned baseline is a smoothed Markov chain over flattened semantic-ID
token streams. The preference-conditioned model fuses that sequential prior
with cosine affinity between preference embeddings and candidate item
embeddings: positive preferences add score, negative ones subtract.

Any external model can plug into the same evaluation path by honoring the
scorer contract (see :mod:`discern.sid_index`) over a line-oriented JSON
subprocess protocol: one request object per line on stdin, one response
object per line on stdout.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from . import _binio
from .corpus import Catalog
from .embeddings import EmbeddingMatrix
from .quantizer import SemanticId
from .sid_index import SidTrie, constrained_beam_search, decode_to_items

# token = (depth within an ID, code value); depths disambiguate code spaces
Token = tuple[int, int]


class RecommenderError(ValueError):
    pass


@dataclass
class PreferenceSignal:
    """One conditioning preference: embedding plus rule-based sentiment."""

    embedding: np.ndarray | None
    sentiment: str  # "positive" | "negative"
    text: str | None = None


@dataclass
class ScorerContext:
    history: list[SemanticId] = field(default_factory=list)
    preferences: list[PreferenceSignal] = field(default_factory=list)

    def history_tokens(self) -> list[Token]:
        tokens: list[Token] = []
        for sid in self.history:
            tokens.extend(enumerate(sid.as_tokens()))
        return tokens


class MarkovSidModel(BaseEstimator):
    """Additive-alpha-smoothed Markov chain over semantic-ID token streams.

    Counts are kept for every context length 0..order so queries can back
    off from the longest matching context down to the unconditional table;
    a fully unseen context yields the uniform distribution over the valid
    children.
    """

    def __init__(self, order: int = 3, alpha: float = 0.1):
        self.order = order
        self.alpha = alpha

    def fit(self, sequences: list[list[SemanticId]], y=None):
        if self.order < 1:
            raise RecommenderError("order must be >= 1")
        if self.alpha <= 0:
            raise RecommenderError("alpha must be positive")
        if not sequences:
            raise RecommenderError("empty training set")
        counts: list[dict[tuple[Token, ...], dict[Token, int]]] = [{} for _ in range(self.order + 1)]
        for seq in sequences:
            stream: list[Token] = []
            for sid in seq:
                stream.extend(enumerate(sid.as_tokens()))
            for i, token in enumerate(stream):
                for length in range(1, self.order + 1):
                    if i - length < 0:
                        break
                    ctx = tuple(stream[i - length : i])
                    table = counts[length].setdefault(ctx, {})
                    table[token] = table.get(token, 0) + 1
        self.counts_ = counts
        return self

    def next_token_logits(self, stream: list[Token], children: tuple[int, ...], child_depth: int) -> np.ndarray:
        """Log-probabilities over ``children`` codes at depth ``child_depth``
        of the next ID, renormalized over exactly that child set."""
        if not hasattr(self, "counts_"):
            raise RecommenderError("model is not fitted")
        if not children:
            raise RecommenderError("no children to score")
        # back off from the longest matching context; a fully unseen context
        # floors at the uniform distribution over the valid children
        table: dict[Token, int] | None = None
        for length in range(min(self.order, len(stream)), 0, -1):
            ctx = tuple(stream[len(stream) - length :])
            table = self.counts_[length].get(ctx)
            if table is not None:
                break
        child_tokens = [(child_depth, c) for c in children]
        counts = np.array([table.get(tok, 0) if table else 0 for tok in child_tokens], dtype=np.float64)
        probs = (counts + self.alpha) / (counts.sum() + self.alpha * len(children))
        return np.log(probs)

    def scorer(self, context: ScorerContext):
        """Adapt this model to the beam-search scorer contract."""
        base_tokens = context.history_tokens() if context else []

        def score(prefix: tuple[int, ...], children: tuple[int, ...], _ctx: object):
            stream = base_tokens + list(enumerate(prefix))
            return self.next_token_logits(stream, children, child_depth=len(prefix))

        return score


def training_code_sequences(catalog: Catalog, sid_map: dict[str, SemanticId]) -> list[list[SemanticId]]:
    """Per-user training stream: everything before the validation target."""
    out: list[list[SemanticId]] = []
    for user in sorted(catalog.sequences):
        items = catalog.sequences[user].items
        prefix = items[:-2] if len(items) >= 4 else []
        seq = [sid_map[i] for i in prefix if i in sid_map]
        if seq:
            out.append(seq)
    return out


@dataclass
class FusionModel:
    """Sequential prior fused with preference-item cosine affinity."""

    base: MarkovSidModel
    preference_weight: float = 1.0
    negative_penalty: float = 1.0
    sid_digest: str = ""

    def __post_init__(self):
        if not math.isfinite(self.preference_weight) or not math.isfinite(self.negative_penalty):
            raise RecommenderError("fusion weights must be finite")

    def candidate_scores(
        self,
        history: list[SemanticId],
        trie: SidTrie,
        sid_map: dict[str, SemanticId],
        beam_width: int,
    ) -> list[tuple[str, float]]:
        if history:
            context = ScorerContext(history=history)
            results = constrained_beam_search(
                self.base.scorer(context), trie, context, beam_width=beam_width, k=beam_width
            )
            return decode_to_items(results, sid_map)
        # no history: flat prior over the whole catalog
        prior = -math.log(len(sid_map))
        return [(item, prior) for item in sorted(sid_map)]

    def recommend(
        self,
        history: list[SemanticId],
        preferences: list[PreferenceSignal],
        trie: SidTrie,
        sid_map: dict[str, SemanticId],
        item_embeddings: EmbeddingMatrix | None,
        k: int = 10,
        beam_width: int = 30,
    ) -> list[tuple[str, float, dict[str, float]]]:
        """Ranked (item, score, per-preference cosine breakdown)."""
        if k > beam_width:
            raise RecommenderError(f"k={k} exceeds beam width {beam_width}")
        candidates = self.candidate_scores(history, trie, sid_map, beam_width)
        scored: list[tuple[float, str, dict[str, float]]] = []
        active = [p for p in preferences if p.embedding is not None]
        for item, base_lp in candidates:
            breakdown: dict[str, float] = {}
            bonus = 0.0
            if active:
                if item_embeddings is None:
                    raise RecommenderError("item embeddings required for preference fusion")
                vec = item_embeddings.get(item).astype(np.float64)
                vnorm = np.linalg.norm(vec)
                if vnorm == 0.0:
                    raise RecommenderError(f"zero-norm item embedding for {item!r}")
                for idx, pref in enumerate(active):
                    pvec = np.asarray(pref.embedding, dtype=np.float64)
                    pnorm = np.linalg.norm(pvec)
                    if pnorm == 0.0:
                        raise RecommenderError("zero-norm preference embedding")
                    cos = float(vec @ pvec / (vnorm * pnorm))
                    breakdown[pref.text if pref.text is not None else f"preference_{idx}"] = cos
                    if pref.sentiment == "negative":
                        bonus -= self.negative_penalty * cos
                    else:
                        bonus += self.preference_weight * cos
            scored.append((base_lp + bonus, item, breakdown))
        scored.sort(key=lambda entry: (-entry[0], entry[1]))
        return [(item, score, breakdown) for score, item, breakdown in scored[:k]]


class ExternalScorerModel:
    """Evaluate a third-party model over the subprocess line protocol.

    Requests: {"prefix": [...], "children": [...], "history": [[tokens]],
    "preferences": [{"text", "sentiment"}]}. Responses: {"logits": [...]}
    aligned with the children. One JSON object per line, both directions.
    """

    def __init__(self, command: list[str]):
        self.command = list(command)
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def scorer(self, context: ScorerContext):
        history = [list(sid.as_tokens()) for sid in context.history]
        prefs = [
            {"text": p.text, "sentiment": p.sentiment}
            for p in context.preferences
        ]

        def score(prefix: tuple[int, ...], children: tuple[int, ...], _ctx: object):
            proc = self._ensure()
            request = {
                "prefix": list(prefix),
                "children": list(children),
                "history": history,
                "preferences": prefs,
            }
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
            if not line:
                raise RecommenderError(f"external scorer {self.command!r} closed its stdout")
            reply = json.loads(line)
            return reply["logits"]

        return score

    def recommend(
        self,
        history: list[SemanticId],
        preferences: list[PreferenceSignal],
        trie: SidTrie,
        sid_map: dict[str, SemanticId],
        item_embeddings: EmbeddingMatrix | None = None,
        k: int = 10,
        beam_width: int = 30,
    ) -> list[tuple[str, float, dict[str, float]]]:
        context = ScorerContext(history=history, preferences=preferences)
        results = constrained_beam_search(self.scorer(context), trie, context, beam_width=beam_width, k=k)
        return [(item, score, {}) for item, score in decode_to_items(results, sid_map)]


_MODEL_MAGIC = "PDMK"
_MODEL_VERSION = 1


def save_fusion_model(model: FusionModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        _binio.write_magic(fh, _MODEL_MAGIC, _MODEL_VERSION)
        _binio.write_u32(fh, model.base.order)
        _binio.write_f64(fh, model.base.alpha)
        _binio.write_f64(fh, model.preference_weight)
        _binio.write_f64(fh, model.negative_penalty)
        _binio.write_str(fh, model.sid_digest)
        counts = model.base.counts_
        _binio.write_u32(fh, len(counts))
        for table in counts:
            _binio.write_u64(fh, len(table))
            for ctx in sorted(table):
                _binio.write_u16(fh, len(ctx))
                for depth, value in ctx:
                    _binio.write_u8(fh, depth)
                    _binio.write_u32(fh, value)
                nexts = table[ctx]
                _binio.write_u32(fh, len(nexts))
                for (depth, value) in sorted(nexts):
                    _binio.write_u8(fh, depth)
                    _binio.write_u32(fh, value)
                    _binio.write_u64(fh, nexts[(depth, value)])


def load_fusion_model(path: str | Path) -> FusionModel:
    with open(path, "rb") as fh:
        version = _binio.read_magic(fh, _MODEL_MAGIC)
        if version != _MODEL_VERSION:
            raise _binio.FormatError(f"unsupported PDMK version {version}")
        order = _binio.read_u32(fh)
        alpha = _binio.read_f64(fh)
        pref_weight = _binio.read_f64(fh)
        neg_penalty = _binio.read_f64(fh)
        sid_digest = _binio.read_str(fh)
        n_tables = _binio.read_u32(fh)
        counts: list[dict[tuple[Token, ...], dict[Token, int]]] = []
        for _ in range(n_tables):
            table: dict[tuple[Token, ...], dict[Token, int]] = {}
            n_ctx = _binio.read_u64(fh)
            for _ in range(n_ctx):
                ctx_len = _binio.read_u16(fh)
                ctx = tuple((_binio.read_u8(fh), _binio.read_u32(fh)) for _ in range(ctx_len))
                n_next = _binio.read_u32(fh)
                nexts: dict[Token, int] = {}
                for _ in range(n_next):
                    tok = (_binio.read_u8(fh), _binio.read_u32(fh))
                    nexts[tok] = _binio.read_u64(fh)
                table[ctx] = nexts
            counts.append(table)
    base = MarkovSidModel(order=order, alpha=alpha)
    base.counts_ = counts
    return FusionModel(
        base=base,
        preference_weight=pref_weight,
        negative_penalty=neg_penalty,
        sid_digest=sid_digest,
    )
