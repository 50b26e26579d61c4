"""Dense embedding storage and exact cosine-similarity kernels.

Every matching rule in the benchmark builder reduces to an exact argmax or
argmin of cosine similarity over one of three embedding namespaces (items,
preferences, reviews). Corpora here are small (tens of thousands of rows),
so search is exact and brute-force by design; scores are accumulated in
64-bit floats and ties are broken by ascending id so rankings are
deterministic across platforms.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import _binio


class EmbeddingError(ValueError):
    """Raised for malformed embedding inputs or degenerate vectors."""


@dataclass
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    # dims where the population variance was zero; those are centered only
    zero_variance: np.ndarray

    def to_jsonable(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "zero_variance": [int(i) for i in np.flatnonzero(self.zero_variance)],
        }


class EmbeddingMatrix:
    """Id-indexed dense float32 matrix with cached norms."""

    def __init__(
        self,
        ids: list[str],
        vectors: np.ndarray,
        normalized: bool = False,
        standardization_stats: StandardizationStats | None = None,
    ):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise EmbeddingError("vectors must be a 2-D matrix")
        if len(ids) != vectors.shape[0]:
            raise EmbeddingError(f"{len(ids)} ids for {vectors.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise EmbeddingError("ids must be unique")
        if not np.all(np.isfinite(vectors)):
            bad = int(np.where(~np.isfinite(vectors).all(axis=1))[0][0])
            raise EmbeddingError(f"non-finite component in vector for id {ids[bad]!r}")
        self.ids = list(ids)
        self.vectors = vectors
        self.normalized = normalized
        self.standardization_stats = standardization_stats
        self._index = {i: row for row, i in enumerate(self.ids)}
        self._norms64: np.ndarray | None = None
        if normalized:
            norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-4):
                bad = int(np.argmax(np.abs(norms - 1.0)))
                raise EmbeddingError(f"id {self.ids[bad]!r} not unit-norm but normalized flag set")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, id_: str) -> bool:
        return id_ in self._index

    def get(self, id_: str) -> np.ndarray:
        try:
            return self.vectors[self._index[id_]]
        except KeyError:
            raise EmbeddingError(f"unknown embedding id {id_!r}") from None

    def norms64(self) -> np.ndarray:
        if self._norms64 is None:
            self._norms64 = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        return self._norms64

    def digest(self) -> str:
        h = hashlib.sha256()
        for id_ in self.ids:
            h.update(id_.encode("utf-8"))
            h.update(b"\x1f")
        h.update(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())
        return h.hexdigest()


@dataclass
class SimilarityResult:
    id: str
    score: float


class EmbeddingStandardizer(BaseEstimator, TransformerMixin):
    """Per-dimension zero-mean / unit-variance transform (population variance).

    Dimensions with zero variance are centered only and flagged; applying
    the transform twice is a no-op on already-standardized data.
    """

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise EmbeddingError("standardization needs at least 2 rows")
        mean = X.mean(axis=0)
        var = X.var(axis=0)  # population variance
        zero = var == 0.0
        std = np.sqrt(var)
        std[zero] = 1.0
        self.stats_ = StandardizationStats(mean=mean, std=std, zero_variance=zero)
        return self

    def transform(self, X):
        if not hasattr(self, "stats_"):
            raise NotFittedError("EmbeddingStandardizer is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return (X - self.stats_.mean) / self.stats_.std

    def inverse_transform(self, X):
        if not hasattr(self, "stats_"):
            raise NotFittedError("EmbeddingStandardizer is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return X * self.stats_.std + self.stats_.mean


def standardize(matrix: EmbeddingMatrix) -> EmbeddingMatrix:
    """Return a standardized copy of ``matrix`` with the stats attached."""
    scaler = EmbeddingStandardizer().fit(matrix.vectors)
    out = scaler.transform(matrix.vectors).astype(np.float32)
    return EmbeddingMatrix(matrix.ids, out, normalized=False, standardization_stats=scaler.stats_)


def cosine_scores(matrix: EmbeddingMatrix, query: np.ndarray) -> np.ndarray:
    """Cosine of the query against every row, accumulated in float64."""
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != matrix.dim:
        raise EmbeddingError(f"query dim {query.shape[0]} != matrix dim {matrix.dim}")
    qnorm = np.linalg.norm(query)
    if qnorm == 0.0:
        raise EmbeddingError("cosine undefined for zero-norm query")
    norms = matrix.norms64()
    if np.any(norms == 0.0):
        bad = int(np.where(norms == 0.0)[0][0])
        raise EmbeddingError(f"cosine undefined: zero-norm row for id {matrix.ids[bad]!r}")
    return (matrix.vectors.astype(np.float64) @ query) / (norms * qnorm)


def top_k_similar(
    matrix: EmbeddingMatrix,
    query: np.ndarray,
    k: int,
    exclude: set[str] | None = None,
) -> list[SimilarityResult]:
    """Exact top-k rows by cosine, descending; ties broken by ascending id."""
    if k < 1:
        raise EmbeddingError("k must be >= 1")
    scores = cosine_scores(matrix, query)
    exclude = exclude or set()
    ranked = sorted(
        (
            (-scores[row], id_)
            for row, id_ in enumerate(matrix.ids)
            if id_ not in exclude
        ),
    )
    return [SimilarityResult(id_, -neg) for neg, id_ in ranked[:k]]


def least_similar(
    matrix: EmbeddingMatrix,
    query: np.ndarray,
    exclude: set[str] | None = None,
) -> SimilarityResult:
    """Exact argmin by cosine; ties broken by ascending id."""
    scores = cosine_scores(matrix, query)
    exclude = exclude or set()
    best: tuple[float, str] | None = None
    for row, id_ in enumerate(matrix.ids):
        if id_ in exclude:
            continue
        key = (scores[row], id_)
        if best is None or key < best:
            best = key
    if best is None:
        raise EmbeddingError("empty candidate set after exclusion")
    return SimilarityResult(best[1], best[0])


_EMB_MAGIC = "PDEM"
_EMB_VERSION = 1


def save_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Persist as the PDEM binary pack: header then [id, f32 row] records."""
    with open(path, "wb") as fh:
        _binio.write_magic(fh, _EMB_MAGIC, _EMB_VERSION)
        _binio.write_u32(fh, matrix.dim)
        _binio.write_u64(fh, len(matrix))
        for row, id_ in enumerate(matrix.ids):
            _binio.write_str(fh, id_)
            _binio.write_f32_array(fh, matrix.vectors[row])


def _load_binary(path: Path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        version = _binio.read_magic(fh, _EMB_MAGIC)
        if version != _EMB_VERSION:
            raise _binio.FormatError(f"unsupported PDEM version {version}")
        dim = _binio.read_u32(fh)
        count = _binio.read_u64(fh)
        ids: list[str] = []
        vectors = np.empty((count, dim), dtype=np.float32)
        for row in range(count):
            ids.append(_binio.read_str(fh))
            vectors[row] = _binio.read_f32_array(fh, (dim,))
    return EmbeddingMatrix(ids, vectors)


def _load_jsonl(path: Path) -> EmbeddingMatrix:
    ids: list[str] = []
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                id_, vec = str(obj["id"]), obj["vector"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise EmbeddingError(f"line {lineno}: expected {{id, vector}} record") from None
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise EmbeddingError(f"dimension mismatch for id {id_!r}: {len(vec)} != {dim}")
            ids.append(id_)
            rows.append(vec)
    if not ids:
        raise EmbeddingError(f"{path}: no embedding records found")
    return EmbeddingMatrix(ids, np.asarray(rows, dtype=np.float32))


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Load a PDEM binary pack, falling back to JSONL {id, vector} records."""
    path = Path(path)
    if not path.exists():
        raise EmbeddingError(f"no such file: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == _EMB_MAGIC.encode("ascii"):
        return _load_binary(path)
    return _load_jsonl(path)
