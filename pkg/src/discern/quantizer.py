"""Multi-level residual quantizers and semantic-ID assignment.

An item embedding is mapped to an N-tuple of codebook indices by a greedy
per-level nearest-codeword scan: level 1 quantizes the (encoded) embedding,
each further level quantizes the residual the previous levels left behind.
Two trainers produce the codebooks: a deterministic residual k-means (the
default) and the residual-quantized autoencoder in :mod:`discern.rqvae`.
Items whose code tuples collide receive an extra disambiguation digit so
the final semantic IDs are unique.

The k-means here is intentionally hand-rolled: greedy Lloyd iterations with
k-means++ seeding from an explicit generator, stable tie-breaking (lowest
index), and a deterministic rule for empty clusters (re-seed at the point
farthest from its assigned centroid). Library implementations do not pin
those behaviors, and the assignment semantics are the contract everything
downstream (tries, decoding, evaluation) relies on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import _binio, rqvae as _rqvae
from .embeddings import EmbeddingMatrix, EmbeddingStandardizer, StandardizationStats
from .rqvae import RqVaeConfig, RqVaeNetwork, nearest_codeword


class QuantizerError(ValueError):
    pass


@dataclass
class Codebook:
    level: int  # 1-based
    codewords: np.ndarray  # (K, d') float32

    def __post_init__(self):
        self.codewords = np.asarray(self.codewords, dtype=np.float32)
        if self.codewords.shape[0] < 2:
            raise QuantizerError("a codebook needs K >= 2")
        if not np.all(np.isfinite(self.codewords)):
            raise QuantizerError(f"non-finite codeword at level {self.level}")


@dataclass(frozen=True)
class SemanticId:
    codes: tuple[int, ...]
    disambiguator: int

    def as_tokens(self) -> tuple[int, ...]:
        return (*self.codes, self.disambiguator)

    def __str__(self) -> str:
        return ",".join(str(c) for c in self.as_tokens())


@dataclass
class QuantizerModel:
    kind: str  # "residual_kmeans" | "rqvae"
    codebooks: list[Codebook]
    input_dim: int
    latent_dim: int
    input_standardization: StandardizationStats | None = None
    net: RqVaeNetwork | None = None
    config: dict = field(default_factory=dict)
    training_curve: list[float] = field(default_factory=list)
    reconstruction_curve: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("residual_kmeans", "rqvae"):
            raise QuantizerError(f"unknown quantizer kind {self.kind!r}")
        dims = {cb.codewords.shape[1] for cb in self.codebooks}
        if dims != {self.latent_dim}:
            raise QuantizerError(f"codebook widths {dims} do not match latent dim {self.latent_dim}")

    @property
    def n_levels(self) -> int:
        return len(self.codebooks)

    @property
    def k(self) -> int:
        return self.codebooks[0].codewords.shape[0]

    def encode(self, X: np.ndarray) -> np.ndarray:
        """Map raw embeddings into the quantized space (float64)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise QuantizerError(f"embedding dim {X.shape[1]} != model input dim {self.input_dim}")
        if not np.all(np.isfinite(X)):
            raise QuantizerError("non-finite embedding")
        if self.input_standardization is not None:
            X = (X - self.input_standardization.mean) / self.input_standardization.std
        if self.kind == "rqvae":
            assert self.net is not None
            X, _ = self.net.encode(X)
        return X

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Codes for each row: greedy per-level nearest codeword."""
        r = self.encode(X)
        codes = np.empty((r.shape[0], self.n_levels), dtype=np.int64)
        for n, cb in enumerate(self.codebooks):
            words = cb.codewords.astype(np.float64)
            idx = nearest_codeword(r, words)
            codes[:, n] = idx
            r = r - words[idx]
        return codes

    def quantize(self, embedding: np.ndarray) -> tuple[int, ...]:
        return tuple(int(c) for c in self.transform(np.atleast_2d(embedding))[0])

    def quantize_with_residual(self, embedding: np.ndarray) -> tuple[tuple[int, ...], np.ndarray]:
        r = self.encode(np.atleast_2d(embedding))
        codes = []
        for cb in self.codebooks:
            words = cb.codewords.astype(np.float64)
            idx = int(nearest_codeword(r, words)[0])
            codes.append(idx)
            r = r - words[idx]
        return tuple(codes), r[0]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.encode())
        for cb in self.codebooks:
            h.update(np.ascontiguousarray(cb.codewords, dtype="<f4").tobytes())
        if self.net is not None:
            for name in sorted(self.net.parameters()):
                h.update(name.encode())
                h.update(np.ascontiguousarray(self.net.parameters()[name], dtype="<f8").tobytes())
        return h.hexdigest()


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = X[first]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _kmeans_lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iters: int) -> np.ndarray:
    """Lloyd's algorithm; converges when assignments are stable."""
    n = X.shape[0]
    if n < k:
        raise QuantizerError(f"need at least k={k} rows, got {n}")
    centers = _kmeans_pp_init(X, k, rng)
    x_sq = (X * X).sum(axis=1)
    prev = None
    for _ in range(max_iters):
        # fast matmul form for the iteration loop; the final model quantizes
        # with the exact elementwise scan in nearest_codeword
        d2 = x_sq[:, None] - 2.0 * (X @ centers.T) + (centers * centers).sum(axis=1)[None, :]
        assign = d2.argmin(axis=1)
        own = d2[np.arange(n), assign].copy()
        for c in range(k):
            if not np.any(assign == c):
                # deterministic re-seed: point farthest from its centroid
                idx = int(own.argmax())
                centers[c] = X[idx]
                assign[idx] = c
                own[idx] = 0.0
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        for c in range(k):
            members = assign == c
            centers[c] = X[members].mean(axis=0)
    return centers


def train_residual_kmeans(
    matrix: EmbeddingMatrix,
    n_levels: int = 3,
    k: int = 256,
    seed: int = 0,
    max_iters: int = 100,
) -> QuantizerModel:
    """Level 1 clusters the embeddings; each further level clusters the
    residuals left by the previous levels. Fully seed-deterministic."""
    X = matrix.vectors.astype(np.float64)
    if X.shape[0] < k:
        raise QuantizerError(f"need at least k={k} embeddings, got {X.shape[0]}")
    rng = np.random.default_rng(seed)
    codebooks: list[Codebook] = []
    r = X.copy()
    for level in range(1, n_levels + 1):
        centers = _kmeans_lloyd(r, k, rng, max_iters)
        centers32 = centers.astype(np.float32)
        codebooks.append(Codebook(level=level, codewords=centers32))
        idx = nearest_codeword(r, centers32.astype(np.float64))
        r = r - centers32.astype(np.float64)[idx]
    return QuantizerModel(
        kind="residual_kmeans",
        codebooks=codebooks,
        input_dim=matrix.dim,
        latent_dim=matrix.dim,
        config={"n_levels": n_levels, "k": k, "seed": seed, "max_iters": max_iters},
    )


def train_rqvae(matrix: EmbeddingMatrix, config: RqVaeConfig | None = None) -> QuantizerModel:
    """Standardize the embeddings, fit the autoencoder, and lift its
    codebooks into a quantizer model. Warns (never fails) when coverage
    lands below ``config.coverage_floor``."""
    config = config or RqVaeConfig()
    if matrix.standardization_stats is not None:
        stats = matrix.standardization_stats
        X = matrix.vectors.astype(np.float64)
    else:
        scaler = EmbeddingStandardizer().fit(matrix.vectors)
        stats = scaler.stats_
        X = scaler.transform(matrix.vectors)
    net = _rqvae.train_network(X, config)
    codebooks = [Codebook(level=n + 1, codewords=cb.astype(np.float32)) for n, cb in enumerate(net.codebooks)]
    # the model quantizes with the f32 codebooks it persists
    for n, cb in enumerate(codebooks):
        net.codebooks[n] = cb.codewords.astype(np.float64)
    model = QuantizerModel(
        kind="rqvae",
        codebooks=codebooks,
        input_dim=matrix.dim,
        latent_dim=net.latent_dim,
        input_standardization=stats,
        net=net,
        config={
            "widths": list(config.widths),
            "n_levels": config.n_levels,
            "k": config.k,
            "dropout": config.dropout,
            "weight_decay": config.weight_decay,
            "commitment_beta": config.commitment_beta,
            "lr": config.lr,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "seed": config.seed,
        },
        training_curve=list(net.training_curve),
        reconstruction_curve=list(net.reconstruction_curve),
    )
    if config.coverage_floor > 0.0:
        coverage = codebook_coverage(model, matrix)
        if float(np.min(coverage)) < config.coverage_floor:
            import warnings

            warnings.warn(
                f"codebook coverage {np.round(coverage, 3).tolist()} below floor {config.coverage_floor}",
                stacklevel=2,
            )
    return model


def quantize(model: QuantizerModel, embedding: np.ndarray) -> tuple[int, ...]:
    return model.quantize(embedding)


def assign_semantic_ids(model: QuantizerModel, matrix: EmbeddingMatrix) -> dict[str, SemanticId]:
    """Quantize every item; tuples that collide get disambiguators
    0, 1, 2, ... in ascending item-id order."""
    codes = model.transform(matrix.vectors)
    by_tuple: dict[tuple[int, ...], list[str]] = {}
    for row, item in enumerate(matrix.ids):
        by_tuple.setdefault(tuple(int(c) for c in codes[row]), []).append(item)
    out: dict[str, SemanticId] = {}
    for code_tuple, items in by_tuple.items():
        for rank, item in enumerate(sorted(items)):
            out[item] = SemanticId(codes=code_tuple, disambiguator=rank)
    return out


def codebook_coverage(model: QuantizerModel, matrix: EmbeddingMatrix) -> np.ndarray:
    """Per level, the fraction of codewords selected at least once."""
    codes = model.transform(matrix.vectors)
    return np.array([len(np.unique(codes[:, n])) / model.k for n in range(model.n_levels)])


def save_sid_map(sid_map: dict[str, SemanticId], path: str | Path, model_digest: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if model_digest:
            fh.write(f"# model={model_digest}\n")
        for item in sorted(sid_map):
            fh.write(f"{item}\t{sid_map[item]}\n")


def load_sid_map(path: str | Path) -> tuple[dict[str, SemanticId], str]:
    sid_map: dict[str, SemanticId] = {}
    digest = ""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# model="):
                    digest = line[len("# model=") :]
                continue
            item, tokens = line.split("\t")
            parts = [int(x) for x in tokens.split(",")]
            sid_map[item] = SemanticId(codes=tuple(parts[:-1]), disambiguator=parts[-1])
    return sid_map, digest


def sid_map_digest(sid_map: dict[str, SemanticId]) -> str:
    h = hashlib.sha256()
    for item in sorted(sid_map):
        h.update(f"{item}\t{sid_map[item]}\n".encode("utf-8"))
    return h.hexdigest()


_MODEL_MAGIC = "PDRQ"
_MODEL_VERSION = 1
_KIND_CODE = {"residual_kmeans": 0, "rqvae": 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}


def save_model(model: QuantizerModel, path: str | Path) -> None:
    with open(path, "wb") as fh:
        _binio.write_magic(fh, _MODEL_MAGIC, _MODEL_VERSION)
        _binio.write_u8(fh, _KIND_CODE[model.kind])
        _binio.write_u32(fh, model.n_levels)
        _binio.write_u32(fh, model.k)
        _binio.write_u32(fh, model.latent_dim)
        _binio.write_u32(fh, model.input_dim)
        for cb in model.codebooks:
            _binio.write_f32_array(fh, cb.codewords)
        stats = model.input_standardization
        _binio.write_u8(fh, 1 if stats is not None else 0)
        if stats is not None:
            _binio.write_f64_array(fh, stats.mean)
            _binio.write_f64_array(fh, stats.std)
            _binio.write_f64_array(fh, stats.zero_variance.astype(np.float64))
        _binio.write_u8(fh, 1 if model.net is not None else 0)
        if model.net is not None:
            params = model.net.parameters()
            block_names = [n for n in sorted(params) if not n.startswith("codebook")]
            _binio.write_u32(fh, len(block_names))
            for name in block_names:
                _binio.write_str(fh, name)
                arr = params[name]
                _binio.write_u8(fh, arr.ndim)
                for dim in arr.shape:
                    _binio.write_u32(fh, dim)
                _binio.write_f64_array(fh, arr)
        _binio.write_long_str(fh, json.dumps(model.config, sort_keys=True))
        _binio.write_long_str(fh, json.dumps({"loss": model.training_curve, "rec": model.reconstruction_curve}))


def load_model(path: str | Path) -> QuantizerModel:
    with open(path, "rb") as fh:
        version = _binio.read_magic(fh, _MODEL_MAGIC)
        if version != _MODEL_VERSION:
            raise _binio.FormatError(f"unsupported PDRQ version {version}")
        kind = _KIND_NAME[_binio.read_u8(fh)]
        n_levels = _binio.read_u32(fh)
        k = _binio.read_u32(fh)
        latent_dim = _binio.read_u32(fh)
        input_dim = _binio.read_u32(fh)
        codebooks = [
            Codebook(level=n + 1, codewords=_binio.read_f32_array(fh, (k, latent_dim)))
            for n in range(n_levels)
        ]
        stats = None
        if _binio.read_u8(fh):
            mean = _binio.read_f64_array(fh, (input_dim,))
            std = _binio.read_f64_array(fh, (input_dim,))
            zero = _binio.read_f64_array(fh, (input_dim,)).astype(bool)
            stats = StandardizationStats(mean=mean, std=std, zero_variance=zero)
        net = None
        has_net = _binio.read_u8(fh)
        net_params: dict[str, np.ndarray] = {}
        if has_net:
            n_params = _binio.read_u32(fh)
            for _ in range(n_params):
                name = _binio.read_str(fh)
                ndim = _binio.read_u8(fh)
                shape = tuple(_binio.read_u32(fh) for _ in range(ndim))
                net_params[name] = _binio.read_f64_array(fh, shape)
        config = json.loads(_binio.read_long_str(fh))
        curves = json.loads(_binio.read_long_str(fh))
        if has_net:
            cfg = RqVaeConfig(
                widths=tuple(config["widths"]),
                n_levels=config["n_levels"],
                k=config["k"],
                dropout=config["dropout"],
                weight_decay=config["weight_decay"],
                commitment_beta=config["commitment_beta"],
                lr=config["lr"],
                epochs=config["epochs"],
                batch_size=config["batch_size"],
                seed=config["seed"],
            )
            net = RqVaeNetwork(input_dim, cfg)
            live = net.parameters()
            for name, arr in net_params.items():
                live[name][:] = arr
            for n, cb in enumerate(codebooks):
                net.codebooks[n] = cb.codewords.astype(np.float64)
    return QuantizerModel(
        kind=kind,
        codebooks=codebooks,
        input_dim=input_dim,
        latent_dim=latent_dim,
        input_standardization=stats,
        net=net,
        config=config,
        training_curve=curves.get("loss", []),
        reconstruction_curve=curves.get("rec", []),
    )


class ResidualKMeansQuantizer(BaseEstimator, TransformerMixin):
    """Estimator facade over the residual k-means trainer.

    ``fit`` learns the codebooks from an (n, d) array; ``transform`` returns
    the (n, n_levels) integer code matrix.
    """

    def __init__(self, n_levels: int = 3, n_codes: int = 256, seed: int = 0, max_iters: int = 100):
        self.n_levels = n_levels
        self.n_codes = n_codes
        self.seed = seed
        self.max_iters = max_iters

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        matrix = EmbeddingMatrix([str(i) for i in range(X.shape[0])], X)
        self.model_ = train_residual_kmeans(
            matrix, n_levels=self.n_levels, k=self.n_codes, seed=self.seed, max_iters=self.max_iters
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        return self.model_.transform(X)


class RqVaeQuantizer(BaseEstimator, TransformerMixin):
    """Estimator facade over the autoencoder trainer (standardizes inputs)."""

    def __init__(
        self,
        widths: tuple[int, ...] = (768, 512, 256, 128),
        n_levels: int = 3,
        n_codes: int = 256,
        dropout: float = 0.1,
        weight_decay: float = 1e-2,
        commitment_beta: float = 0.25,
        lr: float = 1e-3,
        epochs: int = 20,
        batch_size: int = 256,
        seed: int = 0,
    ):
        self.widths = widths
        self.n_levels = n_levels
        self.n_codes = n_codes
        self.dropout = dropout
        self.weight_decay = weight_decay
        self.commitment_beta = commitment_beta
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        matrix = EmbeddingMatrix([str(i) for i in range(X.shape[0])], X)
        config = RqVaeConfig(
            widths=tuple(self.widths),
            n_levels=self.n_levels,
            k=self.n_codes,
            dropout=self.dropout,
            weight_decay=self.weight_decay,
            commitment_beta=self.commitment_beta,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        self.model_ = train_rqvae(matrix, config)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        return self.model_.transform(X)
