"""Read-only steering service over loaded artifacts.

Serves history lookup, live preference-steered recommendation, and
preference classification for the browser console. All artifacts (catalog,
sid map, fusion model, embeddings) are loaded once at startup and never
mutated; request handling is side-effect-free.

Preferences arriving as free text are embedded either by looking them up in
the preference embedding store (exact text match, then a character-trigram
fallback) or by proxying to an external embedding endpoint.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Catalog, load_catalog, truncate_history
from .embeddings import EmbeddingMatrix, load_embeddings
from .preferences import classify_preference_sentiment, invert_negative_preference
from .quantizer import SemanticId, load_sid_map, sid_map_digest
from .recommenders import FusionModel, PreferenceSignal, load_fusion_model
from .sid_index import SidTrie, build_trie


class ServiceError(ValueError):
    pass


class EmbedderMiss(ServiceError):
    """Free text could not be resolved to a corpus vector."""


class EmbedderUpstreamError(ServiceError):
    """The external embedding endpoint failed."""


@dataclass
class ServiceConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8321
    catalog: str = ""
    sid_map: str = ""
    model: str = ""
    item_embeddings: str = ""
    pref_embeddings: str = ""
    embedder_mode: str = "corpus_lookup"  # none | corpus_lookup | external
    embedder_url: str = ""
    embedder_auth_header: str = ""
    embedder_auth_value: str = ""
    embedder_timeout_ms: int = 5000
    request_cap: int = 64
    beam_width: int = 30
    cors_origins: list[str] = field(default_factory=list)
    console_dir: str = ""

    def __post_init__(self):
        if self.embedder_mode not in ("none", "corpus_lookup", "external"):
            raise ServiceError(f"unknown embedder mode {self.embedder_mode!r}")
        if self.embedder_mode == "external" and not self.embedder_url:
            raise ServiceError("external embedder mode requires embedder_url")


_INT_KEYS = {"listen_port", "embedder_timeout_ms", "request_cap", "beam_width"}


def load_config(path: str | Path | None = None, env: dict | None = None) -> ServiceConfig:
    """Flat key=value file plus DISCERN_-prefixed environment overrides."""
    env = dict(os.environ if env is None else env)
    values: dict[str, object] = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ServiceError(f"config line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    for key, value in env.items():
        if key.startswith("DISCERN_"):
            values[key[len("DISCERN_") :].lower()] = value
    kwargs: dict[str, object] = {}
    for key, value in values.items():
        if key not in ServiceConfig.__dataclass_fields__:
            continue
        if key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key == "cors_origins":
            kwargs[key] = [o.strip() for o in str(value).split(",") if o.strip()]
        else:
            kwargs[key] = value
    return ServiceConfig(**kwargs)


def _trigrams(text: str) -> set[str]:
    text = text.lower().strip()
    if len(text) < 3:
        return {text} if text else set()
    return {text[i : i + 3] for i in range(len(text) - 2)}


def trigram_overlap(a: str, b: str) -> float:
    ta, tb = _trigrams(a), _trigrams(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


@dataclass
class EmbedderClient:
    mode: str
    endpoint: str = ""
    timeout_ms: int = 5000
    auth_header: str = ""
    auth_value: str = ""
    lookup_threshold: float = 0.8

    def __post_init__(self):
        if self.mode == "external" and not self.endpoint:
            raise ServiceError("external embedder mode requires an endpoint")


def embed_texts(
    client: EmbedderClient,
    texts: list[str],
    store: EmbeddingMatrix | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Vectors for ``texts`` plus a per-text note of how each was resolved."""
    if client.mode == "none":
        raise ServiceError("no embedder configured")
    if client.mode == "corpus_lookup":
        if store is None:
            raise ServiceError("corpus_lookup mode needs a preference embedding store")
        vectors = []
        via = []
        for text in texts:
            if text in store:
                vectors.append(store.get(text))
                via.append("exact")
                continue
            best: tuple[float, str] | None = None
            for candidate in store.ids:
                score = trigram_overlap(text, candidate)
                if best is None or (score, candidate) > (best[0], best[1]):
                    if score > 0.0:
                        best = (score, candidate)
            if best is not None and best[0] >= client.lookup_threshold:
                vectors.append(store.get(best[1]))
                via.append(f"trigram:{best[1]}")
            else:
                raise EmbedderMiss(f"no corpus vector within threshold for {text!r}")
        return np.stack(vectors), via

    # external endpoint: POST {texts} -> {vectors}, one retry on failure
    import httpx

    headers = {client.auth_header: client.auth_value} if client.auth_header else {}
    last_error: Exception | None = None
    for _attempt in range(2):
        try:
            resp = httpx.post(
                client.endpoint,
                json={"texts": texts},
                timeout=client.timeout_ms / 1000.0,
                headers=headers,
            )
            resp.raise_for_status()
            vectors = np.asarray(resp.json()["vectors"], dtype=np.float32)
            if vectors.ndim != 2 or vectors.shape[0] != len(texts):
                raise ServiceError(f"embedder returned shape {vectors.shape} for {len(texts)} texts")
            if store is not None and vectors.shape[1] != store.dim:
                raise ServiceError(f"embedder dimension {vectors.shape[1]} != store dimension {store.dim}")
            return vectors, ["external"] * len(texts)
        except ServiceError:
            raise
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            last_error = exc
    raise EmbedderUpstreamError(f"external embedder failed after retry: {last_error}")


try:
    from pydantic import BaseModel as _BaseModel, Field as _Field

    class PreferenceIn(_BaseModel):
        text: str
        sentiment: str | None = None

    class RecommendRequest(_BaseModel):
        user: str
        preferences: list[PreferenceIn] = _Field(default_factory=list)
        k: int = 10

    class ClassifyRequest(_BaseModel):
        text: str

except ImportError:  # pragma: no cover - pydantic ships with fastapi
    pass


@dataclass
class ServiceState:
    config: ServiceConfig
    catalog: Catalog
    sid_map: dict[str, SemanticId]
    trie: SidTrie
    model: FusionModel
    item_embeddings: EmbeddingMatrix
    pref_embeddings: EmbeddingMatrix | None
    embedder: EmbedderClient


def load_state(config: ServiceConfig) -> ServiceState:
    catalog = load_catalog(config.catalog)
    sid_map, _stored_digest = load_sid_map(config.sid_map)
    model = load_fusion_model(config.model)
    live_digest = sid_map_digest(sid_map)
    if model.sid_digest and model.sid_digest != live_digest:
        raise ServiceError(
            f"model/sid-map digest mismatch: {model.sid_digest[:12]}… vs {live_digest[:12]}…"
        )
    pref_embeddings = load_embeddings(config.pref_embeddings) if config.pref_embeddings else None
    return ServiceState(
        config=config,
        catalog=catalog,
        sid_map=sid_map,
        trie=build_trie(sid_map),
        model=model,
        item_embeddings=load_embeddings(config.item_embeddings),
        pref_embeddings=pref_embeddings,
        embedder=EmbedderClient(
            mode=config.embedder_mode,
            endpoint=config.embedder_url,
            timeout_ms=config.embedder_timeout_ms,
            auth_header=config.embedder_auth_header,
            auth_value=config.embedder_auth_value,
        ),
    )


def create_app(state: ServiceState):
    from fastapi import FastAPI, HTTPException, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="discern steering service", version="1", openapi_url="/spec")
    if state.config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=state.config.cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    in_flight = {"count": 0}
    gate = threading.Lock()

    @app.middleware("http")
    async def request_cap(request: Request, call_next):
        with gate:
            if in_flight["count"] >= state.config.request_cap:
                return JSONResponse({"detail": "request cap exceeded"}, status_code=429)
            in_flight["count"] += 1
        try:
            return await call_next(request)
        finally:
            with gate:
                in_flight["count"] -= 1

    @app.get("/users")
    def list_users(offset: int = 0, limit: int = 50):
        if offset < 0 or not 1 <= limit <= 500:
            raise HTTPException(status_code=422, detail="need offset >= 0 and 1 <= limit <= 500")
        users = sorted(state.catalog.sequences)
        return {
            "total": len(users),
            "offset": offset,
            "users": users[offset : offset + limit],
        }

    @app.get("/users/{user_id}/history")
    def user_history(user_id: str):
        seq = state.catalog.sequences.get(user_id)
        if seq is None:
            raise HTTPException(status_code=404, detail=f"unknown user {user_id!r}")
        visible = truncate_history(seq.items, 20)
        offset = len(seq.items) - len(visible)
        return {
            "user": user_id,
            "items": [{"id": item, "position": offset + i + 1} for i, item in enumerate(visible)],
            "truncated": len(seq.items) > len(visible),
        }

    @app.post("/recommend")
    def recommend(request: RecommendRequest):
        seq = state.catalog.sequences.get(request.user)
        if seq is None:
            raise HTTPException(status_code=404, detail=f"unknown user {request.user!r}")
        if not 1 <= request.k <= state.config.beam_width:
            raise HTTPException(
                status_code=422,
                detail=f"k must be between 1 and the beam width {state.config.beam_width}",
            )
        signals: list[PreferenceSignal] = []
        applied = []
        if request.preferences:
            texts = [p.text for p in request.preferences]
            try:
                vectors, via = embed_texts(state.embedder, texts, state.pref_embeddings)
            except EmbedderMiss as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            except EmbedderUpstreamError as exc:
                raise HTTPException(status_code=502, detail=str(exc))
            for pref, vector, how in zip(request.preferences, vectors, via):
                sentiment = pref.sentiment or classify_preference_sentiment(pref.text)
                if sentiment not in ("positive", "negative"):
                    raise HTTPException(status_code=422, detail=f"bad sentiment {sentiment!r}")
                signals.append(PreferenceSignal(embedding=vector, sentiment=sentiment, text=pref.text))
                applied.append({"text": pref.text, "sentiment": sentiment, "embedded_via": how})

        history_items = truncate_history(seq.items, 20)
        history = []
        for item in history_items:
            sid = state.sid_map.get(item)
            if sid is None:
                raise HTTPException(status_code=500, detail=f"item {item!r} missing from sid map")
            history.append(sid)
        ranked = state.model.recommend(
            history,
            signals,
            state.trie,
            state.sid_map,
            state.item_embeddings,
            k=request.k,
            beam_width=state.config.beam_width,
        )
        return {
            "user": request.user,
            "k": request.k,
            "preferences": applied,
            "items": [
                {"id": item, "score": score, "preference_similarity": breakdown}
                for item, score, breakdown in ranked
            ],
        }

    @app.post("/preferences/classify")
    def classify(request: ClassifyRequest):
        if not request.text.strip():
            raise HTTPException(status_code=400, detail="empty preference text")
        sentiment = classify_preference_sentiment(request.text)
        body = {"sentiment": sentiment}
        if sentiment == "negative":
            body["inverted_text"] = invert_negative_preference(request.text)
        return body

    console_dir = state.config.console_dir
    if console_dir and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=console_dir, html=True), name="console")

    return app


def run(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(load_state(config))
    uvicorn.run(app, host=config.listen_host, port=config.listen_port, log_level="info")
