"""Preference generation scaffolding and sentiment rules.

The generation loop renders a user's (item, review) history into a prompt,
sends it to an external text-generation client, parses the JSON instruction
list out of the reply, and postprocesses it to exactly five non-empty,
deduplicated preference strings. The client is a contract: an HTTP
chat-completions implementation and an offline replay implementation are
provided; no model runs in-process.

Sentiment over preference strings is rule-based: a preference is negative
iff its first word is "Avoid", "Exclude" or "No" (case-insensitive,
leading punctuation ignored), and a negative preference is inverted by
swapping that word for "Find" or "Search for".
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .corpus import Catalog, UserSequence

NEGATIVE_LEADS = ("avoid", "exclude", "no")
INVERSION_STYLES = {"find": "Find", "search_for": "Search for"}


class PreferenceError(ValueError):
    pass


class ResponseParseError(PreferenceError):
    """Reply contained no usable instruction list; keeps the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class IncompleteSetError(PreferenceError):
    """Fewer than five usable preferences survived postprocessing."""

    def __init__(self, survivors: list[str]):
        super().__init__(f"only {len(survivors)} usable preferences, need 5")
        self.survivors = survivors


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str  # must contain exactly one {history} placeholder
    granularity: str = "default"

    def __post_init__(self):
        if self.body.count("{history}") != 1:
            raise PreferenceError(f"template {self.name!r} must contain exactly one {{history}} placeholder")


BUILTIN_TEMPLATES = {
    "default": PromptTemplate(
        name="default",
        granularity="default",
        body=(
            "Here is a list of items a user bought along with their respective reviews "
            "in json format: {history}. Your task is to generate a list of up to five "
            "search instructions that reflect the user's preferences based on their "
            "reviews. Be specific about what the user likes, does not like, and should "
            "be avoided. Do not mention brands or certain products. Return a json file "
            "containing the search instructions with the key 'instructions'. Keep the "
            "instructions simple, short and concise, and do NOT include comments on "
            "delivery time or pricing."
        ),
    ),
    "abstract": PromptTemplate(
        name="abstract",
        granularity="abstract",
        body=(
            "Here is a list of items a user bought along with their respective reviews "
            "in json format: {history}. Your task is to generate a list of up to five "
            "search instructions that summarizes the user's high-level preferences "
            "based on their reviews. Be specific on what the user does not like and "
            "should be avoided. Do not mention brands or certain products. Return a "
            "json file containing the search instructions with the key 'instructions'. "
            "Keep the instructions simple, short and concise, and do NOT include "
            "comments on delivery time or pricing."
        ),
    ),
    "fine_grained": PromptTemplate(
        name="fine_grained",
        granularity="fine_grained",
        body=(
            "Here is a list of items a user bought along with their respective reviews "
            "in json format: {history}. Your task is to generate a list of up to five "
            "search instructions that reflect the user's preferences based on their "
            "reviews. Be specific about what the user likes, does not like, and should "
            "be avoided. It is okay to mention brands or certain products. Return a "
            "json file containing the search instructions with the key 'instructions'. "
            "Keep the instructions simple, short and concise, and do NOT include "
            "comments on delivery time or pricing."
        ),
    ),
    # Item-property summarization companion prompt; shipped for completeness,
    # not used by the generation loop.
    "reviews_to_properties": PromptTemplate(
        name="reviews_to_properties",
        granularity="default",
        body=(
            "Your task is to summarize the following reviews of an item into a list of "
            "item properties using keywords and phrases: {history}. Keep your response "
            "short and concise. Only focus on objective properties of the item. Do NOT "
            "include subjective opinions or emotions. Do NOT include comments on price "
            "or delivery time. Return your response as a python list with at most 10 "
            "entries that accurately reflect the properties of the item."
        ),
    ),
}


def load_template(name_or_path: str) -> PromptTemplate:
    if name_or_path in BUILTIN_TEMPLATES:
        return BUILTIN_TEMPLATES[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return PromptTemplate(name=path.stem, body=path.read_text(encoding="utf-8"))
    raise PreferenceError(f"unknown template {name_or_path!r}")


@dataclass
class PreferenceSet:
    user: str
    t: int
    preferences: list[str]

    def __post_init__(self):
        if len(self.preferences) != 5 or any(not p for p in self.preferences):
            raise PreferenceError("a preference set holds exactly 5 non-empty strings")


@dataclass
class RenderedPrompt:
    text: str
    truncated: bool


def render_prompt(
    history: UserSequence,
    template: PromptTemplate,
    upto: int | None = None,
    review_char_cap: int = 2000,
    prompt_char_budget: int = 100_000,
) -> RenderedPrompt:
    """Serialize the first ``upto`` (item, review) pairs into the template.

    Pairs are emitted in chronological order as a JSON array. Reviews longer
    than ``review_char_cap`` are cut from the end; if the whole prompt would
    exceed ``prompt_char_budget``, the oldest pairs are dropped first and the
    result is flagged as truncated.
    """
    n = len(history) if upto is None else upto
    if n < 1 or n > len(history):
        raise PreferenceError(f"history prefix length {n} out of range")
    pairs = []
    for i in range(n):
        review = history.reviews[i] or ""
        pairs.append({"item": history.items[i], "review": review[:review_char_cap]})

    truncated = False
    start = 0
    while True:
        block = json.dumps(pairs[start:], ensure_ascii=False)
        text = template.body.format(history=block)
        if len(text) <= prompt_char_budget or start == len(pairs) - 1:
            break
        start += 1
        truncated = True
    return RenderedPrompt(text=text, truncated=truncated)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _candidate_objects(text: str):
    for fenced in _FENCE_RE.findall(text):
        yield fenced
    pos = text.find("{")
    while pos != -1:
        yield text[pos:]
        pos = text.find("{", pos + 1)


def parse_response(text: str) -> list[str]:
    """Extract the first JSON object with an "instructions" string list,
    tolerating surrounding prose and code fences."""
    decoder = json.JSONDecoder()
    for candidate in _candidate_objects(text):
        candidate = candidate.strip()
        try:
            obj, _ = decoder.raw_decode(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and "instructions" in obj:
            instructions = obj["instructions"]
            if isinstance(instructions, list) and all(isinstance(s, str) for s in instructions):
                return list(instructions)
    raise ResponseParseError("no JSON object with an 'instructions' string list found", raw=text)


def serialize_instructions(instructions: list[str]) -> str:
    return json.dumps({"instructions": instructions}, ensure_ascii=False)


def postprocess_to_five(raw: list[str]) -> list[str]:
    """Trim, drop empties and exact duplicates, keep the first five."""
    seen: set[str] = set()
    cleaned: list[str] = []
    for pref in raw:
        pref = pref.strip()
        if not pref or pref in seen:
            continue
        seen.add(pref)
        cleaned.append(pref)
    if len(cleaned) < 5:
        raise IncompleteSetError(cleaned)
    return cleaned[:5]


_LEAD_WORD_RE = re.compile(r"[^\W\d_]+", re.UNICODE)


def _first_word(text: str) -> tuple[str, re.Match | None]:
    match = _LEAD_WORD_RE.search(text)
    return (match.group(0) if match else "", match)


def classify_preference_sentiment(preference: str) -> str:
    """"negative" iff the first word is Avoid/Exclude/No (case-insensitive,
    leading punctuation ignored), else "positive"."""
    if not preference.strip():
        raise PreferenceError("empty preference")
    word, _ = _first_word(preference)
    return "negative" if word.lower() in NEGATIVE_LEADS else "positive"


def invert_negative_preference(preference: str, style: str = "find") -> str:
    """Swap the leading Avoid/Exclude/No for "Find" / "Search for"."""
    if style not in INVERSION_STYLES:
        raise PreferenceError(f"style must be one of {sorted(INVERSION_STYLES)}")
    if classify_preference_sentiment(preference) != "negative":
        raise PreferenceError(f"not a negative preference: {preference!r}")
    word, match = _first_word(preference)
    assert match is not None
    stripped = preference.lstrip()
    offset = len(preference) - len(stripped)
    start, end = match.start() - offset, match.end() - offset
    return stripped[:start] + INVERSION_STYLES[style] + stripped[end:]


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class ClientError(PreferenceError):
    pass


class HttpChatClient:
    """Minimal chat-completions-style HTTP client.

    POSTs {"model": ..., "messages": [{"role": "user", "content": prompt}]}
    and reads choices[0].message.content from the JSON reply.
    """

    def __init__(self, url: str, model: str = "default", timeout: float = 60.0, headers: dict | None = None):
        self.url = url
        self.model = model
        self.timeout = timeout
        self.headers = dict(headers or {})

    def complete(self, prompt: str) -> str:
        import httpx

        payload = {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        try:
            resp = httpx.post(self.url, json=payload, timeout=self.timeout, headers=self.headers)
            resp.raise_for_status()
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise ClientError(f"chat endpoint failure: {exc}") from exc


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class ReplayClient:
    """Offline client backed by canned responses.

    The fixture is JSONL; each record carries "response" plus either the
    exact "prompt" or its "prompt_sha256". Lookups never touch the network.
    """

    def __init__(self, path: str | Path):
        self.by_prompt: dict[str, str] = {}
        self.by_digest: dict[str, str] = {}
        self.calls = 0
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                if "response" not in obj:
                    raise PreferenceError(f"replay fixture line {lineno}: missing 'response'")
                if "prompt" in obj:
                    self.by_prompt[obj["prompt"]] = obj["response"]
                    self.by_digest[prompt_digest(obj["prompt"])] = obj["response"]
                elif "prompt_sha256" in obj:
                    self.by_digest[obj["prompt_sha256"]] = obj["response"]
                else:
                    raise PreferenceError(f"replay fixture line {lineno}: need 'prompt' or 'prompt_sha256'")

    def complete(self, prompt: str) -> str:
        self.calls += 1
        if prompt in self.by_prompt:
            return self.by_prompt[prompt]
        digest = prompt_digest(prompt)
        if digest in self.by_digest:
            return self.by_digest[digest]
        raise ClientError(f"no canned response for prompt digest {digest[:12]}…")


@dataclass
class PreferenceRun:
    """Outcome of a generation pass over a catalog."""

    sets: dict[tuple[str, int], PreferenceSet] = field(default_factory=dict)
    missing: list[tuple[str, int]] = field(default_factory=list)
    retries: int = 0

    def report(self) -> dict:
        return {
            "generated": len(self.sets),
            "missing": [[u, t] for u, t in self.missing],
            "retries": self.retries,
        }


def approximate_preferences(
    catalog: Catalog,
    client: LlmClient,
    template: PromptTemplate,
    max_retries: int = 2,
    review_char_cap: int = 2000,
    prompt_char_budget: int = 100_000,
) -> PreferenceRun:
    """Generate one five-preference set per (user, t) for 1 <= t <= T_u - 1.

    The set at t is conditioned on interactions 1..t; the final timestep is
    never generated because no later target could consume it. Failed
    generations are retried up to ``max_retries`` and then recorded as
    missing; the run always completes.
    """
    run = PreferenceRun()
    for user in sorted(catalog.sequences):
        seq = catalog.sequences[user]
        for t in range(1, len(seq)):
            prompt = render_prompt(
                seq, template, upto=t, review_char_cap=review_char_cap, prompt_char_budget=prompt_char_budget
            ).text
            prefs: list[str] | None = None
            for attempt in range(max_retries + 1):
                try:
                    reply = client.complete(prompt)
                    prefs = postprocess_to_five(parse_response(reply))
                    break
                except PreferenceError:
                    if attempt < max_retries:
                        run.retries += 1
            if prefs is None:
                run.missing.append((user, t))
            else:
                run.sets[(user, t)] = PreferenceSet(user=user, t=t, preferences=prefs)
    return run


def save_preference_sets(sets: dict[tuple[str, int], PreferenceSet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for user, t in sorted(sets):
            ps = sets[(user, t)]
            fh.write(json.dumps({"user": ps.user, "t": ps.t, "preferences": ps.preferences}, ensure_ascii=False))
            fh.write("\n")


def load_preference_sets(path: str | Path) -> dict[tuple[str, int], PreferenceSet]:
    sets: dict[tuple[str, int], PreferenceSet] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            ps = PreferenceSet(user=str(obj["user"]), t=int(obj["t"]), preferences=list(obj["preferences"]))
            sets[(ps.user, ps.t)] = ps
    return sets
