"""Valid-ID trie and prefix-constrained beam search.

Generative decoding over semantic IDs must never emit a code tuple that no
item owns. The trie holds exactly the assigned IDs (codes plus the
disambiguation digit), and the beam search expands only trie children at
every depth, so invalid prefixes are never scored and invalid IDs can never
be returned. Paths have fixed length, scores are per-step log-probability
sums accumulated in float64, and ties break lexicographically on the code
tuple so rankings are reproducible.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping, Sequence

from .quantizer import SemanticId

# Scorer contract: given the partial code path, the valid child codes at
# this depth, and an opaque model context, return one finite log-probability
# per child (aligned with ``children``). This is the plug point for any
# third-party model.
Scorer = Callable[[tuple[int, ...], tuple[int, ...], object], Sequence[float]]


class SidIndexError(ValueError):
    pass


class _Node:
    __slots__ = ("children", "item")

    def __init__(self):
        self.children: dict[int, _Node] = {}
        self.item: str | None = None


class SidTrie:
    def __init__(self, depth: int):
        self.root = _Node()
        self.depth = depth
        self.n_nodes = 1
        self.n_leaves = 0

    def insert(self, path: tuple[int, ...], item: str) -> None:
        if len(path) != self.depth:
            raise SidIndexError(f"path {path} has length {len(path)}, trie depth is {self.depth}")
        node = self.root
        for code in path:
            nxt = node.children.get(code)
            if nxt is None:
                nxt = _Node()
                node.children[code] = nxt
                self.n_nodes += 1
            node = nxt
        if node.item is not None:
            raise SidIndexError(f"duplicate semantic-ID path {path} ({node.item!r} vs {item!r})")
        node.item = item
        self.n_leaves += 1

    def node_at(self, prefix: tuple[int, ...]) -> _Node | None:
        node = self.root
        for code in prefix:
            node = node.children.get(code)
            if node is None:
                return None
        return node

    def children_of(self, prefix: tuple[int, ...]) -> tuple[int, ...]:
        node = self.node_at(prefix)
        if node is None:
            raise SidIndexError(f"prefix {prefix} not in trie")
        return tuple(sorted(node.children))

    def item_at(self, path: tuple[int, ...]) -> str:
        node = self.node_at(path)
        if node is None or node.item is None:
            raise SidIndexError(f"no item at path {path}")
        return node.item

    def enumerate_paths(self) -> list[tuple[int, ...]]:
        out: list[tuple[int, ...]] = []

        def walk(node: _Node, prefix: tuple[int, ...]):
            if node.item is not None:
                out.append(prefix)
            for code in sorted(node.children):
                walk(node.children[code], prefix + (code,))

        walk(self.root, ())
        return out


def build_trie(sid_map: Mapping[str, SemanticId]) -> SidTrie:
    """Trie over every assigned ID; depth is codes plus the disambiguator."""
    if not sid_map:
        raise SidIndexError("empty semantic-ID map")
    first = next(iter(sid_map.values()))
    trie = SidTrie(depth=len(first.codes) + 1)
    for item in sorted(sid_map):
        trie.insert(sid_map[item].as_tokens(), item)
    return trie


def constrained_beam_search(
    scorer: Scorer,
    trie: SidTrie,
    context: object = None,
    beam_width: int = 30,
    k: int = 10,
) -> list[tuple[SemanticId, float]]:
    """Top-k complete trie paths by summed per-step log-probability.

    Standard beam search over fixed-depth paths: at every depth each live
    prefix expands over exactly the trie children, candidates are ranked by
    (score desc, path lex asc) and cut to ``beam_width``.
    """
    if not (beam_width >= k >= 1):
        raise SidIndexError(f"need beam_width >= k >= 1, got {beam_width} < {k}")
    beam: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    for _depth in range(trie.depth):
        candidates: list[tuple[tuple[int, ...], float]] = []
        for prefix, score in beam:
            children = trie.children_of(prefix)
            logps = list(scorer(prefix, children, context))
            if len(logps) != len(children):
                raise SidIndexError(f"scorer returned {len(logps)} scores for {len(children)} children at {prefix}")
            for child, lp in zip(children, logps):
                lp = float(lp)
                if not math.isfinite(lp):
                    raise SidIndexError(f"non-finite log-probability for child {child} of prefix {prefix}")
                candidates.append((prefix + (child,), score + lp))
        candidates.sort(key=lambda entry: (-entry[1], entry[0]))
        beam = candidates[:beam_width]
    return [
        (SemanticId(codes=path[:-1], disambiguator=path[-1]), score)
        for path, score in beam[:k]
    ]


def uniform_scorer(prefix: tuple[int, ...], children: tuple[int, ...], context: object) -> list[float]:
    """Uniform distribution over the valid children (the no-model baseline)."""
    lp = -math.log(len(children))
    return [lp] * len(children)


def decode_to_items(
    results: list[tuple[SemanticId, float]],
    sid_map: Mapping[str, SemanticId],
) -> list[tuple[str, float]]:
    """Order-preserving translation of ranked IDs back to item ids."""
    reverse = {sid.as_tokens(): item for item, sid in sid_map.items()}
    out: list[tuple[str, float]] = []
    for sid, score in results:
        item = reverse.get(sid.as_tokens())
        if item is None:
            raise SidIndexError(f"semantic ID {sid} not present in the sid map (trie/map desync)")
        out.append((item, score))
    return out
