import math
import sys

import numpy as np
import pytest

from discern.embeddings import EmbeddingMatrix
from discern.quantizer import SemanticId
from discern.recommenders import (
    ExternalScorerModel,
    FusionModel,
    MarkovSidModel,
    PreferenceSignal,
    RecommenderError,
    load_fusion_model,
    save_fusion_model,
)
from discern.sid_index import build_trie

A = SemanticId(codes=(0,), disambiguator=0)  # tokens (0,0),(1,0)
B = SemanticId(codes=(1,), disambiguator=0)  # tokens (0,1),(1,0)


def unit(vec):
    vec = np.asarray(vec, dtype=np.float32)
    return vec / np.linalg.norm(vec)


def test_markov_hand_counted_bigram():
    model = MarkovSidModel(order=2, alpha=0.1).fit([[A, B, A]])
    # stream: (0,0)(1,0)(0,1)(1,0)(0,0)(1,0); after ...(0,1)(1,0) the next
    # depth-0 token was (0,0) once -> smoothed (1.1/1.2, 0.1/1.2)
    stream = [(0, 1), (1, 0)]
    logits = model.next_token_logits(stream, (0, 1), child_depth=0)
    assert math.exp(logits[0]) == pytest.approx(1.1 / 1.2)
    assert math.exp(logits[1]) == pytest.approx(0.1 / 1.2)


def test_markov_unseen_context_uniform():
    model = MarkovSidModel(order=2, alpha=0.1).fit([[A, B, A]])
    stream = [(0, 7), (1, 7)]  # never observed
    logits = model.next_token_logits(stream, (0, 1, 2), child_depth=0)
    assert np.allclose(np.exp(logits), 1 / 3)


def test_markov_large_alpha_is_uniform():
    model = MarkovSidModel(order=1, alpha=1e9).fit([[A, B, A, A, A]])
    logits = model.next_token_logits([(1, 0)], (0, 1), child_depth=0)
    assert np.allclose(np.exp(logits), 0.5, atol=1e-6)


def test_markov_retrain_identical():
    seqs = [[A, B, A], [B, B, A]]
    a = MarkovSidModel(order=3, alpha=0.1).fit(seqs)
    b = MarkovSidModel(order=3, alpha=0.1).fit(seqs)
    assert a.counts_ == b.counts_


def test_markov_normalization_over_children():
    rng = np.random.default_rng(0)
    sids = [SemanticId(codes=(int(c),), disambiguator=0) for c in rng.integers(0, 4, size=50)]
    model = MarkovSidModel(order=3, alpha=0.1).fit([sids])
    for stream in ([], [(0, 2), (1, 0)], [(1, 0)]):
        for children in ((0,), (0, 1), (0, 1, 2, 3)):
            logits = model.next_token_logits(stream, children, child_depth=0)
            assert abs(np.exp(logits).sum() - 1.0) < 1e-9


def test_markov_empty_training_set_rejected():
    with pytest.raises(RecommenderError):
        MarkovSidModel().fit([])


def make_world(n_items=6, seed=1):
    """Items on distinct code paths plus unit-norm embeddings."""
    rng = np.random.default_rng(seed)
    sid_map = {f"i{n}": SemanticId(codes=(n % 3, n // 3), disambiguator=0) for n in range(n_items)}
    trie = build_trie(sid_map)
    vectors = np.stack([unit(rng.normal(size=8)) for _ in range(n_items)])
    emb = EmbeddingMatrix([f"i{n}" for n in range(n_items)], vectors)
    return sid_map, trie, emb


def test_fusion_lambda_zero_matches_base_ranking():
    sid_map, trie, emb = make_world()
    sequences = [[sid_map["i0"], sid_map["i1"], sid_map["i2"], sid_map["i1"]]]
    base = MarkovSidModel(order=2, alpha=0.1).fit(sequences)
    fusion = FusionModel(base=base, preference_weight=0.0, negative_penalty=0.0)
    history = [sid_map["i0"]]
    plain = fusion.candidate_scores(history, trie, sid_map, beam_width=6)
    pref = PreferenceSignal(embedding=emb.get("i3"), sentiment="positive", text="p")
    ranked = fusion.recommend(history, [pref], trie, sid_map, emb, k=6, beam_width=6)
    assert [item for item, _, _ in ranked] == [item for item, _ in plain]
    assert [score for _, score, _ in ranked] == [score for _, score in plain]


def test_fusion_empty_history_is_pure_cosine():
    sid_map, trie, emb = make_world()
    base = MarkovSidModel(order=1, alpha=0.1).fit([[sid_map["i0"]]])
    fusion = FusionModel(base=base, preference_weight=1.0, negative_penalty=1.0)
    query = unit(np.arange(8) + 1.0)
    pref = PreferenceSignal(embedding=query, sentiment="positive", text="p")
    ranked = fusion.recommend([], [pref], trie, sid_map, emb, k=6, beam_width=6)
    cosines = {item: float(emb.get(item).astype(np.float64) @ query.astype(np.float64)) for item in sid_map}
    expected = sorted(sid_map, key=lambda item: (-cosines[item], item))
    assert [item for item, _, _ in ranked] == expected
    # breakdown reports the raw cosine per preference
    for item, _score, breakdown in ranked:
        assert breakdown["p"] == pytest.approx(cosines[item], abs=1e-6)


def test_fusion_rank_improves_monotonically_with_weight():
    sid_map, trie, emb = make_world(n_items=6, seed=3)
    sequences = [[sid_map[f"i{n}"] for n in (0, 1, 2, 3, 4, 5)]] * 3
    base = MarkovSidModel(order=2, alpha=0.5).fit(sequences)
    target = "i5"
    pref = PreferenceSignal(embedding=emb.get(target), sentiment="positive", text="aligned")
    history = [sid_map["i0"], sid_map["i1"]]
    ranks = []
    for lam in (0.0, 1.0, 2.0, 5.0):
        fusion = FusionModel(base=base, preference_weight=lam, negative_penalty=0.0)
        ranked = fusion.recommend(history, [pref], trie, sid_map, emb, k=6, beam_width=6)
        ranks.append([item for item, _, _ in ranked].index(target))
    assert ranks[0] >= ranks[-1]
    assert all(earlier >= later for earlier, later in zip(ranks, ranks[1:]))
    assert ranks[-1] == 0


def test_fusion_negative_twin_suppresses_target():
    sid_map, trie, emb = make_world(n_items=6, seed=4)
    base = MarkovSidModel(order=1, alpha=0.1).fit([[sid_map["i0"]]])
    fusion = FusionModel(base=base, preference_weight=1.0, negative_penalty=1.0)
    target = "i2"
    vec = emb.get(target)
    pos = PreferenceSignal(embedding=vec, sentiment="positive", text="Find it")
    neg = PreferenceSignal(embedding=vec, sentiment="negative", text="Avoid it")
    ranked_pos = fusion.recommend([], [pos], trie, sid_map, emb, k=6, beam_width=6)
    ranked_neg = fusion.recommend([], [neg], trie, sid_map, emb, k=6, beam_width=6)
    rank_pos = [i for i, _, _ in ranked_pos].index(target)
    rank_neg = [i for i, _, _ in ranked_neg].index(target)
    assert rank_pos == 0
    assert rank_neg == len(sid_map) - 1
    assert rank_neg > rank_pos


def test_fusion_scale_invariance_of_preferences():
    sid_map, trie, emb = make_world(n_items=6, seed=5)
    base = MarkovSidModel(order=1, alpha=0.1).fit([[sid_map["i0"], sid_map["i1"]]])
    fusion = FusionModel(base=base, preference_weight=1.3, negative_penalty=0.7)
    raw = np.arange(8).astype(np.float64) + 0.5
    for scale in (1.0, 17.0, 0.003):
        pref = PreferenceSignal(embedding=raw * scale, sentiment="positive", text="p")
        ranked = fusion.recommend([sid_map["i0"]], [pref], trie, sid_map, emb, k=6, beam_width=6)
        if scale == 1.0:
            reference = [item for item, _, _ in ranked]
        else:
            assert [item for item, _, _ in ranked] == reference


def test_fusion_k_cannot_exceed_beam():
    sid_map, trie, emb = make_world()
    base = MarkovSidModel(order=1, alpha=0.1).fit([[sid_map["i0"]]])
    fusion = FusionModel(base=base)
    with pytest.raises(RecommenderError):
        fusion.recommend([sid_map["i0"]], [], trie, sid_map, emb, k=7, beam_width=6)


def test_fusion_missing_item_embedding_errors():
    sid_map, trie, emb = make_world()
    small = EmbeddingMatrix(["i0"], emb.vectors[:1])
    base = MarkovSidModel(order=1, alpha=0.1).fit([[sid_map["i0"]]])
    fusion = FusionModel(base=base)
    pref = PreferenceSignal(embedding=emb.get("i0"), sentiment="positive", text="p")
    with pytest.raises(Exception, match="i1|unknown"):
        fusion.recommend([], [pref], trie, sid_map, small, k=2, beam_width=6)


def test_fusion_model_round_trip(tmp_path):
    base = MarkovSidModel(order=2, alpha=0.25).fit([[A, B, A], [B, A, B]])
    model = FusionModel(base=base, preference_weight=1.5, negative_penalty=0.5, sid_digest="abc123")
    path = tmp_path / "model.pdmk"
    save_fusion_model(model, path)
    loaded = load_fusion_model(path)
    assert loaded.base.order == 2
    assert loaded.base.alpha == 0.25
    assert loaded.preference_weight == 1.5
    assert loaded.negative_penalty == 0.5
    assert loaded.sid_digest == "abc123"
    assert loaded.base.counts_ == base.counts_
    save_fusion_model(loaded, tmp_path / "model2.pdmk")
    assert (tmp_path / "model2.pdmk").read_bytes() == path.read_bytes()


UNIFORM_CHILD = (
    "import json,sys,math\n"
    "for line in sys.stdin:\n"
    "    req=json.loads(line)\n"
    "    n=len(req['children'])\n"
    "    print(json.dumps({'logits':[-math.log(n)]*n}), flush=True)\n"
)


def test_external_scorer_subprocess():
    sid_map, trie, _emb = make_world()
    model = ExternalScorerModel([sys.executable, "-c", UNIFORM_CHILD])
    try:
        ranked = model.recommend([A], [], trie, sid_map, k=3, beam_width=6)
        assert len(ranked) == 3
        # uniform scorer: lexicographically smallest paths win
        items = [item for item, _, _ in ranked]
        expected_order = sorted(sid_map, key=lambda item: sid_map[item].as_tokens())[:3]
        assert items == expected_order
    finally:
        model.close()
