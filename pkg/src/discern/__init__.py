"""Semantic-ID minting, preference benchmark construction, and evaluation
of preference-steerable recommenders."""

__version__ = "0.1.0"

from .corpus import (
    Catalog,
    DatasetSplit,
    InteractionRecord,
    UserSequence,
    five_core_filter,
    ingest_interactions,
    leave_last_out,
    truncate_history,
)
from .embeddings import (
    EmbeddingMatrix,
    EmbeddingStandardizer,
    SimilarityResult,
    least_similar,
    load_embeddings,
    save_embeddings,
    standardize,
    top_k_similar,
)
from .preferences import (
    BUILTIN_TEMPLATES,
    PreferenceSet,
    PromptTemplate,
    approximate_preferences,
    classify_preference_sentiment,
    invert_negative_preference,
    parse_response,
    postprocess_to_five,
    render_prompt,
)
from .quantizer import (
    QuantizerModel,
    ResidualKMeansQuantizer,
    RqVaeQuantizer,
    SemanticId,
    assign_semantic_ids,
    codebook_coverage,
    quantize,
    train_residual_kmeans,
    train_rqvae,
)
from .rqvae import RqVaeConfig
from .sid_index import SidTrie, build_trie, constrained_beam_search, decode_to_items
from .recommenders import FusionModel, MarkovSidModel, PreferenceSignal, ScorerContext
from .benchmark import BenchmarkSuite, EmbeddingBundle, EvalInstance, build_suite
from .metrics import (
    MetricReport,
    evaluate_suite,
    m_at_k,
    ndcg_at_k,
    recall_at_k,
    relative_improvement,
)
