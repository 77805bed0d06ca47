"""Knowledge-graph subgraph retrieval by constrained generation."""

from .decoding import (
    BigramScorer,
    DecodeConfig,
    PlantedScorer,
    RetrievedSubgraph,
    UniformScorer,
    beam_decode,
    free_decode,
    make_mock_scorer,
    mixed_step,
)
from .graph import (
    CandidateSubgraph,
    KnowledgeGraph,
    Triplet,
    k_hop_subgraph,
    load_triplets,
)
from .informativeness import (
    InformativenessTable,
    build_table,
    connection_score,
    informativeness,
    katz_table,
)
from .linearize import (
    KnowledgePath,
    MaskedExample,
    PathStep,
    TokenSequence,
    delinearize,
    linearize_path,
    linearize_subgraph,
    mask_for_reconstruction,
    sample_paths,
)
from .linking import DialogHistory, MentionSet, Turn, link_mentions
from .pipeline import Pipeline, RunConfig
from .supervision import (
    EvalReport,
    GoldAnnotation,
    evaluate_corpus,
    generation_input,
    path_at_k,
    retrieval_target,
    sequence_nll,
)
from .tokenization import (
    LinearizerConfig,
    SimpleWordTokenizer,
    SpecialTokens,
    make_tokenizer,
)
from .trie import ConstraintTrie, TrieConfig, TrieCursor, build_trie

__version__ = "0.1.0"
