"""textsup: text-supervised training toolkit.

Pipeline: enrich category labels into description corpora, embed them with
an external encoder, pick the most significant embedding channels without
training, train a small point projector against the reduced prototypes,
and classify by cosine similarity. See the CLI (`textsup --help`) for the
end-to-end flow.
"""

from .corpus import (
    CategoryEntry,
    CategoryMeans,
    Corpus,
    EmbeddingSet,
    ValidationReport,
    category_means,
    load_corpus,
    load_embeddings,
    normalize_rows,
    save_corpus,
    validate,
    write_embeddings,
)
from .selection import (
    ChannelScores,
    ScoreKind,
    SelectionConfig,
    SelectionResult,
    apply_selection,
    inter_class_similarity,
    inter_class_variance,
    intra_class_similarity,
    pool_reduce,
    random_select,
    rank_channels,
    select,
    select_top_d,
)
from .contrastive import (
    LossReport,
    PointBatch,
    Projector,
    TrainConfig,
    classify,
    cross_entropy_loss,
    finite_diff_check,
    infonce_loss,
    load_projector,
    project,
    save_projector,
    train,
)
from .analysis import (
    ExperimentReport,
    PcaProjection,
    SimilarityMatrix,
    emit_report,
    pca_project,
    retrieval_eval,
    similarity_matrix,
    toy_metrics,
)
from .enrichment import (
    EnrichmentConfig,
    GenerationRecord,
    HttpChatTransport,
    PromptTemplate,
    assemble_corpus,
    build_instruction,
    enrich_corpus,
    expand_templates,
    generate_descriptions,
)
from .errors import (
    ArtifactMismatchError,
    DegenerateVectorError,
    DivergenceError,
    SchemaError,
    TextsupError,
    TransportError,
    UnparseableResponseError,
)

__version__ = "0.1.0"
