//! Knowledge-graph fusion preprocessing.
//!
//! Sentences are matched against a compact knowledge graph, the most
//! relevant entity per mention is selected by embedding similarity, and its
//! triplets are injected as branches of a sentence tree. The tree is then
//! flattened into tokens, soft positions and a packed upper-triangular
//! visible matrix. A small statistics toolkit covers the evaluation side.

pub mod attention;
pub mod embedding;
pub mod error;
pub mod injector;
pub mod kg;
pub mod matcher;
pub mod pipeline;
pub mod stats;
pub mod tree;

pub use attention::{masked_attention, masked_attention_parts, AttentionMap};
pub use embedding::{cosine, EmbeddingProvider, EmbeddingVector, ProviderKind};
pub use error::{Error, Result};
pub use injector::{
    build_candidate_sequence, inject_sentence, k_query, pick_best, select_entity, CandidateScore,
    InjectionConfig, InjectionOutcome, InjectionStatus, ManualOverrideTable, OverrideTriplet,
};
pub use kg::{
    ingest_wikidata, load_allowlist, load_kg, normalize, Ablation, Category, EntityRecord, IngestStats,
    KgStore, Relation, Triplet,
};
pub use matcher::{find_mentions, tokenize, MentionSpan, TokenSequence};
pub use pipeline::{InputRecord, OutputRecord, Pipeline, PipelineRunManifest, Processed, RunCounts};
pub use stats::{
    aggregate, mse, render_csv, render_report, spearman, t_cdf, t_test_one_tailed, Direction, ReportRow,
    RunSeries, TTestResult,
};
pub use tree::{
    build_visible_matrix, flatten, pack, truncate_pair, truncate_single, unpack, FlattenedSequence,
    KnowledgeBranch, PackedVisibleMatrix, SentenceTree, TokenGroup,
};
