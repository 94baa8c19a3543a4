//! Corpus ingestion, quality filtering and token statistics.

mod document;
mod filter;
mod pipeline;
mod stats;
mod tokenizer;

pub use document::{
    image_id, load_corpus, load_corpus_with, parse_corpus, parse_image_id, parse_query_id, query_id, write_corpus,
    write_rejects, Document, Domain, LoadOptions, LoadedCorpus, RejectRecord, Split,
};
pub use filter::{
    clean_document, filter_document, is_garbled, longest_special_run, strip_math, FilterPolicy, FilterRule,
    PolicySet, Stripped, Verdict,
};
pub use pipeline::{Curated, Curator, QualityGate};
pub use stats::{compute_split_stats, compute_stats, CorpusStats, DomainStats};
pub use tokenizer::{count_tokens, BpeTokenizer, TokenizerHandle, CL100K_PATTERN};
