//! Retrieval metrics and the full-collection evaluation protocol.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{hit_at_k, mrr_at_10, ndcg_at_10, rank_of};
pub use protocol::{full_collection_pool, read_qrels, split_only_pool, write_qrels, Pool, Protocol, QRels};
pub use report::{evaluate, render_method_table, EvalOptions, EvalReport, LongRow, MetricRow, QueryRank};
