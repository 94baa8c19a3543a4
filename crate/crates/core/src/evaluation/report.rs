//! Ranking every judged query and aggregating per domain.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{hit_at_k, mrr_at_10, ndcg_at_10, CUTOFF};
use super::protocol::{Protocol, QRels};
use crate::corpus::Domain;
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::retrieval::SearchIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub protocol: Protocol,
    /// Domain the fusion head was trained on, for cross-domain grids.
    pub train_domain: Option<String>,
    /// Search only the top 10 instead of ranking the whole pool.
    pub truncate: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            protocol: Protocol::FullCollection,
            train_domain: None,
            truncate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRank {
    pub query_id: String,
    pub doc_id: String,
    pub domain: Domain,
    /// 1-based rank of the relevant document; `None` when it was not returned.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// `full`, a domain name, or `weighted_avg`.
    pub test_domain: String,
    pub queries: usize,
    pub mrr10: f64,
    pub ndcg10: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
}

impl MetricRow {
    pub fn from_ranks(test_domain: impl Into<String>, ranks: &[Option<usize>]) -> Result<Self> {
        Ok(Self {
            test_domain: test_domain.into(),
            queries: ranks.len(),
            mrr10: mrr_at_10(ranks)?,
            ndcg10: ndcg_at_10(ranks)?,
            hit1: hit_at_k(ranks, 1),
            hit3: hit_at_k(ranks, 3),
            hit10: hit_at_k(ranks, CUTOFF),
        })
    }

    pub fn metrics(&self) -> [(&'static str, f64); 5] {
        [
            ("mrr10", self.mrr10),
            ("hit1", self.hit1),
            ("hit3", self.hit3),
            ("hit10", self.hit10),
            ("ndcg10", self.ndcg10),
        ]
    }

    /// `hit1 ≤ hit3 ≤ hit10`, `mrr10, ndcg10 ≤ hit10`, everything in `[0, 1]`.
    pub fn is_consistent(&self) -> bool {
        let in_range = self.metrics().iter().all(|(_, v)| (0.0..=1.0).contains(v));
        in_range
            && self.hit1 <= self.hit3
            && self.hit3 <= self.hit10
            && self.mrr10 <= self.hit10 + 1e-12
            && self.ndcg10 <= self.hit10 + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub train_domain: Option<String>,
    pub test_domain: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pool_size: usize,
    pub protocol: Protocol,
    pub train_domain: Option<String>,
    /// One entry per judged query, in query-id order.
    pub ranks: Vec<QueryRank>,
    /// `full`, then non-empty domains, then `weighted_avg`.
    pub rows: Vec<MetricRow>,
}

impl EvalReport {
    pub fn row(&self, test_domain: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.test_domain == test_domain)
    }

    pub fn full(&self) -> &MetricRow {
        self.row("full").expect("every report has a full row")
    }

    pub fn long_rows(&self) -> Vec<LongRow> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.metrics().into_iter().map(|(m, v)| LongRow {
                    train_domain: self.train_domain.clone(),
                    test_domain: r.test_domain.clone(),
                    metric: m.to_string(),
                    value: v,
                })
            })
            .collect()
    }

    /// `train_domain,test_domain,metric,value`, one line per long row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "train_domain,test_domain,metric,value")?;
        for r in self.long_rows() {
            writeln!(
                w,
                "{},{},{},{}",
                r.train_domain.as_deref().unwrap_or(""),
                r.test_domain,
                r.metric,
                r.value
            )?;
        }
        Ok(())
    }
}

fn dataset_label(test_domain: &str) -> &str {
    match test_domain {
        "full" => "Full",
        "wiki" => "Wiki",
        "arxiv" => "ArXiv",
        "slide" => "Slide",
        "weighted_avg" => "Weighted Avg.",
        other => other,
    }
}

/// Markdown grid with one row per (method, dataset).
pub fn render_method_table(entries: &[(&str, &EvalReport)]) -> String {
    let mut s = String::from("| Method | Dataset | MRR@10 | HIT@1 | HIT@3 | HIT@10 | NDCG@10 |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for (method, report) in entries {
        for r in report.rows.iter().filter(|r| r.test_domain != "weighted_avg") {
            let _ = writeln!(
                s,
                "| {} | {} | {:.5} | {:.5} | {:.5} | {:.5} | {:.5} |",
                method,
                dataset_label(&r.test_domain),
                r.mrr10,
                r.hit1,
                r.hit3,
                r.hit10,
                r.ndcg10
            );
        }
    }
    s
}

/// Ranks each judged query against `index` and aggregates. `domains` maps
/// document ids to their domain; a query is grouped by its relevant
/// document's domain.
pub fn evaluate(
    queries: &EmbeddingStore,
    index: &dyn SearchIndex,
    qrels: &QRels,
    domains: &HashMap<String, Domain>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if queries.dim() != index.dim() && !queries.is_empty() {
        return Err(Error::DimMismatch {
            expected: index.dim(),
            got: queries.dim(),
        });
    }
    let in_index: std::collections::HashSet<&str> = index.doc_ids().iter().map(String::as_str).collect();
    let mut jobs = Vec::with_capacity(qrels.len());
    for (qid, did) in qrels.iter() {
        let v = queries.try_get(qid)?;
        if !in_index.contains(did) {
            return Err(Error::MissingId(did.to_owned()));
        }
        let domain = *domains.get(did).ok_or_else(|| Error::MissingId(did.to_owned()))?;
        jobs.push((qid, did, domain, v));
    }
    let k = if opts.truncate {
        CUTOFF.min(index.len())
    } else {
        index.len()
    };
    let ranks: Vec<QueryRank> = jobs
        .par_iter()
        .map(|(qid, did, domain, v)| {
            let hits = index.search(v, k.max(1))?;
            Ok(QueryRank {
                query_id: qid.to_string(),
                doc_id: did.to_string(),
                domain: *domain,
                rank: hits.iter().position(|h| h.doc_id == *did).map(|p| p + 1),
            })
        })
        .collect::<Result<_>>()?;

    let all: Vec<Option<usize>> = ranks.iter().map(|r| r.rank).collect();
    let mut rows = vec![MetricRow::from_ranks("full", &all)?];
    for d in Domain::ALL {
        let sub: Vec<Option<usize>> = ranks.iter().filter(|r| r.domain == d).map(|r| r.rank).collect();
        if !sub.is_empty() {
            rows.push(MetricRow::from_ranks(d.as_str(), &sub)?);
        }
    }
    let domain_rows = &rows[1..];
    let n: usize = domain_rows.iter().map(|r| r.queries).sum();
    if n > 0 {
        let avg = |f: fn(&MetricRow) -> f64| domain_rows.iter().map(|r| f(r) * r.queries as f64).sum::<f64>() / n as f64;
        let weighted = MetricRow {
            test_domain: "weighted_avg".into(),
            queries: n,
            mrr10: avg(|r| r.mrr10),
            ndcg10: avg(|r| r.ndcg10),
            hit1: avg(|r| r.hit1),
            hit3: avg(|r| r.hit3),
            hit10: avg(|r| r.hit10),
        };
        rows.push(weighted);
    }
    Ok(EvalReport {
        pool_size: index.len(),
        protocol: opts.protocol,
        train_domain: opts.train_domain.clone(),
        ranks,
        rows,
    })
}
