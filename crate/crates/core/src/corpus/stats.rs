use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::document::{Document, Domain, Split};
use super::tokenizer::TokenizerHandle;
use crate::error::{Error, Result};

/// Counts and token-level averages for one domain (or the total row).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub total: usize,
    pub avg_images: f64,
    pub avg_text_tokens: f64,
    pub avg_query_tokens: f64,
}

/// Per-domain statistics keyed by domain name, plus a `"total"` entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub domains: BTreeMap<String, DomainStats>,
}

#[derive(Default)]
struct Acc {
    counts: [usize; 3],
    images: usize,
    text_tokens: usize,
    query_tokens: usize,
    queries: usize,
}

impl Acc {
    fn finish(&self) -> DomainStats {
        let docs = self.counts.iter().sum::<usize>();
        let per_doc = |x: usize| if docs == 0 { 0.0 } else { x as f64 / docs as f64 };
        DomainStats {
            train: self.counts[0],
            valid: self.counts[1],
            test: self.counts[2],
            total: docs,
            avg_images: per_doc(self.images),
            avg_text_tokens: per_doc(self.text_tokens),
            avg_query_tokens: if self.queries == 0 {
                0.0
            } else {
                self.query_tokens as f64 / self.queries as f64
            },
        }
    }
}

/// Aggregates split counts and averages per domain. Query tokens are averaged
/// per query, everything else per document.
pub fn compute_stats<'a, I>(docs: I, tokenizer: &TokenizerHandle) -> Result<CorpusStats>
where
    I: IntoIterator<Item = (Split, &'a Document)>,
{
    let mut per: BTreeMap<Domain, Acc> = BTreeMap::new();
    let mut total = Acc::default();
    let mut seen = 0usize;
    for (split, doc) in docs {
        seen += 1;
        let mut text_tokens = 0;
        for t in &doc.texts {
            text_tokens += tokenizer.count_tokens(t)?;
        }
        let mut query_tokens = 0;
        for q in &doc.queries {
            query_tokens += tokenizer.count_tokens(q)?;
        }
        for acc in [per.entry(doc.domain).or_default(), &mut total] {
            acc.counts[split as usize] += 1;
            acc.images += doc.images.len();
            acc.text_tokens += text_tokens;
            acc.query_tokens += query_tokens;
            acc.queries += doc.queries.len();
        }
    }
    if seen == 0 {
        return Err(Error::Empty("no documents to summarize".into()));
    }
    let mut domains: BTreeMap<String, DomainStats> =
        per.iter().map(|(d, acc)| (d.to_string(), acc.finish())).collect();
    domains.insert("total".into(), total.finish());
    Ok(CorpusStats { domains })
}

pub fn compute_split_stats(docs: &[Document], split: Split, tokenizer: &TokenizerHandle) -> Result<CorpusStats> {
    compute_stats(docs.iter().map(|d| (split, d)), tokenizer)
}

impl CorpusStats {
    pub fn total(&self) -> &DomainStats {
        &self.domains["total"]
    }

    /// Row-oriented view: one row per statistic, one column per domain, total last.
    pub fn table(&self) -> serde_json::Value {
        let mut columns: Vec<&str> = Domain::ALL
            .iter()
            .map(|d| d.as_str())
            .filter(|d| self.domains.contains_key(*d))
            .collect();
        columns.push("total");
        let row = |f: &dyn Fn(&DomainStats) -> serde_json::Value| -> Vec<serde_json::Value> {
            columns.iter().map(|c| f(&self.domains[*c])).collect()
        };
        serde_json::json!({
            "columns": columns,
            "rows": [
                {"statistic": "train", "values": row(&|s| s.train.into())},
                {"statistic": "valid", "values": row(&|s| s.valid.into())},
                {"statistic": "test", "values": row(&|s| s.test.into())},
                {"statistic": "total_docs", "values": row(&|s| s.total.into())},
                {"statistic": "avg_images", "values": row(&|s| s.avg_images.into())},
                {"statistic": "avg_text_tokens", "values": row(&|s| s.avg_text_tokens.into())},
                {"statistic": "avg_query_tokens", "values": row(&|s| s.avg_query_tokens.into())},
            ]
        })
    }

    /// The stats report file body: the per-domain map and the table view.
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({ "domains": self.domains, "table": self.table() })
    }
}
