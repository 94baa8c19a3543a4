//! Candidate pools and single-positive relevance judgments.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Domain, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Queries ranked against train ∪ valid ∪ test.
    FullCollection,
    /// Queries ranked against their own split only.
    SplitOnly,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::FullCollection => "full-collection",
            Protocol::SplitOnly => "split-only",
        }
    }
}

/// Document ids a query is ranked against, with their split and domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub protocol: Protocol,
    pub doc_ids: Vec<String>,
    pub splits: Vec<Split>,
    pub domains: Vec<Domain>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn domain_map(&self) -> HashMap<String, Domain> {
        self.doc_ids.iter().cloned().zip(self.domains.iter().copied()).collect()
    }

    /// Pool documents in pool order.
    pub fn documents<'a>(&self, train: &'a [Document], valid: &'a [Document], test: &'a [Document]) -> Vec<&'a Document> {
        let wanted: std::collections::HashSet<&str> = self.doc_ids.iter().map(String::as_str).collect();
        train
            .iter()
            .chain(valid)
            .chain(test)
            .filter(|d| wanted.contains(d.id.as_str()))
            .collect()
    }
}

/// Union of all three splits, in train, valid, test order. An id present in
/// two splits is an error.
pub fn full_collection_pool(train: &[Document], valid: &[Document], test: &[Document]) -> Result<Pool> {
    let mut seen: HashMap<&str, Split> = HashMap::new();
    let mut pool = Pool {
        protocol: Protocol::FullCollection,
        doc_ids: Vec::new(),
        splits: Vec::new(),
        domains: Vec::new(),
    };
    for (split, docs) in [(Split::Train, train), (Split::Valid, valid), (Split::Test, test)] {
        for d in docs {
            match seen.insert(&d.id, split) {
                Some(prev) if prev != split => return Err(Error::SplitCollision(d.id.clone())),
                Some(_) => return Err(Error::DuplicateId(d.id.clone())),
                None => {}
            }
            pool.doc_ids.push(d.id.clone());
            pool.splits.push(split);
            pool.domains.push(d.domain);
        }
    }
    Ok(pool)
}

pub fn split_only_pool(docs: &[Document], split: Split) -> Result<Pool> {
    let mut seen = std::collections::HashSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::DuplicateId(d.id.clone()));
        }
    }
    Ok(Pool {
        protocol: Protocol::SplitOnly,
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        splits: vec![split; docs.len()],
        domains: docs.iter().map(|d| d.domain).collect(),
    })
}

/// Query id → its one relevant document id, iterated in query-id order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QRels(BTreeMap<String, String>);

impl QRels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>) -> Result<()> {
        let q = query_id.into();
        if self.0.contains_key(&q) {
            return Err(Error::DuplicateId(q));
        }
        self.0.insert(q, doc_id.into());
        Ok(())
    }

    /// One judgment per query of every document: `docid@qk → docid`.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Result<Self> {
        let mut q = Self::new();
        for d in docs {
            for qid in d.query_ids() {
                q.insert(qid, d.id.clone())?;
            }
        }
        Ok(q)
    }

    pub fn get(&self, query_id: &str) -> Option<&str> {
        self.0.get(query_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(q, d)| (q.as_str(), d.as_str()))
    }
}

/// Tab-separated `query_id  doc_id` lines; blank lines are skipped.
pub fn read_qrels<R: Read>(r: R) -> Result<QRels> {
    let mut q = QRels::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => q.insert(a, b)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "qrels line {}: expected query_id<TAB>doc_id",
                    n + 1
                )))
            }
        }
    }
    Ok(q)
}

pub fn write_qrels<W: Write>(q: &QRels, mut w: W) -> Result<()> {
    for (a, b) in q.iter() {
        writeln!(w, "{a}\t{b}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(prefix: &str, n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document {
                id: format!("{prefix}{i}"),
                domain: Domain::ALL[i % 3],
                texts: vec!["t".into()],
                images: vec!["i".into()],
                queries: vec!["q".into()],
            })
            .collect()
    }

    #[test]
    fn pools() {
        let (a, b, c) = (docs("tr", 5), docs("va", 2), docs("te", 3));
        let p = full_collection_pool(&a, &b, &c).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(p.protocol, Protocol::FullCollection);
        let mut clash = docs("te", 3);
        clash[1].id = "tr0".into();
        assert!(matches!(full_collection_pool(&a, &b, &clash), Err(Error::SplitCollision(id)) if id == "tr0"));
        let s = split_only_pool(&c, Split::Test).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.protocol.as_str(), "split-only");
    }

    #[test]
    fn qrels_tsv() {
        let q = read_qrels("a@q0\ta\n\nb@q0\tb\n".as_bytes()).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.get("b@q0"), Some("b"));
        let mut out = Vec::new();
        write_qrels(&q, &mut out).unwrap();
        assert_eq!(out, b"a@q0\ta\nb@q0\tb\n");
        assert!(read_qrels("a@q0\ta\na@q0\tb\n".as_bytes()).is_err());
        assert!(read_qrels("only-one-column\n".as_bytes()).is_err());
        assert_eq!(QRels::from_documents(&docs("d", 2)).unwrap().get("d1@q0"), Some("d1"));
    }
}
