use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Wiki,
    Arxiv,
    Slide,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Wiki, Domain::Arxiv, Domain::Slide];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Wiki => "wiki",
            Domain::Arxiv => "arxiv",
            Domain::Slide => "slide",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wiki" => Ok(Domain::Wiki),
            "arxiv" => Ok(Domain::Arxiv),
            "slide" => Ok(Domain::Slide),
            other => Err(Error::InvalidArgument(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One unified multi-modal document.
///
/// Field order is the canonical serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub domain: Domain,
    pub texts: Vec<String>,
    pub images: Vec<String>,
    pub queries: Vec<String>,
}

impl Document {
    /// Texts joined with a single newline, the block separator used for encoding.
    pub fn joined_text(&self) -> String {
        self.texts.join("\n")
    }

    /// Id of the `k`-th query embedding of this document.
    pub fn query_id(&self, k: usize) -> String {
        query_id(&self.id, k)
    }

    /// Id of the `k`-th image embedding of this document.
    pub fn image_id(&self, k: usize) -> String {
        image_id(&self.id, k)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = String> + '_ {
        (0..self.queries.len()).map(|k| self.query_id(k))
    }
}

pub fn query_id(doc_id: &str, k: usize) -> String {
    format!("{doc_id}@q{k}")
}

pub fn image_id(doc_id: &str, k: usize) -> String {
    format!("{doc_id}#{k}")
}

/// Splits `"doc#3"` into `("doc", 3)`.
pub fn parse_image_id(id: &str) -> Option<(&str, usize)> {
    let (doc, k) = id.rsplit_once('#')?;
    Some((doc, k.parse().ok()?))
}

/// Splits `"doc@q1"` into `("doc", 1)`.
pub fn parse_query_id(id: &str) -> Option<(&str, usize)> {
    let (doc, k) = id.rsplit_once("@q")?;
    Some((doc, k.parse().ok()?))
}

/// A record in the rejects report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub id: String,
    pub rule: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Reject lines that carry fields outside the document schema.
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub split: Split,
    pub docs: Vec<Document>,
    pub rejects: Vec<RejectRecord>,
    pub warnings: Vec<String>,
}

const FIELDS: [&str; 5] = ["id", "domain", "texts", "images", "queries"];

pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<LoadedCorpus> {
    load_corpus_with(path, split, LoadOptions::default())
}

pub fn load_corpus_with(path: impl AsRef<Path>, split: Split, opts: LoadOptions) -> Result<LoadedCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), split, opts).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

/// Parses JSONL documents. Schema violations become rejects; duplicate ids are fatal.
pub fn parse_corpus<R: Read>(reader: R, split: Split, opts: LoadOptions) -> Result<LoadedCorpus> {
    let mut out = LoadedCorpus {
        split,
        docs: Vec::new(),
        rejects: Vec::new(),
        warnings: Vec::new(),
    };
    let mut seen = HashSet::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, opts, &mut out.warnings, lineno + 1) {
            Ok(doc) => {
                if !seen.insert(doc.id.clone()) {
                    return Err(Error::DuplicateId(doc.id));
                }
                out.docs.push(doc);
            }
            Err((id, detail)) => {
                log::warn!("line {}: {detail}", lineno + 1);
                out.rejects.push(RejectRecord {
                    id: id.unwrap_or_else(|| format!("line:{}", lineno + 1)),
                    rule: "schema".into(),
                    detail,
                });
            }
        }
    }
    Ok(out)
}

fn parse_line(
    line: &str,
    opts: LoadOptions,
    warnings: &mut Vec<String>,
    lineno: usize,
) -> std::result::Result<Document, (Option<String>, String)> {
    let value: Value = serde_json::from_str(line).map_err(|e| (None, format!("invalid json: {e}")))?;
    let Value::Object(map) = value else {
        return Err((None, "not a JSON object".into()));
    };
    let id = map.get("id").and_then(Value::as_str).map(str::to_owned);
    let fail = |detail: String| (id.clone(), detail);

    for field in FIELDS {
        if !map.contains_key(field) {
            return Err(fail(format!("missing field: {field}")));
        }
    }
    for key in map.keys() {
        if !FIELDS.contains(&key.as_str()) {
            if opts.strict {
                return Err(fail(format!("unknown field: {key}")));
            }
            let msg = format!("line {lineno}: ignoring unknown field {key}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let Some(doc_id) = id.clone() else {
        return Err(fail("wrong type: id (expected string)".into()));
    };
    if doc_id.is_empty() {
        return Err(fail("empty id".into()));
    }
    let domain = map["domain"]
        .as_str()
        .ok_or_else(|| fail("wrong type: domain (expected string)".into()))?
        .parse::<Domain>()
        .map_err(|e| fail(e.to_string()))?;
    let strings = |field: &str| -> std::result::Result<Vec<String>, (Option<String>, String)> {
        let wrong = || fail(format!("wrong type: {field} (expected array of strings)"));
        map[field]
            .as_array()
            .ok_or_else(wrong)?
            .iter()
            .map(|v| v.as_str().map(str::to_owned).ok_or_else(wrong))
            .collect()
    };
    Ok(Document {
        id: doc_id,
        domain,
        texts: strings("texts")?,
        images: strings("images")?,
        queries: strings("queries")?,
    })
}

/// Writes documents as canonical JSONL (fixed field order, compact separators).
pub fn write_corpus<W: Write>(docs: &[Document], mut w: W) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_rejects<W: Write>(rejects: &[RejectRecord], mut w: W) -> Result<()> {
    for r in rejects {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
