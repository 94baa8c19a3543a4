//! Quality filters: garbled-text detection, math stripping, and the
//! per-document accept/reject decision.

use serde::{Deserialize, Serialize};

use super::document::{Document, Domain};
use super::tokenizer::TokenizerHandle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterPolicy {
    pub min_tokens: usize,
    pub min_images: usize,
    pub garbled_min_run: usize,
    pub garbled_doc_fraction: f64,
    pub strip_math: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_tokens: 300,
            min_images: 1,
            garbled_min_run: 10,
            garbled_doc_fraction: 0.5,
            strip_math: false,
        }
    }
}

impl FilterPolicy {
    pub fn for_domain(domain: Domain) -> Self {
        Self {
            strip_math: domain == Domain::Arxiv,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.garbled_min_run == 0 {
            return Err(Error::InvalidArgument("garbled_min_run must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.garbled_doc_fraction) {
            return Err(Error::InvalidArgument(
                "garbled_doc_fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// One policy per domain; this is the shape of the `--policy` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySet {
    #[serde(default = "wiki_policy")]
    pub wiki: FilterPolicy,
    #[serde(default = "arxiv_policy")]
    pub arxiv: FilterPolicy,
    #[serde(default = "slide_policy")]
    pub slide: FilterPolicy,
}

fn wiki_policy() -> FilterPolicy {
    FilterPolicy::for_domain(Domain::Wiki)
}
fn arxiv_policy() -> FilterPolicy {
    FilterPolicy::for_domain(Domain::Arxiv)
}
fn slide_policy() -> FilterPolicy {
    FilterPolicy::for_domain(Domain::Slide)
}

impl Default for PolicySet {
    fn default() -> Self {
        Self {
            wiki: wiki_policy(),
            arxiv: arxiv_policy(),
            slide: slide_policy(),
        }
    }
}

impl PolicySet {
    pub fn get(&self, domain: Domain) -> &FilterPolicy {
        match domain {
            Domain::Wiki => &self.wiki,
            Domain::Arxiv => &self.arxiv,
            Domain::Slide => &self.slide,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Domain::ALL.iter().try_for_each(|&d| self.get(d).validate())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterRule {
    Images,
    Tokens,
    Garbled,
    Judge,
}

impl FilterRule {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterRule::Images => "images",
            FilterRule::Tokens => "tokens",
            FilterRule::Garbled => "garbled",
            FilterRule::Judge => "judge",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accept,
    Reject { rule: FilterRule, detail: String },
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    pub fn rule(&self) -> Option<FilterRule> {
        match self {
            Verdict::Accept => None,
            Verdict::Reject { rule, .. } => Some(*rule),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stripped {
    pub text: String,
    pub warnings: Vec<String>,
}

const BEGIN_EQ: &str = "\\begin{equation}";
const END_EQ: &str = "\\end{equation}";

/// Removes `$...$`, `$$...$$` and `\begin{equation}...\end{equation}` spans.
///
/// Matching is non-greedy and non-nested. An opening delimiter without a
/// partner leaves the rest of the text untouched and records a warning.
/// Passes repeat until nothing changes, so the result is a fixed point.
pub fn strip_math(text: &str) -> Stripped {
    let mut current = text.to_owned();
    loop {
        let pass = strip_once(&current);
        if pass.text == current {
            return pass;
        }
        current = pass.text;
    }
}

fn strip_once(text: &str) -> Stripped {
    let mut out = String::with_capacity(text.len());
    let mut warnings = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let next_eq = rest.find(BEGIN_EQ);
        let next_dollar = rest.find('$');
        let (start, open, close) = match (next_eq, next_dollar) {
            (None, None) => break,
            (Some(e), Some(d)) if e < d => (e, BEGIN_EQ, END_EQ),
            (Some(e), None) => (e, BEGIN_EQ, END_EQ),
            (_, Some(d)) if rest[d..].starts_with("$$") => (d, "$$", "$$"),
            (_, Some(d)) => (d, "$", "$"),
        };
        out.push_str(&rest[..start]);
        let body = &rest[start + open.len()..];
        match body.find(close) {
            Some(end) => rest = &body[end + close.len()..],
            None => {
                warnings.push(format!("unbalanced {open} at byte {}", text.len() - rest.len() + start));
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    Stripped { text: out, warnings }
}

#[inline]
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Length of the longest run of characters that are neither word characters
/// nor whitespace.
pub fn longest_special_run(text: &str) -> usize {
    let mut best = 0;
    let mut run = 0;
    for c in text.chars() {
        if is_word_char(c) || c.is_whitespace() {
            run = 0;
        } else {
            run += 1;
            best = best.max(run);
        }
    }
    best
}

fn has_latex_residue(text: &str) -> bool {
    text.contains("\\begin{") || text.contains("\\end{") || !strip_math(text).warnings.is_empty()
}

pub fn is_garbled(paragraph: &str, policy: &FilterPolicy) -> bool {
    longest_special_run(paragraph) >= policy.garbled_min_run.max(1)
        || (policy.strip_math && has_latex_residue(paragraph))
}

/// Paragraph text as the filters see it: math stripped first when the policy asks.
fn cleaned_blocks<'a>(doc: &'a Document, policy: &FilterPolicy) -> Vec<std::borrow::Cow<'a, str>> {
    doc.texts
        .iter()
        .map(|t| {
            if policy.strip_math {
                std::borrow::Cow::Owned(strip_math(t).text)
            } else {
                std::borrow::Cow::Borrowed(t.as_str())
            }
        })
        .collect()
}

/// Applies the image, token and garbledness rules in that order.
pub fn filter_document(doc: &Document, policy: &FilterPolicy, tokenizer: &TokenizerHandle) -> Result<Verdict> {
    if doc.images.len() < policy.min_images {
        return Ok(Verdict::Reject {
            rule: FilterRule::Images,
            detail: format!("{} images < {}", doc.images.len(), policy.min_images),
        });
    }
    let blocks = cleaned_blocks(doc, policy);
    let mut tokens = 0;
    for b in &blocks {
        tokens += tokenizer.count_tokens(b)?;
    }
    if tokens <= policy.min_tokens {
        return Ok(Verdict::Reject {
            rule: FilterRule::Tokens,
            detail: format!("{tokens} tokens <= {}", policy.min_tokens),
        });
    }
    let garbled = blocks.iter().filter(|b| is_garbled(b, policy)).count();
    let fraction = garbled as f64 / blocks.len() as f64;
    if fraction > policy.garbled_doc_fraction {
        return Ok(Verdict::Reject {
            rule: FilterRule::Garbled,
            detail: format!("{garbled}/{} paragraphs garbled", blocks.len()),
        });
    }
    Ok(Verdict::Accept)
}

/// Returns the document as it is emitted after curation (math removed when
/// the policy strips it), along with any stripping warnings.
pub fn clean_document(doc: &Document, policy: &FilterPolicy) -> (Document, Vec<String>) {
    if !policy.strip_math {
        return (doc.clone(), Vec::new());
    }
    let mut warnings = Vec::new();
    let texts = doc
        .texts
        .iter()
        .map(|t| {
            let s = strip_math(t);
            warnings.extend(s.warnings.into_iter().map(|w| format!("{}: {w}", doc.id)));
            s.text
        })
        .collect();
    (Document { texts, ..doc.clone() }, warnings)
}
