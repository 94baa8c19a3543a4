use rayon::prelude::*;

use super::document::{Document, Domain, RejectRecord};
use super::filter::{clean_document, filter_document, FilterRule, PolicySet, Verdict};
use super::tokenizer::TokenizerHandle;
use crate::annotate::{Answer, LlmClient, LlmTransport};
use crate::error::Result;

/// Optional extra gate run after the heuristic filters.
pub trait QualityGate: Sync {
    fn accept(&self, doc: &Document) -> Result<bool>;
}

impl<T: LlmTransport> QualityGate for LlmClient<T> {
    fn accept(&self, doc: &Document) -> Result<bool> {
        Ok(self.judge_quality(&doc.id, &doc.joined_text())?.answer == Answer::Yes)
    }
}

pub struct Curator<'a> {
    pub policies: &'a PolicySet,
    pub tokenizer: &'a TokenizerHandle,
    pub gate: Option<&'a dyn QualityGate>,
    /// Domains the gate applies to.
    pub gate_domains: Vec<Domain>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Curated {
    pub accepted: Vec<Document>,
    pub rejects: Vec<RejectRecord>,
    pub warnings: Vec<String>,
}

enum Outcome {
    Keep(Document, Vec<String>),
    Drop(RejectRecord),
}

impl<'a> Curator<'a> {
    pub fn new(policies: &'a PolicySet, tokenizer: &'a TokenizerHandle) -> Self {
        Self {
            policies,
            tokenizer,
            gate: None,
            gate_domains: vec![Domain::Slide],
        }
    }

    pub fn with_gate(mut self, gate: &'a dyn QualityGate) -> Self {
        self.gate = Some(gate);
        self
    }

    fn one(&self, doc: &Document) -> Result<Outcome> {
        let policy = self.policies.get(doc.domain);
        let drop = |rule: FilterRule, detail: String| {
            Outcome::Drop(RejectRecord {
                id: doc.id.clone(),
                rule: rule.as_str().into(),
                detail,
            })
        };
        if let Verdict::Reject { rule, detail } = filter_document(doc, policy, self.tokenizer)? {
            return Ok(drop(rule, detail));
        }
        let (clean, warnings) = clean_document(doc, policy);
        if let Some(gate) = self.gate {
            if self.gate_domains.contains(&doc.domain) && !gate.accept(&clean)? {
                return Ok(drop(FilterRule::Judge, "judged not meaningful".into()));
            }
        }
        Ok(Outcome::Keep(clean, warnings))
    }

    /// Filters in parallel; accepted documents keep their input order.
    pub fn run(&self, docs: &[Document]) -> Result<Curated> {
        let outcomes: Vec<Outcome> = docs.par_iter().map(|d| self.one(d)).collect::<Result<_>>()?;
        let mut out = Curated::default();
        for o in outcomes {
            match o {
                Outcome::Keep(doc, w) => {
                    out.accepted.push(doc);
                    out.warnings.extend(w);
                }
                Outcome::Drop(r) => out.rejects.push(r),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::MockTransport;

    fn doc(id: &str, domain: Domain, words: usize) -> Document {
        Document {
            id: id.into(),
            domain,
            texts: vec![vec!["w"; words].join(" ")],
            images: vec!["i.png".into()],
            queries: vec!["q".into()],
        }
    }

    #[test]
    fn order_is_preserved() {
        let docs: Vec<Document> = (0..50)
            .map(|i| doc(&format!("d{i:02}"), Domain::Wiki, if i % 3 == 0 { 10 } else { 400 }))
            .collect();
        let p = PolicySet::default();
        let t = TokenizerHandle::Whitespace;
        let out = Curator::new(&p, &t).run(&docs).unwrap();
        let expected: Vec<&str> = docs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 3 != 0)
            .map(|(_, d)| d.id.as_str())
            .collect();
        assert_eq!(out.accepted.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), expected);
        assert!(out.rejects.iter().all(|r| r.rule == "tokens"));
    }

    #[test]
    fn gate_only_touches_configured_domains() {
        let docs = vec![doc("s", Domain::Slide, 400), doc("w", Domain::Wiki, 400)];
        let p = PolicySet::default();
        let t = TokenizerHandle::Whitespace;
        let judge = LlmClient::new(MockTransport::always("No"));
        let out = Curator::new(&p, &t).with_gate(&judge).run(&docs).unwrap();
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].id, "w");
        assert_eq!(out.rejects[0].rule, "judge");
        assert_eq!(judge.transport().calls(), 1);
    }
}
