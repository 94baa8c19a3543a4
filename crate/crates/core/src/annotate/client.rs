use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::{render_judge_prompt, render_query_prompt, RenderedPrompt};
use crate::corpus::Document;
use crate::error::{Error, Result};

/// Request/response boundary to a chat model.
///
/// Implementations return `Error::Transport` for anything worth retrying.
pub trait LlmTransport: Send + Sync {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String>;
}

impl<T: LlmTransport + ?Sized> LlmTransport for &T {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<T: LlmTransport + ?Sized> LlmTransport for Box<T> {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Backoff slept after failed attempt `n` (0-based).
    pub fn backoff(&self, n: u32) -> Duration {
        let factor = 1u32.checked_shl(n).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub answer: Answer,
    pub raw_response: String,
    /// False when the response held no leading Yes/No and the answer defaulted to no.
    pub parsed: bool,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub doc_id: String,
    pub prompt_hash: String,
    pub raw_response: String,
    pub parsed_result: String,
    pub timestamp: String,
}

/// Extracts the question following the first `Q:` marker.
pub fn parse_query_response(raw: &str) -> Result<String> {
    let (_, rest) = raw
        .split_once("Q:")
        .ok_or_else(|| Error::MissingQueryMarker(raw.to_owned()))?;
    let q = rest.trim();
    if q.is_empty() {
        return Err(Error::MissingQueryMarker(raw.to_owned()));
    }
    Ok(q.to_owned())
}

/// The answer is read from the first alphabetic word only.
pub fn parse_verdict(raw: &str) -> JudgeVerdict {
    let first = raw
        .split(|c: char| !c.is_alphabetic())
        .find(|w| !w.is_empty())
        .map(str::to_lowercase);
    let answer = match first.as_deref() {
        Some("yes") => Some(Answer::Yes),
        Some("no") => Some(Answer::No),
        _ => None,
    };
    if answer.is_none() {
        log::warn!("unparseable judge response {raw:?}; treating as no");
    }
    JudgeVerdict {
        answer: answer.unwrap_or(Answer::No),
        raw_response: raw.to_owned(),
        parsed: answer.is_some(),
    }
}

/// Transport plus retry policy plus optional audit sink.
pub struct LlmClient<T> {
    transport: T,
    retry: RetryPolicy,
    audit: Option<Mutex<Box<dyn Write + Send>>>,
}

impl<T: LlmTransport> LlmClient<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            retry: RetryPolicy::default(),
            audit: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_audit(mut self, sink: impl Write + Send + 'static) -> Self {
        self.audit = Some(Mutex::new(Box::new(sink)));
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn call(&self, prompt: &RenderedPrompt) -> Result<String> {
        let attempts = self.retry.attempts.max(1);
        let mut n = 0;
        loop {
            match self.transport.complete(prompt) {
                Ok(r) => return Ok(r),
                Err(Error::Transport(msg)) if n + 1 < attempts => {
                    let wait = self.retry.backoff(n);
                    log::warn!("transport failure ({msg}); retry {} in {wait:?}", n + 1);
                    thread::sleep(wait);
                    n += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn audit(&self, doc_id: &str, prompt: &RenderedPrompt, raw: &str, parsed: &str) -> Result<()> {
        let Some(sink) = &self.audit else { return Ok(()) };
        let rec = AuditRecord {
            doc_id: doc_id.to_owned(),
            prompt_hash: prompt.hash(),
            raw_response: raw.to_owned(),
            parsed_result: parsed.to_owned(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let mut w = sink.lock().expect("audit sink poisoned");
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn generate_query(&self, doc: &Document) -> Result<String> {
        let prompt = render_query_prompt(doc)?;
        let raw = self.call(&prompt)?;
        let parsed = parse_query_response(&raw);
        let shown = match &parsed {
            Ok(q) => q.clone(),
            Err(e) => format!("error: {e}"),
        };
        self.audit(&doc.id, &prompt, &raw, &shown)?;
        parsed
    }

    pub fn judge_quality(&self, id: &str, text: &str) -> Result<JudgeVerdict> {
        let prompt = render_judge_prompt(text);
        let raw = self.call(&prompt)?;
        let verdict = parse_verdict(&raw);
        let shown = match verdict.answer {
            Answer::Yes => "yes",
            Answer::No => "no",
        };
        self.audit(id, &prompt, &raw, shown)?;
        Ok(verdict)
    }

    /// Issues at most `in_flight` requests at once. Results come back in input
    /// order, each tagged with its document id.
    pub fn generate_queries(&self, docs: &[Document], in_flight: usize) -> Vec<(String, Result<String>)> {
        let slots: Vec<Mutex<Option<Result<String>>>> = docs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        thread::scope(|s| {
            for _ in 0..in_flight.clamp(1, docs.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(doc) = docs.get(i) else { break };
                    let r = self.generate_query(doc);
                    *slots[i].lock().expect("slot poisoned") = Some(r);
                });
            }
        });
        docs.iter()
            .zip(slots)
            .map(|(d, slot)| {
                let r = slot.into_inner().expect("slot poisoned").expect("every slot filled");
                (d.id.clone(), r)
            })
            .collect()
    }
}

/// Convenience wrappers mirroring the operation names.
pub fn generate_query<T: LlmTransport>(doc: &Document, client: &LlmClient<T>) -> Result<String> {
    client.generate_query(doc)
}

pub fn judge_quality<T: LlmTransport>(text: &str, client: &LlmClient<T>) -> Result<JudgeVerdict> {
    client.judge_quality("", text)
}
