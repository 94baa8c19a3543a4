use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::client::LlmTransport;
use super::prompt::RenderedPrompt;
use crate::error::{Error, Result};

enum Mode {
    Always(String),
    Scripted(Mutex<VecDeque<std::result::Result<String, String>>>),
    EchoDocText,
}

/// In-process transport for hermetic runs and tests.
pub struct MockTransport {
    mode: Mode,
    calls: AtomicUsize,
}

impl MockTransport {
    pub fn always(response: impl Into<String>) -> Self {
        Self::with_mode(Mode::Always(response.into()))
    }

    /// Plays back responses in order; `Err` entries become transport failures.
    pub fn scripted(script: Vec<std::result::Result<String, String>>) -> Self {
        Self::with_mode(Mode::Scripted(Mutex::new(script.into())))
    }

    /// Answers `Q: <last line of the document text>`.
    pub fn echo_doc_text() -> Self {
        Self::with_mode(Mode::EchoDocText)
    }

    fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmTransport for MockTransport {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.mode {
            Mode::Always(r) => Ok(r.clone()),
            Mode::Scripted(q) => match q.lock().expect("script poisoned").pop_front() {
                Some(Ok(r)) => Ok(r),
                Some(Err(e)) => Err(Error::Transport(e)),
                None => Err(Error::Transport("script exhausted".into())),
            },
            Mode::EchoDocText => {
                let text = prompt.messages.last().map(|m| m.text_content()).unwrap_or_default();
                let tail = text.rsplit(". ").next().unwrap_or_default();
                Ok(format!("Q: {tail}"))
            }
        }
    }
}
