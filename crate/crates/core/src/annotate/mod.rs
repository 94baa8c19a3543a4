//! LLM-backed query generation and language-quality judging.
//!
//! Every call goes through [`LlmTransport`], so the curation pipeline runs
//! hermetically with [`MockTransport`].

mod client;
#[cfg(feature = "http")]
pub mod http;
mod mock;
mod prompt;

pub use client::{
    generate_query, judge_quality, parse_query_response, parse_verdict, Answer, AuditRecord, JudgeVerdict,
    LlmClient, LlmTransport, RetryPolicy,
};
pub use mock::MockTransport;
pub use prompt::{
    render_judge_prompt, render_query_prompt, ContentPart, Message, RenderedPrompt, Role, JUDGE_SYSTEM,
    QUERY_INSTRUCTION, QUERY_SYSTEM,
};
