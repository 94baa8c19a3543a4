use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ContentPart {
    Text { text: String },
    Image { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    /// Concatenation of every text part.
    pub fn text_content(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect()
    }
}

/// Fully rendered chat request, ready for a transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub messages: Vec<Message>,
}

impl RenderedPrompt {
    /// Canonical JSON bytes of the messages.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.messages).expect("prompt messages serialize")
    }

    /// Hex SHA-256 of the canonical bytes; used to key audit records.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_bytes()))
    }
}

pub const QUERY_SYSTEM: &str = "You are a helpful natural language processing expert.";

pub const QUERY_INSTRUCTION: &str = concat!(
    "You are tasked with generating a thought-provoking question ",
    "based on the given image-text data from a document. ",
    "The question should capture the overall theme or deeper ",
    "meaning of the document, rather than specific visual details. ",
    "It must be abstract, invite critical reflection, and avoid ",
    "a direct answer from the context. ",
    "Do not be overly generic\u{2014}ensure the question aligns with ",
    "the unique visual cues of the document. ",
    "Begin your output with 'Q:' followed by the generated question. ",
);

pub const JUDGE_SYSTEM: &str = concat!(
    "You are a generous language quality classifier. ",
    "Your task is to determine whether a given text segment, possibly ",
    "extracted from an OCR-processed document, likely contains meaningful ",
    "human-written content. You should accept text that is partially ",
    "broken, informal, or noisy, as long as it seems intended to ",
    "communicate something relevant. Accept marketing language, product ",
    "descriptions, announcements, or technical explanations. Only reject ",
    "text if it is purely noise, random symbols, or unreadable junk. ",
    "/no_think",
);

const JUDGE_EXAMPLES: &str = concat!(
    "Below are some examples:\n\n",
    "Text: 'Figure 3: 0.233!!@@## 19982ab' \u{2192} No\n",
    "Text: 'Explori enables survey management for licensed events.' \u{2192} Yes\n",
    "Text: 'Chart axis: year, value, growth' \u{2192} No\n",
    "Text: 'This document introduces a framework for multi-modal IR tasks ",
    "in scientific domains.' \u{2192} Yes\n",
    "Text: 'http://bit.ly/xyz download summary' \u{2192} No\n",
    "Text: 'Project overview and next steps: iterate, test, deploy' \u{2192} Yes\n",
    "---\n\n",
    "Now classify the following:\n\n",
);

const JUDGE_QUESTION: &str =
    "Is this meaningful human language? Respond with one word only: 'Yes' or 'No'.";

/// Query-generation request: system role, then a user turn carrying every
/// image followed by the instruction and the document text.
pub fn render_query_prompt(doc: &Document) -> Result<RenderedPrompt> {
    if doc.texts.iter().all(|t| t.trim().is_empty()) {
        return Err(Error::Empty(format!("document {} has no text", doc.id)));
    }
    if doc.images.is_empty() {
        return Err(Error::Empty(format!("document {} has no images", doc.id)));
    }
    let mut content: Vec<ContentPart> = doc
        .images
        .iter()
        .map(|p| ContentPart::Image { path: p.clone() })
        .collect();
    content.push(ContentPart::Text {
        text: format!("{QUERY_INSTRUCTION}{}", doc.joined_text()),
    });
    Ok(RenderedPrompt {
        messages: vec![
            Message::text(Role::System, QUERY_SYSTEM),
            Message {
                role: Role::User,
                content,
            },
        ],
    })
}

pub fn render_judge_prompt(text: &str) -> RenderedPrompt {
    RenderedPrompt {
        messages: vec![
            Message::text(Role::System, JUDGE_SYSTEM),
            Message::text(
                Role::User,
                format!("{JUDGE_EXAMPLES}Text: {text}\n\n{JUDGE_QUESTION}"),
            ),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;

    fn doc() -> Document {
        Document {
            id: "w1".into(),
            domain: Domain::Wiki,
            texts: vec!["Diana is a goddess.".into(), "She hunts.".into()],
            images: vec!["a.jpg".into(), "b.jpg".into()],
            queries: vec![],
        }
    }

    #[test]
    fn query_prompt_layout() {
        let p = render_query_prompt(&doc()).unwrap();
        assert_eq!(p.messages.len(), 2);
        assert_eq!(p.messages[0].role, Role::System);
        let user = &p.messages[1];
        assert_eq!(user.content[0], ContentPart::Image { path: "a.jpg".into() });
        assert_eq!(user.content[1], ContentPart::Image { path: "b.jpg".into() });
        let text = user.text_content();
        assert!(text.contains("Begin your output with 'Q:'"));
        assert!(text.ends_with("question. Diana is a goddess.\nShe hunts."));
    }

    #[test]
    fn query_prompt_is_deterministic() {
        let a = render_query_prompt(&doc()).unwrap();
        let b = render_query_prompt(&doc()).unwrap();
        assert_eq!(a.canonical_bytes(), b.canonical_bytes());
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn empty_document_is_rejected() {
        let mut d = doc();
        d.texts.clear();
        assert!(render_query_prompt(&d).is_err());
    }

    #[test]
    fn judge_prompt_embeds_text_once() {
        let p = render_judge_prompt("hello there");
        let user = p.messages[1].text_content();
        assert_eq!(user.matches("hello there").count(), 1);
        assert!(user.ends_with("Respond with one word only: 'Yes' or 'No'."));
        assert!(p.messages[0].text_content().ends_with("/no_think"));
    }
}
