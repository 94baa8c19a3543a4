//! Token counting: byte-level BPE over externally supplied merge ranks, or a
//! whitespace fallback for hermetic runs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fancy_regex::Regex;

use crate::error::{Error, Result};

/// Pre-tokenization pattern used by the `cl100k_base` encoding.
pub const CL100K_PATTERN: &str = r"(?i:'s|'t|'re|'ve|'m|'ll|'d)|[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+(?!\S)|\s+";

/// Shareable tokenizer handle. Cloning is cheap.
#[derive(Debug, Clone, Default)]
pub enum TokenizerHandle {
    /// No vocabulary has been loaded.
    #[default]
    Unloaded,
    /// Counts maximal runs of non-whitespace.
    Whitespace,
    Bpe(Arc<BpeTokenizer>),
}

impl TokenizerHandle {
    pub fn bpe(tok: BpeTokenizer) -> Self {
        TokenizerHandle::Bpe(Arc::new(tok))
    }

    /// Loads a `.tiktoken` ranks file with the default pre-tokenization pattern.
    pub fn load_tiktoken(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::bpe(BpeTokenizer::from_tiktoken_file(path, CL100K_PATTERN)?))
    }

    pub fn count_tokens(&self, text: &str) -> Result<usize> {
        match self {
            TokenizerHandle::Unloaded => Err(Error::TokenizerNotLoaded),
            TokenizerHandle::Whitespace => Ok(text.split_whitespace().count()),
            TokenizerHandle::Bpe(t) => t.count(text),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TokenizerHandle::Unloaded => "unloaded",
            TokenizerHandle::Whitespace => "whitespace",
            TokenizerHandle::Bpe(_) => "bpe",
        }
    }
}

pub fn count_tokens(text: &str, tokenizer: &TokenizerHandle) -> Result<usize> {
    tokenizer.count_tokens(text)
}

/// Byte-level BPE in the `tiktoken` style: merges are implied by token ranks,
/// lower rank merges first.
#[derive(Debug)]
pub struct BpeTokenizer {
    ranks: HashMap<Vec<u8>, u32>,
    pattern: Regex,
}

impl BpeTokenizer {
    pub fn new(ranks: HashMap<Vec<u8>, u32>, pattern: &str) -> Result<Self> {
        let pattern = Regex::new(pattern).map_err(|e| Error::Tokenizer(e.to_string()))?;
        Ok(Self { ranks, pattern })
    }

    /// Parses `base64-token rank` lines.
    pub fn parse_tiktoken(data: &str, pattern: &str) -> Result<Self> {
        let mut ranks = HashMap::new();
        for (n, line) in data.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Tokenizer(format!("malformed ranks line {}", n + 1));
            let (tok, rank) = line.split_once(' ').ok_or_else(bad)?;
            let bytes = STANDARD.decode(tok).map_err(|_| bad())?;
            let rank: u32 = rank.trim().parse().map_err(|_| bad())?;
            ranks.insert(bytes, rank);
        }
        if ranks.is_empty() {
            return Err(Error::TokenizerNotLoaded);
        }
        Self::new(ranks, pattern)
    }

    pub fn from_tiktoken_file(path: impl AsRef<Path>, pattern: &str) -> Result<Self> {
        let path = path.as_ref();
        let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tiktoken(&data, pattern)
    }

    pub fn vocab_size(&self) -> usize {
        self.ranks.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut out = Vec::new();
        for piece in self.pattern.find_iter(text) {
            let piece = piece.map_err(|e| Error::Tokenizer(e.to_string()))?.as_str().as_bytes();
            if let Some(&r) = self.ranks.get(piece) {
                out.push(r);
                continue;
            }
            for range in byte_pair_merge(piece, &self.ranks) {
                let token = &piece[range.clone()];
                let r = self.ranks.get(token).ok_or_else(|| {
                    Error::Tokenizer(format!("byte sequence {token:?} not in vocabulary"))
                })?;
                out.push(*r);
            }
        }
        Ok(out)
    }

    pub fn count(&self, text: &str) -> Result<usize> {
        self.encode(text).map(|t| t.len())
    }
}

/// Repeatedly merges the adjacent pair whose concatenation has the lowest rank.
fn byte_pair_merge(piece: &[u8], ranks: &HashMap<Vec<u8>, u32>) -> Vec<std::ops::Range<usize>> {
    let mut bounds: Vec<usize> = (0..=piece.len()).collect();
    loop {
        let mut best: Option<(u32, usize)> = None;
        for i in 0..bounds.len().saturating_sub(2) {
            if let Some(&r) = ranks.get(&piece[bounds[i]..bounds[i + 2]]) {
                if best.map_or(true, |(b, _)| r < b) {
                    best = Some((r, i));
                }
            }
        }
        match best {
            Some((_, i)) => {
                bounds.remove(i + 1);
            }
            None => break,
        }
    }
    bounds.windows(2).map(|w| w[0]..w[1]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn byte_vocab() -> HashMap<Vec<u8>, u32> {
        (0u8..=255).map(|b| (vec![b], b as u32)).collect()
    }

    #[test]
    fn whitespace_fallback() {
        let t = TokenizerHandle::Whitespace;
        assert_eq!(t.count_tokens("").unwrap(), 0);
        assert_eq!(t.count_tokens("alpha beta gamma").unwrap(), 3);
        assert_eq!(t.count_tokens("  spaced\n\tout  ").unwrap(), 2);
    }

    #[test]
    fn unloaded_errors() {
        assert!(matches!(
            TokenizerHandle::Unloaded.count_tokens("x"),
            Err(Error::TokenizerNotLoaded)
        ));
    }

    #[test]
    fn merges_apply_by_rank() {
        let mut ranks = byte_vocab();
        ranks.insert(b"ab".to_vec(), 256);
        ranks.insert(b"abc".to_vec(), 257);
        ranks.insert(b"bc".to_vec(), 258);
        let tok = BpeTokenizer::new(ranks, CL100K_PATTERN).unwrap();
        // "abcd" -> "ab" wins over "bc", then "abc", leaving "d"
        assert_eq!(tok.encode("abcd").unwrap(), vec![257, b'd' as u32]);
        assert_eq!(tok.count("").unwrap(), 0);
    }

    #[test]
    fn missing_byte_is_an_error() {
        let ranks: HashMap<_, _> = [(b"a".to_vec(), 0)].into_iter().collect();
        let tok = BpeTokenizer::new(ranks, CL100K_PATTERN).unwrap();
        assert!(tok.count("ab").is_err());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(BpeTokenizer::parse_tiktoken("!!! x\n", CL100K_PATTERN).is_err());
        assert!(matches!(
            BpeTokenizer::parse_tiktoken("", CL100K_PATTERN),
            Err(Error::TokenizerNotLoaded)
        ));
    }
}
