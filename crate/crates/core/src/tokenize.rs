//! Tokenizer contract.
//!
//! Window construction, prompt rendering, and backend vocabularies all share
//! one tokenizer handle so that windows detokenize into exactly the text the
//! backend scores. The default implementation splits on Unicode whitespace
//! and detokenizes by joining with single spaces, which round-trips any text
//! that is already single-spaced.

/// A total tokenizer: never fails on valid unicode.
pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &'static str;

    /// Split text into surface tokens. Must return no tokens for
    /// whitespace-only input.
    fn tokenize(&self, text: &str) -> Vec<String>;

    /// Inverse of [`Tokenizer::tokenize`] up to whitespace normalization.
    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.join(" ")
    }
}

/// Splits on Unicode whitespace; detokenizes with single spaces.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &'static str {
        "whitespace"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_owned).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_any_whitespace() {
        let tok = WhitespaceTokenizer;
        assert_eq!(
            tok.tokenize("a  b\tc\nd"),
            vec!["a".to_string(), "b".into(), "c".into(), "d".into()]
        );
        assert!(tok.tokenize("   \n\t ").is_empty());
        assert!(tok.tokenize("").is_empty());
    }

    #[test]
    fn detokenize_round_trips_single_spaced_text() {
        let tok = WhitespaceTokenizer;
        let text = "i feel so lost after my divorce";
        let tokens = tok.tokenize(text);
        assert_eq!(tok.detokenize(&tokens), text);
    }
}
