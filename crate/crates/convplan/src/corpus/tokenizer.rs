use serde::{Deserialize, Serialize};

/// Tokenization mode, configured once per corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizeMode {
    /// Every non-space character is a token (CJK-appropriate).
    Char,
    /// Runs of whitespace separate tokens.
    #[default]
    Whitespace,
}

/// Splits text into tokens and joins token runs back into strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub mode: TokenizeMode,
}

impl Tokenizer {
    pub fn new(mode: TokenizeMode) -> Self {
        Tokenizer { mode }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        match self.mode {
            TokenizeMode::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(|c| c.to_string())
                .collect(),
            TokenizeMode::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        }
    }

    /// Inverse of `tokenize` on canonical strings: char mode concatenates,
    /// whitespace mode joins with single spaces.
    pub fn join(&self, tokens: &[String]) -> String {
        match self.mode {
            TokenizeMode::Char => tokens.concat(),
            TokenizeMode::Whitespace => tokens.join(" "),
        }
    }
}

/// Collapse whitespace runs and trim: the canonical form used for string
/// matching and round-trips.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_mode_drops_spaces() {
        let t = Tokenizer::new(TokenizeMode::Char);
        assert_eq!(t.tokenize("ab c"), vec!["a", "b", "c"]);
    }

    #[test]
    fn whitespace_mode_collapses_runs() {
        let t = Tokenizer::new(TokenizeMode::Whitespace);
        assert_eq!(t.tokenize("a b  c"), vec!["a", "b", "c"]);
    }

    #[test]
    fn char_mode_counts_cjk_chars() {
        let t = Tokenizer::new(TokenizeMode::Char);
        assert_eq!(t.tokenize("麦兜菠").len(), 3);
    }

    #[test]
    fn join_inverts_tokenize_on_canonical_strings() {
        let t = Tokenizer::new(TokenizeMode::Whitespace);
        let s = "McDull, Prince de la Bun";
        assert_eq!(t.join(&t.tokenize(s)), s);

        let c = Tokenizer::new(TokenizeMode::Char);
        assert_eq!(c.join(&c.tokenize("麦兜")), "麦兜");
    }
}
