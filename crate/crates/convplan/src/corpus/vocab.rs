use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::tokenizer::Tokenizer;
use super::types::{DialogueSample, NULL_TOPIC};
use super::CorpusError;

/// Reserved tokens, pinned to ids 0..=8 in this order.
pub const RESERVED_TOKENS: [&str; 9] = [
    "[PAD]", "[UNK]", "[BOS]", "[EOS]", "[SEP]", "[CLS]", "[A]", "[T]", "[NULL]",
];

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;
pub const CLS: usize = 5;
pub const ACT: usize = 6;
pub const TOP: usize = 7;
pub const NULL: usize = 8;

/// Role-marker tokens injected into history token streams.
pub const USER_MARKER: &str = "u:";
pub const SYSTEM_MARKER: &str = "s:";

/// Bijective token <-> id map with fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a token, falling back to `[UNK]`.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn id_exact(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = std::fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let f = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in BufReader::new(f).lines() {
            tokens.push(line?);
        }
        for (i, expected) in RESERVED_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*expected) {
                return Err(CorpusError::Schema {
                    line: i + 1,
                    message: format!("vocabulary must start with reserved token {expected}"),
                });
            }
        }
        Ok(Vocab::from_tokens(tokens))
    }
}

/// Count every token surface the model sees: utterances (with role
/// markers), actions, topics, profile entries and knowledge triples.
fn collect_counts(samples: &[DialogueSample], tok: &Tokenizer) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut bump = |tokens: Vec<String>, counts: &mut HashMap<String, u64>| {
        for t in tokens {
            *counts.entry(t).or_insert(0) += 1;
        }
    };
    for s in samples {
        for turn in &s.turns {
            bump(tok.tokenize(&turn.utterance), &mut counts);
        }
        for step in &s.plans {
            bump(tok.tokenize(&step.action), &mut counts);
            if step.topic != NULL_TOPIC {
                bump(tok.tokenize(&step.topic), &mut counts);
            }
        }
        for (k, v) in &s.profile.entries {
            bump(tok.tokenize(k), &mut counts);
            bump(tok.tokenize(v), &mut counts);
        }
        for t in &s.knowledge {
            bump(tok.tokenize(&t.subject), &mut counts);
            bump(tok.tokenize(&t.relation), &mut counts);
            bump(tok.tokenize(&t.object), &mut counts);
        }
    }
    counts
}

/// Build the vocabulary: reserved ids 0..=8, then the role markers, then
/// corpus tokens ordered by descending frequency with lexicographic
/// tie-breaks (deterministic across runs).
pub fn build_vocab(samples: &[DialogueSample], tok: &Tokenizer, min_count: u64) -> Vocab {
    let counts = collect_counts(samples, tok);
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(t, c)| {
            *c >= min_count
                && !RESERVED_TOKENS.contains(&t.as_str())
                && t != USER_MARKER
                && t != SYSTEM_MARKER
        })
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.push(USER_MARKER.to_string());
    tokens.push(SYSTEM_MARKER.to_string());
    tokens.extend(entries.into_iter().map(|(t, _)| t));
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenizer::TokenizeMode;
    use crate::corpus::types::*;

    fn sample() -> DialogueSample {
        DialogueSample {
            id: "s1".into(),
            profile: UserProfile {
                entries: vec![("name".into(), "ann".into())],
            },
            knowledge: vec![KnowledgeTriple::new("a", "rel", "b")],
            turns: vec![
                Turn {
                    role: Role::System,
                    utterance: "hello hello there".into(),
                },
                Turn {
                    role: Role::User,
                    utterance: "hi".into(),
                },
            ],
            plans: vec![PlanStep::new("greet", NULL_TOPIC)],
            target: None,
        }
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = build_vocab(&[sample()], &Tokenizer::new(TokenizeMode::Whitespace), 1);
        for (i, t) in RESERVED_TOKENS.iter().enumerate() {
            assert_eq!(v.id(t), i);
            assert_eq!(v.token(i), *t);
        }
        assert_eq!(v.id(USER_MARKER), 9);
        assert_eq!(v.id(SYSTEM_MARKER), 10);
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = build_vocab(&[sample()], &Tokenizer::new(TokenizeMode::Whitespace), 1);
        // "hello" occurs twice, so it precedes all single-occurrence tokens.
        assert_eq!(v.token(11), "hello");
        // Determinism: rebuilding yields the identical map.
        let v2 = build_vocab(&[sample()], &Tokenizer::new(TokenizeMode::Whitespace), 1);
        assert_eq!(v, v2);
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        let v = build_vocab(&[sample()], &Tokenizer::new(TokenizeMode::Whitespace), 1);
        assert_eq!(v.id("zzz-not-here"), UNK);
    }

    #[test]
    fn save_load_roundtrip() {
        let v = build_vocab(&[sample()], &Tokenizer::new(TokenizeMode::Whitespace), 1);
        let dir = std::env::temp_dir().join("convplan-vocab-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(v, loaded);
    }
}
