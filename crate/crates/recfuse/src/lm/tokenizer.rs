//! Whole-word tokenizer over the prompt corpus. Reserved tokens (padding,
//! sequence marks, the injection placeholder, and the two answer words) hold
//! fixed ids; the rest of the vocabulary is frequency-then-lexicographic.

use crate::text::{split_tokens, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, PLACEHOLDER_TOKEN, UNK_TOKEN};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const YES_TOKEN: &str = "Yes";
pub const NO_TOKEN: &str = "No";

pub const RESERVED: [&str; 7] = [
    PAD_TOKEN,
    BOS_TOKEN,
    EOS_TOKEN,
    UNK_TOKEN,
    PLACEHOLDER_TOKEN,
    YES_TOKEN,
    NO_TOKEN,
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tokenizer {
    index: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Tokenizer {
    /// Deterministic vocabulary over the corpus: reserved tokens first, then
    /// corpus tokens by descending frequency, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_vocab: Option<usize>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for tok in split_tokens(text.as_ref()) {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(usize, String)> =
            counts.into_iter().map(|(t, c)| (c, t)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let cap = max_vocab
            .map(|m| m.saturating_sub(RESERVED.len()))
            .unwrap_or(usize::MAX);

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(cap).map(|(_, t)| t));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Tokenizer { index, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn unk_id(&self) -> usize {
        self.id(UNK_TOKEN).unwrap()
    }

    pub fn bos_id(&self) -> usize {
        self.id(BOS_TOKEN).unwrap()
    }

    pub fn placeholder_id(&self) -> usize {
        self.id(PLACEHOLDER_TOKEN).unwrap()
    }

    pub fn yes_id(&self) -> usize {
        self.id(YES_TOKEN).unwrap()
    }

    pub fn no_id(&self) -> usize {
        self.id(NO_TOKEN).unwrap()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Whole-word encoding; unseen tokens map to the unknown id.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_tokens(text)
            .into_iter()
            .map(|t| self.id(&t).unwrap_or_else(|| self.unk_id()))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let toks: Vec<String> = ids
            .iter()
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect();
        crate::text::join_tokens(&toks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_tokens_are_single_fixed_ids() {
        let tk = Tokenizer::build(&["hello world"], None);
        assert_eq!(tk.id(YES_TOKEN), Some(5));
        assert_eq!(tk.id(NO_TOKEN), Some(6));
        assert_eq!(tk.encode("Yes"), vec![5]);
        assert_eq!(tk.encode("<ExpertEmb>"), vec![tk.placeholder_id()]);
    }

    #[test]
    fn round_trip_in_vocabulary_text() {
        let tk = Tokenizer::build(&["the movie was great . the end"], None);
        let text = "the movie was great";
        let ids = tk.encode(text);
        assert_eq!(tk.decode(&ids), text);
    }

    #[test]
    fn same_corpus_same_vocabulary() {
        let corpus = ["a b c a", "b a d"];
        let a = Tokenizer::build(&corpus, None);
        let b = Tokenizer::build(&corpus, None);
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let tk = Tokenizer::build(&["b b a a c"], None);
        // a and b tie at 2, a wins lexicographically; c trails
        let base = RESERVED.len();
        assert_eq!(tk.id("a"), Some(base));
        assert_eq!(tk.id("b"), Some(base + 1));
        assert_eq!(tk.id("c"), Some(base + 2));
    }

    #[test]
    fn oov_maps_to_unk_and_cap_applies() {
        let tk = Tokenizer::build(&["x y z"], Some(RESERVED.len() + 2));
        assert_eq!(tk.len(), RESERVED.len() + 2);
        assert_eq!(tk.encode("qqq"), vec![tk.unk_id()]);
    }
}
