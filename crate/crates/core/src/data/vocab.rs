use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use super::{LabeledUtterance, Token, Utterance};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const MASK: &str = "<mask>";

/// Bidirectional token/id map. Ids 0..4 are the specials UNK, BOS, EOS,
/// MASK; regular tokens follow in lexicographic order.
///
/// Special surfaces contain `<`/`>`, which the tokenizer always detaches,
/// so they can never collide with corpus tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    ids: HashMap<Token, u32>,
}

impl Vocabulary {
    pub const UNK_ID: u32 = 0;
    pub const BOS_ID: u32 = 1;
    pub const EOS_ID: u32 = 2;
    pub const MASK_ID: u32 = 3;
    pub const NUM_SPECIALS: usize = 4;

    /// Builds a vocabulary from regular tokens; duplicates and specials are
    /// dropped and the order is normalized.
    pub fn from_tokens<I: IntoIterator<Item = Token>>(tokens: I) -> Self {
        let mut regular: Vec<Token> = tokens
            .into_iter()
            .filter(|t| !Self::is_special_surface(t.as_str()))
            .collect();
        regular.sort();
        regular.dedup();
        let mut all: Vec<Token> = [UNK, BOS, EOS, MASK]
            .iter()
            .map(|s| Token::new(*s).expect("special surfaces are valid tokens"))
            .collect();
        all.extend(regular);
        let ids = all.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens: all, ids }
    }

    /// Counts token frequencies over `utterances` and keeps those seen at
    /// least `min_count` times.
    pub fn from_utterances<'a, I>(utterances: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a Utterance>,
    {
        let mut counts: BTreeMap<&Token, usize> = BTreeMap::new();
        for u in utterances {
            for t in u.tokens() {
                *counts.entry(t).or_default() += 1;
            }
        }
        let min_count = min_count.max(1);
        Self::from_tokens(counts.into_iter().filter(|&(_, c)| c >= min_count).map(|(t, _)| t.clone()))
    }

    fn is_special_surface(s: &str) -> bool {
        matches!(s, UNK | BOS | EOS | MASK)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or [`Self::UNK_ID`] when it is out of vocabulary.
    pub fn id_of(&self, token: &Token) -> u32 {
        self.ids.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn get(&self, token: &Token) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < Self::NUM_SPECIALS
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Regular (non-special) tokens in id order.
    pub fn regular_tokens(&self) -> &[Token] {
        &self.tokens[Self::NUM_SPECIALS..]
    }

    pub fn encode(&self, utterance: &Utterance) -> Vec<u32> {
        utterance.tokens().iter().map(|t| self.id_of(t)).collect()
    }

    pub fn encode_tokens(&self, tokens: &[Token]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_of(t)).collect()
    }

    /// SHA-256 over the ordered token list, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_str().as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Vocabulary over the utterances of a labeled dataset.
pub fn build_vocab(data: &[LabeledUtterance], min_count: usize) -> Vocabulary {
    Vocabulary::from_utterances(data.iter().map(|d| &d.utterance), min_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{tokenize, IntentLabel};

    fn labeled(texts: &[&str]) -> Vec<LabeledUtterance> {
        texts
            .iter()
            .map(|t| LabeledUtterance::new(tokenize(t).unwrap(), IntentLabel::new("x", 0)))
            .collect()
    }

    fn regular(v: &Vocabulary) -> Vec<&str> {
        v.regular_tokens().iter().map(Token::as_str).collect()
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let v = build_vocab(&labeled(&["a b", "a c"]), 2);
        assert_eq!(regular(&v), ["a"]);
        let b = Token::new("b").unwrap();
        assert_eq!(v.id_of(&b), Vocabulary::UNK_ID);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let v = build_vocab(&labeled(&["a b", "a c"]), 1);
        assert_eq!(regular(&v), ["a", "b", "c"]);
    }

    #[test]
    fn degenerate_corpus_keeps_specials() {
        let v = build_vocab(&labeled(&["a b"]), 5);
        assert_eq!(v.len(), Vocabulary::NUM_SPECIALS);
        let v = build_vocab(&[], 1);
        assert_eq!(v.len(), Vocabulary::NUM_SPECIALS);
        assert_eq!(v.token_of(Vocabulary::MASK_ID).unwrap().as_str(), MASK);
    }

    #[test]
    fn ids_round_trip() {
        let v = build_vocab(&labeled(&["how much did i spend"]), 1);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id_of(t) as usize, i);
        }
    }
}
