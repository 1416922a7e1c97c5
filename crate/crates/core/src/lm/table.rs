use std::collections::HashMap;
use std::sync::Arc;

use crate::data::{tokenize, IntentLabel, LabelSet, Token, Utterance, Vocabulary, MASK};
use crate::error::{Error, Result};

use super::dist::{MaskedDistribution, PrefixDistribution, TokenDistribution};
use super::{CausalLm, ClassConditionalLm, MaskedLm};

type PrefixKey = (Vec<Token>, Option<usize>);
type MaskedKey = (Vec<Token>, usize);

/// Language model backed by explicit probability tables.
///
/// Listed entries get exactly the stated probability; the remaining mass is
/// spread uniformly over the other vocabulary entries. Contexts without a
/// table get the uniform distribution. Useful as a deterministic stand-in
/// for any of the three oracles.
#[derive(Clone, Debug)]
pub struct TabulatedLm {
    vocab: Arc<Vocabulary>,
    labels: LabelSet,
    prefix: HashMap<PrefixKey, Vec<f64>>,
    masked: HashMap<MaskedKey, Vec<f64>>,
}

#[derive(Debug)]
pub struct TabulatedLmBuilder {
    vocab: Arc<Vocabulary>,
    labels: LabelSet,
    prefix: Vec<(PrefixKey, Vec<(Token, f64)>)>,
    masked: Vec<(MaskedKey, Vec<(Token, f64)>)>,
    error: Option<Error>,
}

fn words(text: &str) -> Result<Vec<Token>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(tokenize(text)?.tokens().to_vec())
}

fn mask_token() -> Token {
    Token::new(MASK).expect("mask surface is a valid token")
}

impl TabulatedLmBuilder {
    /// Vocabulary of `words` (plus specials) and labels in the given order.
    pub fn new(words: &[&str], labels: &[&str]) -> Self {
        let toks = words.iter().filter_map(|w| Token::new(*w).ok());
        TabulatedLmBuilder {
            vocab: Arc::new(Vocabulary::from_tokens(toks)),
            labels: LabelSet::ordered(labels.iter().map(|s| s.to_string()).collect()).unwrap_or_else(|_| LabelSet::new(std::iter::empty())),
            prefix: Vec::new(),
            masked: Vec::new(),
            error: None,
        }
    }

    fn entries(&mut self, probs: &[(&str, f64)]) -> Vec<(Token, f64)> {
        let mut out = Vec::with_capacity(probs.len());
        for (w, p) in probs {
            match Token::new(*w) {
                Ok(t) => out.push((t, *p)),
                Err(e) => {
                    self.error.get_or_insert(e);
                }
            }
        }
        out
    }

    /// Next-word table after `prefix` for `label` (`None` for the background role).
    pub fn prefix(mut self, prefix: &str, label: Option<&str>, probs: &[(&str, f64)]) -> Self {
        let label = match label.map(|l| self.labels.by_name(l).ok_or_else(|| Error::UnknownIntent(l.to_string()))) {
            Some(Ok(l)) => Some(l.index),
            Some(Err(e)) => {
                self.error.get_or_insert(e);
                return self;
            }
            None => None,
        };
        match words(prefix) {
            Ok(p) => {
                let e = self.entries(probs);
                self.prefix.push(((p, label), e));
            }
            Err(e) => {
                self.error.get_or_insert(e);
            }
        }
        self
    }

    /// Table for the word at `position` of `text` given both contexts.
    pub fn masked(mut self, text: &str, position: usize, probs: &[(&str, f64)]) -> Self {
        match words(text) {
            Ok(mut w) if position < w.len() => {
                w[position] = mask_token();
                let e = self.entries(probs);
                self.masked.push(((w, position), e));
            }
            Ok(_) => {
                self.error.get_or_insert(Error::Precondition(format!("position {position} outside `{text}`")));
            }
            Err(e) => {
                self.error.get_or_insert(e);
            }
        }
        self
    }

    pub fn build(self) -> Result<TabulatedLm> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let vocab = self.vocab;
        let table = |entries: Vec<(Token, f64)>| -> Result<Vec<f64>> {
            let mut probs = vec![None; vocab.len()];
            for (t, p) in entries {
                let id = vocab.get(&t).ok_or_else(|| Error::Precondition(format!("`{}` not in the table vocabulary", t.as_str())))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Precondition(format!("probability {p} outside [0, 1]")));
                }
                probs[id as usize] = Some(p);
            }
            let listed: f64 = probs.iter().flatten().sum();
            let free = probs.iter().filter(|p| p.is_none()).count();
            let rest = 1.0 - listed;
            if rest < -1e-12 || (free == 0 && rest.abs() > 1e-9) {
                return Err(Error::Precondition(format!("table probabilities sum to {listed}")));
            }
            let fill = if free == 0 { 0.0 } else { rest.max(0.0) / free as f64 };
            Ok(probs.into_iter().map(|p| p.unwrap_or(fill).ln()).collect())
        };
        let mut prefix = HashMap::new();
        for (k, e) in self.prefix {
            prefix.insert(k, table(e)?);
        }
        let mut masked = HashMap::new();
        for (k, e) in self.masked {
            masked.insert(k, table(e)?);
        }
        Ok(TabulatedLm { vocab, labels: self.labels, prefix, masked })
    }
}

impl TabulatedLm {
    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn lookup(&self, v: Option<&Vec<f64>>) -> TokenDistribution {
        let lp = match v {
            Some(v) => v.clone(),
            None => vec![-(self.vocab.len() as f64).ln(); self.vocab.len()],
        };
        TokenDistribution::dense(self.vocab.clone(), lp)
    }
}

impl ClassConditionalLm for TabulatedLm {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn prefix_distribution(&self, prefix: &[Token], label: &IntentLabel) -> Result<PrefixDistribution> {
        if label.index >= self.labels.len() {
            return Err(Error::UnknownIntent(label.name.clone()));
        }
        Ok(self.lookup(self.prefix.get(&(prefix.to_vec(), Some(label.index)))))
    }
}

impl CausalLm for TabulatedLm {
    fn prefix_distribution(&self, prefix: &[Token]) -> Result<PrefixDistribution> {
        Ok(self.lookup(self.prefix.get(&(prefix.to_vec(), None))))
    }
}

impl MaskedLm for TabulatedLm {
    fn masked_distribution(&self, utterance: &Utterance, position: usize) -> Result<MaskedDistribution> {
        if position >= utterance.len() {
            return Err(Error::Precondition(format!("mask position {position} outside utterance of length {}", utterance.len())));
        }
        let mut key = utterance.tokens().to_vec();
        key[position] = mask_token();
        Ok(self.lookup(self.masked.get(&(key, position))))
    }
}
