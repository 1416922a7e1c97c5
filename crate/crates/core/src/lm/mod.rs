//! Probability oracles over words: a class-conditional causal LM
//! `p(w_j | w_<j, y)`, a background causal LM `p(w_j | w_<j)` and a masked
//! LM `p(c | w_<t, w_>t)`.
//!
//! Each oracle is a trait so the built-in recurrent models, the tabulated
//! test doubles and the HTTP client are interchangeable. All log
//! probabilities are natural logs.

mod causal;
mod dist;
mod masked;
mod remote;
mod rnn;
mod table;
mod train;

pub use causal::{RnnLm, RnnLmShape};
pub use dist::{label_prior, LabelPrior, MaskedDistribution, PrefixDistribution, TokenDistribution};
pub use masked::{BiRnnMaskedLm, MaskedLmShape};
pub use remote::{Health, LogProbResponse, MaskedRequest, PrefixRequest, RemoteLm};
pub use table::{TabulatedLm, TabulatedLmBuilder};
pub use train::LmTrainConfig;

use crate::data::{IntentLabel, LabelSet, Token, Utterance};
use crate::error::Result;
use crate::scalar::logsumexp;

/// `p(w_j | w_<j, y)`.
pub trait ClassConditionalLm: Send + Sync {
    fn labels(&self) -> &LabelSet;

    /// Next-token distribution after `prefix` (BOS is implied).
    fn prefix_distribution(&self, prefix: &[Token], label: &IntentLabel) -> Result<PrefixDistribution>;

    /// `log p(w_j | w_<j, y)` for every position `j` of `utterance`.
    fn token_log_probs(&self, utterance: &Utterance, label: &IntentLabel) -> Result<Vec<f64>> {
        let tokens = utterance.tokens();
        (0..tokens.len())
            .map(|j| Ok(self.prefix_distribution(&tokens[..j], label)?.log_prob(&tokens[j])))
            .collect()
    }

    /// Label mixture `Σ_y p(y) p(· | w_<j, y)`.
    fn mixture_distribution(&self, prefix: &[Token], prior: &LabelPrior) -> Result<PrefixDistribution> {
        let mut parts = Vec::with_capacity(prior.len());
        for label in self.labels().iter() {
            let p = prior.prob(label.index);
            if p > 0.0 {
                parts.push((p.ln(), self.prefix_distribution(prefix, &label)?));
            }
        }
        Ok(TokenDistribution::mixture(&parts))
    }
}

/// `p(w_j | w_<j)`.
pub trait CausalLm: Send + Sync {
    fn prefix_distribution(&self, prefix: &[Token]) -> Result<PrefixDistribution>;

    fn token_log_probs(&self, utterance: &Utterance) -> Result<Vec<f64>> {
        let tokens = utterance.tokens();
        (0..tokens.len())
            .map(|j| Ok(self.prefix_distribution(&tokens[..j])?.log_prob(&tokens[j])))
            .collect()
    }
}

/// `p(c | w_<t, w_>t)`.
pub trait MaskedLm: Send + Sync {
    fn masked_distribution(&self, utterance: &Utterance, position: usize) -> Result<MaskedDistribution>;
}

/// `log Σ_y p(y) p(token | prefix, y)` without materializing the mixture.
pub fn mixture_log_prob<L: ClassConditionalLm + ?Sized>(
    lm: &L,
    prefix: &[Token],
    token: &Token,
    prior: &LabelPrior,
) -> Result<f64> {
    let mut terms = Vec::with_capacity(prior.len());
    for label in lm.labels().iter() {
        let p = prior.prob(label.index);
        if p > 0.0 {
            terms.push(p.ln() + lm.prefix_distribution(prefix, &label)?.log_prob(token));
        }
    }
    Ok(logsumexp(&terms))
}
