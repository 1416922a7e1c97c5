use std::collections::BTreeMap;
use std::sync::Arc;

use crate::data::{LabelSet, LabeledUtterance, Token, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::logsumexp;

/// Log-probabilities over the tokens of a backend vocabulary.
///
/// Lookups of tokens outside the support fall back to the residual mass of a
/// truncated distribution when known, otherwise to the UNK entry, otherwise
/// to negative infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    support: Arc<Vocabulary>,
    log_probs: Vec<f64>,
    truncated: bool,
    residual: Option<f64>,
}

pub type PrefixDistribution = TokenDistribution;
pub type MaskedDistribution = TokenDistribution;

impl TokenDistribution {
    /// Dense distribution indexed by vocabulary id.
    pub fn dense(support: Arc<Vocabulary>, log_probs: Vec<f64>) -> Self {
        debug_assert_eq!(support.len(), log_probs.len());
        TokenDistribution { support, log_probs, truncated: false, residual: None }
    }

    /// Builds a distribution from explicit `(token, log p)` pairs. Special
    /// surfaces keep their reserved ids; specials that are not listed get
    /// zero probability.
    pub fn from_pairs(pairs: &BTreeMap<Token, f64>, truncated: bool, residual: Option<f64>) -> Self {
        let support = Arc::new(Vocabulary::from_tokens(pairs.keys().cloned()));
        let log_probs = support
            .tokens()
            .iter()
            .map(|t| pairs.get(t).copied().unwrap_or(f64::NEG_INFINITY))
            .collect();
        TokenDistribution { support, log_probs, truncated, residual }
    }

    /// `log Σ_i exp(w_i) p_i(·)` over distributions sharing one support.
    pub(crate) fn mixture(parts: &[(f64, TokenDistribution)]) -> Self {
        let Some((_, first)) = parts.first() else {
            return TokenDistribution::dense(Arc::new(Vocabulary::from_tokens([])), vec![f64::NEG_INFINITY; Vocabulary::NUM_SPECIALS]);
        };
        let mut terms = vec![0.0; parts.len()];
        let log_probs = (0..first.log_probs.len())
            .map(|i| {
                let token = &first.support.tokens()[i];
                for (slot, (w, d)) in terms.iter_mut().zip(parts) {
                    *slot = w + if Arc::ptr_eq(&d.support, &first.support) { d.log_probs[i] } else { d.log_prob(token) };
                }
                logsumexp(&terms)
            })
            .collect();
        TokenDistribution {
            support: first.support.clone(),
            log_probs,
            truncated: parts.iter().any(|(_, d)| d.truncated),
            residual: None,
        }
    }

    pub fn support(&self) -> &Vocabulary {
        &self.support
    }

    pub fn support_arc(&self) -> &Arc<Vocabulary> {
        &self.support
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// Exact entry for `token`, if it is in the support.
    pub fn get(&self, token: &Token) -> Option<f64> {
        self.support.get(token).map(|id| self.log_probs[id as usize])
    }

    /// Log-probability of `token`, with the fallbacks described on the type.
    pub fn log_prob(&self, token: &Token) -> f64 {
        if let Some(v) = self.get(token) {
            return v;
        }
        if let Some(r) = self.residual {
            return r;
        }
        self.log_probs[Vocabulary::UNK_ID as usize]
    }

    pub fn log_prob_id(&self, id: u32) -> f64 {
        self.log_probs[id as usize]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, f64)> + '_ {
        self.support.tokens().iter().zip(self.log_probs.iter().copied())
    }

    /// `Σ exp(log p)` over the support.
    pub fn total_mass(&self) -> f64 {
        self.log_probs.iter().map(|v| v.exp()).sum()
    }

    /// Most probable token; ties resolve to the lower id.
    pub fn argmax(&self) -> (&Token, f64) {
        let mut best = 0;
        for (i, &v) in self.log_probs.iter().enumerate() {
            if v > self.log_probs[best] {
                best = i;
            }
        }
        (&self.support.tokens()[best], self.log_probs[best])
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.iter().filter(|(_, v)| v.is_finite()).map(|(t, v)| (t.as_str().to_string(), v)).collect()
    }
}

/// Training-set label ratios `p(y) = count(y) / N`, indexed by label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelPrior {
    labels: LabelSet,
    p: Vec<f64>,
}

impl LabelPrior {
    pub fn new(labels: LabelSet, p: Vec<f64>) -> Result<Self> {
        if p.len() != labels.len() {
            return Err(Error::Precondition(format!("{} probabilities for {} labels", p.len(), labels.len())));
        }
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition("label prior must be a probability vector".into()));
        }
        Ok(LabelPrior { labels, p })
    }

    pub fn uniform(labels: LabelSet) -> Self {
        let k = labels.len();
        LabelPrior { labels, p: vec![1.0 / k as f64; k] }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.p[index]
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn by_name(&self) -> BTreeMap<&str, f64> {
        self.labels.names().iter().map(String::as_str).zip(self.p.iter().copied()).collect()
    }
}

pub fn label_prior(train: &[LabeledUtterance], labels: &LabelSet) -> Result<LabelPrior> {
    if train.is_empty() {
        return Err(Error::Precondition("label prior needs a nonempty training set".into()));
    }
    let mut counts = vec![0usize; labels.len()];
    for row in train {
        if row.label.index >= labels.len() {
            return Err(Error::UnknownIntent(row.label.name.clone()));
        }
        counts[row.label.index] += 1;
    }
    let n = train.len() as f64;
    Ok(LabelPrior { labels: labels.clone(), p: counts.into_iter().map(|c| c as f64 / n).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    fn rows(spec: &[(&str, &str)], labels: &LabelSet) -> Vec<LabeledUtterance> {
        spec.iter()
            .map(|(t, l)| LabeledUtterance::new(tokenize(t).unwrap(), labels.by_name(l).unwrap()))
            .collect()
    }

    #[test]
    fn prior_counts() {
        let labels = LabelSet::new(["a".to_string(), "b".to_string()]);
        let p = label_prior(&rows(&[("x", "a"), ("y", "a"), ("z", "a"), ("w", "b")], &labels), &labels).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);
        let p = label_prior(&rows(&[("x", "a"), ("w", "b")], &labels), &labels).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        assert!(label_prior(&[], &labels).is_err());
    }

    #[test]
    fn pairs_fall_back_to_residual_then_unk() {
        let t = |s: &str| Token::new(s).unwrap();
        let mut pairs = BTreeMap::new();
        pairs.insert(t("a"), 0.5f64.ln());
        pairs.insert(t("<unk>"), 0.5f64.ln());
        let d = TokenDistribution::from_pairs(&pairs, false, None);
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
        assert_eq!(d.log_prob(&t("zzz")), 0.5f64.ln());
        let d = TokenDistribution::from_pairs(&pairs, true, Some(-9.0));
        assert_eq!(d.log_prob(&t("zzz")), -9.0);
        assert_eq!(d.argmax().0.as_str(), "<unk>");
    }
}
