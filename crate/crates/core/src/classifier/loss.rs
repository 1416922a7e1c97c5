//! Training objectives: cross-entropy, the squared-hinge energy regularizer
//! (plain and α-weighted), and the KL-to-uniform confidence loss.
//!
//! Every objective is a weighted sum of four per-example terms, each a
//! function of the logits only, averaged per batch:
//!
//! ```text
//! L = w_ce   · mean_IND  CE(f, y)
//!   + w_in   · mean_IND  max(0, E − m_in)²
//!   + w_out  · mean_OOD  α · max(0, m_out − E)²
//!   + w_kl   · mean_OOD  α · KL(U ‖ softmax(f))
//! ```
//!
//! Terms with weight zero are skipped entirely, so e.g. `λ = 0` reproduces
//! plain cross-entropy bit for bit.

use crate::data::{LabeledUtterance, Utterance};
use crate::energy::{energy_of, DetectorConfig};
use crate::error::{Error, Result};
use crate::scalar::{logsumexp, Scalar};

use super::model::{Classifier, ClassifierGrad, ClassifierParams};

/// `CE = logsumexp(f) − f_y`, with gradient `softmax(f) − onehot(y)`.
pub fn cross_entropy_term<S: Scalar>(logits: &[S], label: usize) -> (S, Vec<S>) {
    let lse = logsumexp(logits);
    let mut g: Vec<S> = logits.iter().map(|&f| (f - lse).exp()).collect();
    g[label] = g[label] - S::one();
    (lse - logits[label], g)
}

fn tempered_softmax<S: Scalar>(logits: &[S], t: S) -> Vec<S> {
    let scaled: Vec<S> = logits.iter().map(|&f| f / t).collect();
    let lse = logsumexp(&scaled);
    scaled.iter().map(|&x| (x - lse).exp()).collect()
}

/// `max(0, E − m_in)²`; `∂E/∂f = −softmax(f/T)`.
pub fn hinge_in_term<S: Scalar>(logits: &[S], t: S, m_in: S) -> (S, Vec<S>) {
    let e = energy_of(logits, t);
    let gap = (e - m_in).max(S::zero());
    if gap == S::zero() {
        return (S::zero(), vec![S::zero(); logits.len()]);
    }
    let two = S::lit(2.0);
    let p = tempered_softmax(logits, t);
    (gap * gap, p.into_iter().map(|pk| -two * gap * pk).collect())
}

/// `max(0, m_out − E)²`.
pub fn hinge_out_term<S: Scalar>(logits: &[S], t: S, m_out: S) -> (S, Vec<S>) {
    let e = energy_of(logits, t);
    let gap = (m_out - e).max(S::zero());
    if gap == S::zero() {
        return (S::zero(), vec![S::zero(); logits.len()]);
    }
    let two = S::lit(2.0);
    let p = tempered_softmax(logits, t);
    (gap * gap, p.into_iter().map(|pk| two * gap * pk).collect())
}

/// `KL(U ‖ softmax(f)) = −ln K − mean(f) + logsumexp(f)`.
pub fn kl_uniform_term<S: Scalar>(logits: &[S]) -> (S, Vec<S>) {
    let k = S::lit(logits.len() as f64);
    let lse = logsumexp(logits);
    let mean = logits.iter().fold(S::zero(), |a, &b| a + b) / k;
    let value = lse - mean - k.ln();
    let inv_k = S::one() / k;
    (value, logits.iter().map(|&f| (f - lse).exp() - inv_k).collect())
}

/// Term weights and energy hyperparameters of an objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec<S> {
    pub ce: S,
    pub hinge_in: S,
    pub hinge_out: S,
    pub kl: S,
    pub temperature: S,
    pub m_in: S,
    pub m_out: S,
}

impl<S: Scalar> LossSpec<S> {
    fn zero() -> Self {
        LossSpec {
            ce: S::zero(),
            hinge_in: S::zero(),
            hinge_out: S::zero(),
            kl: S::zero(),
            temperature: S::one(),
            m_in: S::lit(-8.0),
            m_out: S::lit(-5.0),
        }
    }

    pub fn cross_entropy() -> Self {
        LossSpec { ce: S::one(), ..Self::zero() }
    }

    /// The energy regularizer alone.
    pub fn energy_reg(m_in: S, m_out: S, temperature: S) -> Self {
        LossSpec { hinge_in: S::one(), hinge_out: S::one(), temperature, m_in, m_out, ..Self::zero() }
    }

    /// Cross-entropy plus `λ ·` energy regularizer.
    pub fn total(cfg: &DetectorConfig) -> Self {
        let lambda = S::lit(cfg.lambda);
        LossSpec {
            ce: S::one(),
            hinge_in: lambda,
            hinge_out: lambda,
            kl: S::zero(),
            temperature: S::lit(cfg.temperature),
            m_in: S::lit(cfg.m_in),
            m_out: S::lit(cfg.m_out),
        }
    }

    /// Cross-entropy plus `β ·` KL-to-uniform on OOD.
    pub fn confidence(beta: S) -> Self {
        LossSpec { ce: S::one(), kl: beta, ..Self::zero() }
    }

    pub fn uses_ood(&self) -> bool {
        self.hinge_out != S::zero() || self.kl != S::zero()
    }
}

/// In-distribution example as token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInd {
    pub ids: Vec<u32>,
    pub label: usize,
}

/// Auxiliary OOD example with its weight α.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedOod<S> {
    pub ids: Vec<u32>,
    pub alpha: S,
}

/// Value of the objective on one batch, optionally accumulating its gradient.
/// With `head_only`, only head gradients are accumulated.
pub fn objective<S: Scalar>(
    params: &ClassifierParams<S>,
    spec: &LossSpec<S>,
    ind: &[EncodedInd],
    ood: &[EncodedOod<S>],
    mut grad: Option<(&mut ClassifierGrad<S>, bool)>,
) -> S {
    let mut total = S::zero();
    let zero = S::zero();
    let ind_active = !ind.is_empty() && (spec.ce != zero || spec.hinge_in != zero);
    if ind_active {
        let n = S::lit(ind.len() as f64);
        for ex in ind {
            let x = params.pool(&ex.ids);
            let cache = params.head.forward(&x);
            let mut value = S::zero();
            let mut dlogits = vec![S::zero(); cache.logits.len()];
            if spec.ce != zero {
                let (v, g) = cross_entropy_term(&cache.logits, ex.label);
                value = value + spec.ce * v;
                accumulate(&mut dlogits, &g, spec.ce / n);
            }
            if spec.hinge_in != zero {
                let (v, g) = hinge_in_term(&cache.logits, spec.temperature, spec.m_in);
                value = value + spec.hinge_in * v;
                accumulate(&mut dlogits, &g, spec.hinge_in / n);
            }
            total = total + value / n;
            if let Some((g, head_only)) = grad.as_mut() {
                params.backward_example(&ex.ids, &x, &cache, &dlogits, g, *head_only);
            }
        }
    }
    if !ood.is_empty() && spec.uses_ood() {
        let n = S::lit(ood.len() as f64);
        for ex in ood {
            if ex.alpha == zero {
                continue;
            }
            let x = params.pool(&ex.ids);
            let cache = params.head.forward(&x);
            let mut value = S::zero();
            let mut dlogits = vec![S::zero(); cache.logits.len()];
            if spec.hinge_out != zero {
                let (v, g) = hinge_out_term(&cache.logits, spec.temperature, spec.m_out);
                value = value + spec.hinge_out * ex.alpha * v;
                accumulate(&mut dlogits, &g, spec.hinge_out * ex.alpha / n);
            }
            if spec.kl != zero {
                let (v, g) = kl_uniform_term(&cache.logits);
                value = value + spec.kl * ex.alpha * v;
                accumulate(&mut dlogits, &g, spec.kl * ex.alpha / n);
            }
            total = total + value / n;
            if let Some((g, head_only)) = grad.as_mut() {
                if dlogits.iter().any(|&d| d != zero) {
                    params.backward_example(&ex.ids, &x, &cache, &dlogits, g, *head_only);
                }
            }
        }
    }
    total
}

fn accumulate<S: Scalar>(acc: &mut [S], g: &[S], scale: S) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a = *a + scale * b;
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::WeightOutOfRange(alpha));
    }
    Ok(())
}

fn finite<S: Scalar>(v: S, what: &'static str) -> Result<S> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}

impl<S: Scalar> Classifier<S> {
    pub fn encode_ind(&self, batch: &[LabeledUtterance]) -> Vec<EncodedInd> {
        batch.iter().map(|r| EncodedInd { ids: self.encode(&r.utterance), label: r.label.index }).collect()
    }

    /// Encodes weighted OOD utterances, rejecting weights outside `[0, 1]`.
    pub fn encode_ood(&self, batch: &[(Utterance, S)]) -> Result<Vec<EncodedOod<S>>> {
        batch
            .iter()
            .map(|(u, a)| {
                check_alpha(a.as_f64())?;
                Ok(EncodedOod { ids: self.encode(u), alpha: *a })
            })
            .collect()
    }

    fn unweighted(&self, batch: &[Utterance]) -> Vec<EncodedOod<S>> {
        batch.iter().map(|u| EncodedOod { ids: self.encode(u), alpha: S::one() }).collect()
    }

    /// Mean of `−log softmax(f(u))_y` at `T = 1`.
    pub fn ce_loss(&self, batch: &[LabeledUtterance]) -> Result<S> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let v = objective(&self.params, &LossSpec::cross_entropy(), &self.encode_ind(batch), &[], None);
        finite(v, "cross-entropy")
    }

    pub fn energy_reg_loss(
        &self,
        ind: &[LabeledUtterance],
        ood: &[Utterance],
        m_in: S,
        m_out: S,
        t: S,
    ) -> Result<S> {
        if ind.is_empty() && ood.is_empty() {
            return Err(Error::Precondition("both batches empty".into()));
        }
        let spec = LossSpec::energy_reg(m_in, m_out, t);
        finite(objective(&self.params, &spec, &self.encode_ind(ind), &self.unweighted(ood), None), "energy loss")
    }

    pub fn weighted_energy_reg_loss(
        &self,
        ind: &[LabeledUtterance],
        weighted_ood: &[(Utterance, S)],
        m_in: S,
        m_out: S,
        t: S,
    ) -> Result<S> {
        if ind.is_empty() && weighted_ood.is_empty() {
            return Err(Error::Precondition("both batches empty".into()));
        }
        let spec = LossSpec::energy_reg(m_in, m_out, t);
        let ood = self.encode_ood(weighted_ood)?;
        finite(objective(&self.params, &spec, &self.encode_ind(ind), &ood, None), "energy loss")
    }

    /// `ce_loss + λ · weighted_energy_reg_loss`.
    pub fn total_loss(
        &self,
        ind: &[LabeledUtterance],
        weighted_ood: &[(Utterance, S)],
        cfg: &DetectorConfig,
    ) -> Result<S> {
        if ind.is_empty() {
            return Err(Error::Precondition("empty IND batch".into()));
        }
        let ood = self.encode_ood(weighted_ood)?;
        finite(objective(&self.params, &LossSpec::total(cfg), &self.encode_ind(ind), &ood, None), "total loss")
    }

    /// `ce_loss + β · mean α · KL(U ‖ F(û))`.
    pub fn confidence_loss(&self, ind: &[LabeledUtterance], weighted_ood: &[(Utterance, S)], beta: S) -> Result<S> {
        if ind.is_empty() {
            return Err(Error::Precondition("empty IND batch".into()));
        }
        if beta < S::zero() {
            return Err(Error::Precondition("beta must be >= 0".into()));
        }
        let ood = self.encode_ood(weighted_ood)?;
        finite(
            objective(&self.params, &LossSpec::confidence(beta), &self.encode_ind(ind), &ood, None),
            "confidence loss",
        )
    }

    /// Objective value and full-parameter gradient.
    pub fn loss_and_grad(
        &self,
        spec: &LossSpec<S>,
        ind: &[EncodedInd],
        ood: &[EncodedOod<S>],
    ) -> Result<(S, ClassifierGrad<S>)> {
        let mut g = ClassifierGrad::zeros_like(&self.params);
        let v = objective(&self.params, spec, ind, ood, Some((&mut g, false)));
        Ok((finite(v, "objective")?, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_examples() {
        let k = 150;
        let (v, _) = cross_entropy_term(&vec![0.0_f64; k], 3);
        assert!((v - 150f64.ln()).abs() < 1e-12);
        assert!((v - 5.0106).abs() < 1e-4);
        let (v, _) = cross_entropy_term(&[0.0_f64, 0.0], 1);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let (v, _) = cross_entropy_term(&[1000.0_f64, 0.0], 0);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn hinge_examples() {
        // One class with logit 6 gives E = -6.
        let (v, _) = hinge_in_term(&[6.0_f64], 1.0, -8.0);
        assert_eq!(v, 4.0);
        let (v, g) = hinge_in_term(&[9.0_f64], 1.0, -8.0);
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0]);
        let (v, _) = hinge_out_term(&[7.0_f64], 1.0, -5.0);
        assert_eq!(v, 4.0);
    }

    #[test]
    fn kl_examples() {
        let (v, _) = kl_uniform_term(&[1.5_f64, 1.5, 1.5]);
        assert!(v.abs() < 1e-15);
        let logits = [0.9_f64.ln(), 0.1_f64.ln()];
        let (v, _) = kl_uniform_term(&logits);
        let expected = 0.5 * (0.5_f64 / 0.9).ln() + 0.5 * (0.5_f64 / 0.1).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn term_gradients_match_finite_differences() {
        let f = [0.3_f64, -1.2, 2.0];
        let terms: Vec<Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>> = vec![
            Box::new(|l| cross_entropy_term(l, 1)),
            Box::new(|l| hinge_in_term(l, 1.5, -8.0)),
            Box::new(|l| hinge_out_term(l, 0.7, 5.0)),
            Box::new(kl_uniform_term),
        ];
        for term in terms {
            let (_, g) = term(&f);
            for i in 0..3 {
                let mut a = f;
                let mut b = f;
                a[i] += 1e-6;
                b[i] -= 1e-6;
                let fd = (term(&a).0 - term(&b).0) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
            }
        }
    }
}
