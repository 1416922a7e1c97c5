//! Energy scores derived from classifier logits, and the threshold detector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{logsumexp, Scalar};

/// Per-class real scores produced by a classifier. All entries are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<S>(Vec<S>);

impl<S: Scalar> Logits<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Logits(values))
    }

    pub fn values(&self) -> &[S] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// `E(u) = -T * logsumexp(f(u) / T)`. Lower energy means more in-distribution.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct EnergyScore<S>(pub S);

impl<S: Scalar> EnergyScore<S> {
    pub fn value(self) -> S {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detection {
    Ind,
    Ood,
}

/// Temperature, threshold, margins and regularizer weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub temperature: f64,
    pub delta: f64,
    pub m_in: f64,
    pub m_out: f64,
    pub lambda: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { temperature: 1.0, delta: -6.5, m_in: -8.0, m_out: -5.0, lambda: 0.1 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `p_y ∝ exp(f_y / T)`.
pub fn softmax_temp<S: Scalar>(logits: &Logits<S>, t: S) -> Vec<S> {
    assert!(t > S::zero(), "temperature must be positive");
    let scaled: Vec<S> = logits.values().iter().map(|&f| f / t).collect();
    let lse = logsumexp(&scaled);
    scaled.iter().map(|&x| (x - lse).exp()).collect()
}

pub fn energy<S: Scalar>(logits: &Logits<S>, t: S) -> EnergyScore<S> {
    EnergyScore(energy_of(logits.values(), t))
}

pub(crate) fn energy_of<S: Scalar>(logits: &[S], t: S) -> S {
    assert!(t > S::zero(), "temperature must be positive");
    let scaled: Vec<S> = logits.iter().map(|&f| f / t).collect();
    -t * logsumexp(&scaled)
}

/// IND iff `e <= delta`.
pub fn detect<S: Scalar>(e: EnergyScore<S>, delta: S) -> Detection {
    if e.0 <= delta {
        Detection::Ind
    } else {
        Detection::Ood
    }
}

/// Lower-interpolated `q`-quantile: element `floor(q * (n - 1))` of the
/// sorted values.
pub fn lower_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Precondition("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Precondition(format!("quantile {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = (q * (v.len() - 1) as f64).floor() as usize;
    Ok(v[idx.min(v.len() - 1)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn l(v: &[f64]) -> Logits<f64> {
        Logits::new(v.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_temp(&l(&[0.0, 0.0]), 3.0), vec![0.5, 0.5]);
        let p = softmax_temp(&l(&[1.0, 2.0, 3.0]), 1.0);
        for (a, b) in p.iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((a - b).abs() < 5e-5);
        }
        let p = softmax_temp(&l(&[1.0, 2.0, 3.0]), 1000.0);
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-3));
    }

    #[test]
    fn energy_examples() {
        assert!((energy(&l(&[0.0, 0.0]), 1.0).0 + 2f64.ln()).abs() < 1e-12);
        assert!((energy(&l(&[1.0, 2.0, 3.0]), 1.0).0 + 3.4076059644443806).abs() < 1e-6);
        assert!(energy(&l(&[1e4, 1e4]), 1.0).0.is_finite());
    }

    #[test]
    fn detector_boundary_is_ind() {
        assert_eq!(detect(EnergyScore(-10.0), -6.5), Detection::Ind);
        assert_eq!(detect(EnergyScore(-6.5), -6.5), Detection::Ind);
        assert_eq!(detect(EnergyScore(-3.0), -6.5), Detection::Ood);
    }

    #[test]
    fn logits_reject_non_finite() {
        assert!(Logits::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn quantile_rule() {
        let e = [-10.0, -9.0, -8.0, -7.0];
        assert_eq!(lower_quantile(&e, 0.5).unwrap(), -9.0);
        assert_eq!(lower_quantile(&e, 1.0).unwrap(), -7.0);
        assert_eq!(lower_quantile(&[2.0; 5], 0.95).unwrap(), 2.0);
    }

    proptest! {
        #[test]
        fn logit_shift_identity(v in proptest::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0, t in 0.1f64..5.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let e = energy(&l(&v), t).0;
            let es = energy(&l(&shifted), t).0;
            prop_assert!((es - (e - c)).abs() < 1e-9);
            let p = softmax_temp(&l(&v), t);
            let ps = softmax_temp(&l(&shifted), t);
            for (a, b) in p.iter().zip(&ps) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn energy_softmax_link(v in proptest::collection::vec(-20.0f64..20.0, 1..8), t in 0.1f64..5.0) {
            // -T log p(y|u) = f_y*(-1) - E  for every y.
            let e = energy(&l(&v), t).0;
            let p = softmax_temp(&l(&v), t);
            for (y, &f) in v.iter().enumerate() {
                prop_assert!((-t * p[y].ln() - (-e - f)).abs() < 1e-8 * (1.0 + e.abs()));
            }
        }

        #[test]
        fn detect_is_monotone(e1 in -50.0f64..50.0, e2 in -50.0f64..50.0, d in -50.0f64..50.0) {
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            if detect(EnergyScore(hi), d) == Detection::Ind {
                prop_assert_eq!(detect(EnergyScore(lo), d), Detection::Ind);
            }
        }
    }
}
