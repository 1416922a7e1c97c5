//! Influence-based weights for generated utterances.
//!
//! `α = 1 / (1 + exp(γ φ / (max φ − min φ)))` over the whole pool: harmful
//! utterances (large positive φ) get small weights, helpful ones large
//! weights. A pool whose φ values are all equal gets `α = 0.5` everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::data::LabeledUtterance;
use crate::energy::DetectorConfig;
use crate::error::{Error, Result};
use crate::generate::{read_jsonl, write_jsonl, GeneratedRecord, GeneratedUtterance};
use crate::influence::{InfluenceProblem, LissaConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub gamma: f64,
    pub lissa: LissaConfig,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { gamma: 20.0, lissa: LissaConfig::default() }
    }
}

/// `1 / (1 + e^z)` without overflow.
fn logistic_complement(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Weight of one φ given the pool range `[min, max]`.
pub fn weight_alpha(phi: f64, min: f64, max: f64, gamma: f64) -> f64 {
    let range = max - min;
    if !(range > 0.0) {
        return 0.5;
    }
    logistic_complement(gamma * phi / range)
}

/// Weights for a whole pool of influence values.
pub fn weight_alphas(phis: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if phis.is_empty() {
        return Err(Error::Precondition("weight pool is empty".into()));
    }
    if phis.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("influence values"));
    }
    let min = phis.iter().copied().fold(f64::INFINITY, f64::min);
    let max = phis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(phis.iter().map(|&p| weight_alpha(p, min, max, gamma)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedUtterance {
    pub generated: GeneratedUtterance,
    pub phi: f64,
    pub alpha: f64,
}

/// Influence and weight of every generated utterance under a classifier
/// trained with `CE + λ · energy regularizer` on the training split plus the
/// generated pool.
pub fn weight_corpus(
    model: &Classifier<f64>,
    train: &[LabeledUtterance],
    generated: &[GeneratedUtterance],
    validation: &[LabeledUtterance],
    detector: &DetectorConfig,
    cfg: &WeightConfig,
) -> Result<Vec<WeightedUtterance>> {
    if generated.is_empty() {
        return Err(Error::Precondition("no generated utterances to weight".into()));
    }
    let utterances: Vec<_> = generated.iter().map(|g| g.utterance.clone()).collect();
    let problem = InfluenceProblem::new(model, train, &utterances, validation, detector)?;
    let phis = problem.phi(&cfg.lissa)?;
    let alphas = weight_alphas(&phis, cfg.gamma)?;
    Ok(generated
        .iter()
        .zip(phis)
        .zip(alphas)
        .map(|((g, phi), alpha)| WeightedUtterance { generated: g.clone(), phi, alpha })
        .collect())
}

/// One line of the weighted-corpus JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedRecord {
    #[serde(flatten)]
    pub generated: GeneratedRecord,
    pub phi: f64,
    pub alpha: f64,
}

pub fn write_weighted(path: &Path, rows: &[WeightedUtterance]) -> Result<()> {
    write_jsonl(
        path,
        rows.iter().map(|w| WeightedRecord { generated: GeneratedRecord::from(&w.generated), phi: w.phi, alpha: w.alpha }),
    )
}

pub fn read_weighted(path: &Path) -> Result<Vec<WeightedUtterance>> {
    read_jsonl::<WeightedRecord>(path)?
        .into_iter()
        .map(|r| {
            if !(0.0..=1.0).contains(&r.alpha) {
                return Err(Error::WeightOutOfRange(r.alpha));
            }
            Ok(WeightedUtterance { generated: r.generated.to_generated()?, phi: r.phi, alpha: r.alpha })
        })
        .collect()
}
