use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::scalar::Scalar;

/// Architecture and optimizer settings shared by the built-in language models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmTrainConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Width of the intent embedding (class-conditional model only).
    pub label_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            embed_dim: 32,
            hidden_dim: 64,
            label_dim: 16,
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// One encoded training sequence (without BOS/EOS) and its label index.
#[derive(Clone, Debug)]
pub(crate) struct LmExample {
    pub ids: Vec<u32>,
    pub label: usize,
}

/// A model trained by token-level maximum likelihood.
pub(crate) trait SequenceModel<S: Scalar>: Sync {
    fn tensor_lens(&self) -> Vec<usize>;
    fn tensors_mut(&mut self) -> Vec<&mut Vec<S>>;
    /// Accumulates the gradient of the summed token NLL of `ex` into
    /// `grads` and returns `(summed NLL, number of predicted tokens)`.
    fn example_grad(&self, ex: &LmExample, grads: &mut [Vec<S>]) -> (S, usize);
}

/// Fixed partition size for parallel gradient accumulation; the reduction
/// runs in partition order, so results do not depend on the thread count.
const CHUNK: usize = 8;

/// Mini-batch Adam on the mean per-token NLL. Returns the mean training NLL
/// of every epoch.
pub(crate) fn fit<S: Scalar, M: SequenceModel<S>>(
    model: &mut M,
    examples: &[LmExample],
    cfg: &LmTrainConfig,
    what: &'static str,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Precondition(format!("{what}: training corpus is empty")));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let lens = model.tensor_lens();
    let mut opts: Vec<Adam<S>> = lens.iter().map(|&n| Adam::new(cfg.adam.clone(), n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let m: &M = model;
            let parts: Vec<(Vec<Vec<S>>, S, usize)> = batch
                .par_chunks(CHUNK)
                .map(|part| {
                    let mut grads: Vec<Vec<S>> = lens.iter().map(|&n| vec![S::zero(); n]).collect();
                    let mut nll = S::zero();
                    let mut count = 0;
                    for &i in part {
                        let (l, c) = m.example_grad(&examples[i], &mut grads);
                        nll = nll + l;
                        count += c;
                    }
                    (grads, nll, count)
                })
                .collect();
            let mut parts = parts.into_iter();
            let (mut grads, mut nll, mut count) = parts.next().expect("nonempty batch");
            for (g, l, c) in parts {
                for (acc, x) in grads.iter_mut().zip(&g) {
                    crate::nn::add_assign(acc, x);
                }
                nll = nll + l;
                count += c;
            }
            if !nll.is_finite() {
                return Err(Error::NonFinite(what));
            }
            let scale = S::one() / S::lit(count.max(1) as f64);
            for ((param, grad), opt) in model.tensors_mut().into_iter().zip(&mut grads).zip(&mut opts) {
                grad.iter_mut().for_each(|g| *g = *g * scale);
                opt.step(param, grad);
            }
            epoch_nll += nll.as_f64();
            epoch_tokens += count;
        }
        let mean = epoch_nll / epoch_tokens.max(1) as f64;
        debug!("{what} epoch {epoch}: mean nll {mean:.4}");
        history.push(mean);
    }
    Ok(history)
}
