//! Removal influence of generated utterances on the validation loss,
//! restricted to the classifier's MLP head.
//!
//! With the encoder frozen, each utterance is a fixed feature vector and the
//! training objective (cross-entropy plus the energy regularizer over the
//! training set and the generated pool) is a function of the head
//! parameters `θ` only. Removing a generated utterance `û` moves the optimum
//! by about `(H + dI)⁻¹ ∇ℓ(û)` (up to a positive constant), so
//!
//! ```text
//! φ(û) = −∇L_valᵀ (H + dI)⁻¹ ∇ℓ(û)
//! ```
//!
//! is positive exactly when removing `û` lowers the validation loss.
//! `s = (H + dI)⁻¹ ∇L_val` is solved once with LiSSA and shared by every
//! utterance. Hessian-vector products are exact, computed by running the
//! head's backward pass on dual numbers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    cross_entropy_term, hinge_in_term, hinge_out_term, kl_uniform_term, Classifier, LossSpec, MlpHead,
};
use crate::data::{LabeledUtterance, Utterance};
use crate::dual::Dual;
use crate::energy::DetectorConfig;
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Stochastic inverse-Hessian-vector product settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LissaConfig {
    pub scale: f64,
    pub damping: f64,
    pub recursion_depth: usize,
    pub repeats: usize,
    /// Training examples per sampled Hessian.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LissaConfig {
    fn default() -> Self {
        LissaConfig { scale: 1000.0, damping: 0.003, recursion_depth: 1000, repeats: 4, batch_size: 8, seed: 0 }
    }
}

impl LissaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !(self.damping >= 0.0) || self.recursion_depth == 0 || self.repeats == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid LiSSA settings: {self:?}")));
        }
        Ok(())
    }
}

/// Source of Hessian-vector products for a sum-decomposable loss.
pub trait HvpSampler: Sync {
    fn dim(&self) -> usize;
    /// Number of examples to sample from.
    fn num_samples(&self) -> usize;
    /// Unbiased estimate of `H v` from the examples in `batch`.
    fn sample_hvp(&self, v: &[f64], batch: &[usize]) -> Vec<f64>;
}

/// Explicit symmetric matrix; every sample returns the exact product.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseHessian {
    pub rows: Vec<Vec<f64>>,
}

impl HvpSampler for DenseHessian {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn sample_hvp(&self, v: &[f64], _batch: &[usize]) -> Vec<f64> {
        self.rows.iter().map(|r| dot(r, v)).collect()
    }
}

/// Growth bound on the recursion: with `‖I − (H+dI)/scale‖ ≤ 1` the iterate
/// satisfies `‖h_t‖ ≤ (t+1)‖v‖`; exceeding ten times that is divergence.
const DIVERGENCE_FACTOR: f64 = 10.0;

/// LiSSA estimate of `(H + dI)⁻¹ v`:
/// `h_0 = v`, `h_{t+1} = v + (I − (H_t + dI)/scale) h_t`, averaged over
/// independent repeats and divided by `scale`.
pub fn ihvp_lissa<H: HvpSampler + ?Sized>(v: &[f64], sampler: &H, cfg: &LissaConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if v.len() != sampler.dim() {
        return Err(Error::Precondition(format!("vector of length {} for a {}-dim Hessian", v.len(), sampler.dim())));
    }
    if sampler.num_samples() == 0 {
        return Err(Error::Precondition("no samples for the Hessian estimate".into()));
    }
    let v_norm = norm(v);
    let runs: Vec<Result<Vec<f64>>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let mut h = v.to_vec();
            let mut batch = vec![0usize; cfg.batch_size];
            for step in 0..cfg.recursion_depth {
                for b in batch.iter_mut() {
                    *b = rng.gen_range(0..sampler.num_samples());
                }
                let hv = sampler.sample_hvp(&h, &batch);
                for i in 0..h.len() {
                    h[i] = v[i] + h[i] - (hv[i] + cfg.damping * h[i]) / cfg.scale;
                }
                let n = norm(&h);
                if !n.is_finite() || n > DIVERGENCE_FACTOR * (step as f64 + 2.0) * v_norm.max(f64::MIN_POSITIVE) {
                    return Err(Error::Diverged { step: step + 1, norm: n });
                }
            }
            Ok(h)
        })
        .collect();
    let mut acc = vec![0.0; v.len()];
    for run in runs {
        for (a, x) in acc.iter_mut().zip(run?) {
            *a += x;
        }
    }
    let denom = cfg.repeats as f64 * cfg.scale;
    Ok(acc.into_iter().map(|x| x / denom).collect())
}

/// One head-subspace training example: frozen features plus its role.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadExample {
    Ind { x: Vec<f64>, label: usize },
    Ood { x: Vec<f64> },
}

/// Weighted sum of per-example loss terms on frozen features; accumulates
/// the head gradient when `grad` is given.
fn weighted_head_loss<'a, S: Scalar>(
    head: &MlpHead<S>,
    spec: &LossSpec<S>,
    examples: impl Iterator<Item = (&'a HeadExample, f64)>,
    mut grad: Option<&mut [S]>,
) -> S {
    let zero = S::zero();
    let mut total = zero;
    for (ex, w) in examples {
        let w = S::lit(w);
        let (HeadExample::Ind { x: xf, .. } | HeadExample::Ood { x: xf }) = ex;
        let x: Vec<S> = xf.iter().map(|&v| S::lit(v)).collect();
        let cache = head.forward(&x);
        let mut dlogits = vec![zero; cache.logits.len()];
        let mut add = |scale: S, (v, g): (S, Vec<S>)| {
            if scale != zero {
                total = total + w * scale * v;
                for (d, gi) in dlogits.iter_mut().zip(g) {
                    *d = *d + w * scale * gi;
                }
            }
        };
        match ex {
            HeadExample::Ind { label, .. } => {
                if spec.ce != zero {
                    add(spec.ce, cross_entropy_term(&cache.logits, *label));
                }
                if spec.hinge_in != zero {
                    add(spec.hinge_in, hinge_in_term(&cache.logits, spec.temperature, spec.m_in));
                }
            }
            HeadExample::Ood { .. } => {
                if spec.hinge_out != zero {
                    add(spec.hinge_out, hinge_out_term(&cache.logits, spec.temperature, spec.m_out));
                }
                if spec.kl != zero {
                    add(spec.kl, kl_uniform_term(&cache.logits));
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            head.backward(&x, &cache, &dlogits, g, None);
        }
    }
    total
}

fn map_spec<T: Scalar>(spec: &LossSpec<f64>) -> LossSpec<T> {
    LossSpec {
        ce: T::lit(spec.ce),
        hinge_in: T::lit(spec.hinge_in),
        hinge_out: T::lit(spec.hinge_out),
        kl: T::lit(spec.kl),
        temperature: T::lit(spec.temperature),
        m_in: T::lit(spec.m_in),
        m_out: T::lit(spec.m_out),
    }
}

/// The head-subspace influence problem: training objective, validation
/// cross-entropy and per-utterance removal gradients.
#[derive(Clone, Debug)]
pub struct InfluenceProblem {
    head: MlpHead<f64>,
    spec: LossSpec<f64>,
    train: Vec<HeadExample>,
    /// Per-example weights making `Σ w_i ℓ_i` the training objective.
    weights: Vec<f64>,
    validation: Vec<HeadExample>,
    /// Indices into `train` of the generated utterances.
    generated: Vec<usize>,
}

impl InfluenceProblem {
    /// Builds the problem from a classifier trained on the training split
    /// plus the generated pool with `CE + λ · energy regularizer`.
    pub fn new(
        model: &Classifier<f64>,
        train: &[LabeledUtterance],
        generated: &[Utterance],
        validation: &[LabeledUtterance],
        detector: &DetectorConfig,
    ) -> Result<Self> {
        let feat = |u: &Utterance| model.params.pool(&model.encode(u));
        let ind = train.iter().map(|r| HeadExample::Ind { x: feat(&r.utterance), label: r.label.index });
        let ood = generated.iter().map(|u| HeadExample::Ood { x: feat(u) });
        let val = validation.iter().map(|r| HeadExample::Ind { x: feat(&r.utterance), label: r.label.index }).collect();
        Self::from_features(model.params.head.clone(), LossSpec::total(detector), ind.chain(ood).collect(), val)
    }

    /// Problem over explicit features. The training objective averages IND
    /// terms over IND examples and OOD terms over OOD examples.
    pub fn from_features(
        head: MlpHead<f64>,
        spec: LossSpec<f64>,
        train: Vec<HeadExample>,
        validation: Vec<HeadExample>,
    ) -> Result<Self> {
        let n_ind = train.iter().filter(|e| matches!(e, HeadExample::Ind { .. })).count();
        let n_ood = train.len() - n_ind;
        if n_ind == 0 {
            return Err(Error::Precondition("influence needs IND training examples".into()));
        }
        if validation.is_empty() || validation.iter().any(|e| matches!(e, HeadExample::Ood { .. })) {
            return Err(Error::Precondition("influence needs a labeled validation set".into()));
        }
        let weights = train
            .iter()
            .map(|e| match e {
                HeadExample::Ind { .. } => 1.0 / n_ind as f64,
                HeadExample::Ood { .. } => 1.0 / n_ood as f64,
            })
            .collect();
        let generated = train.iter().enumerate().filter(|(_, e)| matches!(e, HeadExample::Ood { .. })).map(|(i, _)| i).collect();
        Ok(InfluenceProblem { head, spec, train, weights, validation, generated })
    }

    pub fn dim(&self) -> usize {
        self.head.data.len()
    }

    pub fn head(&self) -> &MlpHead<f64> {
        &self.head
    }

    pub fn num_generated(&self) -> usize {
        self.generated.len()
    }

    fn with_params(&self, theta: &[f64]) -> MlpHead<f64> {
        MlpHead { shape: self.head.shape, data: theta.to_vec() }
    }

    /// Training objective at head parameters `theta`.
    pub fn train_loss(&self, theta: &[f64]) -> f64 {
        weighted_head_loss(&self.with_params(theta), &self.spec, self.train.iter().zip(self.weights.iter().copied()), None)
    }

    pub fn train_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        weighted_head_loss(&self.with_params(theta), &self.spec, self.train.iter().zip(self.weights.iter().copied()), Some(&mut g));
        g
    }

    /// Mean validation cross-entropy at `theta`.
    pub fn validation_loss(&self, theta: &[f64]) -> f64 {
        let w = 1.0 / self.validation.len() as f64;
        weighted_head_loss(&self.with_params(theta), &LossSpec::cross_entropy(), self.validation.iter().map(|e| (e, w)), None)
    }

    pub fn validation_gradient(&self) -> Vec<f64> {
        let w = 1.0 / self.validation.len() as f64;
        let mut g = vec![0.0; self.dim()];
        weighted_head_loss(&self.head, &LossSpec::cross_entropy(), self.validation.iter().map(|e| (e, w)), Some(&mut g));
        g
    }

    /// Gradient of the loss term a single generated utterance contributes
    /// (`λ · max(0, m_out − E)²`, unaveraged).
    pub fn removal_gradient(&self, generated_index: usize) -> Vec<f64> {
        let ex = &self.train[self.generated[generated_index]];
        let mut g = vec![0.0; self.dim()];
        weighted_head_loss(&self.head, &self.spec, std::iter::once((ex, 1.0)), Some(&mut g));
        g
    }

    /// Exact `H v` of the full training objective.
    pub fn hvp(&self, v: &[f64]) -> Vec<f64> {
        self.hvp_weighted(v, self.train.iter().zip(self.weights.iter().copied()))
    }

    fn hvp_weighted<'a>(&self, v: &[f64], examples: impl Iterator<Item = (&'a HeadExample, f64)>) -> Vec<f64> {
        let head: MlpHead<Dual<f64>> =
            MlpHead { shape: self.head.shape, data: self.head.data.iter().zip(v).map(|(&p, &t)| Dual::new(p, t)).collect() };
        let spec: LossSpec<Dual<f64>> = map_spec(&self.spec);
        let mut g = vec![Dual::constant(0.0); self.dim()];
        weighted_head_loss(&head, &spec, examples, Some(&mut g));
        g.into_iter().map(|d| d.eps).collect()
    }

    /// Dense Hessian of the training objective, one column per basis vector.
    pub fn dense_hessian(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                self.hvp(&e)
            })
            .collect();
        (0..n).map(|i| (0..n).map(|j| 0.5 * (cols[j][i] + cols[i][j])).collect()).collect()
    }

    /// `φ_i = −sᵀ ∇ℓ(û_i)` for every generated utterance, given
    /// `s ≈ (H + dI)⁻¹ ∇L_val`.
    pub fn phi_from_ihvp(&self, s: &[f64]) -> Vec<f64> {
        (0..self.generated.len()).into_par_iter().map(|i| -dot(s, &self.removal_gradient(i))).collect()
    }

    /// Influence of every generated utterance via LiSSA.
    pub fn phi(&self, cfg: &LissaConfig) -> Result<Vec<f64>> {
        let s = ihvp_lissa(&self.validation_gradient(), self, cfg)?;
        let phi = self.phi_from_ihvp(&s);
        if phi.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("influence"));
        }
        Ok(phi)
    }
}

impl HvpSampler for InfluenceProblem {
    fn dim(&self) -> usize {
        self.head.data.len()
    }

    fn num_samples(&self) -> usize {
        self.train.len()
    }

    /// Each sampled example is reweighted by `N / |batch|` so the estimate is
    /// unbiased for the full objective under uniform sampling.
    fn sample_hvp(&self, v: &[f64], batch: &[usize]) -> Vec<f64> {
        let scale = self.train.len() as f64 / batch.len() as f64;
        self.hvp_weighted(v, batch.iter().map(|&i| (&self.train[i], self.weights[i] * scale)))
    }
}
