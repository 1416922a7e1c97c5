use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSplits, LabeledUtterance, Utterance};
use crate::energy::{lower_quantile, DetectorConfig};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::scalar::Scalar;

use super::loss::{objective, EncodedInd, EncodedOod, LossSpec};
use super::model::{Classifier, ClassifierGrad};

/// Which parameters `train` returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Epoch with the best validation accuracy (ties: lower loss). The
    /// initial parameters count as epoch 0.
    #[default]
    BestValidation,
    /// Parameters after the final epoch.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// OOD examples per step; `0` spreads the OOD set evenly so each epoch
    /// visits it once.
    pub ood_batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub selection: Selection,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 30,
            batch_size: 32,
            ood_batch_size: 0,
            adam: AdamConfig::default(),
            seed: 0,
            selection: Selection::BestValidation,
        }
    }
}

/// Which objective `train` minimizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrainObjective {
    CrossEntropy,
    /// Cross-entropy plus `λ ·` (weighted) energy regularizer.
    Energy(DetectorConfig),
    /// Cross-entropy plus `β ·` (weighted) KL-to-uniform on OOD.
    Confidence { beta: f64 },
}

impl TrainObjective {
    fn spec<S: Scalar>(&self) -> LossSpec<S> {
        match self {
            TrainObjective::CrossEntropy => LossSpec::cross_entropy(),
            TrainObjective::Energy(cfg) => LossSpec::total(cfg),
            TrainObjective::Confidence { beta } => LossSpec::confidence(S::lit(*beta)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    /// Parameters chosen by the schedule's [`Selection`].
    pub best: Classifier<S>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Validation accuracy and mean cross-entropy.
pub fn evaluate<S: Scalar>(model: &Classifier<S>, data: &[LabeledUtterance]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let enc = model.encode_ind(data);
    let correct = enc
        .iter()
        .filter(|e| {
            let logits = model.params.logits_ids(&e.ids);
            argmax(&logits) == e.label
        })
        .count();
    let loss = objective(&model.params, &LossSpec::cross_entropy(), &enc, &[], None);
    (correct as f64 / data.len() as f64, loss.as_f64())
}

fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch Adam on the chosen objective, starting from `init`.
///
/// IND order and OOD order come from two independent seeded streams, so a
/// run with an inactive OOD term consumes exactly the same IND batches as a
/// run without OOD data.
pub fn train<S: Scalar>(
    init: Classifier<S>,
    splits: &DatasetSplits,
    weighted_ood: Option<&[(Utterance, S)]>,
    objective_kind: &TrainObjective,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome<S>> {
    if splits.train.is_empty() {
        return Err(Error::Precondition("training split is empty".into()));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let spec: LossSpec<S> = objective_kind.spec();
    let mut model = init;
    let ind: Vec<EncodedInd> = model.encode_ind(&splits.train);
    let ood: Vec<EncodedOod<S>> = match weighted_ood {
        Some(w) if spec.uses_ood() => model.encode_ood(w)?,
        _ => Vec::new(),
    };

    let mut ind_rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut ood_rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut emb_opt = Adam::new(schedule.adam.clone(), model.params.embeddings.len());
    let mut head_opt = Adam::new(schedule.adam.clone(), model.params.head.data.len());

    let steps_per_epoch = ind.len().div_ceil(schedule.batch_size);
    let ood_per_step = match schedule.ood_batch_size {
        0 => ood.len().div_ceil(steps_per_epoch),
        n => n,
    };

    let mut order: Vec<usize> = (0..ind.len()).collect();
    let mut ood_order: Vec<usize> = (0..ood.len()).collect();
    let mut best = model.clone();
    let (acc0, loss0) = evaluate(&model, &splits.validation);
    let mut best_key = (acc0, loss0);
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(schedule.epochs);
    let mut ind_batch: Vec<EncodedInd> = Vec::with_capacity(schedule.batch_size);
    let mut ood_batch: Vec<EncodedOod<S>> = Vec::with_capacity(ood_per_step);
    let mut ood_cursor = 0usize;

    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut ind_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            ind_batch.clear();
            ind_batch.extend(chunk.iter().map(|&i| ind[i].clone()));
            ood_batch.clear();
            for _ in 0..ood_per_step.min(ood.len()) {
                if ood_cursor == 0 {
                    ood_order.shuffle(&mut ood_rng);
                }
                ood_batch.push(ood[ood_order[ood_cursor]].clone());
                ood_cursor = (ood_cursor + 1) % ood.len();
            }
            let mut grad = ClassifierGrad::zeros_like(&model.params);
            let loss = objective(&model.params, &spec, &ind_batch, &ood_batch, Some((&mut grad, false)));
            if !loss.is_finite() {
                return Err(Error::NonFinite("classifier training"));
            }
            epoch_loss += loss.as_f64() * chunk.len() as f64;
            emb_opt.step(&mut model.params.embeddings, &grad.embeddings);
            head_opt.step(&mut model.params.head.data, &grad.head);
        }
        let (val_accuracy, val_loss) = evaluate(&model, &splits.validation);
        let stats = EpochStats { epoch, train_loss: epoch_loss / ind.len() as f64, val_accuracy, val_loss };
        debug!("epoch {epoch}: {stats:?}");
        // Without a validation split every epoch ties; keep the latest.
        let better = schedule.selection == Selection::Last
            || splits.validation.is_empty()
            || val_accuracy > best_key.0
            || (val_accuracy == best_key.0 && val_loss < best_key.1);
        if better {
            best_key = (val_accuracy, val_loss);
            best = model.clone();
            best_epoch = epoch;
        }
        history.push(stats);
    }
    Ok(TrainOutcome { best, best_epoch, history })
}

/// Threshold δ as the lower-interpolated `q`-quantile of validation energies.
pub fn select_delta<S: Scalar>(model: &Classifier<S>, validation: &[LabeledUtterance], q: f64, t: S) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Precondition("validation set is empty".into()));
    }
    let energies: Vec<f64> = validation.iter().map(|r| model.energy(&r.utterance, t).0.as_f64()).collect();
    lower_quantile(&energies, q)
}
