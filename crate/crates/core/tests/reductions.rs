//! Special cases where one objective must collapse exactly onto another.

mod common;

use common::{toy_splits, utt};
use got_core::classifier::{train, Classifier, ClassifierShape, TrainObjective, TrainSchedule};
use got_core::data::{build_vocab, Utterance};
use got_core::energy::DetectorConfig;
use got_core::weight::weight_alphas;
use std::sync::Arc;

fn model(seed: u64) -> (Classifier<f64>, got_core::data::DatasetSplits) {
    let splits = toy_splits(3, 12, seed);
    let vocab = Arc::new(build_vocab(&splits.train, 1));
    let shape = ClassifierShape { embed_dim: 6, hidden: Some(5) };
    (Classifier::new(vocab, splits.labels.clone(), shape, seed), splits)
}

fn ood() -> Vec<Utterance> {
    ["can you cook pasta", "tell me a joke", "please play alarm", "sunny music now"].iter().map(|t| utt(t)).collect()
}

#[test]
fn unit_weights_match_the_unweighted_regularizer() {
    for seed in 0..5 {
        let (m, s) = model(seed);
        let weighted: Vec<(Utterance, f64)> = ood().into_iter().map(|u| (u, 1.0)).collect();
        for (m_in, m_out) in [(-8.0, -5.0), (-1.0, -1.5), (0.0, -3.0)] {
            let a = m.weighted_energy_reg_loss(&s.train, &weighted, m_in, m_out, 1.0).unwrap();
            let b = m.energy_reg_loss(&s.train, &ood(), m_in, m_out, 1.0).unwrap();
            assert_eq!(a.to_bits(), b.to_bits(), "seed {seed}, margins ({m_in}, {m_out})");
        }
    }
}

#[test]
fn zero_lambda_loss_is_cross_entropy() {
    let (m, s) = model(1);
    let weighted: Vec<(Utterance, f64)> = ood().into_iter().map(|u| (u, 0.7)).collect();
    let cfg = DetectorConfig { lambda: 0.0, m_in: 0.0, m_out: 0.0, ..Default::default() };
    let total = m.total_loss(&s.train, &weighted, &cfg).unwrap();
    assert_eq!(total.to_bits(), m.ce_loss(&s.train).unwrap().to_bits());
}

#[test]
fn zero_lambda_training_is_cross_entropy_training() {
    let (m, s) = model(2);
    let weighted: Vec<(Utterance, f64)> = ood().into_iter().map(|u| (u, 0.7)).collect();
    let schedule = TrainSchedule { epochs: 4, batch_size: 8, ood_batch_size: 2, ..Default::default() };
    let cfg = DetectorConfig { lambda: 0.0, ..Default::default() };
    let energy = train(m.clone(), &s, Some(&weighted), &TrainObjective::Energy(cfg), &schedule).unwrap();
    let ce = train(m, &s, None, &TrainObjective::CrossEntropy, &schedule).unwrap();
    assert_eq!(energy.best.params, ce.best.params);
    assert_eq!(energy.best_epoch, ce.best_epoch);
}

#[test]
fn zero_beta_confidence_training_is_cross_entropy_training() {
    let (m, s) = model(3);
    let weighted: Vec<(Utterance, f64)> = ood().into_iter().map(|u| (u, 1.0)).collect();
    let schedule = TrainSchedule { epochs: 3, batch_size: 8, ..Default::default() };
    let conf = train(m.clone(), &s, Some(&weighted), &TrainObjective::Confidence { beta: 0.0 }, &schedule).unwrap();
    let ce = train(m, &s, None, &TrainObjective::CrossEntropy, &schedule).unwrap();
    assert_eq!(conf.best.params, ce.best.params);
}

#[test]
fn zero_weights_drop_the_ood_term() {
    let (m, s) = model(4);
    let weighted: Vec<(Utterance, f64)> = ood().into_iter().map(|u| (u, 0.0)).collect();
    let a = m.weighted_energy_reg_loss(&s.train, &weighted, -1.0, -1.0, 1.0).unwrap();
    let b = m.energy_reg_loss(&s.train, &[], -1.0, -1.0, 1.0).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn zero_gamma_gives_uniform_half_weights() {
    let phis = [-3.0, -0.2, 0.0, 1e-9, 4.5, 100.0];
    assert!(weight_alphas(&phis, 0.0).unwrap().iter().all(|&a| a == 0.5));
    // A degenerate pool (max == min) also gives one half for any γ.
    assert!(weight_alphas(&[2.0, 2.0, 2.0], 20.0).unwrap().iter().all(|&a| a == 0.5));
}
