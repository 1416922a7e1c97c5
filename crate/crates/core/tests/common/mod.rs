//! Fixture builders shared by the integration tests.

#![allow(dead_code)]

pub mod corpora;
pub mod gradcheck;
pub mod influence_check;

use std::sync::Arc;

use got_core::classifier::{Classifier, ClassifierShape};
use got_core::data::{tokenize, DatasetSplits, LabelSet, LabeledUtterance, Utterance, Vocabulary};

pub fn labels(names: &[&str]) -> LabelSet {
    LabelSet::ordered(names.iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn utt(text: &str) -> Utterance {
    tokenize(text).unwrap()
}

pub fn rows(labels: &LabelSet, spec: &[(&str, &str)]) -> Vec<LabeledUtterance> {
    spec.iter().map(|(t, l)| LabeledUtterance::new(utt(t), labels.by_name(l).unwrap())).collect()
}

pub fn vocab_of(texts: &[&str]) -> Arc<Vocabulary> {
    let us: Vec<Utterance> = texts.iter().map(|t| utt(t)).collect();
    Arc::new(Vocabulary::from_utterances(&us, 1))
}

/// Classifier whose logits ignore the input and equal `bias`.
pub fn constant_classifier(bias: &[f64]) -> Classifier<f64> {
    let names: Vec<String> = (0..bias.len()).map(|i| format!("c{i}")).collect();
    let labels = LabelSet::ordered(names).unwrap();
    let mut m = Classifier::new(vocab_of(&["x y z"]), labels, ClassifierShape { embed_dim: 2, hidden: None }, 0);
    let n = m.params.head.data.len();
    m.params.head.data.iter_mut().for_each(|v| *v = 0.0);
    m.params.head.data[n - bias.len()..].copy_from_slice(bias);
    m
}

/// Word lists per intent for small separable datasets.
pub const TOY_WORDS: [&[&str]; 3] = [
    &["alarm", "wake", "clock", "snooze"],
    &["song", "music", "play", "album"],
    &["rain", "sunny", "forecast", "weather"],
];

/// Small dataset where each intent has its own keywords around a shared
/// carrier phrase. Deterministic in `seed`.
pub fn toy_splits(intents: usize, per_intent: usize, seed: u64) -> DatasetSplits {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&str> = ["alarm", "music", "weather"][..intents].to_vec();
    let labels = labels(&names);
    let carriers = ["please", "can you", "i want", "now", "tell me"];
    let mut make = |n: usize| -> Vec<LabeledUtterance> {
        (0..n * intents)
            .map(|i| {
                let y = i % intents;
                let w1 = TOY_WORDS[y].choose(&mut rng).unwrap();
                let w2 = TOY_WORDS[y].choose(&mut rng).unwrap();
                let c = carriers.choose(&mut rng).unwrap();
                LabeledUtterance::new(utt(&format!("{c} {w1} {w2}")), labels.get(y).unwrap())
            })
            .collect()
    };
    let train = make(per_intent);
    let validation = make(per_intent / 2 + 1);
    let test_ind = make(per_intent / 2 + 1);
    let test_ood = ["can you cook pasta", "tell me a joke", "i want pizza now"].iter().map(|t| utt(t)).collect();
    DatasetSplits { labels, train, validation, test_ind, test_ood }
}
