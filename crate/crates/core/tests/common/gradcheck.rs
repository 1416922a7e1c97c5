//! Finite-difference gradient checks on random small classifiers.

use got_core::classifier::{objective, Classifier, ClassifierShape, EncodedInd, EncodedOod, LossSpec};
use got_core::energy::DetectorConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{labels, utt, vocab_of};

const WORDS: [&str; 8] = ["set", "alarm", "play", "song", "rain", "today", "please", "now"];
pub const CONFIGS: u64 = 24;
pub const TOLERANCE: f64 = 1e-4;

pub struct Case {
    pub model: Classifier<f64>,
    pub ind: Vec<EncodedInd>,
    pub ood: Vec<EncodedOod<f64>>,
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=5);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(2..=4);
    let names: Vec<String> = (0..k).map(|i| format!("y{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let shape = ClassifierShape { embed_dim: rng.gen_range(2..=5), hidden: rng.gen_bool(0.5).then(|| rng.gen_range(2..=6)) };
    let mut model = Classifier::new(vocab_of(&[&WORDS.join(" ")]), labels(&names), shape, seed);
    // Larger weights spread the energies so both hinges see active and
    // inactive examples.
    for v in model.params.head.data.iter_mut() {
        *v *= 3.0;
    }
    let ind = (0..rng.gen_range(1..=6))
        .map(|_| EncodedInd { ids: model.encode(&utt(&sentence(&mut rng))), label: rng.gen_range(0..k) })
        .collect();
    let ood = (0..rng.gen_range(1..=6))
        .map(|_| EncodedOod { ids: model.encode(&utt(&sentence(&mut rng))), alpha: rng.gen_range(0.05..1.0) })
        .collect();
    Case { model, ind, ood }
}

/// Relative error `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-8)` over every parameter.
pub fn check(c: &Case, spec: &LossSpec<f64>) -> f64 {
    let (_, g) = c.model.loss_and_grad(spec, &c.ind, &c.ood).unwrap();
    let analytic = g.flat();
    let theta = c.model.params.flat();
    let mut p = c.model.params.clone();
    let h = 1e-6;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        p.set_flat(&t);
        let up = objective(&p, spec, &c.ind, &c.ood, None);
        t[i] = theta[i] - h;
        p.set_flat(&t);
        let down = objective(&p, spec, &c.ind, &c.ood, None);
        let fd = (up - down) / (2.0 * h);
        diff += (fd - analytic[i]).powi(2);
        norm += fd.abs() + analytic[i].abs();
    }
    diff.sqrt() / norm.max(1e-8)
}

/// Largest relative error over `CONFIGS` random cases for the objective
/// built by `spec_of`.
pub fn worst_error(spec_of: impl Fn(&mut ChaCha8Rng) -> LossSpec<f64>) -> f64 {
    (0..CONFIGS)
        .map(|seed| {
            let c = case(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            check(&c, &spec_of(&mut rng))
        })
        .fold(0.0, f64::max)
}

/// Cross-entropy, energy regularizer, total and confidence objectives with
/// randomized hyperparameters.
pub fn objectives() -> Vec<(&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> LossSpec<f64>>)> {
    vec![
        ("cross-entropy", Box::new(|_: &mut ChaCha8Rng| LossSpec::cross_entropy())),
        (
            "energy regularizer",
            Box::new(|rng: &mut ChaCha8Rng| {
                let (t, m_in, m_out) = margins(rng);
                LossSpec::energy_reg(m_in, m_out, t)
            }),
        ),
        (
            "total",
            Box::new(|rng: &mut ChaCha8Rng| {
                let (t, m_in, m_out) = margins(rng);
                let cfg =
                    DetectorConfig { temperature: t, lambda: rng.gen_range(0.01..1.0), m_in, m_out, ..Default::default() };
                LossSpec::total(&cfg)
            }),
        ),
        ("confidence", Box::new(|rng: &mut ChaCha8Rng| LossSpec::confidence(rng.gen_range(0.1..2.0)))),
    ]
}

pub fn margins(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let t = rng.gen_range(0.5..2.0);
    let m_in = rng.gen_range(-4.0..0.0);
    let m_out = rng.gen_range(-4.0..0.0);
    (t, m_in, m_out)
}

