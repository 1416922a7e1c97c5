//! Influence-value harness: a linear head on frozen features, trained to
//! its exact optimum so that influence and leave-one-out retraining can be
//! compared.

use std::sync::Arc;

use got_core::classifier::{
    objective, train, Classifier, ClassifierGrad, ClassifierShape, EncodedInd, EncodedOod, LossSpec, TrainObjective,
    TrainSchedule,
};
use got_core::data::{DatasetSplits, Utterance, Vocabulary};
use got_core::energy::DetectorConfig;
use got_core::influence::{InfluenceProblem, LissaConfig};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{toy_splits, utt, TOY_WORDS};

/// IND training utterances; the generated pool adds `POOL` more.
pub const IND_TRAIN: usize = 150;
pub const POOL: usize = 50;
pub const VALIDATION: usize = 50;

pub const DAMPING: f64 = 1e-3;

pub struct Setup {
    pub model: Classifier<f64>,
    pub splits: DatasetSplits,
    pub pool: Vec<Utterance>,
    pub detector: DetectorConfig,
}

pub fn detector() -> DetectorConfig {
    DetectorConfig { temperature: 1.0, lambda: 0.5, m_in: -3.0, m_out: -1.0, ..Default::default() }
}

/// Replaces the last word of training utterances with a mix of unrelated
/// words and words of the same or another intent.
fn pool(splits: &DatasetSplits) -> Vec<Utterance> {
    let fillers = ["pasta", "joke", "pizza", "movie", "car"];
    splits
        .train
        .iter()
        .take(POOL)
        .enumerate()
        .map(|(i, r)| {
            let toks: Vec<&str> = r.utterance.tokens().iter().map(|t| t.as_str()).collect();
            let last = match i % 3 {
                0 => fillers[i % fillers.len()],
                1 => TOY_WORDS[r.label.index][i % 4],
                _ => TOY_WORDS[(r.label.index + 1) % 3][i % 4],
            };
            utt(&format!("{} {last}", toks[..toks.len() - 1].join(" ")))
        })
        .collect()
}

pub fn encode(s: &Setup, alphas: &[f64]) -> (Vec<EncodedInd>, Vec<EncodedOod<f64>>) {
    let ind = s.model.encode_ind(&s.splits.train);
    let ood = s.pool.iter().zip(alphas).map(|(u, &alpha)| EncodedOod { ids: s.model.encode(u), alpha }).collect();
    (ind, ood)
}

pub fn head_gradient(model: &Classifier<f64>, spec: &LossSpec<f64>, ind: &[EncodedInd], ood: &[EncodedOod<f64>]) -> DVector<f64> {
    let mut g = ClassifierGrad::zeros_like(&model.params);
    objective(&model.params, spec, ind, ood, Some((&mut g, true)));
    DVector::from_vec(g.head)
}

pub fn hessian(s: &Setup) -> DMatrix<f64> {
    let h = InfluenceProblem::new(&s.model, &s.splits.train, &s.pool, &s.splits.validation, &s.detector)
        .unwrap()
        .dense_hessian();
    let n = h.len();
    DMatrix::from_fn(n, n, |i, j| h[i][j])
}

/// Newton minimization of the head objective with `alphas` on frozen
/// embeddings, plus `d/2 ‖θ − c‖²` when `prox = Some((c, d))`. The Hessian
/// of the full objective bounds that of any reweighting with `alphas <= 1`
/// from above, so its steps descend.
pub fn minimize(s: &mut Setup, alphas: &[f64], prox: Option<(&[f64], f64)>) -> f64 {
    let spec = LossSpec::total(&s.detector);
    let (ind, ood) = encode(s, alphas);
    let value = |m: &Classifier<f64>| {
        let p = prox.map_or(0.0, |(c, d)| {
            0.5 * d * m.params.head.data.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        });
        objective(&m.params, &spec, &ind, &ood, None) + p
    };
    let mut gnorm = f64::INFINITY;
    for _ in 0..100 {
        let mut g = head_gradient(&s.model, &spec, &ind, &ood);
        if let Some((c, d)) = prox {
            for (gi, (a, b)) in g.iter_mut().zip(s.model.params.head.data.iter().zip(c)) {
                *gi += d * (a - b);
            }
        }
        gnorm = g.norm();
        if gnorm < 1e-11 {
            break;
        }
        let h = hessian(s);
        let n = h.nrows();
        // The IND hinge makes the objective nonconvex in places; damping
        // grows until the Newton matrix is positive definite.
        let mut d = prox.map_or(1e-8, |(_, d)| d);
        let step = loop {
            if let Some(c) = (h.clone() + DMatrix::identity(n, n) * d).cholesky() {
                break c.solve(&g);
            }
            d *= 10.0;
        };
        let f0 = value(&s.model);
        let theta = s.model.params.head.data.clone();
        let mut t = 1.0;
        while t > 1e-8 {
            s.model.params.head.data = theta.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
            // Near the optimum the objective change drowns in rounding; the
            // full step is taken there.
            if gnorm < 1e-6 || value(&s.model) <= f0 {
                break;
            }
            t *= 0.5;
        }
        if t <= 1e-8 {
            s.model.params.head.data = theta;
            break;
        }
    }
    gnorm
}

pub fn setup(seed: u64) -> Setup {
    let mut splits = toy_splits(3, IND_TRAIN / 3, seed);
    splits.validation.truncate(VALIDATION);
    let pool = pool(&splits);
    let all: Vec<&Utterance> = splits.train.iter().map(|r| &r.utterance).chain(&pool).collect();
    let vocab = Arc::new(Vocabulary::from_utterances(all, 1));
    let shape = ClassifierShape { embed_dim: 4, hidden: None };
    let init = Classifier::new(vocab, splits.labels.clone(), shape, seed);
    let weighted: Vec<(Utterance, f64)> = pool.iter().map(|u| (u.clone(), 1.0)).collect();
    let schedule = TrainSchedule { epochs: 30, batch_size: 8, ..Default::default() };
    let model = train(init, &splits, Some(&weighted), &TrainObjective::Energy(detector()), &schedule).unwrap().best;
    let mut s = Setup { model, splits, pool, detector: detector() };
    let ones = vec![1.0; s.pool.len()];
    let gnorm = minimize(&mut s, &ones, None);
    assert!(gnorm < 1e-7, "head optimum not reached: gradient norm {gnorm:e}");
    s
}

pub fn problem(s: &Setup) -> InfluenceProblem {
    InfluenceProblem::new(&s.model, &s.splits.train, &s.pool, &s.splits.validation, &s.detector).unwrap()
}

pub fn dense_phi(s: &Setup) -> Vec<f64> {
    let p = problem(s);
    let h = hessian(s);
    let n = h.nrows();
    let g = DVector::from_vec(p.validation_gradient());
    let sol = (h + DMatrix::identity(n, n) * DAMPING).lu().solve(&g).expect("damped Hessian is invertible");
    p.phi_from_ihvp(sol.as_slice())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// LiSSA settings whose recursion contracts for this problem's Hessian.
pub fn converging_lissa(s: &Setup) -> LissaConfig {
    let eig = SymmetricEigen::new(hessian(s)).eigenvalues;
    let lmax = eig.iter().copied().fold(0.0, f64::max);
    LissaConfig { scale: 4.0 * lmax + 1.0, damping: DAMPING, recursion_depth: 20_000, repeats: 4, batch_size: 36, seed: 3 }
}

/// Pearson correlation of LiSSA and dense-solve influence values.
pub fn lissa_pearson(s: &Setup) -> f64 {
    let dense = dense_phi(s);
    let lissa = problem(s).phi(&converging_lissa(s)).unwrap();
    pearson(&dense, &lissa)
}

/// Among the `n` largest-|φ| generated utterances, how many change the
/// validation loss in the direction φ predicts when left out. Leave-one-out
/// retraining carries the same damping as the influence solve, as a
/// proximal term around the optimum.
pub fn loo_sign_agreement(s: &mut Setup, n: usize) -> usize {
    let phi = dense_phi(s);
    let p = problem(s);
    let theta_star = s.model.params.head.data.clone();
    let base_val = p.validation_loss(&theta_star);
    let mut order: Vec<usize> = (0..phi.len()).collect();
    order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()));
    let mut agree = 0;
    for &i in order.iter().take(n) {
        let mut alphas = vec![1.0; s.pool.len()];
        alphas[i] = 0.0;
        let gnorm = minimize(s, &alphas, Some((&theta_star, DAMPING)));
        assert!(gnorm < 1e-7, "leave-one-out optimum not reached: {gnorm:e}");
        let delta = p.validation_loss(&s.model.params.head.data) - base_val;
        // Leaving out an utterance with φ > 0 lowers the validation loss.
        if delta.signum() == (-phi[i]).signum() {
            agree += 1;
        }
        s.model.params.head.data = theta_star.clone();
    }
    agree
}
