//! Acceptance report: one PASS/FAIL line per criterion, with the measured
//! values and pinned tolerances. Exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::corpora::{write_clinc, write_snips};
use common::gradcheck::{objectives, worst_error, CONFIGS};
use common::influence_check::{lissa_pearson, loo_sign_agreement, setup};
use common::{constant_classifier, labels, rows, toy_splits, utt};
use got_core::classifier::{train, Classifier, ClassifierShape, TrainObjective, TrainSchedule};
use got_core::data::{build_vocab, load_clinc, load_snips, Utterance, SNIPS_DEFAULT_HOLDOUT};
use got_core::energy::{energy, DetectorConfig, Logits};
use got_core::lm::TabulatedLmBuilder;
use got_core::locate::intent_score;
use got_core::metrics::{auroc, fpr_at_tpr, report, ScoreSet};
use got_core::pipeline::{run_seeds, Pipeline, PipelineConfig};
use got_core::weight::{weight_alpha, weight_alphas};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

/// Runs `check` with a time budget; a panic counts as failure.
fn criterion(name: &'static str, budget: Duration, check: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(check)) {
        Ok(r) => r,
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        }
    };
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let detail = if in_time { detail } else { format!("{detail}; over budget {budget:?}") };
    Outcome { name, pass: pass && in_time, detail, elapsed }
}

fn naive_energy(xs: &[f64]) -> f64 {
    -xs.iter().map(|x| x.exp()).sum::<f64>().ln()
}

fn brute_auroc(ind: &[f64], ood: &[f64]) -> f64 {
    let mut s = 0.0;
    for o in ood {
        for i in ind {
            s += if o > i { 1.0 } else if o == i { 0.5 } else { 0.0 };
        }
    }
    s / (ind.len() * ood.len()) as f64
}

fn brute_fpr(ind: &[f64], ood: &[f64], tpr: f64) -> f64 {
    let mut best = 1.0f64;
    for &t in ind.iter().chain(ood) {
        let tp = ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64;
        let fp = ind.iter().filter(|&&s| s >= t).count() as f64 / ind.len() as f64;
        if tp >= tpr {
            best = best.min(fp);
        }
    }
    best
}

fn equation_oracles() -> (bool, String) {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64, tol: f64| {
        if !((got - want).abs() <= tol) {
            failures.push(format!("{name}: {got} vs {want}"));
        }
    };
    let e = energy(&Logits::new(vec![1.0, 2.0, 3.0]).unwrap(), 1.0).0;
    check("energy", e, naive_energy(&[1.0, 2.0, 3.0]), 1e-6);
    check("energy (4 d.p.)", e, -3.4076, 5e-5);

    let m = constant_classifier(&[6.0]);
    let ind = rows(&m.labels, &[("x", "c0")]);
    check("hinge in", m.energy_reg_loss(&ind, &[], -8.0, -5.0, 1.0).unwrap(), 4.0, 0.0);
    let m = constant_classifier(&[7.0]);
    check("weighted hinge out", m.weighted_energy_reg_loss(&[], &[(utt("z"), 0.5)], -8.0, -5.0, 1.0).unwrap(), 2.0, 0.0);

    let a = weight_alpha(0.05, 0.0, 1.0, 20.0);
    check("alpha", a, 1.0 / (1.0 + 1f64.exp()), 1e-6);
    check("alpha (4 d.p.)", a, 0.2689, 5e-5);

    let l = labels(&["spend", "other"]);
    let cclm = TabulatedLmBuilder::new(&["how", "much", "spend"], &["spend", "other"])
        .prefix("how much", Some("spend"), &[("spend", 0.5)])
        .build()
        .unwrap();
    let bg = TabulatedLmBuilder::new(&["how", "much", "spend"], &[]).prefix("how much", None, &[("spend", 0.25)]).build().unwrap();
    let train = rows(&l, &[("how much spend", "spend")]);
    let s = intent_score(&got_core::data::Token::new("spend").unwrap(), &l.get(0).unwrap(), &train, &cclm, &bg).unwrap();
    check("intent score", s, 2f64.ln(), 1e-12);

    let s1 = ScoreSet::new(vec![1.0, 3.0], vec![2.0, 4.0]).unwrap();
    check("auroc", auroc(&s1).unwrap(), brute_auroc(&s1.ind_scores, &s1.ood_scores), 0.0);
    check("auroc value", auroc(&s1).unwrap(), 0.75, 0.0);
    let s2 = ScoreSet::new(vec![1.0, 2.0, 3.0, 4.0], vec![3.5, 5.0]).unwrap();
    check("fpr95", fpr_at_tpr(&s2, 0.95).unwrap(), brute_fpr(&s2.ind_scores, &s2.ood_scores, 0.95), 0.0);
    check("fpr95 value", fpr_at_tpr(&s2, 0.95).unwrap(), 0.25, 0.0);

    let detail = format!("E(1,2,3) = {e:.8}, alpha = {a:.8}, S = {s:.8}");
    if failures.is_empty() {
        (true, detail)
    } else {
        (false, failures.join("; "))
    }
}

fn gradient_suite() -> (bool, String) {
    let mut worst_all = 0.0f64;
    let mut parts = Vec::new();
    for (name, spec_of) in objectives() {
        let w = worst_error(spec_of);
        worst_all = worst_all.max(w);
        parts.push(format!("{name} {w:.1e}"));
    }
    (worst_all < 1e-4, format!("{CONFIGS} configs, worst relative error: {} (tol 1e-4)", parts.join(", ")))
}

fn reductions() -> (bool, String) {
    let splits = toy_splits(3, 12, 1);
    let vocab = Arc::new(build_vocab(&splits.train, 1));
    let m = Classifier::<f64>::new(vocab, splits.labels.clone(), ClassifierShape { embed_dim: 6, hidden: Some(5) }, 1);
    let ood: Vec<Utterance> = ["can you cook pasta", "tell me a joke", "please play alarm"].iter().map(|t| utt(t)).collect();
    let ones: Vec<(Utterance, f64)> = ood.iter().map(|u| (u.clone(), 1.0)).collect();
    let a = m.weighted_energy_reg_loss(&splits.train, &ones, -1.0, -1.5, 1.0).unwrap();
    let b = m.energy_reg_loss(&splits.train, &ood, -1.0, -1.5, 1.0).unwrap();
    let unit = a.to_bits() == b.to_bits();

    let weighted: Vec<(Utterance, f64)> = ood.iter().map(|u| (u.clone(), 0.7)).collect();
    let schedule = TrainSchedule { epochs: 3, batch_size: 8, ood_batch_size: 2, ..Default::default() };
    let cfg = DetectorConfig { lambda: 0.0, ..Default::default() };
    let e = train(m.clone(), &splits, Some(&weighted), &TrainObjective::Energy(cfg), &schedule).unwrap();
    let ce = train(m, &splits, None, &TrainObjective::CrossEntropy, &schedule).unwrap();
    let lambda0 = e.best.params == ce.best.params;

    let gamma0 = weight_alphas(&[-3.0, 0.0, 0.4, 9.0], 0.0).unwrap().iter().all(|&x| x == 0.5);
    (unit && lambda0 && gamma0, format!("alpha=1 bitwise {unit}, lambda=0 training bitwise {lambda0}, gamma=0 halves {gamma0}"))
}

fn influence() -> (bool, String) {
    let mut s = setup(0);
    let params = s.model.params.head.data.len();
    let r = lissa_pearson(&s);
    let agree = loo_sign_agreement(&mut s, 10);
    (
        r >= 0.95 && agree >= 8 && params <= 500,
        format!(
            "{params} head params, {} train + {} generated, {} validation; pearson {r:.4} (>= 0.95), LOO sign {agree}/10 (>= 8)",
            s.splits.train.len(),
            s.pool.len(),
            s.splits.validation.len()
        ),
    )
}

fn ingestion() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_full.json");
    write_clinc(&path);
    let c = load_clinc(&path).unwrap();
    let clinc = (c.train.len(), c.validation.len(), c.test_ind.len(), c.test_ood.len(), c.num_intents());
    let snips_dir = dir.path().join("snips");
    write_snips(&snips_dir);
    let holdout: BTreeSet<String> = SNIPS_DEFAULT_HOLDOUT.iter().map(|s| s.to_string()).collect();
    let s = load_snips(&snips_dir, &holdout).unwrap();
    let snips = (s.test_ind.len(), s.test_ood.len(), s.num_intents());
    (
        clinc == (15000, 3000, 4500, 1000, 150) && snips == (486, 214, 5),
        format!("CLINC150 {clinc:?}, SNIPS (test_ind, test_ood, K) {snips:?}"),
    )
}

fn metric_invariance() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            let n = rng.gen_range(1..60);
            (0..n).map(|_| (rng.gen_range(-40..40) as f64) * 0.25).collect()
        };
        let s = ScoreSet::new(draw(&mut rng), draw(&mut rng)).unwrap();
        let before = report(&s).unwrap().values();
        let (a, b) = (rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0));
        for t in [s.map(|x| a * x + b), s.map(f64::exp), s.map(|x| x.powi(3) + x), s.map(|x| (x / 10.0).tanh())] {
            let after = report(&t).unwrap().values();
            for (x, y) in before.iter().zip(after) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    (worst <= 1e-12, format!("100 trials x 4 transforms, max change {worst:.1e} (tol 1e-12)"))
}

const SEEDS: usize = 5;

fn directional(cfg: &PipelineConfig, dir: &std::path::Path) -> (bool, String) {
    let r = run_seeds(cfg, dir, SEEDS).unwrap();
    let energy = r.energy.mean.aupr_out;
    let got = r.got.mean.aupr_out;
    let unweighted = r.unweighted.as_ref().expect("unweighted runs requested").mean.aupr_out;
    (
        got - energy >= 0.02 && got >= unweighted,
        format!(
            "mean AUPR-Out over {SEEDS} seeds: energy {energy:.4}, energy+GOT {got:.4} (gain {:+.4}, >= 0.02), without weighting {unweighted:.4}",
            got - energy
        ),
    )
}

fn energy_gap(cfg: &PipelineConfig, dir: &std::path::Path) -> (bool, String) {
    let d = &cfg.detector;
    let mut parts = Vec::new();
    let mut pass = true;
    for i in 0..SEEDS as u64 {
        let c = PipelineConfig { seed: cfg.seed + i, ..cfg.clone() };
        let p = Pipeline::new(c, dir.join(format!("seed-{}", cfg.seed + i))).unwrap();
        let model = p.final_classifier().unwrap();
        let splits = p.splits().unwrap();
        let generated = p.generated().unwrap();
        let ind = splits.train.iter().filter(|r| model.energy(&r.utterance, d.temperature).0 <= d.m_in).count() as f64
            / splits.train.len() as f64;
        let ood = generated.iter().filter(|g| model.energy(&g.utterance, d.temperature).0 >= d.m_out).count() as f64
            / generated.len().max(1) as f64;
        pass &= ind >= 0.8 && ood >= 0.8;
        parts.push(format!("seed {}: IND {:.1}% / OOD {:.1}%", cfg.seed + i, 100.0 * ind, 100.0 * ood));
    }
    (pass, format!("E <= {} / E >= {} (each >= 80%): {}", d.m_in, d.m_out, parts.join(", ")))
}

fn main() {
    let mut outcomes = vec![
        criterion("equation oracles", Duration::from_secs(10), equation_oracles),
        criterion("gradient suite", Duration::from_secs(60), gradient_suite),
        criterion("reduction identities", Duration::from_secs(60), reductions),
        criterion("influence validation", Duration::from_secs(300), influence),
    ];

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.got.report_unweighted = true;
    outcomes.push(criterion("directional reproduction", Duration::from_secs(600), || directional(&cfg, dir.path())));
    outcomes.push(criterion("energy-gap shaping", Duration::from_secs(60), || energy_gap(&cfg, dir.path())));

    outcomes.push(criterion("dataset ingestion", Duration::from_secs(60), ingestion));
    outcomes.push(criterion("metric invariance", Duration::from_secs(60), metric_invariance));

    println!();
    for o in &outcomes {
        println!("{} {:<26} {:>7.1}s  {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.elapsed.as_secs_f64(), o.detail);
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
