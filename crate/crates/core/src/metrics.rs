//! Threshold-free OOD detection metrics.
//!
//! Scores are oriented so that higher means more out-of-distribution; OOD is
//! the positive class unless stated otherwise. Every metric depends only on
//! the joint ranking of the scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub ind_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(ind_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        let s = ScoreSet { ind_scores, ood_scores };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.ind_scores.is_empty() || self.ood_scores.is_empty() {
            return Err(Error::InsufficientData);
        }
        if self.ind_scores.iter().chain(&self.ood_scores).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score set"));
        }
        Ok(())
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScoreSet {
        ScoreSet {
            ind_scores: self.ind_scores.iter().map(|&x| f(x)).collect(),
            ood_scores: self.ood_scores.iter().map(|&x| f(x)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positive {
    Ind,
    Ood,
}

/// Groups of tied scores in descending order, as (positives, negatives).
fn descending_groups(positives: &[f64], negatives: &[f64]) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, bool)> =
        positives.iter().map(|&s| (s, true)).chain(negatives.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut last: Option<f64> = None;
    for (s, pos) in all {
        if last != Some(s) {
            groups.push((0, 0));
            last = Some(s);
        }
        let g = groups.last_mut().unwrap();
        if pos {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Probability that a random OOD score exceeds a random IND score, ties
/// counting one half (Mann-Whitney U with mid-ranks).
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    s.check()?;
    let n_pos = s.ood_scores.len() as f64;
    let n_neg = s.ind_scores.len() as f64;
    // Sweep groups in ascending order, counting negatives strictly below.
    let groups = descending_groups(&s.ood_scores, &s.ind_scores);
    let mut neg_below = 0usize;
    let mut twice_u = 0u128;
    for &(p, n) in groups.iter().rev() {
        twice_u += (p as u128) * (2 * neg_below as u128 + n as u128);
        neg_below += n;
    }
    Ok(twice_u as f64 / 2.0 / (n_pos * n_neg))
}

/// Smallest false-positive rate among achievable thresholds whose
/// true-positive rate is at least `tpr_target` (OOD positive, `score >= τ`).
pub fn fpr_at_tpr(s: &ScoreSet, tpr_target: f64) -> Result<f64> {
    s.check()?;
    let n_pos = s.ood_scores.len() as f64;
    let n_neg = s.ind_scores.len() as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut best = 1.0_f64;
    for (p, n) in descending_groups(&s.ood_scores, &s.ind_scores) {
        tp += p;
        fp += n;
        if tp as f64 / n_pos >= tpr_target {
            best = best.min(fp as f64 / n_neg);
            // FPR only grows from here.
            break;
        }
    }
    Ok(best)
}

/// Average precision: `Σ (R_k − R_{k−1}) · P_k` over achievable thresholds
/// in descending score order. For `Positive::Ind` the scores are negated so
/// that higher means more in-distribution.
pub fn aupr(s: &ScoreSet, positive: Positive) -> Result<f64> {
    s.check()?;
    let (pos, neg): (Vec<f64>, Vec<f64>) = match positive {
        Positive::Ood => (s.ood_scores.clone(), s.ind_scores.clone()),
        Positive::Ind => (
            s.ind_scores.iter().map(|x| -x).collect(),
            s.ood_scores.iter().map(|x| -x).collect(),
        ),
    };
    let n_pos = pos.len() as f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (p, n) in descending_groups(&pos, &neg) {
        tp += p;
        fp += n;
        let recall = tp as f64 / n_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
}

pub fn report(s: &ScoreSet) -> Result<MetricsReport> {
    Ok(MetricsReport {
        auroc: auroc(s)?,
        fpr95: fpr_at_tpr(s, 0.95)?,
        aupr_in: aupr(s, Positive::Ind)?,
        aupr_out: aupr(s, Positive::Ood)?,
    })
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 4] = ["auroc", "fpr95", "aupr_in", "aupr_out"];

    pub fn values(&self) -> [f64; 4] {
        [self.auroc, self.fpr95, self.aupr_in, self.aupr_out]
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        MetricsReport { auroc: v[0], fpr95: v[1], aupr_in: v[2], aupr_out: v[3] }
    }

    /// Flat `key = value` record.
    pub fn to_kv(&self) -> String {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Tab-separated row in `FIELDS` order, for sweep tables.
    pub fn to_row(&self) -> String {
        self.values().iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join("\t")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "AUROC {:.4}  FPR95 {:.4}  AUPR-In {:.4}  AUPR-Out {:.4}",
            self.auroc, self.fpr95, self.aupr_in, self.aupr_out
        )
    }
}

/// Mean and sample standard deviation over several reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub mean: MetricsReport,
    pub std: MetricsReport,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::InsufficientData);
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 4];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values()) {
            *m += v / n;
        }
    }
    let mut var = [0.0; 4];
    if reports.len() > 1 {
        for r in reports {
            for ((s, v), m) in var.iter_mut().zip(r.values()).zip(mean) {
                *s += (v - m) * (v - m) / (n - 1.0);
            }
        }
    }
    Ok(AggregateReport {
        runs: reports.len(),
        mean: MetricsReport::from_values(mean),
        std: MetricsReport::from_values(var.map(f64::sqrt)),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub count_ind: usize,
    pub count_ood: usize,
}

/// Uniform bins over the combined score range. The last bin is closed.
pub fn histogram(s: &ScoreSet, bins: usize) -> Result<Vec<HistogramBin>> {
    s.check()?;
    let bins = bins.max(1);
    let all = s.ind_scores.iter().chain(&s.ood_scores);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> =
        (0..bins).map(|i| HistogramBin { left: lo + i as f64 * width, count_ind: 0, count_ood: 0 }).collect();
    let index = |x: f64| (((x - lo) / width).floor() as usize).min(bins - 1);
    for &x in &s.ind_scores {
        out[index(x)].count_ind += 1;
    }
    for &x in &s.ood_scores {
        out[index(x)].count_ood += 1;
    }
    Ok(out)
}
