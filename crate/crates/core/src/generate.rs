//! Candidate scoring and OOD utterance assembly.
//!
//! For a located position `t`, every admissible replacement `c` is scored by
//! `Q(c) = log p(c | w_<t, w_>t) − log Σ_y p(c | w_<t, y) p(y)`: it should
//! fit the context yet be unlikely under every known intent. The top-K
//! candidates are spliced into the utterance one at a time.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, IntentLabel, LabelSet, LabeledUtterance, Token, Utterance};
use crate::error::{Error, Result};
use crate::lm::{mixture_log_prob, ClassConditionalLm, LabelPrior, MaskedLm};
use crate::locate::IntentScoreTable;

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub token: Token,
    pub q: f64,
}

/// A training utterance with one word replaced.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedUtterance {
    pub utterance: Utterance,
    /// Index of the source utterance in the training split.
    pub origin_id: usize,
    /// Intent of the source utterance.
    pub intent: String,
    pub position: usize,
    pub replacement: Token,
    pub q: f64,
}

/// `Q(c)` for one candidate.
pub fn candidate_score<M, C>(
    c: &Token,
    utterance: &Utterance,
    t: usize,
    masked: &M,
    cclm: &C,
    prior: &LabelPrior,
) -> Result<f64>
where
    M: MaskedLm + ?Sized,
    C: ClassConditionalLm + ?Sized,
{
    if t >= utterance.len() {
        return Err(Error::Precondition(format!("position {t} outside utterance of length {}", utterance.len())));
    }
    let context = masked.masked_distribution(utterance, t)?.log_prob(c);
    let mixture = mixture_log_prob(cclm, &utterance.tokens()[..t], c, prior)?;
    Ok(context - mixture)
}

/// The `k` highest-`Q` admissible replacements at position `t`.
///
/// The pool is the masked backend's support minus specials, punctuation,
/// the original word and `exclusions`. Ties break lexicographically.
/// Candidates unknown to the class-conditional LM are scored with its UNK
/// probability.
pub fn top_k_candidates<M, C>(
    utterance: &Utterance,
    t: usize,
    k: usize,
    masked: &M,
    cclm: &C,
    prior: &LabelPrior,
    exclusions: &[Token],
) -> Result<Vec<Candidate>>
where
    M: MaskedLm + ?Sized,
    C: ClassConditionalLm + ?Sized,
{
    if k == 0 {
        return Err(Error::Precondition("K must be >= 1".into()));
    }
    if t >= utterance.len() {
        return Err(Error::Precondition(format!("position {t} outside utterance of length {}", utterance.len())));
    }
    let original = &utterance.tokens()[t];
    let context = masked.masked_distribution(utterance, t)?;
    let mixture = cclm.mixture_distribution(&utterance.tokens()[..t], prior)?;
    let mut pool: Vec<Candidate> = context
        .iter()
        .enumerate()
        .filter(|(id, (tok, lp))| {
            !context.support().is_special(*id as u32)
                && !tok.is_punctuation()
                && *tok != original
                && !exclusions.contains(tok)
                && lp.is_finite()
        })
        .map(|(_, (tok, lp))| Candidate { token: tok.clone(), q: lp - mixture.log_prob(tok) })
        .filter(|c| !c.q.is_nan())
        .collect();
    if pool.len() < k {
        return Err(Error::VocabularyExhausted { requested: k, available: pool.len() });
    }
    pool.sort_by(|a, b| b.q.total_cmp(&a.q).then_with(|| a.token.cmp(&b.token)));
    pool.truncate(k);
    Ok(pool)
}

/// Splices `c` into `origin` at position `t`.
pub fn assemble(origin: &LabeledUtterance, origin_id: usize, t: usize, c: &Candidate) -> GeneratedUtterance {
    GeneratedUtterance {
        utterance: origin.utterance.with_replacement(t, c.token.clone()),
        origin_id,
        intent: origin.label.name.clone(),
        position: t,
        replacement: c.token.clone(),
        q: c.q,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    /// Candidates per located position.
    pub k: usize,
    /// Generated utterances kept per intent.
    pub per_intent_target: usize,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { k: 2, per_intent_target: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationOutcome {
    pub generated: Vec<GeneratedUtterance>,
    /// Pool size per intent before downsampling.
    pub pool_sizes: BTreeMap<String, usize>,
    /// Intents for which no position was located.
    pub empty_intents: Vec<String>,
}

/// Every located position of every training utterance yields up to `k`
/// generated utterances; each intent's pool is then downsampled uniformly
/// (seeded) to `per_intent_target`. Output order follows the training
/// split, so runs are reproducible regardless of thread count.
pub fn generate_corpus<M, C>(
    train: &[LabeledUtterance],
    labels: &LabelSet,
    table: &IntentScoreTable,
    masked: &M,
    cclm: &C,
    prior: &LabelPrior,
    cfg: &GenerateConfig,
) -> Result<GenerationOutcome>
where
    M: MaskedLm + ?Sized,
    C: ClassConditionalLm + ?Sized,
{
    let per_utterance: Vec<Vec<GeneratedUtterance>> = train
        .par_iter()
        .enumerate()
        .map(|(id, row)| {
            let mut out = Vec::new();
            for t in table.locate(&row.utterance, &row.label) {
                for c in top_k_candidates(&row.utterance, t, cfg.k, masked, cclm, prior, &[])? {
                    out.push(assemble(row, id, t, &c));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut pools: Vec<Vec<GeneratedUtterance>> = vec![Vec::new(); labels.len()];
    for (row, gens) in train.iter().zip(per_utterance) {
        pools[row.label.index].extend(gens);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generated = Vec::new();
    let mut pool_sizes = BTreeMap::new();
    let mut empty_intents = Vec::new();
    for (label, pool) in labels.iter().zip(pools) {
        pool_sizes.insert(label.name.clone(), pool.len());
        if pool.is_empty() {
            warn!("no intent-related position located for intent `{}`", label.name);
            empty_intents.push(label.name.clone());
            continue;
        }
        if pool.len() <= cfg.per_intent_target {
            if pool.len() < cfg.per_intent_target {
                warn!("intent `{}`: only {} generated utterances (target {})", label.name, pool.len(), cfg.per_intent_target);
            }
            generated.extend(pool);
            continue;
        }
        let mut keep = rand::seq::index::sample(&mut rng, pool.len(), cfg.per_intent_target).into_vec();
        keep.sort_unstable();
        let mut pool: Vec<Option<GeneratedUtterance>> = pool.into_iter().map(Some).collect();
        generated.extend(keep.into_iter().map(|i| pool[i].take().expect("indices are distinct")));
    }
    Ok(GenerationOutcome { generated, pool_sizes, empty_intents })
}

/// One line of the generated-corpus JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub text: String,
    pub origin_id: usize,
    pub position: usize,
    pub replacement: String,
    pub q: f64,
    pub intent: String,
}

impl From<&GeneratedUtterance> for GeneratedRecord {
    fn from(g: &GeneratedUtterance) -> Self {
        GeneratedRecord {
            text: g.utterance.text(),
            origin_id: g.origin_id,
            position: g.position,
            replacement: g.replacement.as_str().to_string(),
            q: g.q,
            intent: g.intent.clone(),
        }
    }
}

impl GeneratedRecord {
    pub fn to_generated(&self) -> Result<GeneratedUtterance> {
        let utterance = tokenize(&self.text)?;
        let replacement = Token::new(self.replacement.clone())?;
        if utterance.tokens().get(self.position) != Some(&replacement) {
            return Err(Error::Schema(format!("record `{}` does not contain its replacement at {}", self.text, self.position)));
        }
        Ok(GeneratedUtterance {
            utterance,
            origin_id: self.origin_id,
            intent: self.intent.clone(),
            position: self.position,
            replacement,
            q: self.q,
        })
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_generated(path: &Path, generated: &[GeneratedUtterance]) -> Result<()> {
    write_jsonl(path, generated.iter().map(GeneratedRecord::from))
}

pub fn read_generated(path: &Path) -> Result<Vec<GeneratedUtterance>> {
    read_jsonl::<GeneratedRecord>(path)?.iter().map(GeneratedRecord::to_generated).collect()
}

/// Label for the intent of the generated utterance's source.
pub fn origin_label(g: &GeneratedUtterance, labels: &LabelSet) -> Result<IntentLabel> {
    labels.by_name(&g.intent).ok_or_else(|| Error::UnknownIntent(g.intent.clone()))
}
