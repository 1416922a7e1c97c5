//! Intent-related word scores and the locate step.
//!
//! `S(w, y)` sums, over every occurrence of `w` in the training utterances
//! of intent `y`, the log-likelihood ratio between the class-conditional LM
//! and the background LM at that position. Words with `S(w, y) > ε` are
//! considered intent-related and become replacement sites.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::data::{IntentLabel, LabelSet, LabeledUtterance, Token, Utterance};
use crate::error::{Error, Result};
use crate::lm::{CausalLm, ClassConditionalLm};

const HEADER: &str = "# got score table v1";

/// Log-likelihood ratio of each position of `utterance` under intent `label`.
pub fn position_scores<C, B>(utterance: &Utterance, label: &IntentLabel, cclm: &C, background: &B) -> Result<Vec<f64>>
where
    C: ClassConditionalLm + ?Sized,
    B: CausalLm + ?Sized,
{
    let cond = cclm.token_log_probs(utterance, label)?;
    let bg = background.token_log_probs(utterance)?;
    Ok(cond.into_iter().zip(bg).map(|(a, b)| a - b).collect())
}

/// `S(w, y)` over `corpus`, counting only utterances labeled `y`.
pub fn intent_score<C, B>(
    w: &Token,
    y: &IntentLabel,
    corpus: &[LabeledUtterance],
    cclm: &C,
    background: &B,
) -> Result<f64>
where
    C: ClassConditionalLm + ?Sized,
    B: CausalLm + ?Sized,
{
    let mut total = 0.0;
    for row in corpus.iter().filter(|r| r.label.index == y.index) {
        if !row.utterance.tokens().contains(w) {
            continue;
        }
        let scores = position_scores(&row.utterance, y, cclm, background)?;
        for (tok, s) in row.utterance.tokens().iter().zip(scores) {
            if tok == w {
                total += s;
            }
        }
    }
    Ok(total)
}

/// Precomputed `S(w, y)` for every `(w, y)` seen in training, plus `ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntentScoreTable {
    labels: LabelSet,
    scores: BTreeMap<(Token, usize), f64>,
    epsilon: f64,
    fingerprint: String,
}

/// Digest of the training corpus and an identifier of the LM backends.
pub fn corpus_fingerprint(train: &[LabeledUtterance], backend_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    h.update([0u8]);
    for row in train {
        h.update(row.label.name.as_bytes());
        h.update([b'\t']);
        h.update(row.utterance.text().as_bytes());
        h.update([b'\n']);
    }
    hex::encode(h.finalize())
}

impl IntentScoreTable {
    /// Scores every training utterance once; contributions are computed in
    /// parallel and summed in corpus order.
    pub fn build<C, B>(
        train: &[LabeledUtterance],
        labels: &LabelSet,
        cclm: &C,
        background: &B,
        epsilon: f64,
        fingerprint: String,
    ) -> Result<Self>
    where
        C: ClassConditionalLm + ?Sized,
        B: CausalLm + ?Sized,
    {
        let parts: Vec<Vec<f64>> = train
            .par_iter()
            .map(|row| position_scores(&row.utterance, &row.label, cclm, background))
            .collect::<Result<_>>()?;
        let mut scores: BTreeMap<(Token, usize), f64> = BTreeMap::new();
        for (row, s) in train.iter().zip(parts) {
            if row.label.index >= labels.len() {
                return Err(Error::UnknownIntent(row.label.name.clone()));
            }
            for (tok, v) in row.utterance.tokens().iter().zip(s) {
                *scores.entry((tok.clone(), row.label.index)).or_insert(0.0) += v;
            }
        }
        Ok(IntentScoreTable { labels: labels.clone(), scores, epsilon, fingerprint })
    }

    pub fn from_scores(labels: LabelSet, scores: BTreeMap<(Token, usize), f64>, epsilon: f64, fingerprint: String) -> Self {
        IntentScoreTable { labels, scores, epsilon, fingerprint }
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// `S(w, y)`; zero for words never seen with intent `y`.
    pub fn score(&self, w: &Token, y: &IntentLabel) -> f64 {
        self.scores.get(&(w.clone(), y.index)).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, IntentLabel, f64)> + '_ {
        self.scores
            .iter()
            .map(|((t, y), &s)| (t, self.labels.get(*y).expect("table labels cover every entry"), s))
    }

    /// The `n` highest-scoring words of intent `y`.
    pub fn top_words(&self, y: &IntentLabel, n: usize) -> Vec<(Token, f64)> {
        let mut v: Vec<(Token, f64)> =
            self.scores.iter().filter(|((_, l), _)| *l == y.index).map(|((t, _), &s)| (t.clone(), s)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(n);
        v
    }

    /// Adds the scores of a table built over a disjoint corpus.
    pub fn merge(&mut self, other: &IntentScoreTable) -> Result<()> {
        if self.labels != other.labels {
            return Err(Error::Precondition("score tables use different label sets".into()));
        }
        for (k, v) in &other.scores {
            *self.scores.entry(k.clone()).or_insert(0.0) += v;
        }
        Ok(())
    }

    /// Positions `j` of `utterance` with `S(w_j, y) > ε`.
    pub fn locate(&self, utterance: &Utterance, y: &IntentLabel) -> Vec<usize> {
        utterance
            .tokens()
            .iter()
            .enumerate()
            .filter(|(_, w)| self.score(w, y) > self.epsilon)
            .map(|(j, _)| j)
            .collect()
    }

    /// Writes the table as sorted `token<TAB>label<TAB>score` rows after a
    /// header carrying the fingerprint, ε and the label order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{HEADER}")?;
        writeln!(out, "# fingerprint\t{}", self.fingerprint)?;
        writeln!(out, "# epsilon\t{}", self.epsilon)?;
        writeln!(out, "# labels\t{}", self.labels.names().join("\t"))?;
        let mut rows: Vec<(&str, &str, f64)> = self
            .scores
            .iter()
            .map(|((t, y), &s)| (t.as_str(), self.labels.names()[*y].as_str(), s))
            .collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (t, l, s) in rows {
            writeln!(out, "{t}\t{l}\t{s}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let bad = |m: &str| Error::parse(path, m);
        if lines.next().transpose()?.as_deref() != Some(HEADER) {
            return Err(bad("missing score-table header"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().transpose()?.ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(&format!("# {name}\t"))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{name}` header line")))
        };
        let fingerprint = field("fingerprint")?;
        let epsilon: f64 = field("epsilon")?.parse().map_err(|_| bad("invalid epsilon"))?;
        let labels = LabelSet::ordered(field("labels")?.split('\t').map(str::to_string).collect())?;
        let mut scores = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(&format!("row {}: expected 3 columns", i + 1)));
            }
            let tok = Token::new(cols[0]).map_err(|e| bad(&e.to_string()))?;
            let label = labels.by_name(cols[1]).ok_or_else(|| Error::UnknownIntent(cols[1].to_string()))?;
            let s: f64 = cols[2].parse().map_err(|_| bad(&format!("row {}: invalid score", i + 1)))?;
            scores.insert((tok, label.index), s);
        }
        Ok(IntentScoreTable { labels, scores, epsilon, fingerprint })
    }

    /// Reads the fingerprint line without loading the rows.
    pub fn stored_fingerprint(path: &Path) -> Result<String> {
        let reader = BufReader::new(fs::File::open(path)?);
        let line = reader.lines().nth(1).transpose()?.unwrap_or_default();
        line.strip_prefix("# fingerprint\t").map(str::to_string).ok_or_else(|| Error::parse(path, "missing fingerprint"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;
    use crate::lm::TabulatedLmBuilder;

    fn rows(labels: &LabelSet, spec: &[(&str, &str)]) -> Vec<LabeledUtterance> {
        spec.iter().map(|(t, l)| LabeledUtterance::new(tokenize(t).unwrap(), labels.by_name(l).unwrap())).collect()
    }

    #[test]
    fn table_round_trips_through_text() {
        let labels = LabelSet::new(["a".to_string(), "b".to_string()]);
        let mut scores = BTreeMap::new();
        scores.insert((Token::new("x").unwrap(), 1), 0.1 + 0.2);
        scores.insert((Token::new("y").unwrap(), 0), -3.5e-7);
        let t = IntentScoreTable::from_scores(labels, scores, 1.5, "abc".into());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        t.save(&p).unwrap();
        assert_eq!(IntentScoreTable::load(&p).unwrap(), t);
        assert_eq!(IntentScoreTable::stored_fingerprint(&p).unwrap(), "abc");
    }

    #[test]
    fn absent_words_score_zero_and_locate_is_strict() {
        let labels = LabelSet::new(["a".to_string()]);
        let lm = TabulatedLmBuilder::new(&["x", "y"], &["a"]).prefix("", Some("a"), &[("x", 0.5)]).build().unwrap();
        let bg = TabulatedLmBuilder::new(&["x", "y"], &[]).prefix("", None, &[("x", 0.25)]).build().unwrap();
        let train = rows(&labels, &[("x", "a")]);
        let t = IntentScoreTable::build(&train, &labels, &lm, &bg, 2f64.ln(), String::new()).unwrap();
        let a = labels.by_name("a").unwrap();
        assert_eq!(t.score(&Token::new("y").unwrap(), &a), 0.0);
        assert!((t.score(&Token::new("x").unwrap(), &a) - 2f64.ln()).abs() < 1e-12);
        assert!(t.locate(&tokenize("x y").unwrap(), &a).is_empty());
        let t = t.with_epsilon(0.69);
        assert_eq!(t.locate(&tokenize("y x").unwrap(), &a), vec![1]);
    }
}
