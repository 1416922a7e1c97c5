//! Readers for the public intent corpora.
//!
//! CLINC150 ships as a single JSON object mapping split names (`train`,
//! `val`, `test`, `oos_train`, `oos_val`, `oos_test`) to `[text, label]`
//! pairs. SNIPS has no out-of-scope split; unknown intents are produced by
//! holding out whole intents.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde_json::Value;

use super::{tokenize, DatasetSplits, IntentLabel, LabelSet, LabeledUtterance, Utterance};
use crate::error::{Error, Result};

/// Label used by CLINC150 for out-of-scope rows inside regular splits.
pub const CLINC_OOS_LABEL: &str = "oos";

/// The two intents held out as unknown in the standard SNIPS setup.
pub const SNIPS_DEFAULT_HOLDOUT: [&str; 2] = ["SearchCreativeWork", "SearchScreeningEvent"];

type Pairs = Vec<(String, String)>;

fn parse_pairs(path: &Path, key: &str, v: &Value) -> Result<Pairs> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Schema(format!("split `{key}` is not an array")))?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| match row.as_array().map(|a| a.as_slice()) {
            Some([Value::String(text), Value::String(label)]) => Ok((text.clone(), label.clone())),
            _ => Err(Error::parse(path, format!("split `{key}` row {i} is not a [text, label] pair"))),
        })
        .collect()
}

/// Loads the CLINC150 single-file layout.
///
/// `train` is required; the other splits default to empty. `oos_test` and
/// any `oos`-labeled test rows become `test_ood`. Out-of-scope rows in the
/// training or validation splits (`oos_train`, `oos_val`, or `oos` labels)
/// are dropped so that those splits stay in-distribution.
pub fn load_clinc(path: &Path) -> Result<DatasetSplits> {
    let raw = fs::read_to_string(path)?;
    let root: Value = serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))?;
    let obj = root
        .as_object()
        .ok_or_else(|| Error::Schema("CLINC150 file must be a JSON object of splits".into()))?;

    let get = |key: &str| -> Result<Pairs> {
        match obj.get(key) {
            Some(v) => parse_pairs(path, key, v),
            None => Ok(Vec::new()),
        }
    };
    if !obj.contains_key("train") {
        return Err(Error::Schema("missing split key `train`".into()));
    }
    let train = get("train")?;
    let val = get("val")?;
    let test = get("test")?;
    let oos_test = get("oos_test")?;

    let labels = LabelSet::new(
        train
            .iter()
            .chain(&val)
            .chain(&test)
            .filter(|(_, l)| l != CLINC_OOS_LABEL)
            .map(|(_, l)| l.clone()),
    );

    let ind = |rows: &Pairs| -> Result<Vec<LabeledUtterance>> {
        rows.iter()
            .filter(|(_, l)| l != CLINC_OOS_LABEL)
            .map(|(t, l)| Ok(LabeledUtterance::new(tokenize(t)?, labels.by_name(l).expect("label collected above"))))
            .collect()
    };

    let mut test_ood: Vec<Utterance> = test
        .iter()
        .filter(|(_, l)| l == CLINC_OOS_LABEL)
        .map(|(t, _)| tokenize(t))
        .collect::<Result<_>>()?;
    for (t, _) in &oos_test {
        test_ood.push(tokenize(t)?);
    }

    Ok(DatasetSplits {
        train: ind(&train)?,
        validation: ind(&val)?,
        test_ind: ind(&test)?,
        test_ood,
        labels,
    })
}

#[derive(Default)]
struct SnipsRows {
    train: Pairs,
    valid: Pairs,
    test: Pairs,
}

fn read_snips_dir(dir: &Path) -> Result<SnipsRows> {
    let read_split = |name: &str| -> Result<Pairs> {
        let sub = dir.join(name);
        let texts = fs::read_to_string(sub.join("seq.in"))?;
        let labels = fs::read_to_string(sub.join("label"))?;
        let texts: Vec<&str> = texts.lines().filter(|l| !l.trim().is_empty()).collect();
        let labels: Vec<&str> = labels.lines().filter(|l| !l.trim().is_empty()).collect();
        if texts.len() != labels.len() {
            return Err(Error::parse(
                &sub,
                format!("{} utterances but {} labels", texts.len(), labels.len()),
            ));
        }
        Ok(texts.into_iter().zip(labels).map(|(t, l)| (t.to_string(), l.trim().to_string())).collect())
    };
    let valid = if dir.join("valid").exists() { read_split("valid")? } else { read_split("dev")? };
    Ok(SnipsRows { train: read_split("train")?, valid, test: read_split("test")? })
}

fn read_snips_tsv(path: &Path) -> Result<SnipsRows> {
    let mut rows = SnipsRows::default();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [split, text, label] = fields.as_slice() else {
            return Err(Error::parse(path, format!("line {}: expected split<TAB>text<TAB>label", i + 1)));
        };
        let pair = (text.to_string(), label.trim().to_string());
        match *split {
            "train" => rows.train.push(pair),
            "valid" | "val" | "validation" | "dev" => rows.valid.push(pair),
            "test" => rows.test.push(pair),
            other => return Err(Error::parse(path, format!("line {}: unknown split `{other}`", i + 1))),
        }
    }
    Ok(rows)
}

/// Loads SNIPS and turns `holdout_intents` into unknown intents.
///
/// `path` is either the preprocessed directory layout
/// (`{train,valid,test}/{seq.in,label}`) or a TSV file of
/// `split<TAB>text<TAB>label` rows. Held-out test rows become `test_ood`;
/// held-out train and validation rows are dropped. Remaining intents are
/// re-indexed densely in sorted order.
pub fn load_snips(path: &Path, holdout_intents: &BTreeSet<String>) -> Result<DatasetSplits> {
    if holdout_intents.is_empty() {
        return Err(Error::Precondition("holdout intent set must be nonempty".into()));
    }
    let rows = if path.is_dir() { read_snips_dir(path)? } else { read_snips_tsv(path)? };

    let all: BTreeSet<&str> =
        rows.train.iter().chain(&rows.valid).chain(&rows.test).map(|(_, l)| l.as_str()).collect();
    for h in holdout_intents {
        if !all.contains(h.as_str()) {
            return Err(Error::UnknownIntent(h.clone()));
        }
    }
    let labels = LabelSet::new(all.iter().filter(|l| !holdout_intents.contains(**l)).map(|l| l.to_string()));

    let ind = |pairs: &Pairs| -> Result<Vec<LabeledUtterance>> {
        pairs
            .iter()
            .filter(|(_, l)| !holdout_intents.contains(l))
            .map(|(t, l)| Ok(LabeledUtterance::new(tokenize(t)?, labels.by_name(l).expect("kept label"))))
            .collect()
    };
    let test_ood = rows
        .test
        .iter()
        .filter(|(_, l)| holdout_intents.contains(l))
        .map(|(t, _)| tokenize(t))
        .collect::<Result<_>>()?;

    Ok(DatasetSplits {
        train: ind(&rows.train)?,
        validation: ind(&rows.valid)?,
        test_ind: ind(&rows.test)?,
        test_ood,
        labels,
    })
}

/// Loads a canonical corpus file (`{"text", "label"}` lines) as a labeled
/// split, assigning indices from `labels`.
pub fn labeled_from_corpus(path: &Path, labels: &LabelSet) -> Result<Vec<LabeledUtterance>> {
    super::read_corpus(path)?
        .into_iter()
        .map(|r| {
            let name = r.label.ok_or_else(|| Error::Schema(format!("{}: unlabeled row", path.display())))?;
            let label: IntentLabel = labels.by_name(&name).ok_or(Error::UnknownIntent(name))?;
            Ok(LabeledUtterance::new(tokenize(&r.text)?, label))
        })
        .collect()
}

/// Per-intent row counts, useful when checking a loader against published
/// statistics.
pub fn intent_histogram(rows: &[LabeledUtterance]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in rows {
        *m.entry(r.label.name.clone()).or_insert(0) += 1;
    }
    m
}
