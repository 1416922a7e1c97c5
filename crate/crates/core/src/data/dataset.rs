use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, Utterance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IntentLabel {
    pub name: String,
    pub index: usize,
}

impl IntentLabel {
    pub fn new(name: impl Into<String>, index: usize) -> Self {
        IntentLabel { name: name.into(), index }
    }
}

/// The ordered set of in-distribution intents; position is the label index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    /// Sorts and deduplicates `names`.
    pub fn new<I: IntoIterator<Item = String>>(names: I) -> Self {
        let mut names: Vec<String> = names.into_iter().collect();
        names.sort();
        names.dedup();
        LabelSet { names }
    }

    /// Keeps `names` in the given order. Fails on duplicates.
    pub fn ordered(names: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::Schema(format!("duplicate intent `{n}`")));
            }
        }
        Ok(LabelSet { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, index: usize) -> Option<IntentLabel> {
        self.names.get(index).map(|n| IntentLabel::new(n.clone(), index))
    }

    pub fn by_name(&self, name: &str) -> Option<IntentLabel> {
        self.names.iter().position(|n| n == name).map(|i| IntentLabel::new(name, i))
    }

    pub fn iter(&self) -> impl Iterator<Item = IntentLabel> + '_ {
        self.names.iter().enumerate().map(|(i, n)| IntentLabel::new(n.clone(), i))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub utterance: Utterance,
    pub label: IntentLabel,
}

impl LabeledUtterance {
    pub fn new(utterance: Utterance, label: IntentLabel) -> Self {
        LabeledUtterance { utterance, label }
    }
}

/// Train/validation/test partitions. Train and validation hold only
/// in-distribution utterances; unknown-intent utterances live in `test_ood`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplits {
    pub labels: LabelSet,
    pub train: Vec<LabeledUtterance>,
    pub validation: Vec<LabeledUtterance>,
    pub test_ind: Vec<LabeledUtterance>,
    pub test_ood: Vec<Utterance>,
}

impl DatasetSplits {
    pub fn num_intents(&self) -> usize {
        self.labels.len()
    }

    /// Checks that every label is drawn from `labels`.
    pub fn validate(&self) -> Result<()> {
        for (split, rows) in [("train", &self.train), ("validation", &self.validation), ("test_ind", &self.test_ind)] {
            for r in rows {
                match self.labels.get(r.label.index) {
                    Some(l) if l == r.label => {}
                    _ => {
                        return Err(Error::Schema(format!(
                            "{split} row labeled {:?} is not in the label set",
                            r.label
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Training utterances of intent `index`.
    pub fn train_of_intent(&self, index: usize) -> impl Iterator<Item = &LabeledUtterance> {
        self.train.iter().filter(move |r| r.label.index == index)
    }

    /// Writes the splits as canonical corpus files plus `labels.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("labels.txt"), self.labels.names().join("\n") + "\n")?;
        write_corpus(&dir.join("train.jsonl"), self.train.iter().map(CorpusRecord::from))?;
        write_corpus(&dir.join("validation.jsonl"), self.validation.iter().map(CorpusRecord::from))?;
        write_corpus(&dir.join("test_ind.jsonl"), self.test_ind.iter().map(CorpusRecord::from))?;
        write_corpus(
            &dir.join("test_ood.jsonl"),
            self.test_ood.iter().map(|u| CorpusRecord { text: u.text(), label: None }),
        )?;
        Ok(())
    }

    /// Reads splits written by [`DatasetSplits::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let labels_path = dir.join("labels.txt");
        let names: Vec<String> = fs::read_to_string(&labels_path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let labels = LabelSet::ordered(names)?;
        let labeled = |name: &str| -> Result<Vec<LabeledUtterance>> {
            let path = dir.join(name);
            read_corpus(&path)?
                .into_iter()
                .map(|r| {
                    let label_name = r
                        .label
                        .ok_or_else(|| Error::Schema(format!("{}: unlabeled row", path.display())))?;
                    let label = labels
                        .by_name(&label_name)
                        .ok_or_else(|| Error::UnknownIntent(label_name.clone()))?;
                    Ok(LabeledUtterance::new(tokenize(&r.text)?, label))
                })
                .collect()
        };
        let train = labeled("train.jsonl")?;
        let validation = labeled("validation.jsonl")?;
        let test_ind = labeled("test_ind.jsonl")?;
        let test_ood = read_corpus(&dir.join("test_ood.jsonl"))?
            .into_iter()
            .map(|r| tokenize(&r.text))
            .collect::<Result<_>>()?;
        Ok(DatasetSplits { labels, train, validation, test_ind, test_ood })
    }

    /// Label ratios in `train`, indexed by label.
    pub fn train_label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for r in &self.train {
            counts[r.label.index] += 1;
        }
        counts
    }

    pub fn summary(&self) -> BTreeMap<&'static str, usize> {
        BTreeMap::from([
            ("train", self.train.len()),
            ("validation", self.validation.len()),
            ("test_ind", self.test_ind.len()),
            ("test_ood", self.test_ood.len()),
            ("intents", self.labels.len()),
        ])
    }
}

/// One line of the canonical corpus format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl From<&LabeledUtterance> for CorpusRecord {
    fn from(r: &LabeledUtterance) -> Self {
        CorpusRecord { text: r.utterance.text(), label: Some(r.label.name.clone()) }
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_corpus<I: IntoIterator<Item = CorpusRecord>>(path: &Path, records: I) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Unlabeled utterances from a canonical corpus file (labels ignored).
pub fn read_unlabeled(path: &Path) -> Result<Vec<Utterance>> {
    read_corpus(path)?.into_iter().map(|r| tokenize(&r.text)).collect()
}
