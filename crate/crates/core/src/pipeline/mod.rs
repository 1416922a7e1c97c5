//! End-to-end orchestration with resumable, content-addressed stages.
//!
//! Every stage writes one artifact into the work directory and records in
//! `manifest.json` a digest of its inputs (relevant configuration plus the
//! digests of upstream artifacts) and of its output. A later run reuses an
//! artifact only when both digests still match, so editing the
//! configuration recomputes exactly the affected stages.

mod config;
mod manifest;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classifier::{train, Classifier, TrainObjective, TrainSchedule};
use crate::data::{
    generate_synthetic, load_clinc, load_snips, read_unlabeled, synthetic_general_corpus, write_corpus,
    CorpusRecord, DatasetSplits, Utterance, Vocabulary,
};
use crate::energy::lower_quantile;
use crate::error::{Error, Result};
use crate::generate::{generate_corpus, read_generated, write_generated, GenerateConfig, GeneratedUtterance};
use crate::lm::{
    label_prior, BiRnnMaskedLm, CausalLm, ClassConditionalLm, LmTrainConfig, MaskedLm, RemoteLm, RnnLm,
};
use crate::locate::{corpus_fingerprint, IntentScoreTable};
use crate::metrics::{aggregate, histogram, report, AggregateReport, HistogramBin, MetricsReport, ScoreSet};
use crate::weight::{read_weighted, weight_corpus, write_weighted, WeightConfig, WeightedUtterance};

pub use config::{
    AutoKeyword, BackendConfig, BackendKind, ClassifierConfig, DataConfig, DataSource, GotConfig, MspConfig, OrAuto,
    PipelineConfig, LM_URL_ENV,
};
pub use manifest::{digest_json, digest_path, RunManifest, StageRecord};

pub const MANIFEST: &str = "manifest.json";

/// How a classifier turns an utterance into an OOD score (higher = more OOD).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    /// Energy at the configured temperature.
    Energy,
    /// Negative maximum softmax probability.
    Msp,
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" => Ok(Scorer::Energy),
            "msp" => Ok(Scorer::Msp),
            other => Err(Error::Config(format!("unknown scorer `{other}` (expected energy or msp)"))),
        }
    }
}

/// A classifier produced by the pipeline, or a checkpoint on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Base,
    Weighting,
    Final,
    Unweighted,
    Msp,
    Path(PathBuf),
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "base" => ModelChoice::Base,
            "weighting" => ModelChoice::Weighting,
            "final" => ModelChoice::Final,
            "unweighted" => ModelChoice::Unweighted,
            "msp" => ModelChoice::Msp,
            path => ModelChoice::Path(PathBuf::from(path)),
        })
    }
}

/// Test-set evaluation of one classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer: Scorer,
    pub metrics: MetricsReport,
    /// Intent accuracy on the IND test split.
    pub accuracy: f64,
    /// Threshold at the configured validation quantile; a score at or below
    /// it is classified IND.
    pub delta: f64,
    /// Fraction of test OOD utterances scoring above `delta`.
    pub ood_rejected: f64,
}

/// Outcome of [`Pipeline::run_all`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    /// Energy score of the cross-entropy base classifier.
    pub energy: EvalReport,
    /// Energy score after fine-tuning on the weighted generated pool.
    pub got: EvalReport,
    /// Fine-tuned on the same pool with every weight set to one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unweighted: Option<EvalReport>,
    pub generated: usize,
}

/// Outcome of [`Pipeline::run_msp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MspReport {
    pub base: EvalReport,
    pub finetuned: EvalReport,
}

/// Built-in or remote language models used by the locate and generate stages.
pub struct LanguageModels {
    pub class_conditional: Box<dyn ClassConditionalLm>,
    pub background: Box<dyn CausalLm>,
    pub masked: Box<dyn MaskedLm>,
    /// Identifies the models for cache keys and score-table fingerprints.
    pub id: String,
}

/// One pipeline run rooted at a work directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
    manifest: Mutex<RunManifest>,
    force: BTreeSet<String>,
    rebuilt: Mutex<BTreeSet<String>>,
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn remove_path(path: &Path) -> Result<()> {
    if path.is_dir() {
        fs::remove_dir_all(path)?;
    } else if path.exists() {
        fs::remove_file(path)?;
    }
    Ok(())
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to)?;
    for e in fs::read_dir(from)? {
        let e = e?;
        let dst = to.join(e.file_name());
        if e.path().is_dir() {
            copy_tree(&e.path(), &dst)?;
        } else {
            fs::copy(e.path(), dst)?;
        }
    }
    Ok(())
}

fn weights_of(generated: &[GeneratedUtterance], alpha: f64) -> Vec<(Utterance, f64)> {
    generated.iter().map(|g| (g.utterance.clone(), alpha)).collect()
}

impl Pipeline {
    /// Opens (creating if needed) `dir` as the work directory of a run.
    pub fn new(cfg: PipelineConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut manifest = RunManifest::load_or_default(&dir.join(MANIFEST))?;
        manifest.seed = cfg.seed;
        manifest.config = cfg.to_toml();
        Ok(Pipeline {
            cfg,
            dir,
            manifest: Mutex::new(manifest),
            force: BTreeSet::new(),
            rebuilt: Mutex::new(BTreeSet::new()),
        })
    }

    /// Rebuilds the named stages once even if their artifacts are current.
    pub fn with_forced<I: IntoIterator<Item = String>>(mut self, stages: I) -> Self {
        self.force.extend(stages);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> RunManifest {
        self.manifest.lock().expect("manifest lock").clone()
    }

    fn digest_of(&self, stage: &str) -> String {
        self.manifest.lock().expect("manifest lock").stages.get(stage).map(|r| r.sha256.clone()).unwrap_or_default()
    }

    /// Loads the artifact of `name` if its recorded inputs match `inputs`,
    /// otherwise builds, saves and records it.
    fn stage<T>(
        &self,
        name: &'static str,
        artifact: &str,
        inputs: serde_json::Value,
        load: impl FnOnce(&Path) -> Result<T>,
        build: impl FnOnce() -> Result<T>,
        save: impl FnOnce(&T, &Path) -> Result<()>,
    ) -> Result<T> {
        let key = digest_json(&inputs);
        let path = self.dir.join(artifact);
        let forced = self.force.contains(name) && !self.rebuilt.lock().expect("rebuilt lock").contains(name);
        let recorded = self.manifest.lock().expect("manifest lock").stages.get(name).cloned();
        if let Some(rec) = recorded.filter(|r| r.key == key && r.artifact == artifact && !forced) {
            if path.exists() && digest_path(&path)? == rec.sha256 {
                return load(&path).map_err(|e| e.in_stage(name));
            }
            warn!("stage {name}: artifact {} is missing or modified; rebuilding", path.display());
        }
        info!("stage {name}: building");
        let start = Instant::now();
        let value = build().map_err(|e| e.in_stage(name))?;
        let tmp = tmp_path(&path);
        remove_path(&tmp)?;
        save(&value, &tmp).map_err(|e| e.in_stage(name))?;
        remove_path(&path)?;
        fs::rename(&tmp, &path)?;
        let record = StageRecord {
            artifact: artifact.to_string(),
            key,
            sha256: digest_path(&path)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        info!("stage {name}: done in {:.1}s", record.seconds);
        self.rebuilt.lock().expect("rebuilt lock").insert(name.to_string());
        let mut m = self.manifest.lock().expect("manifest lock");
        m.stages.insert(name.to_string(), record);
        m.save(&self.dir.join(MANIFEST))?;
        Ok(value)
    }

    /// Train/validation/test splits (stage `splits`).
    pub fn splits(&self) -> Result<DatasetSplits> {
        let d = &self.cfg.data;
        let source_digest = match d.source {
            crate::pipeline::DataSource::Synthetic => String::new(),
            _ => digest_path(&d.path).map_err(|e| e.in_stage("splits"))?,
        };
        let inputs = json!({
            "source": d.source,
            "source_digest": source_digest,
            "holdout": d.holdout,
            "synthetic": d.synthetic,
        });
        self.stage(
            "splits",
            "splits",
            inputs,
            |p| DatasetSplits::load(p),
            || {
                let splits = match d.source {
                    DataSource::Synthetic => generate_synthetic(&d.synthetic),
                    DataSource::Clinc => load_clinc(&d.path)?,
                    DataSource::Snips => load_snips(&d.path, &d.holdout.iter().cloned().collect())?,
                    DataSource::Splits => DatasetSplits::load(&d.path)?,
                };
                splits.validate()?;
                if splits.train.is_empty() {
                    return Err(Error::Precondition("training split is empty".into()));
                }
                Ok(splits)
            },
            |s, p| s.save(p),
        )
    }

    /// Unlabeled corpus for the built-in LMs: the training utterances plus
    /// any general-domain text (stage `lm_corpus`).
    pub fn lm_corpus(&self) -> Result<Vec<Utterance>> {
        let splits = self.splits()?;
        let b = &self.cfg.backend;
        let extra_digest = if b.corpus.as_os_str().is_empty() {
            String::new()
        } else {
            digest_path(&b.corpus).map_err(|e| e.in_stage("lm_corpus"))?
        };
        let synthetic = self.cfg.data.source == DataSource::Synthetic;
        let inputs = json!({
            "splits": self.digest_of("splits"),
            "extra": extra_digest,
            "general": synthetic.then(|| self.cfg.data.synthetic.clone()),
        });
        self.stage(
            "lm_corpus",
            "lm_corpus.jsonl",
            inputs,
            read_unlabeled,
            || {
                let mut corpus: Vec<Utterance> = splits.train.iter().map(|r| r.utterance.clone()).collect();
                if synthetic {
                    corpus.extend(synthetic_general_corpus(&self.cfg.data.synthetic));
                }
                if !b.corpus.as_os_str().is_empty() {
                    corpus.extend(read_unlabeled(&b.corpus)?);
                }
                Ok(corpus)
            },
            |c, p| write_corpus(p, c.iter().map(|u| CorpusRecord { text: u.text(), label: None })),
        )
    }

    /// Vocabulary shared by the classifier and the built-in LMs, built from
    /// the LM corpus.
    pub fn vocab(&self) -> Result<Arc<Vocabulary>> {
        Ok(self.lm_vocab(&self.lm_corpus()?))
    }

    fn lm_vocab(&self, corpus: &[Utterance]) -> Arc<Vocabulary> {
        Arc::new(Vocabulary::from_utterances(corpus, self.cfg.data.min_count))
    }

    fn schedule(&self, stage: &str, s: &TrainSchedule) -> TrainSchedule {
        TrainSchedule { seed: self.cfg.stage_seed(stage, s.seed), ..s.clone() }
    }

    fn save_classifier(m: &Classifier<f64>, p: &Path) -> Result<()> {
        m.save(p)
    }

    /// Cross-entropy classifier (stage `base_classifier`).
    pub fn base_classifier(&self) -> Result<Classifier<f64>> {
        let splits = self.splits()?;
        let vocab = self.vocab()?;
        let c = &self.cfg.classifier;
        let inputs = json!({
            "splits": self.digest_of("splits"),
            "corpus": self.digest_of("lm_corpus"),
            "min_count": self.cfg.data.min_count,
            "shape": c.shape,
            "schedule": c.base,
            "seed": self.cfg.seed,
        });
        self.stage(
            "base_classifier",
            "base_classifier.ckpt",
            inputs,
            |p| Classifier::load(p),
            || {
                let init_seed = self.cfg.stage_seed("base_classifier.init", c.base.seed);
                let init = Classifier::new(vocab, splits.labels.clone(), c.shape.clone(), init_seed);
                let schedule = self.schedule("base_classifier", &c.base);
                Ok(train(init, &splits, None, &TrainObjective::CrossEntropy, &schedule)?.best)
            },
            Self::save_classifier,
        )
    }

    fn lm_config(&self, stage: &str, cfg: &LmTrainConfig) -> LmTrainConfig {
        LmTrainConfig { seed: self.cfg.stage_seed(stage, cfg.seed), ..cfg.clone() }
    }

    fn remote(&self) -> RemoteLm {
        RemoteLm::new(&self.cfg.backend.url, Duration::from_secs(self.cfg.backend.timeout_secs))
    }

    fn lm_inputs(&self, cfg: &LmTrainConfig) -> serde_json::Value {
        json!({
            "splits": self.digest_of("splits"),
            "corpus": self.digest_of("lm_corpus"),
            "min_count": self.cfg.data.min_count,
            "lm": cfg,
            "seed": self.cfg.seed,
        })
    }

    /// Class-conditional LM (stage `cclm` for the built-in backend).
    pub fn class_conditional_lm(&self) -> Result<Box<dyn ClassConditionalLm>> {
        let splits = self.splits()?;
        let b = &self.cfg.backend;
        if b.kind == BackendKind::Remote && b.remote_class_conditional {
            return Ok(Box::new(self.remote().with_labels(splits.labels.clone())));
        }
        let corpus = self.lm_corpus()?;
        let lm = self.stage(
            "cclm",
            "cclm.ckpt",
            self.lm_inputs(&b.causal),
            |p| RnnLm::<f64>::load(p),
            || {
                let cfg = self.lm_config("cclm", &b.causal);
                let (lm, history) = RnnLm::train_conditional(self.lm_vocab(&corpus), splits.labels.clone(), &splits.train, &cfg)?;
                info!("class-conditional LM NLL per epoch: {history:?}");
                Ok(lm)
            },
            |m, p| m.save(p),
        )?;
        Ok(Box::new(lm))
    }

    /// Background LM (stage `background` for the built-in backend).
    pub fn background_lm(&self) -> Result<Box<dyn CausalLm>> {
        if self.cfg.backend.kind == BackendKind::Remote {
            return Ok(Box::new(self.remote()));
        }
        let corpus = self.lm_corpus()?;
        let b = &self.cfg.backend;
        let lm = self.stage(
            "background",
            "background.ckpt",
            self.lm_inputs(&b.causal),
            |p| RnnLm::<f64>::load(p),
            || {
                let cfg = self.lm_config("background", &b.causal);
                let (lm, history) = RnnLm::train_background(self.lm_vocab(&corpus), &corpus, &cfg)?;
                info!("background LM NLL per epoch: {history:?}");
                Ok(lm)
            },
            |m, p| m.save(p),
        )?;
        Ok(Box::new(lm))
    }

    /// Masked LM (stage `masked` for the built-in backend).
    pub fn masked_lm(&self) -> Result<Box<dyn MaskedLm>> {
        if self.cfg.backend.kind == BackendKind::Remote {
            return Ok(Box::new(self.remote()));
        }
        let corpus = self.lm_corpus()?;
        let b = &self.cfg.backend;
        let lm = self.stage(
            "masked",
            "masked.ckpt",
            self.lm_inputs(&b.masked),
            |p| BiRnnMaskedLm::<f64>::load(p),
            || {
                let cfg = self.lm_config("masked", &b.masked);
                let (lm, history) = BiRnnMaskedLm::train(self.lm_vocab(&corpus), &corpus, &cfg)?;
                info!("masked LM NLL per epoch: {history:?}");
                Ok(lm)
            },
            |m, p| m.save(p),
        )?;
        Ok(Box::new(lm))
    }

    pub fn language_models(&self) -> Result<LanguageModels> {
        let class_conditional = self.class_conditional_lm()?;
        let background = self.background_lm()?;
        let masked = self.masked_lm()?;
        let b = &self.cfg.backend;
        let id = match b.kind {
            BackendKind::Builtin => {
                format!("builtin:{}:{}:{}", self.digest_of("cclm"), self.digest_of("background"), self.digest_of("masked"))
            }
            BackendKind::Remote if b.remote_class_conditional => format!("remote:{}", b.url),
            BackendKind::Remote => format!("remote:{}:{}", b.url, self.digest_of("cclm")),
        };
        Ok(LanguageModels { class_conditional, background, masked, id })
    }

    /// `S(w, y)` table (stage `score_table`), with `ε` from the configuration.
    pub fn score_table(&self) -> Result<IntentScoreTable> {
        let splits = self.splits()?;
        let lms = self.language_models()?;
        let epsilon = self.cfg.epsilon();
        let inputs = json!({ "splits": self.digest_of("splits"), "lms": lms.id });
        let table = self.stage(
            "score_table",
            "score_table.tsv",
            inputs,
            IntentScoreTable::load,
            || {
                let fingerprint = corpus_fingerprint(&splits.train, &lms.id);
                IntentScoreTable::build(
                    &splits.train,
                    &splits.labels,
                    lms.class_conditional.as_ref(),
                    lms.background.as_ref(),
                    epsilon,
                    fingerprint,
                )
            },
            |t, p| t.save(p),
        )?;
        Ok(table.with_epsilon(epsilon))
    }

    /// Generated OOD pool (stage `generated`).
    pub fn generated(&self) -> Result<Vec<GeneratedUtterance>> {
        let splits = self.splits()?;
        let table = self.score_table()?;
        let lms = self.language_models()?;
        let gen_cfg = GenerateConfig {
            k: self.cfg.got.k,
            per_intent_target: self.cfg.per_intent_target(),
            seed: self.cfg.stage_seed("generated", 0),
        };
        let inputs = json!({
            "splits": self.digest_of("splits"),
            "table": self.digest_of("score_table"),
            "lms": lms.id,
            "epsilon": table.epsilon(),
            "k": gen_cfg.k,
            "per_intent_target": gen_cfg.per_intent_target,
            "seed": gen_cfg.seed,
        });
        self.stage(
            "generated",
            "generated.jsonl",
            inputs,
            read_generated,
            || {
                let prior = label_prior(&splits.train, &splits.labels)?;
                let out = generate_corpus(
                    &splits.train,
                    &splits.labels,
                    &table,
                    lms.masked.as_ref(),
                    lms.class_conditional.as_ref(),
                    &prior,
                    &gen_cfg,
                )?;
                info!("generated {} utterances; pool sizes {:?}", out.generated.len(), out.pool_sizes);
                Ok(out.generated)
            },
            |g, p| write_generated(p, g),
        )
    }

    fn energy_objective(&self, ood: &[(Utterance, f64)]) -> TrainObjective {
        // Without OOD utterances the regularizer is dropped entirely.
        if ood.is_empty() {
            TrainObjective::CrossEntropy
        } else {
            TrainObjective::Energy(self.cfg.detector.clone())
        }
    }

    /// Classifier trained with the energy objective on the whole generated
    /// pool at unit weight, used to compute influence (stage
    /// `weighting_classifier`).
    pub fn weighting_classifier(&self) -> Result<Classifier<f64>> {
        let splits = self.splits()?;
        let base = self.base_classifier()?;
        let generated = self.generated()?;
        let c = &self.cfg.classifier;
        let inputs = json!({
            "base": self.digest_of("base_classifier"),
            "generated": self.digest_of("generated"),
            "detector": self.cfg.detector,
            "schedule": c.weighting,
            "seed": self.cfg.seed,
        });
        self.stage(
            "weighting_classifier",
            "weighting_classifier.ckpt",
            inputs,
            |p| Classifier::load(p),
            || {
                let ood = weights_of(&generated, 1.0);
                let schedule = self.schedule("weighting_classifier", &c.weighting);
                Ok(train(base, &splits, Some(&ood), &self.energy_objective(&ood), &schedule)?.best)
            },
            Self::save_classifier,
        )
    }

    /// Influence values and weights of the generated pool (stage `weighted`).
    pub fn weighted(&self) -> Result<Vec<WeightedUtterance>> {
        let generated = self.generated()?;
        if generated.is_empty() {
            warn!("generated pool is empty; nothing to weight");
        }
        let model = if generated.is_empty() { None } else { Some(self.weighting_classifier()?) };
        let splits = self.splits()?;
        let g = &self.cfg.got;
        let wcfg = WeightConfig {
            gamma: g.gamma,
            lissa: crate::influence::LissaConfig { seed: self.cfg.stage_seed("weighted", g.lissa.seed), ..g.lissa.clone() },
        };
        let inputs = json!({
            "generated": self.digest_of("generated"),
            "weighting_classifier": model.as_ref().map(|_| self.digest_of("weighting_classifier")),
            "detector": self.cfg.detector,
            "weight": wcfg,
        });
        self.stage(
            "weighted",
            "weighted.jsonl",
            inputs,
            read_weighted,
            || match &model {
                None => Ok(Vec::new()),
                Some(m) => weight_corpus(m, &splits.train, &generated, &splits.validation, &self.cfg.detector, &wcfg),
            },
            |w, p| write_weighted(p, w),
        )
    }

    fn finetune_init(&self) -> Result<(Classifier<f64>, &'static str)> {
        if self.cfg.got.reuse_weighting_classifier {
            Ok((self.weighting_classifier()?, "weighting_classifier"))
        } else {
            Ok((self.base_classifier()?, "base_classifier"))
        }
    }

    /// Fine-tunes `init` with the energy objective on `ood` (weights
    /// attached). An empty `ood` gives plain cross-entropy fine-tuning.
    pub fn finetune(&self, init: Classifier<f64>, ood: &[(Utterance, f64)], stage: &str) -> Result<Classifier<f64>> {
        let splits = self.splits()?;
        let schedule = self.schedule(stage, &self.cfg.classifier.finetune);
        Ok(train(init, &splits, Some(ood), &self.energy_objective(ood), &schedule)?.best)
    }

    fn finetune_inputs(&self, init: &str, ood_stage: &str, extra: serde_json::Value) -> serde_json::Value {
        json!({
            "init": self.digest_of(init),
            "ood": self.digest_of(ood_stage),
            "detector": self.cfg.detector,
            "schedule": self.cfg.classifier.finetune,
            "seed": self.cfg.seed,
            "extra": extra,
        })
    }

    /// Classifier fine-tuned on the weighted pool (stage `final_classifier`).
    pub fn final_classifier(&self) -> Result<Classifier<f64>> {
        let weighted = self.weighted()?;
        let (init, init_stage) = self.finetune_init()?;
        let inputs = self.finetune_inputs(init_stage, "weighted", json!(null));
        self.stage(
            "final_classifier",
            "final_classifier.ckpt",
            inputs,
            |p| Classifier::load(p),
            || {
                let ood: Vec<(Utterance, f64)> =
                    weighted.iter().map(|w| (w.generated.utterance.clone(), w.alpha)).collect();
                self.finetune(init, &ood, "final_classifier")
            },
            Self::save_classifier,
        )
    }

    /// Fine-tuned on the generated pool with every weight one (stage
    /// `unweighted_classifier`).
    pub fn unweighted_classifier(&self) -> Result<Classifier<f64>> {
        let generated = self.generated()?;
        let (init, init_stage) = self.finetune_init()?;
        let inputs = self.finetune_inputs(init_stage, "generated", json!(null));
        self.stage(
            "unweighted_classifier",
            "unweighted_classifier.ckpt",
            inputs,
            |p| Classifier::load(p),
            || self.finetune(init, &weights_of(&generated, 1.0), "final_classifier"),
            Self::save_classifier,
        )
    }

    /// Fine-tuned on an external unlabeled OOD corpus at unit weight (stage
    /// `external_classifier`). An empty corpus gives cross-entropy only.
    pub fn external_classifier(&self, corpus: &Path) -> Result<Classifier<f64>> {
        let base = self.base_classifier()?;
        let digest = digest_path(corpus).map_err(|e| e.in_stage("external_classifier"))?;
        let mut inputs = self.finetune_inputs("base_classifier", "generated", json!({ "corpus": digest }));
        inputs["ood"] = json!(null);
        self.stage(
            "external_classifier",
            "external_classifier.ckpt",
            inputs,
            |p| Classifier::load(p),
            || {
                let utterances = read_unlabeled(corpus)?;
                let ood: Vec<(Utterance, f64)> = utterances.into_iter().map(|u| (u, 1.0)).collect();
                self.finetune(base, &ood, "final_classifier")
            },
            Self::save_classifier,
        )
    }

    /// Fine-tuned with `CE + β · α · KL(uniform ‖ softmax)` on the weighted
    /// pool (stage `msp_classifier`). With `β = 0` this is the base
    /// classifier itself.
    pub fn msp_classifier(&self) -> Result<Classifier<f64>> {
        if self.cfg.msp.beta == 0.0 {
            return self.base_classifier();
        }
        let weighted = self.weighted()?;
        let base = self.base_classifier()?;
        let splits = self.splits()?;
        let beta = self.cfg.msp.beta;
        let inputs = self.finetune_inputs("base_classifier", "weighted", json!({ "beta": beta }));
        self.stage(
            "msp_classifier",
            "msp_classifier.ckpt",
            inputs,
            |p| Classifier::load(p),
            || {
                let ood: Vec<(Utterance, f64)> =
                    weighted.iter().map(|w| (w.generated.utterance.clone(), w.alpha)).collect();
                let objective =
                    if ood.is_empty() { TrainObjective::CrossEntropy } else { TrainObjective::Confidence { beta } };
                let schedule = self.schedule("msp_classifier", &self.cfg.classifier.finetune);
                Ok(train(base, &splits, Some(&ood), &objective, &schedule)?.best)
            },
            Self::save_classifier,
        )
    }

    pub fn model(&self, which: &ModelChoice) -> Result<Classifier<f64>> {
        match which {
            ModelChoice::Base => self.base_classifier(),
            ModelChoice::Weighting => self.weighting_classifier(),
            ModelChoice::Final => self.final_classifier(),
            ModelChoice::Unweighted => self.unweighted_classifier(),
            ModelChoice::Msp => self.msp_classifier(),
            ModelChoice::Path(p) => Classifier::load(p),
        }
    }

    fn score(&self, model: &Classifier<f64>, scorer: Scorer, u: &Utterance) -> f64 {
        match scorer {
            Scorer::Energy => model.energy(u, self.cfg.detector.temperature).0,
            Scorer::Msp => -model.max_softmax(u),
        }
    }

    /// Test IND and OOD scores.
    pub fn scores(&self, model: &Classifier<f64>, scorer: Scorer) -> Result<ScoreSet> {
        let splits = self.splits()?;
        let ind = splits.test_ind.par_iter().map(|r| self.score(model, scorer, &r.utterance)).collect();
        let ood = splits.test_ood.par_iter().map(|u| self.score(model, scorer, u)).collect();
        ScoreSet::new(ind, ood)
    }

    pub fn evaluate(&self, model: &Classifier<f64>, scorer: Scorer) -> Result<EvalReport> {
        let splits = self.splits()?;
        let scores = self.scores(model, scorer)?;
        let metrics = report(&scores)?;
        let val: Vec<f64> = splits.validation.iter().map(|r| self.score(model, scorer, &r.utterance)).collect();
        let delta = if val.is_empty() { f64::NAN } else { lower_quantile(&val, self.cfg.classifier.delta_quantile)? };
        let ood_rejected = scores.ood_scores.iter().filter(|&&s| s > delta).count() as f64 / scores.ood_scores.len() as f64;
        let accuracy = crate::classifier::evaluate(model, &splits.test_ind).0;
        Ok(EvalReport { scorer, metrics, accuracy, delta, ood_rejected })
    }

    pub fn histogram(&self, model: &Classifier<f64>, scorer: Scorer, bins: usize) -> Result<Vec<HistogramBin>> {
        histogram(&self.scores(model, scorer)?, bins)
    }

    /// Every stage through the final classifier, then evaluation of the base
    /// and fine-tuned classifiers (stage `report`).
    pub fn run_all(&self) -> Result<RunReport> {
        let base = self.base_classifier()?;
        let generated = self.generated()?;
        let fin = self.final_classifier()?;
        let unweighted = if self.cfg.got.report_unweighted { Some(self.unweighted_classifier()?) } else { None };
        let inputs = json!({
            "base": self.digest_of("base_classifier"),
            "final": self.digest_of("final_classifier"),
            "unweighted": unweighted.as_ref().map(|_| self.digest_of("unweighted_classifier")),
            "splits": self.digest_of("splits"),
            "temperature": self.cfg.detector.temperature,
            "delta_quantile": self.cfg.classifier.delta_quantile,
        });
        self.stage(
            "report",
            "report.json",
            inputs,
            |p| Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
            || {
                Ok(RunReport {
                    seed: self.cfg.seed,
                    energy: self.evaluate(&base, Scorer::Energy)?,
                    got: self.evaluate(&fin, Scorer::Energy)?,
                    unweighted: unweighted.as_ref().map(|m| self.evaluate(m, Scorer::Energy)).transpose()?,
                    generated: generated.len(),
                })
            },
            |r, p| Ok(fs::write(p, serde_json::to_string_pretty(r)? + "\n")?),
        )
    }

    /// Energy fine-tune on an external OOD corpus instead of the generated pool.
    pub fn run_external_ood(&self, corpus: &Path) -> Result<EvalReport> {
        let model = self.external_classifier(corpus)?;
        self.evaluate(&model, Scorer::Energy)
    }

    /// Maximum-softmax-probability scoring before and after the confidence
    /// fine-tune.
    pub fn run_msp(&self) -> Result<MspReport> {
        let base = self.base_classifier()?;
        let tuned = self.msp_classifier()?;
        Ok(MspReport { base: self.evaluate(&base, Scorer::Msp)?, finetuned: self.evaluate(&tuned, Scorer::Msp)? })
    }
}

/// Hyperparameter varied by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    PerIntentTarget,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "per_intent_target" | "per-intent-target" => Ok(SweepParam::PerIntentTarget),
            other => Err(Error::Config(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::PerIntentTarget => "per_intent_target",
        }
    }

    /// `cfg` with the parameter set to `value`.
    pub fn apply(self, cfg: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let mut cfg = cfg.clone();
        match self {
            SweepParam::Lambda => cfg.detector.lambda = value,
            SweepParam::PerIntentTarget => {
                if !(value >= 0.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("per_intent_target must be a nonnegative integer, got {value}")));
                }
                cfg.got.per_intent_target = OrAuto::Value(value as usize);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub result: std::result::Result<RunReport, String>,
}

/// Runs the pipeline once per value, in parallel. Stages upstream of the
/// varied parameter run once in `dir/shared` and are copied into each row's
/// directory. A failing row is reported without stopping the others.
pub fn sweep(cfg: &PipelineConfig, dir: &Path, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    let shared = Pipeline::new(cfg.clone(), dir.join("shared"))?;
    match param {
        SweepParam::Lambda => drop(shared.generated()?),
        SweepParam::PerIntentTarget => drop(shared.score_table()?),
    }
    let rows: Vec<SweepRow> = values
        .par_iter()
        .map(|&value| {
            let run = || -> Result<RunReport> {
                let row_dir = dir.join(format!("{}-{value}", param.name()));
                if !row_dir.join(MANIFEST).exists() {
                    copy_tree(shared.dir(), &row_dir)?;
                }
                Pipeline::new(param.apply(cfg, value)?, row_dir)?.run_all()
            };
            SweepRow { value, result: run().map_err(|e| e.to_string()) }
        })
        .collect();
    let mut table = format!("{}\t{}\tgenerated\n", param.name(), MetricsReport::FIELDS.join("\t"));
    for r in &rows {
        match &r.result {
            Ok(rep) => table.push_str(&format!("{}\t{}\t{}\n", r.value, rep.got.metrics.to_row(), rep.generated)),
            Err(e) => table.push_str(&format!("{}\terror: {e}\n", r.value)),
        }
    }
    fs::write(dir.join("sweep.tsv"), table)?;
    Ok(rows)
}

/// Per-seed reports and their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedsReport {
    pub runs: Vec<RunReport>,
    pub energy: AggregateReport,
    pub got: AggregateReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unweighted: Option<AggregateReport>,
}

/// Runs seeds `cfg.seed .. cfg.seed + n`, each in `dir/seed-<s>`.
pub fn run_seeds(cfg: &PipelineConfig, dir: &Path, n: usize) -> Result<SeedsReport> {
    if n == 0 {
        return Err(Error::Config("number of seeds must be >= 1".into()));
    }
    let runs: Vec<RunReport> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed + i;
            let c = PipelineConfig { seed, ..cfg.clone() };
            Pipeline::new(c, dir.join(format!("seed-{seed}")))?.run_all()
        })
        .collect::<Result<_>>()?;
    let metrics = |f: &dyn Fn(&RunReport) -> Option<MetricsReport>| -> Result<Option<AggregateReport>> {
        let v: Vec<MetricsReport> = runs.iter().filter_map(f).collect();
        if v.is_empty() {
            Ok(None)
        } else {
            aggregate(&v).map(Some)
        }
    };
    let energy = metrics(&|r| Some(r.energy.metrics))?.expect("at least one run");
    let got = metrics(&|r| Some(r.got.metrics))?.expect("at least one run");
    let unweighted = metrics(&|r| r.unweighted.as_ref().map(|u| u.metrics))?;
    let report = SeedsReport { runs, energy, got, unweighted };
    fs::write(dir.join("seeds.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}
