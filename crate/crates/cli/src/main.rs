//! `got`: command-line driver for the unknown-intent detection pipeline.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use got_core::pipeline::{
    run_seeds, sweep, EvalReport, ModelChoice, Pipeline, PipelineConfig, RunReport, Scorer, SweepParam, LM_URL_ENV,
};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "got", version, about = "Energy-based unknown-intent detection with generated OOD utterances")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file; missing keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the stage artifacts and manifest.
    #[arg(long, short = 'w', global = true, default_value = "got-run")]
    work_dir: PathBuf,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one configuration key, e.g. `--set got.epsilon=3.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Base URL of the remote LM service; selects the remote backend.
    #[arg(long, global = true, env = LM_URL_ENV)]
    lm_url: Option<String>,
    /// Rebuilds this stage even if its artifact is current (repeatable).
    #[arg(long, global = true, value_name = "STAGE")]
    force: Vec<String>,
    /// Prints results as JSON.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Loads or generates the dataset and writes the canonical splits.
    Ingest,
    /// Trains the cross-entropy base classifier.
    TrainClassifier,
    /// Trains the class-conditional, background and masked LMs.
    TrainCclm,
    /// Builds the intent-related word score table.
    ScoreTable {
        /// Highest-scoring words to print per intent.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Generates the OOD pool by single-word replacement.
    Generate,
    /// Computes influence values and weights of the generated pool.
    Weight,
    /// Fine-tunes on the weighted pool with the energy objective.
    Finetune,
    /// Fine-tunes on an external unlabeled OOD corpus instead.
    FinetuneExternal {
        /// Corpus file (JSON lines with a `text` field).
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Evaluates a classifier on the test splits.
    Eval {
        /// base, weighting, final, unweighted, msp, or a checkpoint path.
        #[arg(long, default_value = "final")]
        model: String,
        /// energy or msp.
        #[arg(long, default_value = "energy")]
        scorer: String,
    },
    /// Maximum-softmax scoring before and after the confidence fine-tune.
    Msp,
    /// Runs the pipeline for several values of one hyperparameter.
    Sweep {
        /// lambda or per_intent_target.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Histogram of test scores, IND against OOD.
    Hist {
        #[arg(long, default_value = "final")]
        model: String,
        #[arg(long, default_value = "energy")]
        scorer: String,
        #[arg(long, default_value_t = 50)]
        bins: usize,
    },
    /// Prints the effective configuration.
    Config {
        /// Prints every key with its default instead of the effective values.
        #[arg(long)]
        dump: bool,
    },
    /// Runs every stage and evaluates the base and fine-tuned classifiers.
    Run {
        /// Runs this many consecutive seeds and reports mean and std.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
}

/// Sets `key` (dotted path) in `root` to `raw`, parsed as a TOML value when
/// possible and as a string otherwise.
fn set_key(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().context("empty key")?;
    let mut table = root;
    for p in path {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("`{p}` in `{key}` is not a section"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let base = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut table: toml::Table = base.to_toml().parse().context("serializing configuration")?;
    for o in &g.overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("override `{o}` is not KEY=VALUE"))?;
        set_key(&mut table, k.trim(), v.trim())?;
    }
    let mut cfg = PipelineConfig::from_toml(&toml::to_string(&table)?)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(url) = g.lm_url.as_ref().filter(|u| !u.is_empty()) {
        cfg.backend.kind = got_core::pipeline::BackendKind::Remote;
        cfg.backend.url = url.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

fn eval_text(name: &str, r: &EvalReport) -> String {
    format!(
        "{name}: {}  accuracy {:.4}  delta {:.4}  ood_rejected {:.4}\n",
        r.metrics, r.accuracy, r.delta, r.ood_rejected
    )
}

fn run_text(r: &RunReport) -> String {
    let mut s = format!("seed {}  generated {}\n", r.seed, r.generated);
    s += &eval_text("energy", &r.energy);
    s += &eval_text("got", &r.got);
    if let Some(u) = &r.unweighted {
        s += &eval_text("unweighted", u);
    }
    s
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let g = &cli.global;

    if let Command::Config { dump } = &cli.command {
        let cfg = if *dump { PipelineConfig::default() } else { load_config(g)? };
        print!("{}", cfg.to_toml());
        return Ok(());
    }

    let cfg = load_config(g)?;
    let open = |cfg: PipelineConfig, dir: &Path| -> Result<Pipeline> {
        Ok(Pipeline::new(cfg, dir)?.with_forced(g.force.iter().cloned()))
    };
    let pipeline = || open(cfg.clone(), &g.work_dir);

    match &cli.command {
        Command::Config { .. } => unreachable!("handled above"),
        Command::Ingest => {
            let p = pipeline()?;
            let splits = p.splits()?;
            let summary = splits.summary();
            emit(g.json, &summary, || {
                let mut s = format!("intents {}\n", splits.num_intents());
                for (k, v) in &summary {
                    s += &format!("{k} {v}\n");
                }
                s
            })?;
        }
        Command::TrainClassifier => {
            let p = pipeline()?;
            p.base_classifier()?;
            println!("{}", p.dir().join("base_classifier.ckpt").display());
        }
        Command::TrainCclm => {
            let p = pipeline()?;
            let lms = p.language_models()?;
            println!("{}", lms.id);
        }
        Command::ScoreTable { top } => {
            let p = pipeline()?;
            let table = p.score_table()?;
            let rows: Vec<(String, Vec<(String, f64)>)> = table
                .labels()
                .iter()
                .map(|y| {
                    let words = table.top_words(&y, *top).into_iter().map(|(t, s)| (t.as_str().to_string(), s)).collect();
                    (y.name, words)
                })
                .collect();
            emit(g.json, &rows, || {
                let mut s = format!("epsilon {}\n", table.epsilon());
                for (y, words) in &rows {
                    let w: Vec<String> = words.iter().map(|(t, v)| format!("{t}:{v:.2}")).collect();
                    s += &format!("{y}\t{}\n", w.join(" "));
                }
                s
            })?;
        }
        Command::Generate => {
            let p = pipeline()?;
            let generated = p.generated()?;
            println!("{} generated utterances in {}", generated.len(), p.dir().join("generated.jsonl").display());
        }
        Command::Weight => {
            let p = pipeline()?;
            let w = p.weighted()?;
            let mean = w.iter().map(|x| x.alpha).sum::<f64>() / w.len().max(1) as f64;
            println!("{} weighted utterances, mean alpha {mean:.4}", w.len());
        }
        Command::Finetune => {
            let p = pipeline()?;
            p.final_classifier()?;
            println!("{}", p.dir().join("final_classifier.ckpt").display());
        }
        Command::FinetuneExternal { corpus } => {
            let r = pipeline()?.run_external_ood(corpus)?;
            emit(g.json, &r, || eval_text("external", &r))?;
        }
        Command::Eval { model, scorer } => {
            let p = pipeline()?;
            let scorer: Scorer = scorer.parse()?;
            let m = p.model(&model.parse::<ModelChoice>()?)?;
            let r = p.evaluate(&m, scorer)?;
            emit(g.json, &r, || eval_text(model, &r))?;
        }
        Command::Msp => {
            let r = pipeline()?.run_msp()?;
            emit(g.json, &r, || eval_text("msp base", &r.base) + &eval_text("msp fine-tuned", &r.finetuned))?;
        }
        Command::Sweep { param, values } => {
            let param: SweepParam = param.parse()?;
            let rows = sweep(&cfg, &g.work_dir, param, values)?;
            emit(g.json, &rows, || {
                rows.iter()
                    .map(|r| match &r.result {
                        Ok(rep) => format!("{}\t{}\n", r.value, rep.got.metrics),
                        Err(e) => format!("{}\terror: {e}\n", r.value),
                    })
                    .collect()
            })?;
            if rows.iter().any(|r| r.result.is_err()) {
                bail!("some sweep rows failed");
            }
        }
        Command::Hist { model, scorer, bins } => {
            let p = pipeline()?;
            let m = p.model(&model.parse::<ModelChoice>()?)?;
            let h = p.histogram(&m, scorer.parse()?, *bins)?;
            emit(g.json, &h, || {
                let mut s = "left\tind\tood\n".to_string();
                for b in &h {
                    s += &format!("{:.4}\t{}\t{}\n", b.left, b.count_ind, b.count_ood);
                }
                s
            })?;
        }
        Command::Run { seeds } => {
            if *seeds <= 1 {
                let r = pipeline()?.run_all()?;
                emit(g.json, &r, || run_text(&r))?;
            } else {
                let r = run_seeds(&cfg, &g.work_dir, *seeds)?;
                emit(g.json, &r, || {
                    format!(
                        "runs {}\nenergy mean {}\nenergy std  {}\ngot mean    {}\ngot std     {}\n",
                        r.energy.runs, r.energy.mean, r.energy.std, r.got.mean, r.got.std
                    )
                })?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_typed_values() {
        let mut t: toml::Table = PipelineConfig::default().to_toml().parse().unwrap();
        set_key(&mut t, "got.epsilon", "3.5").unwrap();
        set_key(&mut t, "data.source", "clinc").unwrap();
        set_key(&mut t, "data.path", "x.json").unwrap();
        set_key(&mut t, "classifier.base.epochs", "4").unwrap();
        let cfg = PipelineConfig::from_toml(&toml::to_string(&t).unwrap()).unwrap();
        assert_eq!(cfg.epsilon(), 3.5);
        assert_eq!(cfg.classifier.base.epochs, 4);
        assert_eq!(cfg.data.path, PathBuf::from("x.json"));
    }
}
