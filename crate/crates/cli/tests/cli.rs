//! Drives the `got` binary end to end on a tiny synthetic configuration.

use std::path::Path;
use std::process::{Command, Output};

use got_core::classifier::ClassifierShape;
use got_core::lm::LmTrainConfig;
use got_core::pipeline::{OrAuto, PipelineConfig};

fn got(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_got")).args(args).env("RUST_LOG", "warn").env_remove("GOT_LM_URL").output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_tiny(path: &Path) {
    let mut c = PipelineConfig::default();
    c.data.synthetic.train = 100;
    c.data.synthetic.validation = 30;
    c.data.synthetic.test_ind = 30;
    c.data.synthetic.test_ood = 15;
    c.data.synthetic.general = 100;
    let lm = LmTrainConfig { embed_dim: 8, hidden_dim: 8, label_dim: 4, epochs: 1, batch_size: 32, ..Default::default() };
    c.backend.causal = lm.clone();
    c.backend.masked = lm;
    c.classifier.shape = ClassifierShape { embed_dim: 8, hidden: Some(8) };
    c.classifier.base.epochs = 2;
    c.classifier.weighting.epochs = 1;
    c.classifier.finetune.epochs = 1;
    c.got.per_intent_target = OrAuto::Value(4);
    c.got.epsilon = OrAuto::Value(0.0);
    c.got.lissa.recursion_depth = 10;
    c.got.lissa.repeats = 1;
    std::fs::write(path, c.to_toml()).unwrap();
}

#[test]
fn config_dump_round_trips_the_defaults() {
    let text = stdout(&got(&["config", "--dump"]));
    assert_eq!(PipelineConfig::from_toml(&text).unwrap(), PipelineConfig::default());
}

#[test]
fn overrides_reach_the_effective_configuration() {
    let text = stdout(&got(&["--set", "detector.lambda=0.25", "--set", "got.gamma=5", "--seed", "9", "config"]));
    let c = PipelineConfig::from_toml(&text).unwrap();
    assert_eq!((c.detector.lambda, c.got.gamma, c.seed), (0.25, 5.0, 9));
}

#[test]
fn bad_overrides_are_rejected() {
    for args in [["--set", "detector.no_such_key=1"], ["--set", "detector.lambda"], ["--set", "detector.lambda=-1"]] {
        let o = got(&[args[0], args[1], "config"]);
        assert!(!o.status.success(), "{args:?} was accepted");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn run_is_resumable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    write_tiny(&cfg);
    let work = dir.path().join("work");
    let (c, w) = (cfg.to_str().unwrap(), work.to_str().unwrap());
    let first: serde_json::Value = serde_json::from_str(&stdout(&got(&["-c", c, "-w", w, "--json", "run"]))).unwrap();
    assert!(work.join("manifest.json").exists());
    assert!(first["generated"].as_u64().unwrap() > 0);
    let auroc = first["got"]["metrics"]["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc));

    let again: serde_json::Value = serde_json::from_str(&stdout(&got(&["-c", c, "-w", w, "--json", "run"]))).unwrap();
    assert_eq!(first, again);

    let table = stdout(&got(&["-c", c, "-w", w, "score-table", "--top", "3"]));
    assert!(!table.trim().is_empty());
    let eval = stdout(&got(&["-c", c, "-w", w, "eval", "--model", "final"]));
    assert!(eval.contains("AUROC"), "{eval}");
}
