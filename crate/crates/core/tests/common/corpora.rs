//! Full-size fixture files with the layout and per-intent counts of the
//! public intent corpora.

use std::fs;
use std::path::Path;

use serde_json::json;

fn clinc_rows(split: &str, per_intent: usize, intents: usize) -> Vec<[String; 2]> {
    (0..intents)
        .flat_map(|k| (0..per_intent).map(move |i| [format!("{split} utterance {i} for intent {k}"), format!("intent_{k:03}")]))
        .collect()
}

fn oos_rows(split: &str, n: usize) -> Vec<[String; 2]> {
    (0..n).map(|i| [format!("{split} out of scope request {i}"), "oos".to_string()]).collect()
}

/// Same layout and sizes as the full CLINC150 release.
pub fn write_clinc(path: &Path) {
    let body = json!({
        "train": clinc_rows("train", 100, 150),
        "val": clinc_rows("val", 20, 150),
        "test": clinc_rows("test", 30, 150),
        "oos_train": oos_rows("train", 100),
        "oos_val": oos_rows("val", 100),
        "oos_test": oos_rows("test", 1000),
    });
    fs::write(path, body.to_string()).unwrap();
}

/// Per-intent counts of the SNIPS release (train, valid, test).
pub const SNIPS: [(&str, usize, usize, usize); 7] = [
    ("AddToPlaylist", 1818, 100, 124),
    ("BookRestaurant", 1881, 100, 92),
    ("GetWeather", 1896, 100, 104),
    ("PlayMusic", 1914, 100, 86),
    ("RateBook", 1876, 100, 80),
    ("SearchCreativeWork", 1847, 100, 107),
    ("SearchScreeningEvent", 1852, 100, 107),
];

pub fn write_snips(dir: &Path) {
    for (split, col) in [("train", 0), ("valid", 1), ("test", 2)] {
        let sub = dir.join(split);
        fs::create_dir_all(&sub).unwrap();
        let mut text = String::new();
        let mut label = String::new();
        for (name, tr, va, te) in SNIPS {
            let n = [tr, va, te][col];
            for i in 0..n {
                text += &format!("{split} request {i} about {}\n", name.to_lowercase());
                label += &format!("{name}\n");
            }
        }
        fs::write(sub.join("seq.in"), text).unwrap();
        fs::write(sub.join("label"), label).unwrap();
    }
}

