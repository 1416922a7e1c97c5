//! Run manifest: which artifacts exist, what produced them, and their digests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Artifact path relative to the work directory.
    pub artifact: String,
    /// Digest of the stage inputs; the artifact is reused only when it matches.
    pub key: String,
    /// Digest of the artifact contents.
    pub sha256: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    /// Configuration of the most recent run, as TOML.
    pub config: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_default(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(RunManifest::default());
        }
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Stage name to artifact digest; timings excluded.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.stages.iter().map(|(k, v)| (k.clone(), v.sha256.clone())).collect()
    }
}

fn hash_file(h: &mut Sha256, path: &Path) -> Result<()> {
    let mut f = fs::File::open(path)?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        h.update(&buf[..n]);
    }
}

/// SHA-256 of a file, or of a directory's files in name order (names
/// included).
pub fn digest_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?.collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            if e.path().is_file() {
                h.update(e.file_name().to_string_lossy().as_bytes());
                h.update([0u8]);
                hash_file(&mut h, &e.path())?;
            }
        }
    } else {
        hash_file(&mut h, path)?;
    }
    Ok(hex::encode(h.finalize()))
}

/// SHA-256 of a JSON value's canonical text.
pub fn digest_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}
