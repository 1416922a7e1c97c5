//! Client for the HTTP log-probability protocol.
//!
//! ```text
//! POST /v1/prefix_logprob  {"tokens": [..], "label": "name" | null}
//! POST /v1/masked_logprob  {"tokens": [..], "position": n}
//!   -> {"log_probs": {"token": -1.23, ..}, "truncated": false}
//! GET  /v1/health          -> {"ok": true, "vocab_size": n}
//! ```
//!
//! Scores are natural logs. A truncated response carries only the top
//! entries; lookups of other tokens share the missing mass evenly over the
//! rest of the service vocabulary.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::{IntentLabel, LabelSet, Token, Utterance};
use crate::error::{Error, Result};

use super::dist::{MaskedDistribution, PrefixDistribution, TokenDistribution};
use super::{CausalLm, ClassConditionalLm, MaskedLm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixRequest {
    pub tokens: Vec<String>,
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskedRequest {
    pub tokens: Vec<String>,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogProbResponse {
    pub log_probs: BTreeMap<String, f64>,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub ok: bool,
    pub vocab_size: usize,
}

/// Remote backend; usable as any of the three oracles.
pub struct RemoteLm {
    base_url: String,
    agent: ureq::Agent,
    labels: LabelSet,
    vocab_size: OnceLock<Option<usize>>,
}

impl std::fmt::Debug for RemoteLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteLm").field("base_url", &self.base_url).finish()
    }
}

fn unavailable(e: impl std::fmt::Display) -> Error {
    Error::BackendUnavailable(e.to_string())
}

impl RemoteLm {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        RemoteLm {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            labels: LabelSet::new(std::iter::empty()),
            vocab_size: OnceLock::new(),
        }
    }

    /// Intent labels to report when used as the class-conditional oracle.
    pub fn with_labels(mut self, labels: LabelSet) -> Self {
        self.labels = labels;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn health(&self) -> Result<Health> {
        let url = format!("{}/v1/health", self.base_url);
        let mut resp = self.agent.get(&url).call().map_err(unavailable)?;
        let health: Health = resp.body_mut().read_json().map_err(|e| unavailable(format!("malformed health response: {e}")))?;
        if !health.ok {
            return Err(unavailable("service reports not ok"));
        }
        Ok(health)
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> Result<LogProbResponse> {
        let url = format!("{}{path}", self.base_url);
        let mut resp = self.agent.post(&url).send_json(body).map_err(unavailable)?;
        let r: LogProbResponse =
            resp.body_mut().read_json().map_err(|e| unavailable(format!("malformed response from {path}: {e}")))?;
        if r.log_probs.is_empty() || r.log_probs.values().any(|v| !v.is_finite() || *v > 1e-9) {
            return Err(unavailable(format!("response from {path} is not a log-probability table")));
        }
        Ok(r)
    }

    fn distribution(&self, r: LogProbResponse) -> Result<TokenDistribution> {
        let mut pairs = BTreeMap::new();
        for (k, v) in r.log_probs {
            let t = Token::new(k).map_err(|e| unavailable(format!("invalid token in response: {e}")))?;
            pairs.insert(t, v);
        }
        let residual = if r.truncated {
            let size = *self.vocab_size.get_or_init(|| self.health().ok().map(|h| h.vocab_size));
            size.filter(|&n| n > pairs.len()).map(|n| {
                let listed: f64 = pairs.values().map(|v| v.exp()).sum();
                ((1.0 - listed).max(f64::MIN_POSITIVE) / (n - pairs.len()) as f64).ln()
            })
        } else {
            None
        };
        Ok(TokenDistribution::from_pairs(&pairs, r.truncated, residual))
    }

    fn prefix(&self, prefix: &[Token], label: Option<&str>) -> Result<PrefixDistribution> {
        let req = PrefixRequest {
            tokens: prefix.iter().map(|t| t.as_str().to_string()).collect(),
            label: label.map(str::to_string),
        };
        let r = self.post("/v1/prefix_logprob", &req)?;
        self.distribution(r)
    }
}

impl ClassConditionalLm for RemoteLm {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn prefix_distribution(&self, prefix: &[Token], label: &IntentLabel) -> Result<PrefixDistribution> {
        self.prefix(prefix, Some(&label.name))
    }
}

impl CausalLm for RemoteLm {
    fn prefix_distribution(&self, prefix: &[Token]) -> Result<PrefixDistribution> {
        self.prefix(prefix, None)
    }
}

impl MaskedLm for RemoteLm {
    fn masked_distribution(&self, utterance: &Utterance, position: usize) -> Result<MaskedDistribution> {
        if position >= utterance.len() {
            return Err(Error::Precondition(format!("mask position {position} outside utterance of length {}", utterance.len())));
        }
        let req = MaskedRequest { tokens: utterance.tokens().iter().map(|t| t.as_str().to_string()).collect(), position };
        let r = self.post("/v1/masked_logprob", &req)?;
        self.distribution(r)
    }
}
