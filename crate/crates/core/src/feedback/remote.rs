//! HTTP client for a remote likelihood service.
//!
//! Protocol (JSON over HTTP):
//!
//! * `POST /v1/score` with `{"pairs": [{"context": str, "continuation": str}]}`
//!   answers `{"log_likelihoods": [float], "model_fingerprint": str}`, one
//!   value per pair. Error statuses: 400 malformed, 413 over the length
//!   limit, 503 model not loaded.
//! * `GET /v1/health` answers `{"status": str, "model_fingerprint": str}`
//!   with 200 when ready and 503 otherwise.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::scorer::{check_log_likelihoods, fingerprint_of, ScorePair, Scorer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<ScorePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub log_likelihoods: Vec<f64>,
    pub model_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct RemoteScorer {
    base_url: String,
    agent: ureq::Agent,
    model_fingerprint: String,
    max_batch: usize,
}

impl RemoteScorer {
    pub const DEFAULT_MAX_BATCH: usize = 64;

    /// Checks `/v1/health` and pins the model fingerprint reported there.
    pub fn connect(base_url: &str) -> Result<Self> {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(300))
            .build();
        let base_url = base_url.trim_end_matches('/').to_string();
        let health: HealthResponse = match agent.get(&format!("{base_url}/v1/health")).call() {
            Ok(resp) => resp
                .into_json()
                .map_err(|e| Error::Format(format!("bad health response: {e}")))?,
            Err(ureq::Error::Status(code, _)) => {
                return Err(Error::State(format!(
                    "remote scorer at {base_url} not ready (HTTP {code})"
                )))
            }
            Err(e) => return Err(Error::State(format!("remote scorer at {base_url}: {e}"))),
        };
        Ok(Self {
            base_url,
            agent,
            model_fingerprint: health.model_fingerprint,
            max_batch: Self::DEFAULT_MAX_BATCH,
        })
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch.max(1);
        self
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    fn score_chunk(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        let request = ScoreRequest {
            pairs: pairs.to_vec(),
        };
        let url = format!("{}/v1/score", self.base_url);
        let response: ScoreResponse = match self.agent.post(&url).send_json(&request) {
            Ok(resp) => resp
                .into_json()
                .map_err(|e| Error::Format(format!("bad score response: {e}")))?,
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let what = match code {
                    400 => "malformed request",
                    413 => "request over the service length limit",
                    503 => "model not loaded",
                    _ => "unexpected status",
                };
                return Err(Error::State(format!("remote scorer: {what} (HTTP {code}) {body}")));
            }
            Err(e) => return Err(Error::State(format!("remote scorer: {e}"))),
        };
        if response.model_fingerprint != self.model_fingerprint {
            return Err(Error::State(format!(
                "remote model changed from {} to {}",
                self.model_fingerprint, response.model_fingerprint
            )));
        }
        check_log_likelihoods(&response.log_likelihoods, pairs.len())?;
        Ok(response.log_likelihoods)
    }
}

impl Scorer for RemoteScorer {
    fn fingerprint(&self) -> String {
        fingerprint_of(&["remote", &self.model_fingerprint])
    }

    fn log_likelihoods(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.max_batch) {
            out.extend(self.score_chunk(chunk)?);
        }
        Ok(out)
    }
}
