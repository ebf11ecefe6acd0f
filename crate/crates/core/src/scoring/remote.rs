use std::marker::PhantomData;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreItem, Scorer, ScorerError};
use crate::engines::RetryPolicy;
use crate::numeric::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Reference-free: the service judges `(source, translation)`.
    Qe,
    /// Reference-based: every item must carry a reference.
    Ref,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    items: &'a [ScoreItem],
    mode: ScoreMode,
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
    scale_max: f64,
    #[allow(dead_code)]
    model_id: String,
}

/// `GET /health` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model_id: String,
    pub batch_limit: usize,
    pub scale_max: f64,
}

/// Client of the metric scoring service (`POST /score`, `GET /health`).
pub struct RemoteScorer<T> {
    base: String,
    mode: ScoreMode,
    retry: RetryPolicy,
    health: HealthStatus,
    client: reqwest::blocking::Client,
    _scalar: PhantomData<fn() -> T>,
}

impl<T: Scalar> RemoteScorer<T> {
    /// Connects and reads the advertised batch limit and scale. A service
    /// that is still loading (503) is retried per `retry`.
    pub fn connect(endpoint: &str, mode: ScoreMode, retry: RetryPolicy) -> Result<Self, ScorerError> {
        let base = endpoint.trim_end_matches('/').to_owned();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| ScorerError::Transport {
                endpoint: base.clone(),
                message: e.to_string(),
            })?;
        let health = with_retry(&base, retry, || {
            let resp = client
                .get(format!("{base}/health"))
                .send()
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            let status = resp.status();
            let body = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
            if status.as_u16() == 503 || status.is_server_error() {
                return Err(Attempt::Retry(format!("health returned {status}")));
            }
            if !status.is_success() {
                return Err(Attempt::Fatal(format!("health returned {status}: {body}")));
            }
            serde_json::from_str::<HealthStatus>(&body).map_err(|e| Attempt::Fatal(format!("bad health payload: {e}")))
        })?;
        if health.batch_limit == 0 || health.scale_max.is_nan() || health.scale_max <= 0.0 {
            return Err(ScorerError::Protocol {
                endpoint: base,
                message: format!("invalid health advertisement {health:?}"),
            });
        }
        Ok(RemoteScorer {
            base,
            mode,
            retry,
            health,
            client,
            _scalar: PhantomData,
        })
    }

    pub fn health(&self) -> &HealthStatus {
        &self.health
    }
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

fn with_retry<R>(
    endpoint: &str,
    retry: RetryPolicy,
    mut f: impl FnMut() -> Result<R, Attempt>,
) -> Result<R, ScorerError> {
    let mut last = String::new();
    for attempt in 1..=retry.attempts.max(1) {
        match f() {
            Ok(v) => return Ok(v),
            Err(Attempt::Fatal(message)) => {
                return Err(ScorerError::Protocol {
                    endpoint: endpoint.to_owned(),
                    message,
                })
            }
            Err(Attempt::Retry(message)) => {
                last = message;
                if attempt < retry.attempts {
                    let wait = retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }
    Err(ScorerError::Transport {
        endpoint: endpoint.to_owned(),
        message: last,
    })
}

impl<T: Scalar> Scorer<T> for RemoteScorer<T> {
    fn scale_max(&self) -> T {
        T::from_f64(self.health.scale_max).unwrap_or_else(T::max_value)
    }

    fn batch_limit(&self) -> usize {
        self.health.batch_limit
    }

    fn model_id(&self) -> String {
        self.health.model_id.clone()
    }

    fn wants_reference(&self) -> bool {
        self.mode == ScoreMode::Ref
    }

    fn score_batch(&self, items: &[ScoreItem]) -> Result<Vec<T>, ScorerError> {
        if self.mode == ScoreMode::Ref && items.iter().any(|i| i.reference.is_none()) {
            return Err(ScorerError::Protocol {
                endpoint: self.base.clone(),
                message: "reference mode needs a reference on every item".into(),
            });
        }
        let body = ScoreRequest {
            items,
            mode: self.mode,
        };
        let resp: ScoreResponse = with_retry(&self.base, self.retry, || {
            let resp = self
                .client
                .post(format!("{}/score", self.base))
                .json(&body)
                .send()
                .map_err(|e| Attempt::Retry(e.to_string()))?;
            let status = resp.status();
            let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
            if status.as_u16() == 429 || status.is_server_error() {
                return Err(Attempt::Retry(format!("score returned {status}")));
            }
            if !status.is_success() {
                return Err(Attempt::Fatal(format!("score returned {status}: {text}")));
            }
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(format!("bad score payload: {e}")))
        })?;
        if resp.scores.len() != items.len() {
            return Err(ScorerError::CountMismatch {
                expected: items.len(),
                got: resp.scores.len(),
            });
        }
        resp.scores
            .into_iter()
            .map(|v| {
                if !v.is_finite() || v < 0.0 || v > resp.scale_max {
                    return Err(ScorerError::OutOfRange {
                        value: v,
                        scale_max: resp.scale_max,
                    });
                }
                T::from_f64(v).ok_or(ScorerError::OutOfRange {
                    value: v,
                    scale_max: resp.scale_max,
                })
            })
            .collect()
    }
}
