use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    check_temperature, A2LRequest, A2LResponse, Backend, BackendError, Health, L2ARequest,
    L2AResponse, L2CRequest, L2CResponse,
};
use crate::scene::{Action, Scene};

/// Environment variable holding the remote backend base URL.
pub const BACKEND_URL_ENV: &str = "LACY_BACKEND_URL";

/// Per-request timeout and bounded retry with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            max_retries: 2,
            initial_backoff: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff.saturating_mul(1 << attempt.min(16))
    }
}

/// HTTP/JSON client for a backend server.
///
/// Connection failures, timeouts and 5xx responses are retried; other
/// statuses fail immediately.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    client: Client,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, retry: RetryPolicy) -> Result<Self, BackendError> {
        let base_url = base_url.into().trim_end_matches('/').to_owned();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(BackendError::InvalidRequest(format!(
                "backend URL must start with http:// or https://, got {base_url:?}"
            )));
        }
        let client = Client::builder()
            .timeout(retry.timeout)
            .build()
            .map_err(|e| BackendError::InvalidRequest(format!("http client: {e}")))?;
        Ok(Self {
            base_url,
            client,
            retry,
        })
    }

    /// Client for the URL in [`BACKEND_URL_ENV`].
    pub fn from_env(retry: RetryPolicy) -> Result<Self, BackendError> {
        let url = std::env::var(BACKEND_URL_ENV)
            .map_err(|_| BackendError::InvalidRequest(format!("{BACKEND_URL_ENV} is not set")))?;
        Self::new(url, retry)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&Req>,
    ) -> Result<Resp, BackendError> {
        let url = format!("{}{path}", self.base_url);
        let mut last_error = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            let request = match body {
                Some(b) => self.client.post(&url).json(b),
                None => self.client.get(&url),
            };
            match request.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Resp>().map_err(|e| BackendError::Protocol {
                            status: status.as_u16(),
                            message: format!("undecodable response from {path}: {e}"),
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                        last_error = format!("HTTP {}: {text}", status.as_u16());
                        log::debug!("{url}: attempt {} failed: {last_error}", attempt + 1);
                        continue;
                    }
                    return Err(BackendError::Protocol {
                        status: status.as_u16(),
                        message: text,
                    });
                }
                Err(e) => {
                    last_error = e.to_string();
                    log::debug!("{url}: attempt {} failed: {last_error}", attempt + 1);
                }
            }
        }
        Err(BackendError::Unavailable {
            url,
            message: format!(
                "{} attempts failed; last error: {last_error}",
                self.retry.max_retries + 1
            ),
        })
    }
}

impl Backend for RemoteBackend {
    fn model_id(&self) -> String {
        match self.health() {
            Ok(h) => h.model_id,
            Err(_) => format!("remote:{}", self.base_url),
        }
    }

    fn health(&self) -> Result<Health, BackendError> {
        let h: Health = self.call::<(), _>("/health", None)?;
        if h.status != "ok" {
            return Err(BackendError::Unavailable {
                url: self.base_url.clone(),
                message: format!("health status {:?}", h.status),
            });
        }
        Ok(h)
    }

    fn l2a(
        &self,
        scene: &Scene,
        instruction: &str,
        temperature: f64,
        seed: u64,
    ) -> Result<L2AResponse, BackendError> {
        check_temperature(temperature)?;
        let req = L2ARequest {
            scene: scene.clone(),
            instruction: instruction.to_owned(),
            temperature,
            seed,
        };
        self.call("/l2a", Some(&req))
    }

    fn a2l(
        &self,
        scene: &Scene,
        action: &Action,
        temperature: f64,
        seed: u64,
    ) -> Result<A2LResponse, BackendError> {
        check_temperature(temperature)?;
        let req = A2LRequest {
            scene: scene.clone(),
            action: *action,
            temperature,
            seed,
        };
        let resp: A2LResponse = self.call("/a2l", Some(&req))?;
        if resp.text.trim().is_empty() {
            return Err(BackendError::Protocol {
                status: 200,
                message: "empty a2l text".into(),
            });
        }
        Ok(resp)
    }

    fn l2c(
        &self,
        scene: &Scene,
        instruction: &str,
        candidate: &str,
    ) -> Result<L2CResponse, BackendError> {
        let req = L2CRequest {
            scene: scene.clone(),
            instruction: instruction.to_owned(),
            candidate: candidate.to_owned(),
        };
        self.call("/l2c", Some(&req))
    }
}
