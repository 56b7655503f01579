//! Model backends for the three policies: instruction → action (L2A),
//! action → description (A2L) and description-pair consistency (L2C).
//!
//! A backend returns raw outputs only. For L2C that means the logits of the
//! `"0"` and `"1"` tokens; the confidence `c = σ(z1 − z0)` is computed on the
//! client side by [`confidence`].

mod oracle;
mod protocol;
mod remote;

pub use oracle::{OracleBackend, OracleNoise};
pub use protocol::{
    A2LRequest, A2LResponse, GroundedObject, GroundingSet, Health, L2ARequest, L2AResponse,
    L2CRequest, L2CResponse,
};
pub use remote::{RemoteBackend, RetryPolicy, BACKEND_URL_ENV};

use thiserror::Error;

use crate::scene::{Action, Scene};
use crate::seed;
use crate::spatial_lang::LangError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("backend at {url} unavailable: {message}")]
    Unavailable { url: String, message: String },
    #[error("backend protocol error (HTTP {status}): {message}")]
    Protocol { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Language(#[from] LangError),
}

impl BackendError {
    pub fn is_unavailable(&self) -> bool {
        matches!(self, BackendError::Unavailable { .. })
    }
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Consistency confidence from the logits of the `"0"` and `"1"` tokens.
pub fn confidence(z0: f64, z1: f64) -> f64 {
    sigmoid(z1 - z0)
}

/// The three policies behind one model handle.
///
/// Implementations must be safe to call from many threads at once.
pub trait Backend: Send + Sync {
    fn model_id(&self) -> String;

    fn health(&self) -> Result<Health, BackendError>;

    /// Action for `instruction`. `temperature == 0` is the deterministic pass.
    fn l2a(
        &self,
        scene: &Scene,
        instruction: &str,
        temperature: f64,
        seed: u64,
    ) -> Result<L2AResponse, BackendError>;

    /// Description of `action`.
    fn a2l(
        &self,
        scene: &Scene,
        action: &Action,
        temperature: f64,
        seed: u64,
    ) -> Result<A2LResponse, BackendError>;

    /// Raw consistency logits for an instruction/candidate pair.
    fn l2c(
        &self,
        scene: &Scene,
        instruction: &str,
        candidate: &str,
    ) -> Result<L2CResponse, BackendError>;
}

fn check_temperature(t: f64) -> Result<(), BackendError> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(BackendError::InvalidRequest(format!(
            "temperature must be finite and >= 0, got {t}"
        )))
    }
}

/// Sampling helpers layered on any [`Backend`].
pub trait BackendExt: Backend {
    /// L2C logits plus the derived confidence.
    fn l2c_confidence(
        &self,
        scene: &Scene,
        l: &str,
        l_hat: &str,
    ) -> Result<(L2CResponse, f64), BackendError> {
        if l.trim().is_empty() || l_hat.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "descriptions must be non-empty".into(),
            ));
        }
        let resp = self.l2c(scene, l, l_hat)?;
        if !(resp.z0.is_finite() && resp.z1.is_finite()) {
            return Err(BackendError::Protocol {
                status: 200,
                message: format!("non-finite logits z0={} z1={}", resp.z0, resp.z1),
            });
        }
        let c = confidence(resp.z0, resp.z1);
        Ok((resp, c))
    }

    /// `n` independent L2A samples; sample `i` uses seed `derive(seed, i)`.
    fn stochastic_l2a(
        &self,
        scene: &Scene,
        instruction: &str,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<Action>, BackendError> {
        if n == 0 {
            return Err(BackendError::InvalidRequest(
                "sample count must be >= 1".into(),
            ));
        }
        if temperature <= 0.0 {
            return Err(BackendError::InvalidRequest(
                "stochastic sampling needs temperature > 0".into(),
            ));
        }
        (0..n as u64)
            .map(|i| {
                Ok(self
                    .l2a(scene, instruction, temperature, seed::derive(seed, i))?
                    .action)
            })
            .collect()
    }

    /// `n` independent A2L samples; sample `i` uses seed `derive(seed, i)`.
    fn stochastic_a2l(
        &self,
        scene: &Scene,
        action: &Action,
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<String>, BackendError> {
        if n == 0 {
            return Err(BackendError::InvalidRequest(
                "sample count must be >= 1".into(),
            ));
        }
        if temperature <= 0.0 {
            return Err(BackendError::InvalidRequest(
                "stochastic sampling needs temperature > 0".into(),
            ));
        }
        (0..n as u64)
            .map(|i| {
                Ok(self
                    .a2l(scene, action, temperature, seed::derive(seed, i))?
                    .text)
            })
            .collect()
    }
}

impl<B: Backend + ?Sized> BackendExt for B {}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn model_id(&self) -> String {
        (**self).model_id()
    }
    fn health(&self) -> Result<Health, BackendError> {
        (**self).health()
    }
    fn l2a(
        &self,
        scene: &Scene,
        instruction: &str,
        temperature: f64,
        seed: u64,
    ) -> Result<L2AResponse, BackendError> {
        (**self).l2a(scene, instruction, temperature, seed)
    }
    fn a2l(
        &self,
        scene: &Scene,
        action: &Action,
        temperature: f64,
        seed: u64,
    ) -> Result<A2LResponse, BackendError> {
        (**self).a2l(scene, action, temperature, seed)
    }
    fn l2c(
        &self,
        scene: &Scene,
        instruction: &str,
        candidate: &str,
    ) -> Result<L2CResponse, BackendError> {
        (**self).l2c(scene, instruction, candidate)
    }
}
