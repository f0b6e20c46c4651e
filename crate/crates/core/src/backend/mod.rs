//! Model backends: the remote chat-completion client and the offline mock
//! oracle used for desk-scale experiments.

pub mod mock;
pub mod remote;

use std::time::Duration;

use crate::prompt::PromptBundle;

pub use mock::{
    generate_mock_dataset, mock_oracle_respond, MockEnvironmentConfig, MockOracle, MockWorld,
};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend cannot handle this prompt: {0}")]
    Capability(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub supports_images: bool,
    pub supports_multi_image: bool,
}

impl Capabilities {
    pub const TEXT_ONLY: Capabilities = Capabilities {
        supports_images: false,
        supports_multi_image: false,
    };
    pub const MULTI_IMAGE: Capabilities = Capabilities {
        supports_images: true,
        supports_multi_image: true,
    };

    /// Rejects bundles whose images this backend cannot accept.
    pub fn check(&self, bundle: &PromptBundle) -> Result<(), BackendError> {
        let images = bundle.image_count();
        if images > 0 && !self.supports_images {
            return Err(BackendError::Capability(format!(
                "prompt has {images} image(s) but the backend is text-only"
            )));
        }
        if images > 1 && !self.supports_multi_image {
            return Err(BackendError::Capability(format!(
                "prompt has {images} images but the backend accepts one"
            )));
        }
        Ok(())
    }
}

/// A multimodal model that answers a rendered prompt with raw text.
pub trait ModelBackend: Send + Sync {
    fn respond(&self, bundle: &PromptBundle) -> Result<String, BackendError>;

    fn capabilities(&self) -> Capabilities;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn respond(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        (**self).respond(bundle)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn respond(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        (**self).respond(bundle)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            retries: 0,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1 << attempt.min(16))
    }
}

/// Calls the backend, retrying transient failures with exponential backoff.
pub fn respond_with_retry<B: ModelBackend + ?Sized>(
    backend: &B,
    bundle: &PromptBundle,
    policy: &RetryPolicy,
) -> Result<String, BackendError> {
    let mut attempt = 0;
    loop {
        match backend.respond(bundle) {
            Ok(text) => return Ok(text),
            Err(e) if e.is_transient() && attempt < policy.retries => {
                let wait = policy.delay(attempt);
                log::warn!(
                    "backend attempt {} failed ({e}); retrying in {wait:?}",
                    attempt + 1
                );
                std::thread::sleep(wait);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Returns the same text for every prompt.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    pub text: String,
    pub capabilities: Capabilities,
}

impl EchoBackend {
    pub fn new(text: impl Into<String>) -> Self {
        EchoBackend {
            text: text.into(),
            capabilities: Capabilities::MULTI_IMAGE,
        }
    }
}

impl ModelBackend for EchoBackend {
    fn respond(&self, bundle: &PromptBundle) -> Result<String, BackendError> {
        self.capabilities.check(bundle)?;
        Ok(self.text.clone())
    }

    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }
}
