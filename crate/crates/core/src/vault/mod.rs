//! Secrets vault: Shamir-sealed master key, versioned encrypted key-value
//! store, path-capability policies, service-account roles, token login,
//! audit log, and sidecar injection.
//!
//! Login trusts the asserted (service account, namespace) pair; the caller
//! (the admission layer) is the trust boundary.

mod acl;
mod engine;
mod inject;
mod shamir;
pub mod storage;
mod template;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use acl::{glob_match, Capability, PolicyDoc, PolicyRule};
pub use engine::{
    token_digest, AuditRecord, InitResult, IssuedToken, KvVersionInfo, Outcome, Role, SealStatus, SecretsBundle, Vault, DEFAULT_MOUNT,
    DEFAULT_SHARES, DEFAULT_THRESHOLD, DEFAULT_TOKEN_TTL,
};
pub use inject::{
    decode_secret_data, inject, wants_injection, Injection, InjectorConfig, SecretBackend, ANNOTATION_INJECT, ANNOTATION_ROLE,
    ANNOTATION_SECRET_PATH, ANNOTATION_TEMPLATE_PREFIX, BINARY_PREFIX,
};
pub use shamir::{combine, split, Share};
pub use template::{render_template, render_template_bytes, TemplateError};

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("vault is not initialized")]
    NotInitialized,
    #[error("vault is already initialized")]
    AlreadyInitialized,
    #[error("vault is sealed")]
    Sealed,
    #[error("vault is already unsealed")]
    AlreadyUnsealed,
    #[error("invalid unseal key share: {0}")]
    InvalidShare(String),
    #[error("duplicate unseal key share")]
    DuplicateShare,
    #[error("unseal failed: combined shares do not decrypt the vault")]
    UnsealFailed,
    #[error("permission denied: {capability} on {path}")]
    PermissionDenied { capability: String, path: String },
    #[error("authentication failed: {0}")]
    AuthFailed(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("version {version} of {path} is destroyed")]
    Destroyed { path: String, version: u64 },
    #[error("{0}")]
    Invalid(String),
    #[error("injection failed: {0}")]
    Inject(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("storage corrupt: {0}")]
    Corrupt(String),
    #[error("vault unavailable: {0}")]
    Unavailable(String),
}

impl VaultError {
    pub fn is_denial(&self) -> bool {
        matches!(self, VaultError::PermissionDenied { .. } | VaultError::AuthFailed(_))
    }
}

/// Seconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

/// Settable clock for tests.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        ManualClock(AtomicU64::new(start))
    }

    pub fn advance(&self, seconds: u64) {
        self.0.fetch_add(seconds, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now(&self) -> u64 {
        (**self).now()
    }
}

/// Request body accepted by login endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LoginRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    #[serde(alias = "service_account")]
    pub service_account: String,
    pub namespace: String,
}
