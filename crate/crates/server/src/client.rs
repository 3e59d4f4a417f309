//! Blocking HTTP client for a remote vault API.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::Engine as _;
use clustergate_core::vault::{
    InitResult, IssuedToken, LoginRequest, PolicyDoc, Role, SealStatus, SecretBackend, SecretsBundle, VaultError,
};
use reqwest::blocking::Client;
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::vault_api::TOKEN_HEADER;

/// Must not be created or dropped inside an async runtime.
#[derive(Debug, Clone)]
pub struct RemoteVault {
    base: String,
    token: Option<String>,
    http: Client,
}

fn error_from(kind: &str, message: String) -> VaultError {
    match kind {
        "not_initialized" => VaultError::NotInitialized,
        "already_initialized" => VaultError::AlreadyInitialized,
        "sealed" => VaultError::Sealed,
        "already_unsealed" => VaultError::AlreadyUnsealed,
        "invalid_share" => VaultError::InvalidShare(message),
        "duplicate_share" => VaultError::DuplicateShare,
        "unseal_failed" => VaultError::UnsealFailed,
        "permission_denied" => VaultError::PermissionDenied { capability: "?".into(), path: message },
        "auth_failed" => VaultError::AuthFailed(message),
        "not_found" | "destroyed" => VaultError::NotFound(message),
        "invalid" => VaultError::Invalid(message),
        "inject" => VaultError::Inject(message),
        "storage" => VaultError::Corrupt(message),
        _ => VaultError::Unavailable(message),
    }
}

fn decode<T: DeserializeOwned>(value: Value) -> Result<T, VaultError> {
    serde_json::from_value(value).map_err(|e| VaultError::Unavailable(format!("unexpected response: {e}")))
}

impl RemoteVault {
    pub fn new(addr: &str) -> Result<Self, VaultError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| VaultError::Unavailable(e.to_string()))?;
        Ok(RemoteVault { base: addr.trim_end_matches('/').to_string(), token: None, http })
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn call(&self, method: Method, path: &str, body: Option<Value>, token: Option<&str>) -> Result<Value, VaultError> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(t) = token.or(self.token.as_deref()) {
            req = req.header(TOKEN_HEADER, t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().map_err(|e| VaultError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let value: Value = resp.json().unwrap_or(Value::Null);
        if status.is_success() {
            return Ok(value);
        }
        let kind = value.get("kind").and_then(Value::as_str).unwrap_or("");
        let message = value
            .pointer("/errors/0")
            .and_then(Value::as_str)
            .map_or_else(|| format!("HTTP {status}"), str::to_string);
        Err(error_from(kind, message))
    }

    pub fn init(&self, shares: u8, threshold: u8) -> Result<InitResult, VaultError> {
        decode(self.call(Method::POST, "/v1/sys/init", Some(json!({ "shares": shares, "threshold": threshold })), None)?)
    }

    pub fn unseal(&self, share: &str) -> Result<SealStatus, VaultError> {
        decode(self.call(Method::POST, "/v1/sys/unseal", Some(json!({ "key": share })), None)?)
    }

    pub fn status(&self) -> Result<SealStatus, VaultError> {
        decode(self.call(Method::GET, "/v1/sys/seal-status", None, None)?)
    }

    pub fn seal(&self) -> Result<(), VaultError> {
        self.call(Method::POST, "/v1/sys/seal", None, None).map(drop)
    }

    pub fn kv_put(&self, mount: &str, path: &str, data: &BTreeMap<String, String>) -> Result<u64, VaultError> {
        let v = self.call(Method::POST, &format!("/v1/{mount}/data/{path}"), Some(json!({ "data": data })), None)?;
        decode(v.pointer("/data/version").cloned().unwrap_or(Value::Null))
    }

    pub fn kv_get(&self, mount: &str, path: &str, version: Option<u64>) -> Result<BTreeMap<String, String>, VaultError> {
        self.kv_get_with(None, mount, path, version)
    }

    fn kv_get_with(
        &self,
        token: Option<&str>,
        mount: &str,
        path: &str,
        version: Option<u64>,
    ) -> Result<BTreeMap<String, String>, VaultError> {
        let query = version.map_or_else(String::new, |v| format!("?version={v}"));
        let v = self.call(Method::GET, &format!("/v1/{mount}/data/{path}{query}"), None, token)?;
        decode(v.pointer("/data/data").cloned().unwrap_or(Value::Null))
    }

    pub fn put_policy(&self, doc: &PolicyDoc) -> Result<(), VaultError> {
        let body = json!({ "rules": doc.rules, "rateLimit": doc.rate_limit });
        self.call(Method::PUT, &format!("/v1/sys/policies/{}", doc.name), Some(body), None).map(drop)
    }

    pub fn put_role(&self, role: &Role) -> Result<(), VaultError> {
        self.call(Method::PUT, &format!("/v1/auth/kubernetes/role/{}", role.name), Some(json!(role)), None)
            .map(drop)
    }

    pub fn login(&self, role: Option<&str>, service_account: &str, namespace: &str) -> Result<IssuedToken, VaultError> {
        let body = LoginRequest {
            role: role.map(str::to_string),
            service_account: service_account.into(),
            namespace: namespace.into(),
        };
        let v = self.call(Method::POST, "/v1/auth/kubernetes/login", Some(json!(body)), None)?;
        decode(v.get("auth").cloned().unwrap_or(Value::Null))
    }

    pub fn create_secrets(
        &self,
        namespace: &str,
        service: &str,
        files: &BTreeMap<String, Vec<u8>>,
    ) -> Result<SecretsBundle, VaultError> {
        let encoded: BTreeMap<&str, String> = files
            .iter()
            .map(|(k, v)| (k.as_str(), base64::engine::general_purpose::STANDARD.encode(v)))
            .collect();
        let body = json!({ "namespace": namespace, "service": service, "files": encoded });
        decode(self.call(Method::POST, "/v1/sys/create-secrets", Some(body), None)?)
    }
}

impl SecretBackend for RemoteVault {
    fn login(&self, role: Option<&str>, service_account: &str, namespace: &str) -> Result<String, VaultError> {
        RemoteVault::login(self, role, service_account, namespace).map(|t| t.token)
    }

    fn read(&self, token: &str, path: &str) -> Result<BTreeMap<String, String>, VaultError> {
        let (mount, rest) = path
            .split_once('/')
            .ok_or_else(|| VaultError::Invalid(format!("path {path:?} has no mount")))?;
        self.kv_get_with(Some(token), mount, rest, None)
    }
}
