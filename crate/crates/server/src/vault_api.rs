//! Vault HTTP API under `/v1`, kv-v2 style.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use clustergate_core::vault::{LoginRequest, PolicyDoc, PolicyRule, Role, Vault, VaultError};
use serde::Deserialize;
use serde_json::{json, Value};

pub const TOKEN_HEADER: &str = "x-vault-token";

/// Stable machine-readable name of an error, used by clients to rebuild it.
pub fn error_kind(e: &VaultError) -> &'static str {
    match e {
        VaultError::NotInitialized => "not_initialized",
        VaultError::AlreadyInitialized => "already_initialized",
        VaultError::Sealed => "sealed",
        VaultError::AlreadyUnsealed => "already_unsealed",
        VaultError::InvalidShare(_) => "invalid_share",
        VaultError::DuplicateShare => "duplicate_share",
        VaultError::UnsealFailed => "unseal_failed",
        VaultError::PermissionDenied { .. } => "permission_denied",
        VaultError::AuthFailed(_) => "auth_failed",
        VaultError::NotFound(_) => "not_found",
        VaultError::Destroyed { .. } => "destroyed",
        VaultError::Invalid(_) | VaultError::Template(_) => "invalid",
        VaultError::Inject(_) => "inject",
        VaultError::Storage(_) | VaultError::Corrupt(_) => "storage",
        VaultError::Unavailable(_) => "unavailable",
    }
}

fn status_of(e: &VaultError) -> StatusCode {
    match e {
        VaultError::NotInitialized | VaultError::Sealed | VaultError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        VaultError::PermissionDenied { .. } | VaultError::AuthFailed(_) => StatusCode::FORBIDDEN,
        VaultError::NotFound(_) | VaultError::Destroyed { .. } => StatusCode::NOT_FOUND,
        VaultError::AlreadyInitialized | VaultError::AlreadyUnsealed => StatusCode::CONFLICT,
        VaultError::Storage(_) | VaultError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

struct ApiError(VaultError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "errors": [self.0.to_string()], "kind": error_kind(&self.0) });
        (status_of(&self.0), Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

/// Runs a vault call off the async executor; storage writes fsync.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, VaultError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(VaultError::Unavailable(e.to_string())))?
        .map_err(ApiError)
}

fn token(headers: &HeaderMap) -> String {
    headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string()
}

fn bad(message: impl Into<String>) -> ApiError {
    ApiError(VaultError::Invalid(message.into()))
}

pub fn routes(vault: Arc<Vault>) -> Router {
    Router::new()
        .route("/v1/sys/init", post(init))
        .route("/v1/sys/unseal", post(unseal))
        .route("/v1/sys/seal-status", get(seal_status))
        .route("/v1/sys/seal", post(seal))
        .route("/v1/sys/policies/:name", get(read_policy).put(write_policy).post(write_policy))
        .route("/v1/auth/kubernetes/role/:name", get(read_role).put(write_role).post(write_role))
        .route("/v1/auth/kubernetes/login", post(login))
        .route("/v1/auth/token/revoke-self", post(revoke_self))
        .route("/v1/sys/create-secrets", post(create_secrets))
        .route("/v1/:mount/data/*path", get(kv_get).post(kv_put).put(kv_put))
        .with_state(vault)
}

#[derive(Deserialize)]
struct InitBody {
    #[serde(alias = "secret_shares", default = "default_shares")]
    shares: u8,
    #[serde(alias = "secret_threshold", default = "default_threshold")]
    threshold: u8,
}

fn default_shares() -> u8 {
    clustergate_core::vault::DEFAULT_SHARES
}

fn default_threshold() -> u8 {
    clustergate_core::vault::DEFAULT_THRESHOLD
}

async fn init(State(vault): State<Arc<Vault>>, body: Option<Json<InitBody>>) -> ApiResult {
    let (shares, threshold) = body.map_or((default_shares(), default_threshold()), |Json(b)| (b.shares, b.threshold));
    let result = blocking(move || vault.init(shares, threshold)).await?;
    Ok(Json(json!(result)))
}

#[derive(Deserialize)]
struct UnsealBody {
    key: String,
}

async fn unseal(State(vault): State<Arc<Vault>>, Json(body): Json<UnsealBody>) -> ApiResult {
    let status = blocking(move || vault.unseal(&body.key)).await?;
    Ok(Json(json!(status)))
}

async fn seal_status(State(vault): State<Arc<Vault>>) -> Json<Value> {
    Json(json!(vault.status()))
}

async fn seal(State(vault): State<Arc<Vault>>, headers: HeaderMap) -> ApiResult {
    let token = token(&headers);
    blocking(move || vault.seal(&token)).await?;
    Ok(Json(json!({})))
}

async fn revoke_self(State(vault): State<Arc<Vault>>, headers: HeaderMap) -> ApiResult {
    let token = token(&headers);
    blocking(move || vault.revoke(&token)).await?;
    Ok(Json(json!({})))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct PolicyBody {
    rules: Vec<PolicyRule>,
    #[serde(default)]
    rate_limit: Option<String>,
}

async fn write_policy(
    State(vault): State<Arc<Vault>>,
    headers: HeaderMap,
    Path(name): Path<String>,
    Json(body): Json<PolicyBody>,
) -> ApiResult {
    let token = token(&headers);
    let doc = PolicyDoc { name, rules: body.rules, rate_limit: body.rate_limit };
    blocking(move || vault.put_policy(&token, doc)).await?;
    Ok(Json(json!({})))
}

async fn read_policy(State(vault): State<Arc<Vault>>, headers: HeaderMap, Path(name): Path<String>) -> ApiResult {
    let token = token(&headers);
    let doc = blocking(move || vault.get_policy(&token, &name)).await?;
    Ok(Json(json!({ "data": doc })))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RoleBody {
    bound_service_accounts: Vec<String>,
    bound_namespaces: Vec<String>,
    policies: Vec<String>,
    #[serde(default, alias = "ttl")]
    token_ttl: Option<u64>,
}

async fn write_role(
    State(vault): State<Arc<Vault>>,
    headers: HeaderMap,
    Path(name): Path<String>,
    Json(body): Json<RoleBody>,
) -> ApiResult {
    let token = token(&headers);
    let role = Role {
        name,
        bound_service_accounts: body.bound_service_accounts,
        bound_namespaces: body.bound_namespaces,
        policies: body.policies,
        token_ttl: body.token_ttl.unwrap_or(clustergate_core::vault::DEFAULT_TOKEN_TTL),
    };
    blocking(move || vault.put_role(&token, role)).await?;
    Ok(Json(json!({})))
}

async fn read_role(State(vault): State<Arc<Vault>>, headers: HeaderMap, Path(name): Path<String>) -> ApiResult {
    let token = token(&headers);
    let role = blocking(move || vault.get_role(&token, &name)).await?;
    Ok(Json(json!({ "data": role })))
}

async fn login(State(vault): State<Arc<Vault>>, Json(body): Json<LoginRequest>) -> ApiResult {
    let issued = blocking(move || vault.login(body.role.as_deref(), &body.service_account, &body.namespace)).await?;
    Ok(Json(json!({ "auth": issued })))
}

#[derive(Deserialize)]
struct CreateSecretsBody {
    namespace: String,
    service: String,
    /// File name to base64 content.
    files: BTreeMap<String, String>,
}

async fn create_secrets(
    State(vault): State<Arc<Vault>>,
    headers: HeaderMap,
    Json(body): Json<CreateSecretsBody>,
) -> ApiResult {
    let token = token(&headers);
    let mut files = BTreeMap::new();
    for (name, encoded) in body.files {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(encoded)
            .map_err(|e| bad(format!("file {name:?}: {e}")))?;
        files.insert(name, bytes);
    }
    let bundle = blocking(move || vault.create_secrets(&token, &body.namespace, &body.service, &files)).await?;
    Ok(Json(json!(bundle)))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

async fn kv_get(
    State(vault): State<Arc<Vault>>,
    headers: HeaderMap,
    Path((mount, path)): Path<(String, String)>,
    Query(query): Query<VersionQuery>,
) -> ApiResult {
    let token = token(&headers);
    let (data, info) = blocking(move || vault.kv_read(&token, &mount, &path, query.version)).await?;
    Ok(Json(json!({ "data": { "data": data, "metadata": info } })))
}

#[derive(Deserialize)]
struct KvWrite {
    data: BTreeMap<String, String>,
}

async fn kv_put(
    State(vault): State<Arc<Vault>>,
    headers: HeaderMap,
    Path((mount, path)): Path<(String, String)>,
    Json(body): Json<KvWrite>,
) -> ApiResult {
    let token = token(&headers);
    let version = blocking(move || vault.kv_put(&token, &mount, &path, body.data)).await?;
    Ok(Json(json!({ "data": { "version": version } })))
}
