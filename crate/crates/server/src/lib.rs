//! Admission webhook and vault HTTP service.
//!
//! `POST /validate` and `POST /mutate` take AdmissionReview JSON;
//! `GET /audit` reports violations over the configured cluster state;
//! `POST /-/reload` re-reads the constraint directory. When a local vault is
//! attached its API is served under `/v1`.

pub mod admission;
pub mod client;
pub mod review;
pub mod vault_api;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clustergate_core::vault::Vault;
use serde_json::json;

pub use admission::{injection_patch, Admission};
pub use client::RemoteVault;
pub use review::{parse_request, AdmissionRequest, AdmissionResponse, AdmissionReview};

pub fn router(admission: Arc<Admission>, vault: Option<Arc<Vault>>) -> Router {
    let app = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/validate", post(validate))
        .route("/mutate", post(mutate))
        .route("/audit", get(audit))
        .route("/-/reload", post(reload))
        .with_state(admission);
    match vault {
        Some(v) => app.merge(vault_api::routes(v)),
        None => app,
    }
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": message }))).into_response()
}

async fn validate(State(admission): State<Arc<Admission>>, body: Bytes) -> Response {
    match parse_request(&body) {
        Ok(request) => Json(AdmissionReview::response(admission.validate(&request))).into_response(),
        Err(e) => bad_request(e),
    }
}

async fn mutate(State(admission): State<Arc<Admission>>, body: Bytes) -> Response {
    let request = match parse_request(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    let uid = request.uid.clone();
    // The vault client may block on network or disk.
    let response = tokio::task::spawn_blocking(move || admission.mutate(&request))
        .await
        .unwrap_or_else(|e| AdmissionResponse::deny(&uid, format!("internal error: {e}")));
    Json(AdmissionReview::response(response)).into_response()
}

async fn audit(State(admission): State<Arc<Admission>>) -> Response {
    match admission.audit() {
        Some(report) => Json(report).into_response(),
        None => (
            StatusCode::CONFLICT,
            Json(json!({ "error": "no cluster state configured; start with --state or --track-admitted" })),
        )
            .into_response(),
    }
}

async fn reload(State(admission): State<Arc<Admission>>) -> Response {
    match admission.reload() {
        Ok(count) => Json(json!({ "constraints": count })).into_response(),
        Err(e) => {
            tracing::warn!("reload failed, keeping current constraints: {e}");
            (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "error": e.to_string() }))).into_response()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TlsFiles {
    pub cert: PathBuf,
    pub key: PathBuf,
}

/// Serves until ctrl-c. `on_bound` receives the actual address, which
/// matters when binding port 0.
pub async fn serve(
    router: Router,
    addr: SocketAddr,
    tls: Option<TlsFiles>,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    match tls {
        None => {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            tracing::info!(addr = %listener.local_addr()?, "serving plain HTTP");
            on_bound(listener.local_addr()?);
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        }
        Some(files) => {
            let config = axum_server::tls_rustls::RustlsConfig::from_pem_file(&files.cert, &files.key).await?;
            let listener = std::net::TcpListener::bind(addr)?;
            listener.set_nonblocking(true)?;
            tracing::info!(addr = %listener.local_addr()?, "serving HTTPS");
            on_bound(listener.local_addr()?);
            let handle = axum_server::Handle::new();
            let shutdown = handle.clone();
            tokio::spawn(async move {
                let _ = tokio::signal::ctrl_c().await;
                shutdown.graceful_shutdown(None);
            });
            axum_server::from_tcp_rustls(listener, config)
                .handle(handle)
                .serve(router.into_make_service())
                .await
        }
    }
}
