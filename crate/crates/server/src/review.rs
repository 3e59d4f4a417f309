//! AdmissionReview wire format, `admission.k8s.io/v1` layout.

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const API_VERSION: &str = "admission.k8s.io/v1";

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AdmissionRequest {
    pub uid: String,
    pub operation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<GroupVersionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_kind: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub object: Value,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub old_object: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct GroupVersionKind {
    #[serde(default)]
    pub group: String,
    #[serde(default)]
    pub version: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Status {
    pub code: u16,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdmissionResponse {
    pub uid: String,
    pub allowed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<Status>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_type: Option<String>,
    /// Base64 of a JSON Patch document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AdmissionResponse {
    pub fn allow(uid: &str) -> Self {
        AdmissionResponse {
            uid: uid.to_string(),
            allowed: true,
            status: None,
            patch_type: None,
            patch: None,
            warnings: Vec::new(),
        }
    }

    pub fn deny(uid: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        AdmissionResponse {
            allowed: false,
            status: Some(Status {
                code: 403,
                message: if message.is_empty() { "denied".into() } else { message },
            }),
            ..Self::allow(uid)
        }
    }

    pub fn with_patch(mut self, ops: &[Value]) -> Self {
        let doc = serde_json::to_vec(ops).expect("patch serializes");
        self.patch = Some(base64::engine::general_purpose::STANDARD.encode(doc));
        self.patch_type = Some("JSONPatch".into());
        self
    }

    /// Decoded patch operations, if any.
    pub fn patch_ops(&self) -> Option<Vec<Value>> {
        let bytes = base64::engine::general_purpose::STANDARD.decode(self.patch.as_ref()?).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn status_message(&self) -> &str {
        self.status.as_ref().map_or("", |s| s.message.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdmissionReview {
    pub api_version: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<AdmissionRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<AdmissionResponse>,
}

impl AdmissionReview {
    pub fn request(request: AdmissionRequest) -> Self {
        AdmissionReview {
            api_version: API_VERSION.into(),
            kind: "AdmissionReview".into(),
            request: Some(request),
            response: None,
        }
    }

    pub fn response(response: AdmissionResponse) -> Self {
        AdmissionReview {
            api_version: API_VERSION.into(),
            kind: "AdmissionReview".into(),
            request: None,
            response: Some(response),
        }
    }
}

/// Accepts either a full AdmissionReview envelope or a bare request.
pub fn parse_request(body: &[u8]) -> Result<AdmissionRequest, String> {
    let value: Value = serde_json::from_slice(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let request = match value.get("request") {
        Some(r) => r.clone(),
        None => value,
    };
    let request: AdmissionRequest =
        serde_json::from_value(request).map_err(|e| format!("invalid admission request: {e}"))?;
    if request.uid.is_empty() {
        return Err("admission request uid is empty".into());
    }
    Ok(request)
}
