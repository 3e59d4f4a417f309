use std::path::PathBuf;
use std::sync::Arc;

use clustergate_core::constraints::{
    audit, load_constraints_dir, review, AuditReport, Constraint, ConstraintError, EnforcementAction, Operation,
    ReviewRequest, TemplateRegistry,
};
use clustergate_core::model::manifest::{container_value, manifest_from_value, volume_value, Manifest};
use clustergate_core::model::{ClusterState, Namespace, Pod, Resource};
use clustergate_core::vault::{inject, wants_injection, InjectorConfig, SecretBackend};
use parking_lot::{Mutex, RwLock};
use serde_json::{json, Value};

use crate::review::{AdmissionRequest, AdmissionResponse};

/// Webhook logic shared by the HTTP layer and in-process callers.
pub struct Admission {
    constraints: RwLock<Arc<Vec<Constraint>>>,
    constraints_dir: Option<PathBuf>,
    registry: TemplateRegistry,
    state: Option<Mutex<ClusterState>>,
    track_admitted: bool,
    fail_open: bool,
    secrets: Option<Arc<dyn SecretBackend>>,
    injector: InjectorConfig,
}

impl Admission {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        Admission {
            constraints: RwLock::new(Arc::new(constraints)),
            constraints_dir: None,
            registry: TemplateRegistry::default(),
            state: None,
            track_admitted: false,
            fail_open: false,
            secrets: None,
            injector: InjectorConfig::default(),
        }
    }

    /// Loads constraints from `dir` and remembers it for reloads.
    pub fn from_dir(dir: impl Into<PathBuf>) -> Result<Self, ConstraintError> {
        let dir = dir.into();
        let mut admission = Self::new(load_constraints_dir(&dir, &TemplateRegistry::default())?);
        admission.constraints_dir = Some(dir);
        Ok(admission)
    }

    pub fn with_state(mut self, state: ClusterState) -> Self {
        self.state = Some(Mutex::new(state));
        self
    }

    /// Records admitted objects into the audit state, creating an empty
    /// state if none was given.
    pub fn track_admitted(mut self) -> Self {
        self.track_admitted = true;
        if self.state.is_none() {
            self.state = Some(Mutex::new(ClusterState::default()));
        }
        self
    }

    /// Lab use only: internal errors admit the object with a warning.
    pub fn fail_open(mut self, enabled: bool) -> Self {
        self.fail_open = enabled;
        self
    }

    pub fn with_secrets(mut self, backend: Arc<dyn SecretBackend>, injector: InjectorConfig) -> Self {
        self.secrets = Some(backend);
        self.injector = injector;
        self
    }

    pub fn constraints(&self) -> Arc<Vec<Constraint>> {
        self.constraints.read().clone()
    }

    /// Re-reads the constraint directory and swaps the set atomically. On
    /// error the current set stays active.
    pub fn reload(&self) -> Result<usize, ConstraintError> {
        let dir = self.constraints_dir.as_ref().ok_or_else(|| ConstraintError::File {
            path: "<none>".into(),
            message: "no constraint directory configured".into(),
        })?;
        let fresh = load_constraints_dir(dir, &self.registry)?;
        let count = fresh.len();
        *self.constraints.write() = Arc::new(fresh);
        tracing::info!(count, "constraints reloaded");
        Ok(count)
    }

    /// Audit over the configured state; `None` when there is no state.
    pub fn audit(&self) -> Option<AuditReport> {
        let state = self.state.as_ref()?.lock().clone();
        Some(audit(&state, &self.constraints()))
    }

    fn internal_error(&self, uid: &str, message: String) -> AdmissionResponse {
        tracing::warn!(uid, fail_open = self.fail_open, "admission error: {message}");
        if self.fail_open {
            let mut response = AdmissionResponse::allow(uid);
            response.warnings.push(format!("admitted despite error (fail-open): {message}"));
            response
        } else {
            AdmissionResponse::deny(uid, message)
        }
    }

    pub fn validate(&self, request: &AdmissionRequest) -> AdmissionResponse {
        let uid = request.uid.as_str();
        let parsed = match parse_review(request) {
            Ok(p) => p,
            Err(message) => return self.internal_error(uid, message),
        };
        let Some(review_request) = parsed else {
            return AdmissionResponse::allow(uid);
        };
        let constraints = self.constraints();
        let decision = review(&review_request, &constraints);
        let mut denials = Vec::new();
        let mut warnings = Vec::new();
        for v in &decision.violations {
            let line = format!("[{}] {}", v.constraint_name, v.message);
            let blocking = v.enforcement_action == EnforcementAction::Deny && review_request.operation != Operation::Delete;
            match v.enforcement_action {
                EnforcementAction::Deny if blocking => denials.push(line),
                EnforcementAction::Dryrun => {}
                _ => warnings.push(line),
            }
        }
        let mut response = if decision.allowed {
            AdmissionResponse::allow(uid)
        } else if denials.is_empty() {
            // Rejections without a deny violation come from object validation.
            AdmissionResponse::deny(uid, "object failed validation")
        } else {
            tracing::info!(uid, object = %review_request.object.meta().name, "denied: {}", denials.join("; "));
            AdmissionResponse::deny(uid, denials.join("; "))
        };
        response.warnings = warnings;
        if decision.allowed && self.track_admitted {
            self.record(&review_request);
        }
        response
    }

    fn record(&self, request: &ReviewRequest) {
        let Some(state) = &self.state else { return };
        let mut state = state.lock();
        let meta = request.object.meta();
        match request.operation {
            Operation::Delete => state.remove(request.object.kind(), &meta.namespace, &meta.name),
            Operation::Create | Operation::Update => {
                if !meta.namespace.is_empty() && state.namespace(&meta.namespace).is_none() {
                    state.namespaces.push(Namespace::new(meta.namespace.clone()));
                }
                state.upsert(request.object.clone());
            }
        }
    }

    /// Mutating webhook: injects the secrets sidecar into annotated pods.
    /// Blocking when a remote vault is configured.
    pub fn mutate(&self, request: &AdmissionRequest) -> AdmissionResponse {
        let uid = request.uid.as_str();
        if request.operation == "DELETE" || request.operation == "CONNECT" {
            return AdmissionResponse::allow(uid);
        }
        let pod = match manifest_from_value(request.object.clone()) {
            Ok(Manifest::Pod(pod)) => pod,
            Ok(_) => return AdmissionResponse::allow(uid),
            Err(e) => {
                // Only pods can carry injection annotations; other kinds pass.
                if request.object.get("kind").and_then(Value::as_str) != Some("Pod") {
                    return AdmissionResponse::allow(uid);
                }
                return self.internal_error(uid, format!("cannot parse pod: {e}"));
            }
        };
        if !wants_injection(&pod) {
            return AdmissionResponse::allow(uid);
        }
        let Some(backend) = &self.secrets else {
            return self.internal_error(uid, "pod requests secret injection but no vault is configured".into());
        };
        match inject(&pod, backend.as_ref(), &self.injector) {
            Ok(injection) if injection.changed => {
                AdmissionResponse::allow(uid).with_patch(&injection_patch(&request.object, &pod, &injection.pod))
            }
            Ok(_) => AdmissionResponse::allow(uid),
            Err(e) => self.internal_error(uid, format!("secret injection for {}: {e}", pod.pod_ref())),
        }
    }
}

fn parse_object(value: &Value) -> Result<Option<Resource>, String> {
    match manifest_from_value(value.clone()).map_err(|e| format!("cannot parse object: {e}"))? {
        Manifest::NetworkPolicy(_) => Ok(None),
        m => m.into_resource().map(Some).map_err(|e| e.to_string()),
    }
}

/// Maps a wire request onto an engine review. `None` means no constraint
/// can apply (operations or kinds outside the model's scope).
fn parse_review(request: &AdmissionRequest) -> Result<Option<ReviewRequest>, String> {
    let operation = match request.operation.as_str() {
        "CREATE" => Operation::Create,
        "UPDATE" => Operation::Update,
        "DELETE" => Operation::Delete,
        "CONNECT" => return Ok(None),
        other => return Err(format!("unknown operation {other:?}")),
    };
    let old = if request.old_object.is_null() { None } else { parse_object(&request.old_object)? };
    let object = if request.object.is_null() {
        if operation != Operation::Delete {
            return Err("request has no object".into());
        }
        old.clone()
    } else {
        parse_object(&request.object)?
    };
    let Some(object) = object else { return Ok(None) };
    let old = match operation {
        Operation::Create => None,
        _ => Some(old.unwrap_or_else(|| object.clone())),
    };
    ReviewRequest::new(operation, object, old).map(Some)
}

/// JSON Patch turning `raw` into the injected pod: appended volume mounts,
/// appended containers and appended volumes, each as a single `add`.
pub fn injection_patch(raw: &Value, before: &Pod, after: &Pod) -> Vec<Value> {
    let mut ops = Vec::new();
    for (i, (old, new)) in before.spec.containers.iter().zip(&after.spec.containers).enumerate() {
        let added = &new.volume_mounts[old.volume_mounts.len()..];
        if added.is_empty() {
            continue;
        }
        let has_list = raw.pointer(&format!("/spec/containers/{i}/volumeMounts")).is_some_and(Value::is_array);
        push_all(&mut ops, &format!("/spec/containers/{i}/volumeMounts"), has_list, added.iter().map(|m| json!(m)));
    }
    let containers = &after.spec.containers[before.spec.containers.len()..];
    push_all(&mut ops, "/spec/containers", true, containers.iter().map(container_value));
    let volumes = &after.spec.volumes[before.spec.volumes.len()..];
    let has_volumes = raw.pointer("/spec/volumes").is_some_and(Value::is_array);
    push_all(&mut ops, "/spec/volumes", has_volumes, volumes.iter().map(volume_value));
    ops
}

fn push_all(ops: &mut Vec<Value>, path: &str, list_exists: bool, values: impl Iterator<Item = Value>) {
    let values: Vec<Value> = values.collect();
    if values.is_empty() {
        return;
    }
    if list_exists {
        for v in values {
            ops.push(json!({ "op": "add", "path": format!("{path}/-"), "value": v }));
        }
    } else {
        ops.push(json!({ "op": "add", "path": path, "value": values }));
    }
}
