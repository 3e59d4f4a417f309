//! Annotation-driven sidecar injection.

use std::collections::BTreeMap;

use base64::Engine as _;

use super::{render_template_bytes, Vault, VaultError};
use crate::model::{Container, Pod, Quantity, ResourceKind, Volume, VolumeMount};

pub const ANNOTATION_INJECT: &str = "vault.inject";
pub const ANNOTATION_ROLE: &str = "vault.role";
pub const ANNOTATION_SECRET_PATH: &str = "vault.secret-path";
pub const ANNOTATION_TEMPLATE_PREFIX: &str = "vault.template-";
/// Key prefix marking a base64-encoded binary value.
pub const BINARY_PREFIX: &str = "__binary:";

/// What the injector needs from a vault: login and read by mount-qualified
/// path. Implemented by the in-process [`Vault`] and by HTTP clients.
pub trait SecretBackend: Send + Sync {
    fn login(&self, role: Option<&str>, service_account: &str, namespace: &str) -> Result<String, VaultError>;
    fn read(&self, token: &str, path: &str) -> Result<BTreeMap<String, String>, VaultError>;
}

impl SecretBackend for Vault {
    fn login(&self, role: Option<&str>, service_account: &str, namespace: &str) -> Result<String, VaultError> {
        Vault::login(self, role, service_account, namespace).map(|t| t.token)
    }

    fn read(&self, token: &str, path: &str) -> Result<BTreeMap<String, String>, VaultError> {
        let (mount, rest) = path
            .split_once('/')
            .ok_or_else(|| VaultError::Invalid(format!("path {path:?} has no mount")))?;
        self.kv_get(token, mount, rest, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectorConfig {
    pub agent_image: String,
    pub agent_name: String,
    pub volume_name: String,
    pub mount_path: String,
}

impl Default for InjectorConfig {
    fn default() -> Self {
        InjectorConfig {
            agent_image: "registry.cern.ch/cmsweb/vault-agent:1.0".into(),
            agent_name: "vault-agent".into(),
            volume_name: "vault-secrets".into(),
            mount_path: "/vault/secrets".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub pod: Pod,
    /// Rendered files keyed by file name, as the agent would write them
    /// under the mount path.
    pub files: BTreeMap<String, Vec<u8>>,
    /// False when the pod was not annotated or already carried the agent.
    pub changed: bool,
}

/// Strips binary markers, base64-decoding marked values.
pub fn decode_secret_data(data: &BTreeMap<String, String>) -> Result<BTreeMap<String, Vec<u8>>, VaultError> {
    let mut out = BTreeMap::new();
    for (key, value) in data {
        match key.strip_prefix(BINARY_PREFIX) {
            Some(name) => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(value)
                    .map_err(|e| VaultError::Invalid(format!("binary value {name:?}: {e}")))?;
                out.insert(name.to_string(), bytes);
            }
            None => {
                out.insert(key.clone(), value.clone().into_bytes());
            }
        }
    }
    Ok(out)
}

pub fn wants_injection(pod: &Pod) -> bool {
    pod.meta.annotations.get(ANNOTATION_INJECT).is_some_and(|v| v == "true")
}

/// Renders the annotated secret and adds the agent sidecar and shared
/// in-memory volume. The input is never modified; on any error nothing is
/// returned.
pub fn inject(pod: &Pod, backend: &dyn SecretBackend, config: &InjectorConfig) -> Result<Injection, VaultError> {
    if !wants_injection(pod) {
        return Ok(Injection { pod: pod.clone(), files: BTreeMap::new(), changed: false });
    }
    let annotations = &pod.meta.annotations;
    let path = annotations
        .get(ANNOTATION_SECRET_PATH)
        .ok_or_else(|| VaultError::Inject(format!("annotation {ANNOTATION_SECRET_PATH} is required")))?;
    let mut templates = BTreeMap::new();
    for (key, template) in annotations {
        if let Some(name) = key.strip_prefix(ANNOTATION_TEMPLATE_PREFIX) {
            if name.is_empty() || name.contains('/') || name.starts_with('.') {
                return Err(VaultError::Inject(format!("invalid template file name in {key:?}")));
            }
            templates.insert(name.to_string(), template.as_str());
        }
    }

    let role = annotations.get(ANNOTATION_ROLE).map(String::as_str);
    let token = backend
        .login(role, &pod.spec.service_account, &pod.meta.namespace)
        .map_err(|e| VaultError::Inject(format!("login for {}: {e}", pod.pod_ref())))?;
    let data = decode_secret_data(&backend.read(&token, path).map_err(|e| VaultError::Inject(format!("read {path}: {e}")))?)?;

    let files = if templates.is_empty() {
        data
    } else {
        templates
            .into_iter()
            .map(|(name, t)| render_template_bytes(t, &data).map(|body| (name, body)))
            .collect::<Result<_, _>>()?
    };

    let mut out = pod.clone();
    let already = out.spec.containers.iter().any(|c| c.name == config.agent_name);
    if !already {
        if out.spec.volumes.iter().any(|v| v.name == config.volume_name) {
            return Err(VaultError::Inject(format!("pod already has a volume named {:?}", config.volume_name)));
        }
        let mount = VolumeMount { name: config.volume_name.clone(), mount_path: config.mount_path.clone() };
        for c in &mut out.spec.containers {
            if !c.volume_mounts.iter().any(|m| m.name == mount.name) {
                c.volume_mounts.push(mount.clone());
            }
        }
        out.spec.containers.push(agent_container(config));
        let mut source = serde_json::Map::new();
        source.insert("emptyDir".into(), serde_json::json!({ "medium": "Memory" }));
        out.spec.volumes.push(Volume { name: config.volume_name.clone(), source });
    }
    Ok(Injection { pod: out, files, changed: !already })
}

fn agent_container(config: &InjectorConfig) -> Container {
    let mut c = Container::new(config.agent_name.clone(), config.agent_image.clone());
    c.resources.requests.insert(ResourceKind::Cpu, Quantity::millicores(50));
    c.resources.requests.insert(ResourceKind::Memory, Quantity::bytes(64 << 20));
    c.resources.limits.insert(ResourceKind::Cpu, Quantity::millicores(100));
    c.resources.limits.insert(ResourceKind::Memory, Quantity::bytes(128 << 20));
    let probe = serde_json::json!({ "exec": { "command": ["test", "-d", config.mount_path] } });
    c.readiness_probe = Some(probe.clone());
    c.liveness_probe = Some(probe);
    c.capabilities_drop = vec!["ALL".into()];
    c.volume_mounts = vec![VolumeMount { name: config.volume_name.clone(), mount_path: config.mount_path.clone() }];
    c
}
