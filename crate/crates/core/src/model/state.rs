use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::manifest::{manifest_from_value, pod_value, to_manifest_value, Manifest, ManifestError};
use super::{LabelMap, ModelError, Pod, PodRef, Resource, WorkloadObject, NAMESPACE_NAME_LABEL};
use crate::netpol::NetworkPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Namespace {
    pub name: String,
    #[serde(default, skip_serializing_if = "LabelMap::is_empty")]
    pub labels: LabelMap,
}

impl Namespace {
    /// A namespace carrying its own name label.
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        let mut ns = Self {
            name,
            labels: LabelMap::new(),
        };
        ns.ensure_name_label();
        ns
    }

    fn ensure_name_label(&mut self) {
        if !self.labels.contains_key(NAMESPACE_NAME_LABEL) {
            // names are validated non-empty and whitespace free before this
            let _ = self.labels.insert(NAMESPACE_NAME_LABEL, self.name.clone());
        }
    }
}

/// Everything the engines evaluate against.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterState {
    pub namespaces: Vec<Namespace>,
    pub pods: Vec<Pod>,
    pub objects: Vec<WorkloadObject>,
    pub network_policies: Vec<NetworkPolicy>,
}

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("state fixture: {0}")]
    Json(#[from] serde_json::Error),
    #[error("state fixture: {0}")]
    Manifest(#[from] ManifestError),
    #[error("state fixture: {0}")]
    Model(#[from] ModelError),
}

#[derive(Deserialize, Serialize)]
#[serde(rename_all = "camelCase")]
struct Fixture {
    #[serde(default)]
    namespaces: Vec<Namespace>,
    #[serde(default)]
    pods: Vec<Value>,
    #[serde(default)]
    objects: Vec<Value>,
    #[serde(default)]
    network_policies: Vec<Value>,
}

impl ClusterState {
    /// Builds a state and checks its invariants. Namespaces get the
    /// `kubernetes.io/metadata.name` label if they lack it.
    pub fn new(
        namespaces: Vec<Namespace>,
        pods: Vec<Pod>,
        objects: Vec<WorkloadObject>,
        network_policies: Vec<NetworkPolicy>,
    ) -> Result<Self, ModelError> {
        let mut state = Self {
            namespaces,
            pods,
            objects,
            network_policies,
        };
        for ns in &mut state.namespaces {
            if ns.name.is_empty() || ns.name.chars().any(char::is_whitespace) {
                return Err(ModelError::Invalid(format!("invalid namespace name {:?}", ns.name)));
            }
            ns.ensure_name_label();
        }
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut names = HashSet::new();
        for ns in &self.namespaces {
            if !names.insert(ns.name.as_str()) {
                return Err(ModelError::Invalid(format!("duplicate namespace {:?}", ns.name)));
            }
        }
        let mut pods = HashSet::new();
        let mut ips = HashSet::new();
        for pod in &self.pods {
            pod.validate()?;
            if !names.contains(pod.meta.namespace.as_str()) {
                return Err(ModelError::Invalid(format!(
                    "pod {} is in unknown namespace",
                    pod.pod_ref()
                )));
            }
            if !pods.insert(pod.pod_ref()) {
                return Err(ModelError::Invalid(format!("duplicate pod {}", pod.pod_ref())));
            }
            if let Some(ip) = pod.pod_ip {
                if !ips.insert(ip) {
                    return Err(ModelError::Invalid(format!("pod IP {ip} assigned twice")));
                }
            }
        }
        for obj in &self.objects {
            obj.validate()?;
        }
        Ok(())
    }

    /// Loads the JSON fixture format: top-level `namespaces`, `pods`,
    /// `objects` and `networkPolicies`, the latter three holding manifests.
    pub fn from_json(bytes: &[u8]) -> Result<Self, StateError> {
        let fixture: Fixture = serde_json::from_slice(bytes)?;
        let mut pods = Vec::new();
        for v in fixture.pods {
            match manifest_from_value(v)? {
                Manifest::Pod(p) => pods.push(p),
                other => {
                    return Err(ManifestError::WrongKind {
                        expected: "Pod",
                        found: other.kind().into(),
                    }
                    .into())
                }
            }
        }
        let mut objects = Vec::new();
        for v in fixture.objects {
            match manifest_from_value(v)? {
                Manifest::Workload(w) => objects.push(w),
                Manifest::Pod(p) => pods.push(p),
                other => {
                    return Err(ManifestError::WrongKind {
                        expected: "a workload object",
                        found: other.kind().into(),
                    }
                    .into())
                }
            }
        }
        let mut policies = Vec::new();
        for v in fixture.network_policies {
            match manifest_from_value(v)? {
                Manifest::NetworkPolicy(np) => policies.push(np),
                other => {
                    return Err(ManifestError::WrongKind {
                        expected: "NetworkPolicy",
                        found: other.kind().into(),
                    }
                    .into())
                }
            }
        }
        Ok(Self::new(fixture.namespaces, pods, objects, policies)?)
    }

    pub fn load(path: &Path) -> Result<Self, StateError> {
        let bytes = std::fs::read(path).map_err(|source| StateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&bytes)
    }

    pub fn to_json(&self) -> Value {
        let fixture = Fixture {
            namespaces: self.namespaces.clone(),
            pods: self.pods.iter().map(pod_value_with_kind).collect(),
            objects: self
                .objects
                .iter()
                .map(|o| to_manifest_value(&Manifest::Workload(o.clone())))
                .collect(),
            network_policies: self
                .network_policies
                .iter()
                .map(|p| to_manifest_value(&Manifest::NetworkPolicy(p.clone())))
                .collect(),
        };
        serde_json::to_value(fixture).expect("fixture serializes")
    }

    pub fn namespace(&self, name: &str) -> Option<&Namespace> {
        self.namespaces.iter().find(|n| n.name == name)
    }

    pub fn pod(&self, pod: &PodRef) -> Option<&Pod> {
        self.pods
            .iter()
            .find(|p| p.meta.namespace == pod.namespace && p.meta.name == pod.name)
    }

    /// Pods and workload objects, in state order.
    pub fn resources(&self) -> impl Iterator<Item = Resource> + '_ {
        self.pods
            .iter()
            .cloned()
            .map(Resource::Pod)
            .chain(self.objects.iter().cloned().map(Resource::Workload))
    }

    /// Adds or replaces an object by (kind, namespace, name).
    pub fn upsert(&mut self, resource: Resource) {
        match resource {
            Resource::Pod(p) => {
                self.pods
                    .retain(|x| !(x.meta.namespace == p.meta.namespace && x.meta.name == p.meta.name));
                self.pods.push(p);
            }
            Resource::Workload(w) => {
                self.objects.retain(|x| {
                    !(x.kind == w.kind && x.meta.namespace == w.meta.namespace && x.meta.name == w.meta.name)
                });
                self.objects.push(w);
            }
        }
    }

    pub fn remove(&mut self, kind: &str, namespace: &str, name: &str) {
        if kind == "Pod" {
            self.pods
                .retain(|x| !(x.meta.namespace == namespace && x.meta.name == name));
        } else {
            self.objects.retain(|x| {
                !(x.kind.as_str() == kind && x.meta.namespace == namespace && x.meta.name == name)
            });
        }
    }

    /// Labels per namespace name, for selector evaluation.
    pub fn namespace_labels(&self) -> BTreeMap<&str, &LabelMap> {
        self.namespaces
            .iter()
            .map(|n| (n.name.as_str(), &n.labels))
            .collect()
    }
}

fn pod_value_with_kind(pod: &Pod) -> Value {
    let mut v = pod_value(pod);
    v["kind"] = Value::String("Pod".into());
    v["apiVersion"] = Value::String("v1".into());
    v
}
