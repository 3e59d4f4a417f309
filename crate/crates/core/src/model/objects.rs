use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{LabelMap, ModelError, Quantity, ResourceKind};

pub const DEFAULT_NAMESPACE: &str = "default";
pub const DEFAULT_SERVICE_ACCOUNT: &str = "default";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectMeta {
    pub name: String,
    /// Empty for cluster-scoped objects.
    pub namespace: String,
    pub labels: LabelMap,
    pub annotations: BTreeMap<String, String>,
}

impl ObjectMeta {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            namespace: namespace.into(),
            ..Default::default()
        }
    }
}

/// Probe definitions are carried through untouched; only their presence matters.
pub type Probe = serde_json::Value;

pub type ResourceList = BTreeMap<ResourceKind, Quantity>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Resources {
    pub requests: ResourceList,
    pub limits: ResourceList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VolumeMount {
    pub name: String,
    pub mount_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Volume {
    pub name: String,
    /// Volume source as written in the manifest, e.g. `{"emptyDir": {"medium": "Memory"}}`.
    pub source: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Container {
    pub name: String,
    pub image: String,
    pub resources: Resources,
    pub readiness_probe: Option<Probe>,
    pub liveness_probe: Option<Probe>,
    pub capabilities_add: Vec<String>,
    pub capabilities_drop: Vec<String>,
    pub volume_mounts: Vec<VolumeMount>,
}

impl Container {
    pub fn new(name: impl Into<String>, image: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            image: image.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PodSpec {
    pub service_account: String,
    pub containers: Vec<Container>,
    pub init_containers: Vec<Container>,
    pub host_pid: bool,
    pub host_ipc: bool,
    pub volumes: Vec<Volume>,
}

impl Default for PodSpec {
    fn default() -> Self {
        Self {
            service_account: DEFAULT_SERVICE_ACCOUNT.to_string(),
            containers: Vec::new(),
            init_containers: Vec::new(),
            host_pid: false,
            host_ipc: false,
            volumes: Vec::new(),
        }
    }
}

impl PodSpec {
    /// Regular containers followed by init containers.
    pub fn all_containers(&self) -> impl Iterator<Item = &Container> {
        self.containers.iter().chain(self.init_containers.iter())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.containers.is_empty() {
            return Err(ModelError::Invalid("pod spec has no containers".into()));
        }
        let mut seen = BTreeSet::new();
        for c in self.all_containers() {
            if c.name.is_empty() {
                return Err(ModelError::Invalid("container with empty name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(ModelError::Invalid(format!(
                    "duplicate container name {:?}",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pod {
    pub meta: ObjectMeta,
    pub spec: PodSpec,
    pub pod_ip: Option<Ipv4Addr>,
}

impl Pod {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>, containers: Vec<Container>) -> Self {
        Self {
            meta: ObjectMeta::new(namespace, name),
            spec: PodSpec {
                containers,
                ..Default::default()
            },
            pod_ip: None,
        }
    }

    pub fn pod_ref(&self) -> PodRef {
        PodRef::new(&self.meta.namespace, &self.meta.name)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.meta.name.is_empty() {
            return Err(ModelError::Invalid("pod has an empty name".into()));
        }
        self.spec.validate()
    }
}

/// Pod-shaped template carried by workload controllers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PodTemplate {
    pub labels: LabelMap,
    pub annotations: BTreeMap<String, String>,
    pub spec: PodSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkloadKind {
    Deployment,
    ReplicaSet,
    StatefulSet,
    RoleBinding,
    ClusterRoleBinding,
}

impl WorkloadKind {
    pub fn from_kind(kind: &str) -> Option<Self> {
        Some(match kind {
            "Deployment" => Self::Deployment,
            "ReplicaSet" => Self::ReplicaSet,
            "StatefulSet" => Self::StatefulSet,
            "RoleBinding" => Self::RoleBinding,
            "ClusterRoleBinding" => Self::ClusterRoleBinding,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Deployment => "Deployment",
            Self::ReplicaSet => "ReplicaSet",
            Self::StatefulSet => "StatefulSet",
            Self::RoleBinding => "RoleBinding",
            Self::ClusterRoleBinding => "ClusterRoleBinding",
        }
    }

    pub fn is_replicated(self) -> bool {
        matches!(self, Self::Deployment | Self::ReplicaSet | Self::StatefulSet)
    }

    pub fn is_binding(self) -> bool {
        matches!(self, Self::RoleBinding | Self::ClusterRoleBinding)
    }

    pub fn is_cluster_scoped(self) -> bool {
        self == Self::ClusterRoleBinding
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubjectKind {
    User,
    Group,
    ServiceAccount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub kind: SubjectKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadObject {
    pub kind: WorkloadKind,
    pub meta: ObjectMeta,
    /// Only for replicated kinds.
    pub replicas: Option<u32>,
    pub pod_template: Option<PodTemplate>,
    /// Only for binding kinds.
    pub subjects: Vec<Subject>,
}

impl WorkloadObject {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.meta.name.is_empty() {
            return Err(ModelError::Invalid(format!("{} has an empty name", self.kind)));
        }
        if self.replicas.is_some() && !self.kind.is_replicated() {
            return Err(ModelError::Invalid(format!(
                "{} cannot carry spec.replicas",
                self.kind
            )));
        }
        if !self.subjects.is_empty() && !self.kind.is_binding() {
            return Err(ModelError::Invalid(format!("{} cannot carry subjects", self.kind)));
        }
        if self.pod_template.is_some() && !self.kind.is_replicated() {
            return Err(ModelError::Invalid(format!(
                "{} cannot carry a pod template",
                self.kind
            )));
        }
        if let Some(t) = &self.pod_template {
            t.spec.validate()?;
        }
        Ok(())
    }
}

/// Namespaced reference to a pod.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PodRef {
    pub namespace: String,
    pub name: String,
}

impl PodRef {
    pub fn new(namespace: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            namespace: namespace.into(),
            name: name.into(),
        }
    }
}

impl fmt::Display for PodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.namespace, self.name)
    }
}

impl std::str::FromStr for PodRef {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((ns, name)) if !ns.is_empty() && !name.is_empty() && !name.contains('/') => {
                Ok(PodRef::new(ns, name))
            }
            _ => Err(ModelError::Invalid(format!(
                "expected <namespace>/<pod>, got {s:?}"
            ))),
        }
    }
}

/// (kind, namespace, name) of any admitted object.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectRef {
    pub kind: String,
    #[serde(default)]
    pub namespace: String,
    pub name: String,
}

impl fmt::Display for ObjectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.namespace.is_empty() {
            write!(f, "{}/{}", self.kind, self.name)
        } else {
            write!(f, "{}/{}/{}", self.kind, self.namespace, self.name)
        }
    }
}

/// Anything the admission layer reviews: a bare pod or a workload/binding object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resource {
    Pod(Pod),
    Workload(WorkloadObject),
}

impl Resource {
    pub fn kind(&self) -> &'static str {
        match self {
            Resource::Pod(_) => "Pod",
            Resource::Workload(w) => w.kind.as_str(),
        }
    }

    pub fn meta(&self) -> &ObjectMeta {
        match self {
            Resource::Pod(p) => &p.meta,
            Resource::Workload(w) => &w.meta,
        }
    }

    pub fn object_ref(&self) -> ObjectRef {
        let meta = self.meta();
        ObjectRef {
            kind: self.kind().to_string(),
            namespace: meta.namespace.clone(),
            name: meta.name.clone(),
        }
    }

    /// The pod spec containers run under, if any.
    pub fn pod_spec(&self) -> Option<&PodSpec> {
        match self {
            Resource::Pod(p) => Some(&p.spec),
            Resource::Workload(w) => w.pod_template.as_ref().map(|t| &t.spec),
        }
    }

    pub fn replicas(&self) -> Option<u32> {
        match self {
            Resource::Pod(_) => None,
            Resource::Workload(w) => w.replicas,
        }
    }

    pub fn subjects(&self) -> &[Subject] {
        match self {
            Resource::Pod(_) => &[],
            Resource::Workload(w) => &w.subjects,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Resource::Pod(p) => p.validate(),
            Resource::Workload(w) => w.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pod_ref_parsing() {
        let r: PodRef = "crab/crabserver".parse().unwrap();
        assert_eq!(r, PodRef::new("crab", "crabserver"));
        assert!("crabserver".parse::<PodRef>().is_err());
        assert!("/x".parse::<PodRef>().is_err());
        assert!("a/b/c".parse::<PodRef>().is_err());
    }

    #[test]
    fn container_names_unique_across_init_and_regular() {
        let mut pod = Pod::new("crab", "p", vec![Container::new("a", "img")]);
        assert!(pod.validate().is_ok());
        pod.spec.init_containers.push(Container::new("a", "img"));
        assert!(pod.validate().is_err());
    }

    #[test]
    fn pods_need_a_container() {
        assert!(Pod::new("crab", "p", vec![]).validate().is_err());
    }

    #[test]
    fn replicas_only_on_replicated_kinds() {
        let w = WorkloadObject {
            kind: WorkloadKind::RoleBinding,
            meta: ObjectMeta::new("crab", "rb"),
            replicas: Some(2),
            pod_template: None,
            subjects: vec![],
        };
        assert!(w.validate().is_err());
    }
}
