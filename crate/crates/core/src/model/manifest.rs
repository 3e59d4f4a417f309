//! Manifest parsing and canonical serialization.
//!
//! Documents use the upstream Kubernetes field spelling. JSON is the canonical
//! form; YAML streams separated by `---` are accepted as a convenience.
//! Unknown fields are ignored.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{
    parse_quantity, Container, LabelMap, ModelError, ObjectMeta, Pod, PodSpec, PodTemplate,
    QuantityError, ResourceKind, ResourceList, Resources, Subject, Volume, VolumeMount,
    WorkloadKind, WorkloadObject, DEFAULT_NAMESPACE, DEFAULT_SERVICE_ACCOUNT,
};
use crate::netpol::{IpBlock, Ipv4Cidr, NetworkPolicy, Peer, PolicyType, PortSpec, Protocol, Rule};
use crate::model::Selector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Yaml,
}

impl Format {
    /// Picks YAML for `.yaml`/`.yml` files and JSON otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("yaml" | "yml") => Format::Yaml,
            _ => Format::Json,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("document has no kind")]
    MissingKind,
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("{kind} is missing metadata.name")]
    MissingName { kind: String },
    #[error("{kind} {name:?}: {message}")]
    Field {
        kind: String,
        name: String,
        message: String,
    },
    #[error("{kind} {name:?}: {source}")]
    Quantity {
        kind: String,
        name: String,
        #[source]
        source: QuantityError,
    },
    #[error("{kind} {name:?}: {source}")]
    Invalid {
        kind: String,
        name: String,
        #[source]
        source: ModelError,
    },
    #[error("expected {expected}, found {found}")]
    WrongKind { expected: &'static str, found: String },
}

/// Any document kind the engines understand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Manifest {
    Pod(Pod),
    Workload(WorkloadObject),
    NetworkPolicy(NetworkPolicy),
}

impl Manifest {
    pub fn kind(&self) -> &'static str {
        match self {
            Manifest::Pod(_) => "Pod",
            Manifest::Workload(w) => w.kind.as_str(),
            Manifest::NetworkPolicy(_) => "NetworkPolicy",
        }
    }

    pub fn into_resource(self) -> Result<super::Resource, ManifestError> {
        match self {
            Manifest::Pod(p) => Ok(super::Resource::Pod(p)),
            Manifest::Workload(w) => Ok(super::Resource::Workload(w)),
            Manifest::NetworkPolicy(_) => Err(ManifestError::WrongKind {
                expected: "a pod or workload object",
                found: "NetworkPolicy".into(),
            }),
        }
    }
}

/// Parses a single document.
pub fn parse_manifest(bytes: &[u8], format: Format) -> Result<Manifest, ManifestError> {
    manifest_from_value(parse_document(bytes, format)?)
}

/// Parses a stream of documents (`---`-separated YAML or concatenated JSON).
/// Empty YAML documents are skipped.
pub fn parse_manifests(bytes: &[u8], format: Format) -> Result<Vec<Manifest>, ManifestError> {
    parse_documents(bytes, format)?
        .into_iter()
        .map(manifest_from_value)
        .collect()
}

pub fn parse_document(bytes: &[u8], format: Format) -> Result<Value, ManifestError> {
    match format {
        Format::Json => serde_json::from_slice(bytes).map_err(json_syntax),
        Format::Yaml => serde_yaml::from_slice(bytes).map_err(yaml_syntax),
    }
}

pub fn parse_documents(bytes: &[u8], format: Format) -> Result<Vec<Value>, ManifestError> {
    match format {
        Format::Json => serde_json::Deserializer::from_slice(bytes)
            .into_iter::<Value>()
            .map(|r| r.map_err(json_syntax))
            .collect(),
        Format::Yaml => {
            let mut out = Vec::new();
            for doc in serde_yaml::Deserializer::from_slice(bytes) {
                let value = Value::deserialize(doc).map_err(yaml_syntax)?;
                if !value.is_null() {
                    out.push(value);
                }
            }
            Ok(out)
        }
    }
}

fn json_syntax(e: serde_json::Error) -> ManifestError {
    ManifestError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn yaml_syntax(e: serde_yaml::Error) -> ManifestError {
    let (line, column) = e
        .location()
        .map(|l| (l.line(), l.column()))
        .unwrap_or((0, 0));
    ManifestError::Syntax {
        line,
        column,
        message: e.to_string(),
    }
}

pub fn manifest_from_value(value: Value) -> Result<Manifest, ManifestError> {
    let kind = value
        .get("kind")
        .and_then(Value::as_str)
        .ok_or(ManifestError::MissingKind)?
        .to_string();
    let name = value
        .pointer("/metadata/name")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if kind != "Pod" && kind != "NetworkPolicy" && WorkloadKind::from_kind(&kind).is_none() {
        return Err(ManifestError::UnknownKind(kind));
    }
    if name.is_empty() {
        return Err(ManifestError::MissingName { kind });
    }
    let ctx = Ctx { kind: &kind, name: &name };
    match kind.as_str() {
        "Pod" => {
            let wire: WirePod = ctx.decode(value)?;
            wire.into_pod(&ctx).map(Manifest::Pod)
        }
        "NetworkPolicy" => {
            let wire: WireNetworkPolicy = ctx.decode(value)?;
            wire.into_policy(&ctx).map(Manifest::NetworkPolicy)
        }
        _ => {
            let wk = WorkloadKind::from_kind(&kind).expect("checked above");
            let wire: WireWorkload = ctx.decode(value)?;
            wire.into_workload(wk, &ctx).map(Manifest::Workload)
        }
    }
}

struct Ctx<'a> {
    kind: &'a str,
    name: &'a str,
}

impl Ctx<'_> {
    fn decode<T: for<'de> Deserialize<'de>>(&self, value: Value) -> Result<T, ManifestError> {
        serde_json::from_value(value).map_err(|e| self.field(e.to_string()))
    }

    fn field(&self, message: impl Into<String>) -> ManifestError {
        ManifestError::Field {
            kind: self.kind.to_string(),
            name: self.name.to_string(),
            message: message.into(),
        }
    }

    fn invalid(&self, source: ModelError) -> ManifestError {
        ManifestError::Invalid {
            kind: self.kind.to_string(),
            name: self.name.to_string(),
            source,
        }
    }
}

// ---- wire types ----

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    namespace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<LabelMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<BTreeMap<String, String>>,
}

impl WireMeta {
    fn into_meta(self, cluster_scoped: bool) -> ObjectMeta {
        let namespace = if cluster_scoped {
            String::new()
        } else {
            self.namespace
                .filter(|n| !n.is_empty())
                .unwrap_or_else(|| DEFAULT_NAMESPACE.to_string())
        };
        ObjectMeta {
            name: self.name.unwrap_or_default(),
            namespace,
            labels: self.labels.unwrap_or_default(),
            annotations: self.annotations.unwrap_or_default(),
        }
    }

    fn from_meta(meta: &ObjectMeta) -> Self {
        WireMeta {
            name: Some(meta.name.clone()),
            namespace: (!meta.namespace.is_empty()).then(|| meta.namespace.clone()),
            labels: (!meta.labels.is_empty()).then(|| meta.labels.clone()),
            annotations: (!meta.annotations.is_empty()).then(|| meta.annotations.clone()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum QuantityText {
    Text(String),
    Number(serde_json::Number),
}

impl QuantityText {
    fn text(&self) -> String {
        match self {
            QuantityText::Text(s) => s.clone(),
            QuantityText::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireResources {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    requests: Option<BTreeMap<String, QuantityText>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    limits: Option<BTreeMap<String, QuantityText>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireCapabilities {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    add: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    drop: Option<Vec<String>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireSecurityContext {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capabilities: Option<WireCapabilities>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireContainer {
    #[serde(default)]
    name: String,
    #[serde(default)]
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    resources: Option<WireResources>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    readiness_probe: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    liveness_probe: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    security_context: Option<WireSecurityContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    volume_mounts: Option<Vec<VolumeMount>>,
}

fn resource_list(
    raw: Option<BTreeMap<String, QuantityText>>,
    ctx: &Ctx<'_>,
) -> Result<ResourceList, ManifestError> {
    let mut out = ResourceList::new();
    for (name, text) in raw.unwrap_or_default() {
        // extended resources are ignored
        let Some(kind) = ResourceKind::from_name(&name) else { continue };
        let q = parse_quantity(&text.text(), kind).map_err(|source| ManifestError::Quantity {
            kind: ctx.kind.to_string(),
            name: ctx.name.to_string(),
            source,
        })?;
        out.insert(kind, q);
    }
    Ok(out)
}

fn wire_resource_list(list: &ResourceList) -> Option<BTreeMap<String, QuantityText>> {
    (!list.is_empty()).then(|| {
        list.iter()
            .map(|(k, q)| (k.as_str().to_string(), QuantityText::Text(q.to_canonical())))
            .collect()
    })
}

impl WireContainer {
    fn into_container(self, ctx: &Ctx<'_>) -> Result<Container, ManifestError> {
        if self.name.is_empty() {
            return Err(ctx.field("container without a name"));
        }
        let resources = self.resources.unwrap_or_default();
        let caps = self
            .security_context
            .and_then(|s| s.capabilities)
            .unwrap_or_default();
        Ok(Container {
            name: self.name,
            image: self.image,
            resources: Resources {
                requests: resource_list(resources.requests, ctx)?,
                limits: resource_list(resources.limits, ctx)?,
            },
            readiness_probe: self.readiness_probe.filter(|v| !v.is_null()),
            liveness_probe: self.liveness_probe.filter(|v| !v.is_null()),
            capabilities_add: caps.add.unwrap_or_default(),
            capabilities_drop: caps.drop.unwrap_or_default(),
            volume_mounts: self.volume_mounts.unwrap_or_default(),
        })
    }

    fn from_container(c: &Container) -> Self {
        let resources = WireResources {
            requests: wire_resource_list(&c.resources.requests),
            limits: wire_resource_list(&c.resources.limits),
        };
        let has_caps = !c.capabilities_add.is_empty() || !c.capabilities_drop.is_empty();
        WireContainer {
            name: c.name.clone(),
            image: c.image.clone(),
            resources: (resources.requests.is_some() || resources.limits.is_some())
                .then_some(resources),
            readiness_probe: c.readiness_probe.clone(),
            liveness_probe: c.liveness_probe.clone(),
            security_context: has_caps.then(|| WireSecurityContext {
                capabilities: Some(WireCapabilities {
                    add: (!c.capabilities_add.is_empty()).then(|| c.capabilities_add.clone()),
                    drop: (!c.capabilities_drop.is_empty()).then(|| c.capabilities_drop.clone()),
                }),
            }),
            volume_mounts: (!c.volume_mounts.is_empty()).then(|| c.volume_mounts.clone()),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WirePodSpec {
    #[serde(default)]
    containers: Vec<WireContainer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init_containers: Option<Vec<WireContainer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    service_account_name: Option<String>,
    #[serde(default, skip_serializing)]
    service_account: Option<String>,
    #[serde(default, rename = "hostPID", skip_serializing_if = "Option::is_none")]
    host_pid: Option<bool>,
    #[serde(default, rename = "hostIPC", skip_serializing_if = "Option::is_none")]
    host_ipc: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    volumes: Option<Vec<Map<String, Value>>>,
}

impl WirePodSpec {
    fn into_spec(self, ctx: &Ctx<'_>) -> Result<PodSpec, ManifestError> {
        let containers = self
            .containers
            .into_iter()
            .map(|c| c.into_container(ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let init_containers = self
            .init_containers
            .unwrap_or_default()
            .into_iter()
            .map(|c| c.into_container(ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let volumes = self
            .volumes
            .unwrap_or_default()
            .into_iter()
            .map(|mut v| {
                let name = match v.remove("name") {
                    Some(Value::String(s)) if !s.is_empty() => s,
                    _ => return Err(ctx.field("volume without a name")),
                };
                Ok(Volume { name, source: v })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let spec = PodSpec {
            service_account: self
                .service_account_name
                .or(self.service_account)
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| DEFAULT_SERVICE_ACCOUNT.to_string()),
            containers,
            init_containers,
            host_pid: self.host_pid.unwrap_or(false),
            host_ipc: self.host_ipc.unwrap_or(false),
            volumes,
        };
        spec.validate().map_err(|e| ctx.invalid(e))?;
        Ok(spec)
    }

    fn from_spec(spec: &PodSpec) -> Self {
        WirePodSpec {
            containers: spec.containers.iter().map(WireContainer::from_container).collect(),
            init_containers: (!spec.init_containers.is_empty()).then(|| {
                spec.init_containers
                    .iter()
                    .map(WireContainer::from_container)
                    .collect()
            }),
            service_account_name: Some(spec.service_account.clone()),
            service_account: None,
            host_pid: spec.host_pid.then_some(true),
            host_ipc: spec.host_ipc.then_some(true),
            volumes: (!spec.volumes.is_empty()).then(|| {
                spec.volumes
                    .iter()
                    .map(|v| {
                        let mut m = Map::new();
                        m.insert("name".into(), Value::String(v.name.clone()));
                        m.extend(v.source.clone());
                        m
                    })
                    .collect()
            }),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WirePodStatus {
    #[serde(default, rename = "podIP", skip_serializing_if = "Option::is_none")]
    pod_ip: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WirePod {
    #[serde(default)]
    metadata: WireMeta,
    #[serde(default)]
    spec: WirePodSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    status: Option<WirePodStatus>,
}

impl WirePod {
    fn into_pod(self, ctx: &Ctx<'_>) -> Result<Pod, ManifestError> {
        let pod_ip = match self.status.and_then(|s| s.pod_ip) {
            Some(ip) => Some(
                ip.parse::<Ipv4Addr>()
                    .map_err(|_| ctx.field(format!("invalid status.podIP {ip:?}")))?,
            ),
            None => None,
        };
        Ok(Pod {
            meta: self.metadata.into_meta(false),
            spec: self.spec.into_spec(ctx)?,
            pod_ip,
        })
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireTemplate {
    #[serde(default)]
    metadata: WireMeta,
    #[serde(default)]
    spec: WirePodSpec,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireWorkloadSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replicas: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    template: Option<WireTemplate>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireWorkload {
    #[serde(default)]
    metadata: WireMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<WireWorkloadSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subjects: Option<Vec<Subject>>,
}

impl WireWorkload {
    fn into_workload(self, kind: WorkloadKind, ctx: &Ctx<'_>) -> Result<WorkloadObject, ManifestError> {
        let meta = self.metadata.into_meta(kind.is_cluster_scoped());
        let spec = self.spec.unwrap_or_default();
        let replicas = match spec.replicas {
            Some(r) if !kind.is_replicated() => {
                return Err(ctx.field(format!("{kind} cannot carry spec.replicas ({r})")))
            }
            Some(r) => Some(
                u32::try_from(r).map_err(|_| ctx.field(format!("invalid spec.replicas {r}")))?,
            ),
            None => None,
        };
        let pod_template = match spec.template {
            Some(_) if !kind.is_replicated() => {
                return Err(ctx.field(format!("{kind} cannot carry spec.template")))
            }
            Some(t) => Some(PodTemplate {
                labels: t.metadata.labels.unwrap_or_default(),
                annotations: t.metadata.annotations.unwrap_or_default(),
                spec: t.spec.into_spec(ctx)?,
            }),
            None => None,
        };
        let subjects = self.subjects.unwrap_or_default();
        if !subjects.is_empty() && !kind.is_binding() {
            return Err(ctx.field(format!("{kind} cannot carry subjects")));
        }
        let obj = WorkloadObject {
            kind,
            meta,
            replicas,
            pod_template,
            subjects,
        };
        obj.validate().map_err(|e| ctx.invalid(e))?;
        Ok(obj)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireIpBlock {
    cidr: Ipv4Cidr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    except: Option<Vec<Ipv4Cidr>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WirePeer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pod_selector: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    namespace_selector: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ip_block: Option<WireIpBlock>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PortValue {
    Number(i64),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WirePort {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    protocol: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    port: Option<PortValue>,
    #[serde(default, skip_serializing)]
    end_port: Option<i64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct WireRule {
    #[serde(default, alias = "to", skip_serializing_if = "Option::is_none")]
    from: Option<Vec<WirePeer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ports: Option<Vec<WirePort>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct WirePolicySpec {
    #[serde(default)]
    pod_selector: Option<Selector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy_types: Option<Vec<PolicyType>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ingress: Option<Vec<WireRule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    egress: Option<Vec<WireRule>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireNetworkPolicy {
    #[serde(default)]
    metadata: WireMeta,
    #[serde(default)]
    spec: WirePolicySpec,
}

impl WirePeer {
    fn into_peer(self, ctx: &Ctx<'_>) -> Result<Peer, ManifestError> {
        match (self.pod_selector, self.namespace_selector, self.ip_block) {
            (None, None, Some(b)) => IpBlock::new(b.cidr, b.except.unwrap_or_default())
                .map(Peer::IpBlock)
                .map_err(|e| ctx.invalid(e)),
            (None, None, None) => Err(ctx.field("peer sets none of podSelector, namespaceSelector, ipBlock")),
            (ps, ns, None) => Ok(Peer::Pods {
                pod_selector: ps,
                namespace_selector: ns,
            }),
            _ => Err(ctx.field("ipBlock cannot be combined with selectors in one peer")),
        }
    }

    fn from_peer(peer: &Peer) -> Self {
        match peer {
            Peer::Pods {
                pod_selector,
                namespace_selector,
            } => WirePeer {
                pod_selector: pod_selector.clone(),
                namespace_selector: namespace_selector.clone(),
                ip_block: None,
            },
            Peer::IpBlock(b) => WirePeer {
                ip_block: Some(WireIpBlock {
                    cidr: b.cidr,
                    except: (!b.except.is_empty()).then(|| b.except.clone()),
                }),
                ..Default::default()
            },
        }
    }
}

impl WireRule {
    fn into_rule(self, ctx: &Ctx<'_>) -> Result<Rule, ManifestError> {
        let peers = self
            .from
            .unwrap_or_default()
            .into_iter()
            .map(|p| p.into_peer(ctx))
            .collect::<Result<_, _>>()?;
        let mut ports = Vec::new();
        for p in self.ports.unwrap_or_default() {
            if p.end_port.is_some() {
                return Err(ctx.field("port ranges (endPort) are not supported"));
            }
            let protocol = match p.protocol {
                Some(s) => s.parse::<Protocol>().map_err(|e| ctx.invalid(e))?,
                None => Protocol::Tcp,
            };
            let port = match p.port {
                None => None,
                Some(PortValue::Number(n)) => Some(
                    u16::try_from(n)
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| ctx.field(format!("port {n} out of range 1-65535")))?,
                ),
                Some(PortValue::Name(name)) => {
                    return Err(ctx.field(format!("named port {name:?} is not supported")))
                }
            };
            ports.push(PortSpec { protocol, port });
        }
        Ok(Rule { peers, ports })
    }

    fn from_rule(rule: &Rule) -> Self {
        WireRule {
            from: (!rule.peers.is_empty()).then(|| rule.peers.iter().map(WirePeer::from_peer).collect()),
            ports: (!rule.ports.is_empty()).then(|| {
                rule.ports
                    .iter()
                    .map(|p| WirePort {
                        protocol: Some(p.protocol.to_string()),
                        port: p.port.map(|n| PortValue::Number(n.into())),
                        end_port: None,
                    })
                    .collect()
            }),
        }
    }
}

impl WireNetworkPolicy {
    fn into_policy(self, ctx: &Ctx<'_>) -> Result<NetworkPolicy, ManifestError> {
        let meta = self.metadata.into_meta(false);
        let spec = self.spec;
        let ingress_rules = spec
            .ingress
            .unwrap_or_default()
            .into_iter()
            .map(|r| r.into_rule(ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let egress_rules = spec
            .egress
            .unwrap_or_default()
            .into_iter()
            .map(|r| r.into_rule(ctx))
            .collect::<Result<Vec<_>, _>>()?;
        let policy_types = match spec.policy_types {
            Some(types) => types.into_iter().collect(),
            None => NetworkPolicy::default_policy_types(&egress_rules),
        };
        Ok(NetworkPolicy {
            name: meta.name,
            namespace: meta.namespace,
            pod_selector: spec.pod_selector.unwrap_or_default(),
            policy_types,
            ingress_rules,
            egress_rules,
        })
    }
}

/// Canonical JSON form of a manifest, readable back by [`parse_manifest`].
pub fn to_manifest_value(manifest: &Manifest) -> Value {
    let (api_version, body) = match manifest {
        Manifest::Pod(p) => ("v1", pod_value(p)),
        Manifest::Workload(w) => (api_version(w.kind), workload_value(w)),
        Manifest::NetworkPolicy(np) => ("networking.k8s.io/v1", policy_value(np)),
    };
    let mut out = Map::new();
    out.insert("apiVersion".into(), Value::String(api_version.into()));
    out.insert("kind".into(), Value::String(manifest.kind().into()));
    if let Value::Object(m) = body {
        out.extend(m);
    }
    Value::Object(out)
}

fn api_version(kind: WorkloadKind) -> &'static str {
    if kind.is_binding() {
        "rbac.authorization.k8s.io/v1"
    } else {
        "apps/v1"
    }
}

pub fn pod_value(pod: &Pod) -> Value {
    let wire = WirePod {
        metadata: WireMeta::from_meta(&pod.meta),
        spec: WirePodSpec::from_spec(&pod.spec),
        status: pod.pod_ip.map(|ip| WirePodStatus {
            pod_ip: Some(ip.to_string()),
        }),
    };
    serde_json::to_value(wire).expect("pod serializes")
}

/// The `spec` part of a pod in manifest form.
pub fn pod_spec_value(spec: &PodSpec) -> Value {
    serde_json::to_value(WirePodSpec::from_spec(spec)).expect("pod spec serializes")
}

/// A single container in manifest form.
pub fn container_value(container: &Container) -> Value {
    serde_json::to_value(WireContainer::from_container(container)).expect("container serializes")
}

/// A single volume in manifest form.
pub fn volume_value(volume: &Volume) -> Value {
    let mut m = Map::new();
    m.insert("name".into(), Value::String(volume.name.clone()));
    m.extend(volume.source.clone());
    Value::Object(m)
}

fn workload_value(w: &WorkloadObject) -> Value {
    let spec = (w.replicas.is_some() || w.pod_template.is_some()).then(|| WireWorkloadSpec {
        replicas: w.replicas.map(i64::from),
        template: w.pod_template.as_ref().map(|t| WireTemplate {
            metadata: WireMeta {
                labels: (!t.labels.is_empty()).then(|| t.labels.clone()),
                annotations: (!t.annotations.is_empty()).then(|| t.annotations.clone()),
                ..Default::default()
            },
            spec: WirePodSpec::from_spec(&t.spec),
        }),
    });
    let wire = WireWorkload {
        metadata: WireMeta::from_meta(&w.meta),
        spec,
        subjects: (!w.subjects.is_empty()).then(|| w.subjects.clone()),
    };
    serde_json::to_value(wire).expect("workload serializes")
}

fn policy_value(np: &NetworkPolicy) -> Value {
    let rules = |rs: &[Rule]| Some(rs.iter().map(WireRule::from_rule).collect::<Vec<_>>());
    let mut value = serde_json::to_value(WireNetworkPolicy {
        metadata: WireMeta::from_meta(&ObjectMeta::new(&np.namespace, &np.name)),
        spec: WirePolicySpec {
            pod_selector: Some(np.pod_selector.clone()),
            policy_types: Some(np.policy_types.iter().copied().collect()),
            ingress: rules(&np.ingress_rules),
            egress: None,
        },
    })
    .expect("policy serializes");
    // egress rules carry `to` instead of `from`
    let egress: Vec<Value> = np
        .egress_rules
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(WireRule::from_rule(r)).expect("rule serializes");
            if let Some(peers) = v.as_object_mut().and_then(|m| m.remove("from")) {
                v["to"] = peers;
            }
            v
        })
        .collect();
    value["spec"]["egress"] = Value::Array(egress);
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Operator, Quantity, Requirement, SubjectKind};
    use proptest::prelude::*;

    #[test]
    fn minimal_pod_gets_defaults() {
        let doc = br#"{"kind":"Pod","metadata":{"name":"p"},"spec":{"containers":[{"name":"c","image":"i"}]}}"#;
        let Manifest::Pod(pod) = parse_manifest(doc, Format::Json).unwrap() else { panic!() };
        assert_eq!(pod.meta.namespace, "default");
        assert_eq!(pod.spec.service_account, "default");
        assert!(!pod.spec.host_pid && !pod.spec.host_ipc);
        assert!(pod.spec.containers[0].readiness_probe.is_none());
        assert!(pod.spec.containers[0].liveness_probe.is_none());
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let err = parse_manifest(br#"{"kind":"Gadget","metadata":{"name":"g"}}"#, Format::Json).unwrap_err();
        assert!(matches!(err, ManifestError::UnknownKind(k) if k == "Gadget"));
    }

    #[test]
    fn missing_name_is_rejected() {
        let err = parse_manifest(br#"{"kind":"Deployment","metadata":{}}"#, Format::Json).unwrap_err();
        assert!(matches!(err, ManifestError::MissingName { .. }));
    }

    #[test]
    fn syntax_errors_report_position() {
        let err = parse_manifest(b"{\n  \"kind\": \"Pod\",,\n}", Format::Json).unwrap_err();
        assert!(matches!(err, ManifestError::Syntax { line: 2, .. }), "{err}");
        let err = parse_manifest(b"kind: Pod\nmetadata: [unclosed\n", Format::Yaml).unwrap_err();
        assert!(matches!(err, ManifestError::Syntax { line, .. } if line > 0), "{err}");
    }

    #[test]
    fn deployment_replicas_and_template() {
        let doc = br#"
apiVersion: apps/v1
kind: Deployment
metadata:
  name: crabserver
  namespace: crab
  extra: ignored
spec:
  replicas: 3
  template:
    metadata:
      labels: {app: crabserver}
    spec:
      serviceAccountName: crabserver
      containers:
        - name: crabserver
          image: registry.cern.ch/cmsweb/crabserver:v3
          resources:
            limits: {cpu: 1, memory: 2Gi}
            requests: {cpu: 500m, memory: 512Mi}
"#;
        let Manifest::Workload(w) = parse_manifest(doc, Format::Yaml).unwrap() else { panic!() };
        assert_eq!(w.kind, WorkloadKind::Deployment);
        assert_eq!(w.replicas, Some(3));
        let t = w.pod_template.unwrap();
        assert_eq!(t.spec.service_account, "crabserver");
        let c = &t.spec.containers[0];
        assert_eq!(c.resources.limits[&ResourceKind::Cpu], Quantity::millicores(1000));
        assert_eq!(c.resources.requests[&ResourceKind::Memory], Quantity::bytes(512 << 20));
    }

    #[test]
    fn bad_quantity_names_the_object() {
        let doc = br#"{"kind":"Pod","metadata":{"name":"p"},"spec":{"containers":[{"name":"c","image":"i","resources":{"limits":{"cpu":"2Gi"}}}]}}"#;
        let err = parse_manifest(doc, Format::Json).unwrap_err();
        assert!(err.to_string().contains("Gi"), "{err}");
    }

    #[test]
    fn network_policy_defaults_and_peers() {
        let doc = br#"
kind: NetworkPolicy
metadata: {name: np, namespace: crab}
spec:
  podSelector: {matchLabels: {app: crabserver}}
  ingress:
    - from:
        - namespaceSelector: {matchLabels: {kubernetes.io/metadata.name: auth}}
          podSelector: {matchLabels: {app: auth-proxy-server}}
        - ipBlock: {cidr: 10.0.0.0/8, except: [10.1.0.0/16]}
      ports: [{port: 8443}]
"#;
        let Manifest::NetworkPolicy(np) = parse_manifest(doc, Format::Yaml).unwrap() else { panic!() };
        assert_eq!(np.policy_types.iter().copied().collect::<Vec<_>>(), vec![PolicyType::Ingress]);
        assert_eq!(np.ingress_rules[0].ports, vec![PortSpec::tcp(8443)]);
        assert!(matches!(np.ingress_rules[0].peers[1], Peer::IpBlock(_)));
        assert!(matches!(
            &np.ingress_rules[0].peers[0],
            Peer::Pods { pod_selector: Some(_), namespace_selector: Some(_) }
        ));
    }

    #[test]
    fn peer_mixing_ip_block_and_selector_is_rejected() {
        let doc = br#"{"kind":"NetworkPolicy","metadata":{"name":"np"},"spec":{"ingress":[{"from":[{"podSelector":{},"ipBlock":{"cidr":"10.0.0.0/8"}}]}]}}"#;
        assert!(parse_manifest(doc, Format::Json).is_err());
        let doc = br#"{"kind":"NetworkPolicy","metadata":{"name":"np"},"spec":{"ingress":[{"ports":[{"port":80,"endPort":90}]}]}}"#;
        assert!(parse_manifest(doc, Format::Json).is_err());
    }

    #[test]
    fn yaml_stream() {
        let doc = b"kind: Pod\nmetadata: {name: a}\nspec: {containers: [{name: c, image: i}]}\n---\n---\nkind: RoleBinding\nmetadata: {name: rb, namespace: crab}\nsubjects: [{kind: Group, name: system:unauthenticated}]\n";
        let all = parse_manifests(doc, Format::Yaml).unwrap();
        assert_eq!(all.len(), 2);
        let Manifest::Workload(rb) = &all[1] else { panic!() };
        assert_eq!(rb.subjects[0].kind, SubjectKind::Group);
    }

    // ---- round trip ----

    fn name() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9-]{0,8}"
    }

    fn labels() -> impl Strategy<Value = LabelMap> {
        prop::collection::btree_map("[a-z]{1,4}", "[a-z0-9]{0,4}", 0..3)
            .prop_map(|m| LabelMap::try_from(m).unwrap())
    }

    fn selector() -> impl Strategy<Value = Selector> {
        let req = ("[a-z]{1,3}", 0..4usize, prop::collection::vec("[a-z]{1,3}", 1..3)).prop_map(|(k, op, vals)| {
            let op = [Operator::In, Operator::NotIn, Operator::Exists, Operator::DoesNotExist][op];
            let vals = if matches!(op, Operator::In | Operator::NotIn) { vals } else { vec![] };
            Requirement::new(k, op, vals).unwrap()
        });
        (labels(), prop::collection::vec(req, 0..2)).prop_map(|(l, e)| Selector::new(l, e).unwrap())
    }

    fn resources() -> impl Strategy<Value = ResourceList> {
        (prop::option::of(0u64..10_000), prop::option::of(0u64..1 << 34)).prop_map(|(c, m)| {
            let mut r = ResourceList::new();
            if let Some(c) = c {
                r.insert(ResourceKind::Cpu, Quantity::millicores(c));
            }
            if let Some(m) = m {
                r.insert(ResourceKind::Memory, Quantity::bytes(m));
            }
            r
        })
    }

    fn pod_spec() -> impl Strategy<Value = PodSpec> {
        (
            prop::collection::vec(
                (
                    "[a-z/.:0-9]{1,12}",
                    resources(),
                    resources(),
                    any::<bool>(),
                    any::<bool>(),
                    prop::collection::vec("[A-Z_]{2,6}", 0..2),
                    prop::collection::vec("[A-Z_]{2,6}", 0..2),
                ),
                1..3,
            ),
            name(),
            any::<bool>(),
            any::<bool>(),
            any::<bool>(),
        )
            .prop_map(|(cs, sa, pid, ipc, init)| {
                let mut containers: Vec<Container> = cs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (image, req, lim, rp, lp, add, drop))| Container {
                        name: format!("c{i}"),
                        image,
                        resources: Resources { requests: req, limits: lim },
                        readiness_probe: rp.then(|| serde_json::json!({"httpGet": {"port": 80}})),
                        liveness_probe: lp.then(|| serde_json::json!({"exec": {"command": ["true"]}})),
                        capabilities_add: add,
                        capabilities_drop: drop,
                        volume_mounts: vec![],
                    })
                    .collect();
                let init_containers = if init {
                    let mut c = containers[0].clone();
                    c.name = "init".into();
                    vec![c]
                } else {
                    vec![]
                };
                containers[0].volume_mounts.push(VolumeMount { name: "v".into(), mount_path: "/v".into() });
                let mut source = Map::new();
                source.insert("emptyDir".into(), serde_json::json!({}));
                PodSpec {
                    service_account: sa,
                    containers,
                    init_containers,
                    host_pid: pid,
                    host_ipc: ipc,
                    volumes: vec![Volume { name: "v".into(), source }],
                }
            })
    }

    fn pod() -> impl Strategy<Value = Manifest> {
        (name(), name(), labels(), pod_spec(), prop::option::of(any::<u32>())).prop_map(|(ns, n, l, spec, ip)| {
            let mut pod = Pod::new(ns, n, vec![]);
            pod.meta.labels = l;
            pod.meta.annotations.insert("vault.inject".into(), "true".into());
            pod.spec = spec;
            pod.pod_ip = ip.map(Ipv4Addr::from);
            Manifest::Pod(pod)
        })
    }

    fn workload() -> impl Strategy<Value = Manifest> {
        (name(), name(), 0..5usize, 0u32..100, pod_spec(), labels()).prop_map(|(ns, n, k, r, spec, l)| {
            let kind = [
                WorkloadKind::Deployment,
                WorkloadKind::ReplicaSet,
                WorkloadKind::StatefulSet,
                WorkloadKind::RoleBinding,
                WorkloadKind::ClusterRoleBinding,
            ][k];
            let meta = ObjectMeta {
                namespace: if kind.is_cluster_scoped() { String::new() } else { ns },
                ..ObjectMeta::new("", n)
            };
            Manifest::Workload(WorkloadObject {
                kind,
                meta,
                replicas: kind.is_replicated().then_some(r),
                pod_template: kind.is_replicated().then(|| PodTemplate {
                    labels: l,
                    annotations: BTreeMap::new(),
                    spec,
                }),
                subjects: if kind.is_binding() {
                    vec![Subject { kind: SubjectKind::User, name: "system:anonymous".into(), namespace: None }]
                } else {
                    vec![]
                },
            })
        })
    }

    fn policy() -> impl Strategy<Value = Manifest> {
        let peer = prop_oneof![
            (prop::option::of(selector()), prop::option::of(selector()))
                .prop_filter("one selector", |(a, b)| a.is_some() || b.is_some())
                .prop_map(|(p, n)| Peer::Pods { pod_selector: p, namespace_selector: n }),
            (any::<u32>(), 8u8..24).prop_map(|(a, p)| {
                let cidr = Ipv4Cidr::new(Ipv4Addr::from(a), p).unwrap();
                let inner = Ipv4Cidr::new(cidr.network(), p + 4).unwrap();
                Peer::IpBlock(IpBlock::new(cidr, vec![inner]).unwrap())
            }),
        ];
        let port = (any::<bool>(), prop::option::of(1u16..)).prop_map(|(udp, port)| PortSpec {
            protocol: if udp { Protocol::Udp } else { Protocol::Tcp },
            port,
        });
        let rule = (prop::collection::vec(peer, 0..3), prop::collection::vec(port, 0..3))
            .prop_map(|(peers, ports)| Rule { peers, ports });
        (
            name(),
            name(),
            selector(),
            prop::collection::vec(rule.clone(), 0..3),
            prop::collection::vec(rule, 0..3),
            1..4usize,
        )
            .prop_map(|(ns, n, sel, ing, eg, types)| {
                let mut policy_types = std::collections::BTreeSet::new();
                if types & 1 != 0 {
                    policy_types.insert(PolicyType::Ingress);
                }
                if types & 2 != 0 {
                    policy_types.insert(PolicyType::Egress);
                }
                Manifest::NetworkPolicy(NetworkPolicy {
                    name: n,
                    namespace: ns,
                    pod_selector: sel,
                    policy_types,
                    ingress_rules: ing,
                    egress_rules: eg,
                })
            })
    }

    proptest! {
        #[test]
        fn canonical_json_round_trips(m in prop_oneof![pod(), workload(), policy()]) {
            let bytes = serde_json::to_vec(&to_manifest_value(&m)).unwrap();
            prop_assert_eq!(parse_manifest(&bytes, Format::Json).unwrap(), m);
        }
    }
}
