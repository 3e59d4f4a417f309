//! Network policy model and connection evaluation.
//!
//! A pod is isolated for a direction once any policy in its namespace selects
//! it for that direction. Isolated traffic is allowed only if some rule of some
//! selecting policy admits the peer and port; unselected pods allow everything.

mod cidr;
mod eval;

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Selector};

pub use cidr::Ipv4Cidr;
pub use eval::{evaluate, policies_selecting, Endpoint, NetpolError, TraceEntry, TrafficQuery, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyType {
    Ingress,
    Egress,
}

impl fmt::Display for PolicyType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyType::Ingress => "Ingress",
            PolicyType::Egress => "Egress",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    #[default]
    #[serde(alias = "tcp")]
    Tcp,
    #[serde(alias = "udp")]
    Udp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
        })
    }
}

impl std::str::FromStr for Protocol {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            _ => Err(ModelError::Invalid(format!("unknown protocol {s:?}"))),
        }
    }
}

/// One `ports` entry. A missing port number covers every port of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortSpec {
    pub protocol: Protocol,
    pub port: Option<u16>,
}

impl PortSpec {
    pub fn tcp(port: u16) -> Self {
        Self {
            protocol: Protocol::Tcp,
            port: Some(port),
        }
    }

    pub fn matches(&self, protocol: Protocol, port: u16) -> bool {
        self.protocol == protocol && self.port.is_none_or(|p| p == port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IpBlock {
    pub cidr: Ipv4Cidr,
    pub except: Vec<Ipv4Cidr>,
}

impl IpBlock {
    pub fn new(cidr: Ipv4Cidr, except: Vec<Ipv4Cidr>) -> Result<Self, ModelError> {
        if let Some(bad) = except.iter().find(|e| !cidr.covers(e)) {
            return Err(ModelError::InvalidCidr(format!(
                "except {bad} is not inside {cidr}"
            )));
        }
        Ok(Self { cidr, except })
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        self.cidr.contains(addr) && !self.except.iter().any(|e| e.contains(addr))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Peer {
    /// At least one selector is set. Both set means the pod must satisfy both;
    /// a lone pod selector is scoped to the policy's namespace.
    Pods {
        pod_selector: Option<Selector>,
        namespace_selector: Option<Selector>,
    },
    IpBlock(IpBlock),
}

impl Peer {
    pub fn pods(pod_selector: Selector) -> Self {
        Peer::Pods {
            pod_selector: Some(pod_selector),
            namespace_selector: None,
        }
    }

    pub fn namespaces(namespace_selector: Selector) -> Self {
        Peer::Pods {
            pod_selector: None,
            namespace_selector: Some(namespace_selector),
        }
    }
}

/// A rule admits a connection when the peer and the port both match.
/// Empty `peers` or empty `ports` match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Rule {
    pub peers: Vec<Peer>,
    pub ports: Vec<PortSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkPolicy {
    pub name: String,
    pub namespace: String,
    pub pod_selector: Selector,
    pub policy_types: BTreeSet<PolicyType>,
    pub ingress_rules: Vec<Rule>,
    pub egress_rules: Vec<Rule>,
}

impl NetworkPolicy {
    /// Policy types as inferred when the manifest omits them.
    pub fn default_policy_types(egress_rules: &[Rule]) -> BTreeSet<PolicyType> {
        let mut types = BTreeSet::from([PolicyType::Ingress]);
        if !egress_rules.is_empty() {
            types.insert(PolicyType::Egress);
        }
        types
    }

    pub fn applies_to(&self, direction: PolicyType) -> bool {
        self.policy_types.contains(&direction)
    }

    pub fn rules(&self, direction: PolicyType) -> &[Rule] {
        match direction {
            PolicyType::Ingress => &self.ingress_rules,
            PolicyType::Egress => &self.egress_rules,
        }
    }
}
