use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{NetworkPolicy, Peer, PolicyType, Protocol, Rule};
use crate::model::{ClusterState, LabelMap, Pod, PodRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetpolError {
    #[error("unknown pod {0}")]
    UnknownPod(PodRef),
    #[error("namespace {namespace:?} of pod {pod} is not in the cluster state")]
    UnknownNamespace { namespace: String, pod: PodRef },
    #[error("at least one endpoint must be a pod")]
    NoPodEndpoint,
    #[error("source and destination are the same endpoint")]
    SameEndpoint,
    #[error("port 0 is not a valid destination port")]
    InvalidPort,
    #[error("address {ip} belongs to pod {pod}; query the pod instead")]
    AddressOfPod { ip: Ipv4Addr, pod: PodRef },
    #[error("invalid endpoint {0:?}: expected <namespace>/<pod> or an IPv4 address")]
    InvalidEndpoint(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Endpoint {
    Pod(PodRef),
    External(Ipv4Addr),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Pod(p) => p.fmt(f),
            Endpoint::External(ip) => ip.fmt(f),
        }
    }
}

impl FromStr for Endpoint {
    type Err = NetpolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(ip) = s.parse::<Ipv4Addr>() {
            return Ok(Endpoint::External(ip));
        }
        s.parse::<PodRef>()
            .map(Endpoint::Pod)
            .map_err(|_| NetpolError::InvalidEndpoint(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficQuery {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub port: u16,
    #[serde(default)]
    pub protocol: Protocol,
}

impl TrafficQuery {
    pub fn tcp(src: Endpoint, dst: Endpoint, port: u16) -> Self {
        Self {
            src,
            dst,
            port,
            protocol: Protocol::Tcp,
        }
    }
}

/// One rule consulted while deciding a direction. `rule` is `None` for a
/// selecting policy that has no rules for the direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceEntry {
    pub direction: PolicyType,
    pub policy: String,
    pub rule: Option<usize>,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdict {
    pub allowed: bool,
    pub egress_allowed: bool,
    pub ingress_allowed: bool,
    pub trace: Vec<TraceEntry>,
}

/// Policies in the pod's namespace that select it for `direction`.
pub fn policies_selecting<'a>(
    state: &'a ClusterState,
    pod: &PodRef,
    direction: PolicyType,
) -> Result<Vec<&'a NetworkPolicy>, NetpolError> {
    let pod = state
        .pod(pod)
        .ok_or_else(|| NetpolError::UnknownPod(pod.clone()))?;
    Ok(selecting(state, pod, direction))
}

fn selecting<'a>(state: &'a ClusterState, pod: &Pod, direction: PolicyType) -> Vec<&'a NetworkPolicy> {
    state
        .network_policies
        .iter()
        .filter(|np| {
            np.namespace == pod.meta.namespace
                && np.applies_to(direction)
                && np.pod_selector.matches(&pod.meta.labels)
        })
        .collect()
}

/// The far side of a connection as seen from a policy's rule.
enum Remote<'a> {
    Pod { pod: &'a Pod, ns_labels: &'a LabelMap },
    External(Ipv4Addr),
}

enum Resolved<'a> {
    Pod { pod: &'a Pod, ns_labels: &'a LabelMap },
    External(Ipv4Addr),
}

impl<'a> Resolved<'a> {
    fn remote(&self) -> Remote<'a> {
        match *self {
            Resolved::Pod { pod, ns_labels } => Remote::Pod { pod, ns_labels },
            Resolved::External(ip) => Remote::External(ip),
        }
    }
}

fn resolve<'a>(state: &'a ClusterState, ep: &Endpoint) -> Result<Resolved<'a>, NetpolError> {
    match ep {
        Endpoint::Pod(r) => {
            let pod = state.pod(r).ok_or_else(|| NetpolError::UnknownPod(r.clone()))?;
            let ns = state
                .namespace(&pod.meta.namespace)
                .ok_or_else(|| NetpolError::UnknownNamespace {
                    namespace: pod.meta.namespace.clone(),
                    pod: r.clone(),
                })?;
            Ok(Resolved::Pod {
                pod,
                ns_labels: &ns.labels,
            })
        }
        Endpoint::External(ip) => {
            if let Some(pod) = state.pods.iter().find(|p| p.pod_ip == Some(*ip)) {
                return Err(NetpolError::AddressOfPod {
                    ip: *ip,
                    pod: pod.pod_ref(),
                });
            }
            Ok(Resolved::External(*ip))
        }
    }
}

fn peer_admits(policy_namespace: &str, peer: &Peer, remote: &Remote<'_>) -> bool {
    match (peer, remote) {
        (
            Peer::Pods {
                pod_selector,
                namespace_selector,
            },
            Remote::Pod { pod, ns_labels },
        ) => {
            let ns_ok = match namespace_selector {
                Some(sel) => sel.matches(ns_labels),
                None => pod.meta.namespace == policy_namespace,
            };
            ns_ok && pod_selector.as_ref().is_none_or(|s| s.matches(&pod.meta.labels))
        }
        (Peer::IpBlock(block), Remote::External(ip)) => block.contains(*ip),
        _ => false,
    }
}

fn rule_admits(np: &NetworkPolicy, rule: &Rule, remote: &Remote<'_>, protocol: Protocol, port: u16) -> bool {
    let peer_ok = rule.peers.is_empty() || rule.peers.iter().any(|p| peer_admits(&np.namespace, p, remote));
    let port_ok = rule.ports.is_empty() || rule.ports.iter().any(|p| p.matches(protocol, port));
    peer_ok && port_ok
}

/// Decides one direction for a policy-selected pod. Returns whether it is
/// allowed and appends every consulted rule to `trace`.
fn decide(
    policies: &[&NetworkPolicy],
    direction: PolicyType,
    remote: &Remote<'_>,
    query: &TrafficQuery,
    trace: &mut Vec<TraceEntry>,
) -> bool {
    if policies.is_empty() {
        return true;
    }
    let mut allowed = false;
    for np in policies {
        let label = format!("{}/{}", np.namespace, np.name);
        let rules = np.rules(direction);
        if rules.is_empty() {
            trace.push(TraceEntry {
                direction,
                policy: label.clone(),
                rule: None,
                matched: false,
            });
        }
        for (i, rule) in rules.iter().enumerate() {
            let matched = rule_admits(np, rule, remote, query.protocol, query.port);
            allowed |= matched;
            trace.push(TraceEntry {
                direction,
                policy: label.clone(),
                rule: Some(i),
                matched,
            });
        }
    }
    allowed
}

/// Evaluates a single connection. Each pod endpoint is checked against the
/// policies selecting it in the relevant direction; the connection is allowed
/// only if both egress at the source and ingress at the destination allow it.
pub fn evaluate(state: &ClusterState, query: &TrafficQuery) -> Result<Verdict, NetpolError> {
    if query.port == 0 {
        return Err(NetpolError::InvalidPort);
    }
    if !matches!(query.src, Endpoint::Pod(_)) && !matches!(query.dst, Endpoint::Pod(_)) {
        return Err(NetpolError::NoPodEndpoint);
    }
    if query.src == query.dst {
        return Err(NetpolError::SameEndpoint);
    }
    let src = resolve(state, &query.src)?;
    let dst = resolve(state, &query.dst)?;
    let mut trace = Vec::new();

    let egress_allowed = match src {
        Resolved::Pod { pod, .. } => {
            let policies = selecting(state, pod, PolicyType::Egress);
            decide(&policies, PolicyType::Egress, &dst.remote(), query, &mut trace)
        }
        Resolved::External(_) => true,
    };
    let ingress_allowed = match dst {
        Resolved::Pod { pod, .. } => {
            let policies = selecting(state, pod, PolicyType::Ingress);
            decide(&policies, PolicyType::Ingress, &src.remote(), query, &mut trace)
        }
        Resolved::External(_) => true,
    };

    Ok(Verdict {
        allowed: egress_allowed && ingress_allowed,
        egress_allowed,
        ingress_allowed,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Container, Namespace, Selector};
    use crate::netpol::PortSpec;
    use std::collections::BTreeSet;

    fn pod(ns: &str, name: &str, app: &str) -> Pod {
        let mut p = Pod::new(ns, name, vec![Container::new("c", "img")]);
        p.meta.labels = [("app", app)].into_iter().collect();
        p
    }

    fn ep(s: &str) -> Endpoint {
        s.parse().unwrap()
    }

    fn state(policies: Vec<NetworkPolicy>) -> ClusterState {
        ClusterState::new(
            vec![Namespace::new("a"), Namespace::new("b")],
            vec![pod("a", "x", "x"), pod("a", "y", "y"), pod("b", "z", "z")],
            vec![],
            policies,
        )
        .unwrap()
    }

    fn deny_all_ingress(ns: &str) -> NetworkPolicy {
        NetworkPolicy {
            name: "deny".into(),
            namespace: ns.into(),
            pod_selector: Selector::everything(),
            policy_types: BTreeSet::from([PolicyType::Ingress]),
            ingress_rules: vec![],
            egress_rules: vec![],
        }
    }

    #[test]
    fn default_allow_without_policies() {
        let s = state(vec![]);
        let v = evaluate(&s, &TrafficQuery::tcp(ep("a/x"), ep("b/z"), 80)).unwrap();
        assert!(v.allowed && v.ingress_allowed && v.egress_allowed);
        assert!(v.trace.is_empty());
        assert!(policies_selecting(&s, &PodRef::new("a", "x"), PolicyType::Ingress).unwrap().is_empty());
    }

    #[test]
    fn empty_selector_policy_selects_whole_namespace() {
        let s = state(vec![deny_all_ingress("a")]);
        for name in ["x", "y"] {
            let sel = policies_selecting(&s, &PodRef::new("a", name), PolicyType::Ingress).unwrap();
            assert_eq!(sel.len(), 1);
        }
        assert!(policies_selecting(&s, &PodRef::new("b", "z"), PolicyType::Ingress).unwrap().is_empty());
        assert!(policies_selecting(&s, &PodRef::new("a", "x"), PolicyType::Egress).unwrap().is_empty());
    }

    #[test]
    fn isolation_without_rules_denies_everything() {
        let s = state(vec![deny_all_ingress("a")]);
        let v = evaluate(&s, &TrafficQuery::tcp(ep("a/y"), ep("a/x"), 80)).unwrap();
        assert!(!v.allowed && !v.ingress_allowed && v.egress_allowed);
        assert_eq!(v.trace, vec![TraceEntry { direction: PolicyType::Ingress, policy: "a/deny".into(), rule: None, matched: false }]);
        // the other direction of the same pair is unaffected
        assert!(evaluate(&s, &TrafficQuery::tcp(ep("a/x"), ep("b/z"), 80)).unwrap().allowed);
    }

    #[test]
    fn lone_pod_selector_is_namespace_scoped() {
        let mut np = deny_all_ingress("a");
        np.ingress_rules.push(Rule {
            peers: vec![Peer::pods(Selector::everything())],
            ports: vec![],
        });
        let s = state(vec![np]);
        assert!(evaluate(&s, &TrafficQuery::tcp(ep("a/y"), ep("a/x"), 80)).unwrap().allowed);
        assert!(!evaluate(&s, &TrafficQuery::tcp(ep("b/z"), ep("a/x"), 80)).unwrap().allowed);
    }

    #[test]
    fn ports_and_protocols_filter() {
        let mut np = deny_all_ingress("a");
        np.ingress_rules.push(Rule { peers: vec![], ports: vec![PortSpec::tcp(443)] });
        let s = state(vec![np]);
        assert!(evaluate(&s, &TrafficQuery::tcp(ep("b/z"), ep("a/x"), 443)).unwrap().allowed);
        assert!(!evaluate(&s, &TrafficQuery::tcp(ep("b/z"), ep("a/x"), 80)).unwrap().allowed);
        let udp = TrafficQuery { protocol: Protocol::Udp, ..TrafficQuery::tcp(ep("b/z"), ep("a/x"), 443) };
        assert!(!evaluate(&s, &udp).unwrap().allowed);
    }

    #[test]
    fn ip_blocks_only_match_external_endpoints() {
        let mut np = deny_all_ingress("a");
        np.ingress_rules.push(Rule {
            peers: vec![Peer::IpBlock(crate::netpol::IpBlock::new("0.0.0.0/0".parse().unwrap(), vec![]).unwrap())],
            ports: vec![],
        });
        let s = state(vec![np]);
        assert!(evaluate(&s, &TrafficQuery::tcp(ep("192.0.2.1"), ep("a/x"), 80)).unwrap().allowed);
        assert!(!evaluate(&s, &TrafficQuery::tcp(ep("b/z"), ep("a/x"), 80)).unwrap().allowed);
    }

    #[test]
    fn query_errors() {
        let s = state(vec![]);
        assert_eq!(
            evaluate(&s, &TrafficQuery::tcp(ep("a/nope"), ep("a/x"), 80)),
            Err(NetpolError::UnknownPod(PodRef::new("a", "nope")))
        );
        assert_eq!(
            evaluate(&s, &TrafficQuery::tcp(ep("10.0.0.1"), ep("10.0.0.2"), 80)),
            Err(NetpolError::NoPodEndpoint)
        );
        assert_eq!(
            evaluate(&s, &TrafficQuery::tcp(ep("a/x"), ep("a/x"), 80)),
            Err(NetpolError::SameEndpoint)
        );
        assert_eq!(evaluate(&s, &TrafficQuery::tcp(ep("a/x"), ep("a/y"), 0)), Err(NetpolError::InvalidPort));
        assert!(policies_selecting(&s, &PodRef::new("zz", "x"), PolicyType::Ingress).is_err());
        assert!("not an endpoint".parse::<Endpoint>().is_err());
    }
}
