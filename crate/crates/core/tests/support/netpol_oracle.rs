//! Brute-force network policy evaluator and random cluster generator, kept
//! independent of the engine: it re-implements label matching and CIDR math
//! and enumerates every (policy, rule, peer, port) for every candidate endpoint.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use clustergate_core::model::{
    ClusterState, Container, LabelMap, Namespace, Operator, Pod, PodRef, Requirement, Selector,
};
use clustergate_core::netpol::{
    Endpoint, IpBlock, Ipv4Cidr, NetworkPolicy, Peer, PolicyType, PortSpec, Protocol, Rule,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const PORTS: [u16; 4] = [80, 443, 8443, 9999];
pub const EXTERNAL: [[u8; 4]; 3] = [[192, 0, 2, 10], [198, 51, 100, 7], [10, 200, 0, 9]];

fn label_ok(sel: &Selector, labels: &LabelMap) -> bool {
    for (k, v) in sel.match_labels.iter() {
        let mut found = false;
        for (lk, lv) in labels.iter() {
            if lk == k && lv == v {
                found = true;
            }
        }
        if !found {
            return false;
        }
    }
    for req in &sel.match_expressions {
        let mut value = None;
        for (lk, lv) in labels.iter() {
            if lk == req.key {
                value = Some(lv.to_string());
            }
        }
        let holds = match req.operator {
            Operator::In => value.map(|v| req.values.contains(&v)).unwrap_or(false),
            Operator::NotIn => value.map(|v| !req.values.contains(&v)).unwrap_or(true),
            Operator::Exists => value.is_some(),
            Operator::DoesNotExist => value.is_none(),
        };
        if !holds {
            return false;
        }
    }
    true
}

fn in_cidr(c: &Ipv4Cidr, ip: Ipv4Addr) -> bool {
    let bits = c.prefix() as u64;
    let shift = 32 - bits;
    (u32::from(ip) as u64 >> shift) == (u32::from(c.network()) as u64 >> shift)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
enum Cand {
    Pod(usize),
    Ext(Ipv4Addr),
}

/// Every (endpoint, protocol, port) that `policy` admits in `dir`, enumerated
/// over the whole universe of candidates.
fn admitted_set(
    state: &ClusterState,
    policy: &NetworkPolicy,
    dir: PolicyType,
    universe: &[Cand],
    ports: &[u16],
) -> BTreeSet<(Cand, Protocol, u16)> {
    let rules = if dir == PolicyType::Ingress { &policy.ingress_rules } else { &policy.egress_rules };
    let mut out = BTreeSet::new();
    for rule in rules {
        for &cand in universe {
            let mut peer_hit = rule.peers.is_empty();
            for peer in &rule.peers {
                let hit = match (peer, cand) {
                    (Peer::IpBlock(b), Cand::Ext(ip)) => {
                        in_cidr(&b.cidr, ip) && !b.except.iter().any(|e| in_cidr(e, ip))
                    }
                    (Peer::IpBlock(_), Cand::Pod(_)) => false,
                    (Peer::Pods { .. }, Cand::Ext(_)) => false,
                    (Peer::Pods { pod_selector, namespace_selector }, Cand::Pod(i)) => {
                        let pod = &state.pods[i];
                        let ns = state.namespaces.iter().find(|n| n.name == pod.meta.namespace).unwrap();
                        let ns_hit = match namespace_selector {
                            None => pod.meta.namespace == policy.namespace,
                            Some(s) => label_ok(s, &ns.labels),
                        };
                        let pod_hit = match pod_selector {
                            None => true,
                            Some(s) => label_ok(s, &pod.meta.labels),
                        };
                        ns_hit && pod_hit
                    }
                };
                if hit {
                    peer_hit = true;
                }
            }
            if !peer_hit {
                continue;
            }
            for proto in [Protocol::Tcp, Protocol::Udp] {
                for &port in ports {
                    let port_hit = rule.ports.is_empty()
                        || rule.ports.iter().any(|p| p.protocol == proto && (p.port.is_none() || p.port == Some(port)));
                    if port_hit {
                        out.insert((cand, proto, port));
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn direction_allows(
    state: &ClusterState,
    subject: usize,
    dir: PolicyType,
    remote: Cand,
    proto: Protocol,
    port: u16,
    universe: &[Cand],
    ports: &[u16],
) -> bool {
    let pod = &state.pods[subject];
    let mut selected = false;
    let mut admitted = false;
    for policy in &state.network_policies {
        if policy.namespace != pod.meta.namespace || !policy.policy_types.contains(&dir) {
            continue;
        }
        if !label_ok(&policy.pod_selector, &pod.meta.labels) {
            continue;
        }
        selected = true;
        if admitted_set(state, policy, dir, universe, ports).contains(&(remote, proto, port)) {
            admitted = true;
        }
    }
    !selected || admitted
}

/// (egress allowed, ingress allowed) by brute force.
pub fn oracle(state: &ClusterState, src: &Endpoint, dst: &Endpoint, proto: Protocol, port: u16) -> (bool, bool) {
    let mut universe: Vec<Cand> = (0..state.pods.len()).map(Cand::Pod).collect();
    let to_cand = |e: &Endpoint| match e {
        Endpoint::Pod(r) => Cand::Pod(
            state
                .pods
                .iter()
                .position(|p| p.meta.namespace == r.namespace && p.meta.name == r.name)
                .unwrap(),
        ),
        Endpoint::External(ip) => Cand::Ext(*ip),
    };
    let (s, d) = (to_cand(src), to_cand(dst));
    for c in [s, d] {
        if let Cand::Ext(_) = c {
            universe.push(c);
        }
    }
    let mut ports: Vec<u16> = PORTS.to_vec();
    if !ports.contains(&port) {
        ports.push(port);
    }
    let egress = match s {
        Cand::Pod(i) => direction_allows(state, i, PolicyType::Egress, d, proto, port, &universe, &ports),
        Cand::Ext(_) => true,
    };
    let ingress = match d {
        Cand::Pod(i) => direction_allows(state, i, PolicyType::Ingress, s, proto, port, &universe, &ports),
        Cand::Ext(_) => true,
    };
    (egress, ingress)
}

// ---- random clusters ----

const KEYS: [&str; 3] = ["app", "tier", "env"];
const VALUES: [&str; 3] = ["a", "b", "c"];

fn random_labels(rng: &mut impl Rng) -> LabelMap {
    let mut m = BTreeMap::new();
    for k in KEYS {
        if rng.gen_bool(0.6) {
            m.insert(k.to_string(), VALUES.choose(rng).unwrap().to_string());
        }
    }
    LabelMap::try_from(m).unwrap()
}

pub fn random_selector(rng: &mut impl Rng) -> Selector {
    let mut labels = BTreeMap::new();
    if rng.gen_bool(0.4) {
        labels.insert(KEYS.choose(rng).unwrap().to_string(), VALUES.choose(rng).unwrap().to_string());
    }
    let mut exprs = Vec::new();
    if rng.gen_bool(0.35) {
        let op = *[Operator::In, Operator::NotIn, Operator::Exists, Operator::DoesNotExist]
            .choose(rng)
            .unwrap();
        let values: Vec<String> = match op {
            Operator::In | Operator::NotIn => {
                {
                let n = rng.gen_range(1..=2);
                VALUES.choose_multiple(rng, n).map(|s| s.to_string()).collect()
            }
            }
            _ => vec![],
        };
        exprs.push(Requirement::new(*KEYS.choose(rng).unwrap(), op, values).unwrap());
    }
    Selector::new(LabelMap::try_from(labels).unwrap(), exprs).unwrap()
}

fn random_peer(rng: &mut impl Rng, namespaces: &[Namespace]) -> Peer {
    match rng.gen_range(0..4) {
        0 => Peer::pods(random_selector(rng)),
        1 => {
            let sel = if rng.gen_bool(0.5) {
                Selector::from_labels(
                    [(
                        "kubernetes.io/metadata.name",
                        namespaces.choose(rng).unwrap().name.clone(),
                    )]
                    .into_iter()
                    .collect(),
                )
            } else {
                random_selector(rng)
            };
            Peer::namespaces(sel)
        }
        2 => Peer::Pods {
            pod_selector: Some(random_selector(rng)),
            namespace_selector: Some(random_selector(rng)),
        },
        _ => {
            let base = Ipv4Addr::from(EXTERNAL.choose(rng).copied().unwrap());
            let prefix = *[0u8, 8, 16, 24, 32].choose(rng).unwrap();
            let cidr = Ipv4Cidr::new(base, prefix).unwrap();
            let except = if prefix <= 24 && rng.gen_bool(0.3) {
                vec![Ipv4Cidr::new(base, prefix + 8).unwrap()]
            } else {
                vec![]
            };
            Peer::IpBlock(IpBlock::new(cidr, except).unwrap())
        }
    }
}

fn random_rule(rng: &mut impl Rng, namespaces: &[Namespace]) -> Rule {
    let peers = (0..rng.gen_range(0..=2)).map(|_| random_peer(rng, namespaces)).collect();
    let ports = (0..rng.gen_range(0..=2))
        .map(|_| PortSpec {
            protocol: if rng.gen_bool(0.8) { Protocol::Tcp } else { Protocol::Udp },
            port: if rng.gen_bool(0.85) { Some(*PORTS[..3].choose(rng).unwrap()) } else { None },
        })
        .collect();
    Rule { peers, ports }
}

pub fn random_policy(rng: &mut impl Rng, namespaces: &[Namespace], idx: usize) -> NetworkPolicy {
    let ingress_rules: Vec<Rule> = (0..rng.gen_range(0..=3)).map(|_| random_rule(rng, namespaces)).collect();
    let egress_rules: Vec<Rule> = (0..rng.gen_range(0..=3)).map(|_| random_rule(rng, namespaces)).collect();
    let policy_types = match rng.gen_range(0..4) {
        0 => NetworkPolicy::default_policy_types(&egress_rules),
        1 => BTreeSet::from([PolicyType::Ingress]),
        2 => BTreeSet::from([PolicyType::Egress]),
        _ => BTreeSet::from([PolicyType::Ingress, PolicyType::Egress]),
    };
    NetworkPolicy {
        name: format!("np{idx}"),
        namespace: namespaces.choose(rng).unwrap().name.clone(),
        pod_selector: random_selector(rng),
        policy_types,
        ingress_rules,
        egress_rules,
    }
}

/// A cluster with up to 8 pods, 4 namespaces and 6 policies of up to 3 rules
/// per direction.
pub fn random_cluster(rng: &mut impl Rng) -> ClusterState {
    let namespaces: Vec<Namespace> = (0..rng.gen_range(1..=4))
        .map(|i| {
            let mut ns = Namespace::new(format!("ns{i}"));
            if rng.gen_bool(0.5) {
                ns.labels.insert("env", *VALUES.choose(rng).unwrap()).unwrap();
            }
            ns
        })
        .collect();
    let pods: Vec<Pod> = (0..rng.gen_range(2..=8))
        .map(|i| {
            let ns = &namespaces.choose(rng).unwrap().name;
            let mut p = Pod::new(ns.clone(), format!("pod{i}"), vec![Container::new("c", "img")]);
            p.meta.labels = random_labels(rng);
            p.pod_ip = Some(Ipv4Addr::new(10, 0, 0, i as u8 + 1));
            p
        })
        .collect();
    let policies = (0..rng.gen_range(0..=6)).map(|i| random_policy(rng, &namespaces, i)).collect();
    ClusterState::new(namespaces, pods, vec![], policies).unwrap()
}

/// Every pod-pod and pod-external endpoint pair in the state.
pub fn endpoint_pairs(state: &ClusterState) -> Vec<(Endpoint, Endpoint)> {
    let pods: Vec<Endpoint> = state.pods.iter().map(|p| Endpoint::Pod(PodRef::new(&p.meta.namespace, &p.meta.name))).collect();
    let mut out = Vec::new();
    for a in &pods {
        for b in &pods {
            if a != b {
                out.push((a.clone(), b.clone()));
            }
        }
        for ext in EXTERNAL {
            let e = Endpoint::External(Ipv4Addr::from(ext));
            out.push((a.clone(), e.clone()));
            out.push((e, a.clone()));
        }
    }
    out
}
