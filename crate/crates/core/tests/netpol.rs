mod support;

use std::path::PathBuf;

use clustergate_core::model::{ClusterState, PodRef};
use clustergate_core::netpol::{evaluate, policies_selecting, Endpoint, PolicyType, Protocol, TrafficQuery};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::netpol_oracle::{endpoint_pairs, oracle, random_cluster, random_policy, PORTS};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn test_env() -> ClusterState {
    ClusterState::load(&fixture("netpol/test-env.json")).unwrap()
}

fn q(src: &str, dst: &str, port: u16) -> TrafficQuery {
    TrafficQuery::tcp(src.parse().unwrap(), dst.parse().unwrap(), port)
}

#[test]
fn crabserver_is_selected_by_its_policy() {
    let state = test_env();
    let crab = PodRef::new("crab", "crabserver");
    let ingress = policies_selecting(&state, &crab, PolicyType::Ingress).unwrap();
    assert_eq!(ingress.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["crab-allow-auth"]);
    let egress = policies_selecting(&state, &crab, PolicyType::Egress).unwrap();
    assert_eq!(egress.len(), 1);
    let auth = PodRef::new("auth", "auth-proxy-server");
    assert!(policies_selecting(&state, &auth, PolicyType::Egress).unwrap().is_empty());
}

#[test]
fn auth_services_reach_crabserver() {
    let state = test_env();
    for svc in ["auth-proxy-server", "scitokens-proxy-server", "x509-proxy-server"] {
        for port in [8270, 8443, 18270] {
            let v = evaluate(&state, &q(&format!("auth/{svc}"), "crab/crabserver", port)).unwrap();
            assert!(v.allowed, "{svc}:{port} {v:?}");
            assert!(v.trace.iter().any(|t| t.matched));
        }
    }
}

#[test]
fn everything_else_is_blocked() {
    let state = test_env();
    let denied = [
        q("dbs/dbs-global-r", "crab/crabserver", 8443),
        q("das/das-server", "crab/crabserver", 8270),
        q("auth/auth-exporter", "crab/crabserver", 8443),
        q("default/debug", "crab/crabserver", 8443),
        q("auth/auth-proxy-server", "crab/crabserver", 9999),
        q("192.0.2.7", "crab/crabserver", 8443),
        q("crab/crabserver", "auth/auth-proxy-server", 443),
        q("crab/crabserver", "dbs/dbs-global-r", 8443),
        q("crab/crabserver", "198.51.100.1", 443),
    ];
    for query in &denied {
        let v = evaluate(&state, query).unwrap();
        assert!(!v.allowed, "{query:?}");
    }
    let v = evaluate(&state, &q("dbs/dbs-global-r", "crab/crabserver", 8443)).unwrap();
    assert!(!v.ingress_allowed && v.egress_allowed);
    assert!(v.trace.iter().all(|t| !t.matched));
    let v = evaluate(&state, &q("crab/crabserver", "dbs/dbs-global-r", 8443)).unwrap();
    assert!(!v.egress_allowed && v.ingress_allowed);
}

#[test]
fn unrelated_traffic_keeps_default_allow() {
    let state = test_env();
    assert!(evaluate(&state, &q("dbs/dbs-global-r", "das/das-server", 80)).unwrap().allowed);
}

#[test]
fn engine_agrees_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut checked = 0;
    for _ in 0..60 {
        let state = random_cluster(&mut rng);
        for (src, dst) in endpoint_pairs(&state) {
            for port in PORTS {
                for proto in [Protocol::Tcp, Protocol::Udp] {
                    let query = TrafficQuery { src: src.clone(), dst: dst.clone(), port, protocol: proto };
                    let v = evaluate(&state, &query).unwrap();
                    let (eg, ing) = oracle(&state, &src, &dst, proto, port);
                    assert_eq!((v.egress_allowed, v.ingress_allowed), (eg, ing), "{query:?}\n{state:#?}");
                    assert_eq!(v.allowed, eg && ing);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn adding_a_policy_only_opens_what_it_admits() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in 0..60 {
        let before = random_cluster(&mut rng);
        let extra = random_policy(&mut rng, &before.namespaces, 100 + round);
        let extra_label = format!("{}/{}", extra.namespace, extra.name);
        let mut after = before.clone();
        after.network_policies.push(extra);
        for (src, dst) in endpoint_pairs(&before) {
            for port in PORTS {
                let query = TrafficQuery::tcp(src.clone(), dst.clone(), port);
                let v0 = evaluate(&before, &query).unwrap();
                let v1 = evaluate(&after, &query).unwrap();
                let dirs = [
                    (PolicyType::Ingress, &dst, v0.ingress_allowed, v1.ingress_allowed),
                    (PolicyType::Egress, &src, v0.egress_allowed, v1.egress_allowed),
                ];
                for (dir, subject, was, now) in dirs {
                    let Endpoint::Pod(pod) = subject else { continue };
                    let selected = !policies_selecting(&before, pod, dir).unwrap().is_empty();
                    if selected && !was && now {
                        assert!(
                            v1.trace.iter().any(|t| t.direction == dir && t.policy == extra_label && t.matched),
                            "{query:?} flipped without the new policy admitting it"
                        );
                    }
                    if selected && was {
                        assert!(now, "adding a policy closed an already-open selected direction");
                    }
                }
            }
        }
    }
}

#[test]
fn isolating_policy_without_rules_blocks_all_ingress() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sole = 0;
    for i in 0..80 {
        let before = random_cluster(&mut rng);
        let mut np = random_policy(&mut rng, &before.namespaces, 200 + i);
        np.policy_types.insert(PolicyType::Ingress);
        np.ingress_rules.clear();
        let mut state = before.clone();
        state.network_policies.push(np.clone());
        for (src, dst) in endpoint_pairs(&state) {
            let Endpoint::Pod(d) = &dst else { continue };
            let pod = state.pod(d).unwrap();
            if pod.meta.namespace != np.namespace || !np.pod_selector.matches(&pod.meta.labels) {
                continue;
            }
            let query = TrafficQuery::tcp(src, dst.clone(), 443);
            let v = evaluate(&state, &query).unwrap();
            if policies_selecting(&before, d, PolicyType::Ingress).unwrap().is_empty() {
                // sole selecting policy: fully isolated
                assert!(!v.ingress_allowed);
                sole += 1;
            } else {
                // other selecting policies keep whatever they admit
                assert_eq!(v.ingress_allowed, evaluate(&before, &query).unwrap().ingress_allowed);
            }
        }
    }
    assert!(sole > 0);
}

#[test]
fn directions_depend_only_on_their_own_side() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for _ in 0..40 {
        let state = random_cluster(&mut rng);
        for (src, dst) in endpoint_pairs(&state) {
            let query = TrafficQuery::tcp(src.clone(), dst.clone(), 443);
            let full = evaluate(&state, &query).unwrap();

            let keep = |side: &Endpoint, dir: PolicyType| {
                let mut s = state.clone();
                s.network_policies = match side {
                    Endpoint::Pod(p) => policies_selecting(&state, p, dir).unwrap().into_iter().cloned().collect(),
                    Endpoint::External(_) => vec![],
                };
                s
            };
            let only_dst = evaluate(&keep(&dst, PolicyType::Ingress), &query).unwrap();
            assert_eq!(only_dst.ingress_allowed, full.ingress_allowed);
            let only_src = evaluate(&keep(&src, PolicyType::Egress), &query).unwrap();
            assert_eq!(only_src.egress_allowed, full.egress_allowed);
        }
    }
}
