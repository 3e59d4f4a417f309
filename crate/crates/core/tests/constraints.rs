use std::path::PathBuf;

use clustergate_core::constraints::{
    audit, check, constraint_matches, load_constraints_dir, review, Constraint, EnforcementAction, Match,
    Operation, ReviewRequest, TemplateRegistry,
};
use clustergate_core::model::{
    parse_manifest, ClusterState, Container, Format, Namespace, Pod, Quantity, Resource, ResourceKind,
};
use serde_json::json;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn library() -> Vec<Constraint> {
    load_constraints_dir(&fixtures().join("policies"), &TemplateRegistry::default()).unwrap()
}

fn only(template: &str) -> Vec<Constraint> {
    library().into_iter().filter(|c| c.template == template).collect()
}

fn object(file: &str) -> Resource {
    let path = fixtures().join("library").join(file);
    parse_manifest(&std::fs::read(&path).unwrap(), Format::Yaml)
        .unwrap()
        .into_resource()
        .unwrap()
}

fn constraint(template: &str, params: serde_json::Value, action: EnforcementAction) -> Constraint {
    Constraint::new(
        &TemplateRegistry::default(),
        format!("{template}-test"),
        template,
        action,
        Match::default(),
        params.as_object().unwrap(),
    )
    .unwrap()
}

fn pod_with(container: Container) -> Resource {
    Resource::Pod(Pod::new("crab", "p", vec![container]))
}

#[test]
fn cmsweb_image_passes_repo_check() {
    let c = constraint("k8sallowedrepos", json!({"repos": ["registry.cern.ch/cmsweb/"]}), EnforcementAction::Deny);
    let ok = pod_with(Container::new("crabserver", "registry.cern.ch/cmsweb/crabserver:v3"));
    assert!(check(&c, &ok).is_empty());
    let bad = pod_with(Container::new("crabserver", "docker.io/evil/crabserver:v3"));
    let v = check(&c, &bad);
    assert_eq!(v.len(), 1);
    assert!(v[0].message.contains("docker.io/evil/crabserver:v3"));
}

#[test]
fn init_containers_are_checked_too() {
    let c = constraint("k8sallowedrepos", json!({"repos": ["registry.cern.ch/cmsweb/"]}), EnforcementAction::Deny);
    let mut pod = Pod::new("crab", "p", vec![Container::new("app", "registry.cern.ch/cmsweb/a:1")]);
    pod.spec.init_containers.push(Container::new("init", "busybox"));
    let v = check(&c, &Resource::Pod(pod));
    assert_eq!(v.len(), 1);
    assert!(v[0].message.contains("<init>"));
}

#[test]
fn zero_replicas_violates_range() {
    let c = constraint(
        "k8sreplicalimits",
        json!({"ranges": [{"min_replicas": 1, "max_replicas": 10}]}),
        EnforcementAction::Deny,
    );
    let d = object("k8sreplicalimits.fail.yaml");
    let v = check(&c, &d);
    assert_eq!(v.len(), 1);
    assert!(v[0].message.contains("replicas=0"), "{}", v[0].message);
}

#[test]
fn host_pid_alone_gives_one_violation() {
    let c = constraint("k8spsphostnamespaces", json!({}), EnforcementAction::Deny);
    let mut pod = Pod::new("crab", "p", vec![Container::new("c", "i")]);
    pod.spec.host_pid = true;
    let v = check(&c, &Resource::Pod(pod));
    assert_eq!(v.len(), 1);
    assert!(v[0].message.contains("hostPID"));
}

#[test]
fn ratio_above_limit_is_flagged() {
    let c = constraint("k8scontainerratios", json!({"ratio": 2}), EnforcementAction::Deny);
    let mut container = Container::new("c", "i");
    container.resources.limits.insert(ResourceKind::Cpu, Quantity::millicores(1000));
    container.resources.requests.insert(ResourceKind::Cpu, Quantity::millicores(400));
    // hand oracle: 1000 / 400 = 2.5 > 2
    let (limit, request, ratio) = (1000.0_f64, 400.0_f64, 2.0_f64);
    assert!(limit / request > ratio);
    assert_eq!(check(&c, &pod_with(container.clone())).len(), 1);

    // exactly at the ratio passes: 800 / 400 = 2
    container.resources.limits.insert(ResourceKind::Cpu, Quantity::millicores(800));
    assert!(check(&c, &pod_with(container.clone())).is_empty());

    // a limit without a request is a violation
    container.resources.requests.clear();
    assert_eq!(check(&c, &pod_with(container)).len(), 1);
}

#[test]
fn limit_comparisons_use_base_units() {
    let c = constraint("k8scontainerlimits", json!({"cpu": "1500m", "memory": "1Gi"}), EnforcementAction::Deny);
    let mut container = Container::new("c", "i");
    container.resources.limits.insert(
        ResourceKind::Cpu,
        clustergate_core::model::parse_quantity("1", ResourceKind::Cpu).unwrap(),
    );
    container.resources.limits.insert(ResourceKind::Memory, Quantity::bytes(1 << 30));
    assert!(check(&c, &pod_with(container.clone())).is_empty());
    container.resources.limits.insert(
        ResourceKind::Cpu,
        clustergate_core::model::parse_quantity("2000m", ResourceKind::Cpu).unwrap(),
    );
    assert_eq!(check(&c, &pod_with(container)).len(), 1);
}

#[test]
fn deny_blocks_and_warn_reports() {
    let deny = constraint("k8sallowedrepos", json!({"repos": ["registry.cern.ch/cmsweb/"]}), EnforcementAction::Deny);
    let warn = constraint("k8sallowedrepos", json!({"repos": ["registry.cern.ch/cmsweb/"]}), EnforcementAction::Warn);
    let dryrun = constraint("k8sallowedrepos", json!({"repos": ["registry.cern.ch/cmsweb/"]}), EnforcementAction::Dryrun);
    let mut obj = object("k8sreplicalimits.pass.yaml");
    if let Resource::Workload(w) = &mut obj {
        w.pod_template.as_mut().unwrap().spec.containers[0].image = "docker.io/x:1".into();
    }
    let req = ReviewRequest::create(obj);
    let d = review(&req, &[deny]);
    assert!(!d.allowed);
    assert_eq!(d.violations.len(), 1);
    let d = review(&req, &[warn]);
    assert!(d.allowed);
    assert_eq!(d.violations.len(), 1);
    assert_eq!(d.violations[0].enforcement_action, EnforcementAction::Warn);
    assert!(review(&req, &[dryrun]).allowed);
}

#[test]
fn compliant_object_passes_whole_library() {
    let constraints = library();
    assert_eq!(constraints.len(), 10);
    for file in ["k8sallowedrepos.pass.yaml", "k8sreplicalimits.pass.yaml", "k8sdisallowanonymous.pass.yaml"] {
        let d = review(&ReviewRequest::create(object(file)), &constraints);
        assert!(d.allowed, "{file}: {:?}", d.violations);
        assert!(d.violations.is_empty(), "{file}: {:?}", d.violations);
    }
}

#[test]
fn every_template_has_a_passing_and_failing_fixture() {
    let reg = TemplateRegistry::default();
    for template in reg.names() {
        let constraints = only(template);
        assert_eq!(constraints.len(), 1, "{template}");
        let pass = object(&format!("{template}.pass.yaml"));
        let fail = object(&format!("{template}.fail.yaml"));
        assert!(constraint_matches(&constraints[0], &pass), "{template}");
        assert!(review(&ReviewRequest::create(pass), &constraints).violations.is_empty(), "{template}");
        let d = review(&ReviewRequest::create(fail), &constraints);
        assert!(!d.allowed && !d.violations.is_empty(), "{template}");
    }
}

fn state_of(objects: Vec<Resource>) -> ClusterState {
    let mut namespaces: Vec<String> = objects
        .iter()
        .map(|o| o.meta().namespace.clone())
        .filter(|n| !n.is_empty())
        .collect();
    namespaces.sort();
    namespaces.dedup();
    let mut state = ClusterState::new(namespaces.into_iter().map(Namespace::new).collect(), vec![], vec![], vec![]).unwrap();
    for o in objects {
        state.upsert(o);
    }
    state.validate().unwrap();
    state
}

#[test]
fn empty_state_audits_clean() {
    let report = audit(&ClusterState::default(), &library());
    assert_eq!(report.total, 0);
}

#[test]
fn off_repo_and_missing_probe_are_attributed() {
    let constraints: Vec<Constraint> = library()
        .into_iter()
        .filter(|c| c.template == "k8sallowedrepos" || c.template == "k8srequiredprobes")
        .collect();
    let state = state_of(vec![
        object("k8sallowedrepos.fail.yaml"),
        object("k8srequiredprobes.fail.yaml"),
        object("k8sreplicalimits.pass.yaml"),
    ]);
    let report = audit(&state, &constraints);
    // hand count: one bad image, one missing readiness probe
    assert_eq!(report.total, 2);
    let repos = &report.per_constraint["cmsweb-allowed-repos"];
    assert_eq!(repos.len(), 1);
    assert_eq!(repos[0].object_ref.name, "crabserver");
    assert!(repos[0].message.contains("docker.io/library/crabserver:latest"));
    let probes = &report.per_constraint["cmsweb-required-probes"];
    assert_eq!(probes.len(), 1);
    assert_eq!(probes[0].object_ref.name, "no-readiness");
}

#[test]
fn audit_equals_union_of_reviews() {
    let constraints = library();
    let state = ClusterState::load(&fixtures().join("audit/state.json")).unwrap();
    let report = audit(&state, &constraints);
    let mut from_reviews: Vec<_> = state
        .resources()
        .flat_map(|o| review(&ReviewRequest::create(o), &constraints).violations)
        .collect();
    let mut from_audit: Vec<_> = report.violations().cloned().collect();
    let key = |v: &clustergate_core::constraints::Violation| {
        (v.constraint_name.clone(), v.object_ref.clone(), v.message.clone())
    };
    from_reviews.sort_by_key(key);
    from_audit.sort_by_key(key);
    assert_eq!(from_audit, from_reviews);
    assert_eq!(report.total, from_audit.len());
}

#[test]
fn output_is_deterministic_and_removal_is_monotone() {
    let constraints = library();
    let state = ClusterState::load(&fixtures().join("audit/state.json")).unwrap();
    let first = serde_json::to_vec(&audit(&state, &constraints)).unwrap();
    for _ in 0..5 {
        assert_eq!(serde_json::to_vec(&audit(&state, &constraints)).unwrap(), first);
    }
    let full = audit(&state, &constraints).total;
    for skip in 0..constraints.len() {
        let mut fewer = constraints.clone();
        fewer.remove(skip);
        assert!(audit(&state, &fewer).total <= full);
        for obj in state.resources() {
            let all = review(&ReviewRequest::create(obj.clone()), &constraints).violations;
            let some = review(&ReviewRequest::create(obj), &fewer).violations;
            assert!(some.iter().all(|v| all.contains(v)));
        }
    }
}

#[test]
fn admitted_clean_objects_audit_clean() {
    let constraints = library();
    let mut admitted = Vec::new();
    for entry in std::fs::read_dir(fixtures().join("library")).unwrap() {
        let path = entry.unwrap().path();
        let obj = parse_manifest(&std::fs::read(&path).unwrap(), Format::Yaml).unwrap().into_resource().unwrap();
        let d = review(&ReviewRequest::create(obj.clone()), &constraints);
        if d.allowed && d.violations.is_empty() {
            admitted.push(obj);
        }
    }
    assert!(admitted.len() >= 10);
    assert_eq!(audit(&state_of(admitted), &constraints).total, 0);
}

#[test]
fn update_reviews_new_object() {
    let constraints = only("k8sallowedrepos");
    let req = ReviewRequest::new(
        Operation::Update,
        object("k8sallowedrepos.fail.yaml"),
        Some(object("k8sallowedrepos.pass.yaml")),
    )
    .unwrap();
    assert!(!review(&req, &constraints).allowed);
}
