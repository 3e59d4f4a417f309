//! Built-in check bodies. Each returns one message per offending
//! container or field, in declaration order.

use super::template::{CheckParams, ProbeKind, Ratio, ReplicaRange};
use crate::model::{Container, PodSpec, Quantity, Resource, ResourceKind, SubjectKind};

const RESOURCES: [ResourceKind; 2] = [ResourceKind::Cpu, ResourceKind::Memory];

pub(super) fn run(params: &CheckParams, object: &Resource) -> Vec<String> {
    let spec = object.pod_spec();
    match params {
        CheckParams::AllowedRepos { repos } => per_container(spec, |c| allowed_repos(c, repos)),
        CheckParams::ContainerLimits { cpu, memory } => {
            per_container(spec, |c| bounded(c, "limit", &c.resources.limits, *cpu, *memory))
        }
        CheckParams::ContainerRequests { cpu, memory } => {
            per_container(spec, |c| bounded(c, "request", &c.resources.requests, *cpu, *memory))
        }
        CheckParams::ContainerRatios { ratio } => per_container(spec, |c| ratios(c, *ratio)),
        CheckParams::RequiredResources { limits, requests } => {
            per_container(spec, |c| required_resources(c, limits, requests))
        }
        CheckParams::DisallowAnonymous => disallow_anonymous(object),
        CheckParams::ReplicaLimits { ranges } => replica_limits(object, ranges),
        CheckParams::RequiredProbes { probes } => spec
            .map(|s| s.containers.iter().flat_map(|c| required_probes(c, probes)).collect())
            .unwrap_or_default(),
        CheckParams::PspCapabilities {
            allowed,
            required_drop,
        } => per_container(spec, |c| capabilities(c, allowed, required_drop)),
        CheckParams::PspHostNamespaces => spec.map(host_namespaces).unwrap_or_default(),
    }
}

fn per_container(spec: Option<&PodSpec>, f: impl Fn(&Container) -> Vec<String>) -> Vec<String> {
    spec.map(|s| s.all_containers().flat_map(f).collect())
        .unwrap_or_default()
}

fn allowed_repos(c: &Container, repos: &[String]) -> Vec<String> {
    if repos.iter().any(|r| c.image.starts_with(r.as_str())) {
        return vec![];
    }
    vec![format!(
        "container <{}> has an invalid image repo <{}>, allowed repos are {:?}",
        c.name, c.image, repos
    )]
}

fn bounded(
    c: &Container,
    what: &str,
    list: &crate::model::ResourceList,
    cpu_max: Option<Quantity>,
    memory_max: Option<Quantity>,
) -> Vec<String> {
    let mut out = Vec::new();
    for kind in RESOURCES {
        let max = match kind {
            ResourceKind::Cpu => cpu_max,
            ResourceKind::Memory => memory_max,
        };
        match list.get(&kind) {
            None => out.push(format!("container <{}> has no {kind} {what}", c.name)),
            Some(q) => {
                if let Some(max) = max {
                    if q.value() > max.value() {
                        out.push(format!(
                            "container <{}> {kind} {what} <{q}> is higher than the maximum allowed of <{max}>",
                            c.name
                        ));
                    }
                }
            }
        }
    }
    out
}

fn ratios(c: &Container, ratio: Ratio) -> Vec<String> {
    let mut out = Vec::new();
    for kind in RESOURCES {
        let Some(limit) = c.resources.limits.get(&kind) else { continue };
        match c.resources.requests.get(&kind) {
            None => out.push(format!(
                "container <{}> has a {kind} limit <{limit}> but no {kind} request",
                c.name
            )),
            Some(request) if !ratio.admits(limit.value(), request.value()) => out.push(format!(
                "container <{}> {kind} limit <{limit}> is more than {ratio} times its request <{request}>",
                c.name
            )),
            Some(_) => {}
        }
    }
    out
}

fn required_resources(c: &Container, limits: &[ResourceKind], requests: &[ResourceKind]) -> Vec<String> {
    let mut out = Vec::new();
    for kind in limits {
        if !c.resources.limits.contains_key(kind) {
            out.push(format!("container <{}> does not have <{kind}> limits defined", c.name));
        }
    }
    for kind in requests {
        if !c.resources.requests.contains_key(kind) {
            out.push(format!("container <{}> does not have <{kind}> requests defined", c.name));
        }
    }
    out
}

fn disallow_anonymous(object: &Resource) -> Vec<String> {
    object
        .subjects()
        .iter()
        .filter(|s| {
            (s.kind == SubjectKind::Group && s.name == "system:unauthenticated")
                || (s.kind == SubjectKind::User && s.name == "system:anonymous")
        })
        .map(|s| {
            format!(
                "{} <{}> binds {:?} <{}>, which is not allowed",
                object.kind(),
                object.meta().name,
                s.kind,
                s.name
            )
        })
        .collect()
}

fn replica_limits(object: &Resource, ranges: &[ReplicaRange]) -> Vec<String> {
    let Some(replicas) = object.replicas() else {
        return vec![];
    };
    if ranges.iter().any(|r| r.min <= replicas && replicas <= r.max) {
        return vec![];
    }
    let allowed: Vec<String> = ranges.iter().map(|r| format!("{}-{}", r.min, r.max)).collect();
    vec![format!(
        "{} <{}> has replicas={replicas}, allowed ranges are [{}]",
        object.kind(),
        object.meta().name,
        allowed.join(", ")
    )]
}

fn required_probes(c: &Container, probes: &[ProbeKind]) -> Vec<String> {
    probes
        .iter()
        .filter(|p| match p {
            ProbeKind::Readiness => c.readiness_probe.is_none(),
            ProbeKind::Liveness => c.liveness_probe.is_none(),
        })
        .map(|p| format!("container <{}> has no <{}>", c.name, p.field()))
        .collect()
}

fn capabilities(c: &Container, allowed: &[String], required_drop: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    if !allowed.iter().any(|a| a == "*") {
        let extra: Vec<&String> = c
            .capabilities_add
            .iter()
            .filter(|cap| !allowed.contains(cap))
            .collect();
        if !extra.is_empty() {
            out.push(format!(
                "container <{}> has a disallowed capability. Allowed capabilities are {:?}, added {:?}",
                c.name, allowed, extra
            ));
        }
    }
    let drops_all = c.capabilities_drop.iter().any(|d| d.eq_ignore_ascii_case("all"));
    if !drops_all {
        let missing: Vec<&String> = required_drop
            .iter()
            .filter(|cap| !c.capabilities_drop.contains(cap))
            .collect();
        if !missing.is_empty() {
            out.push(format!(
                "container <{}> is not dropping all required capabilities. Container must drop all of {:?}, missing {:?}",
                c.name, required_drop, missing
            ));
        }
    }
    out
}

fn host_namespaces(spec: &PodSpec) -> Vec<String> {
    let mut out = Vec::new();
    if spec.host_pid {
        out.push("sharing the host PID namespace is not allowed: hostPID=true".to_string());
    }
    if spec.host_ipc {
        out.push("sharing the host IPC namespace is not allowed: hostIPC=true".to_string());
    }
    out
}
