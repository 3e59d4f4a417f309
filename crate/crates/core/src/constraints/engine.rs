use super::{checks, AuditReport, Constraint, Decision, EnforcementAction, Operation, ReviewRequest, Violation};
use crate::model::{ClusterState, Resource};

/// Name used for violations raised by object validation rather than a constraint.
pub(crate) const SCHEMA_CONSTRAINT: &str = "<schema>";

pub fn constraint_matches(constraint: &Constraint, object: &Resource) -> bool {
    let m = &constraint.matcher;
    let kind_ok = m.kinds.is_empty() || m.kinds.iter().any(|k| k == "*" || k == object.kind());
    if !kind_ok {
        return false;
    }
    let meta = object.meta();
    if !meta.namespace.is_empty() {
        if m.excluded_namespaces.iter().any(|n| n == &meta.namespace) {
            return false;
        }
        if !m.namespaces.is_empty() && !m.namespaces.iter().any(|n| n == &meta.namespace) {
            return false;
        }
    }
    m.label_selector.matches(&meta.labels)
}

/// Runs the constraint's check. Callers are expected to have established
/// [`constraint_matches`].
pub fn check(constraint: &Constraint, object: &Resource) -> Vec<Violation> {
    let object_ref = object.object_ref();
    checks::run(&constraint.params, object)
        .into_iter()
        .map(|message| Violation {
            constraint_name: constraint.name.clone(),
            object_ref: object_ref.clone(),
            message,
            enforcement_action: constraint.enforcement_action,
        })
        .collect()
}

fn violations_for(object: &Resource, constraints: &[Constraint]) -> Vec<Violation> {
    constraints
        .iter()
        .filter(|c| constraint_matches(c, object))
        .flat_map(|c| check(c, object))
        .collect()
}

/// Admission decision for one request. Only `deny` violations block, and
/// deletes are never blocked; their violations are still reported.
pub fn review(request: &ReviewRequest, constraints: &[Constraint]) -> Decision {
    if let Err(e) = request.object.validate() {
        return Decision {
            allowed: false,
            violations: vec![Violation {
                constraint_name: SCHEMA_CONSTRAINT.to_string(),
                object_ref: request.object.object_ref(),
                message: format!("malformed object: {e}"),
                enforcement_action: EnforcementAction::Deny,
            }],
        };
    }
    let violations = violations_for(&request.object, constraints);
    let denied = violations
        .iter()
        .any(|v| v.enforcement_action == EnforcementAction::Deny);
    Decision {
        allowed: request.operation == Operation::Delete || !denied,
        violations,
    }
}

/// Evaluates every constraint against every pod and workload object in the state.
pub fn audit(state: &ClusterState, constraints: &[Constraint]) -> AuditReport {
    let mut objects: Vec<Resource> = state.resources().collect();
    objects.sort_by(|a, b| {
        let (ma, mb) = (a.meta(), b.meta());
        (&ma.namespace, &ma.name, a.kind()).cmp(&(&mb.namespace, &mb.name, b.kind()))
    });
    let mut report = AuditReport::default();
    for constraint in constraints {
        let found: Vec<Violation> = objects
            .iter()
            .filter(|o| constraint_matches(constraint, o))
            .flat_map(|o| check(constraint, o))
            .collect();
        report.total += found.len();
        report
            .per_constraint
            .entry(constraint.name.clone())
            .or_default()
            .extend(found);
    }
    report
}
