//! Parameterized admission constraints and audit.
//!
//! Each constraint instantiates one of the built-in templates with concrete
//! parameters and match criteria. The same checks back both admission review
//! of a single request and audit sweeps over a whole cluster state.

mod checks;
mod engine;
mod loader;
mod template;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ObjectRef, Resource, Selector};

pub use engine::{audit, check, constraint_matches, review};
pub use loader::{load_constraints_dir, parse_constraints, ConstraintDoc};
pub use template::{
    CheckId, CheckParams, ConstraintTemplate, ParamSpec, ParamType, ProbeKind, Ratio, ReplicaRange,
    TemplateRegistry,
};

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("constraint {constraint:?}: unknown template {template:?}")]
    UnknownTemplate { constraint: String, template: String },
    #[error("constraint {constraint:?}: parameter {parameter:?}: {message}")]
    InvalidParameter {
        constraint: String,
        parameter: String,
        message: String,
    },
    #[error("constraint {constraint:?}: {message}")]
    Invalid { constraint: String, message: String },
    #[error("duplicate constraint name {0:?}")]
    Duplicate(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnforcementAction {
    #[default]
    Deny,
    Warn,
    #[serde(alias = "dryRun")]
    Dryrun,
}

impl fmt::Display for EnforcementAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnforcementAction::Deny => "deny",
            EnforcementAction::Warn => "warn",
            EnforcementAction::Dryrun => "dryrun",
        })
    }
}

/// Which objects a constraint applies to. Empty lists mean "all";
/// `excluded_namespaces` wins over `namespaces`. Namespace filters do not
/// apply to cluster-scoped objects.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Match {
    pub kinds: Vec<String>,
    pub namespaces: Vec<String>,
    pub excluded_namespaces: Vec<String>,
    pub label_selector: Selector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub name: String,
    pub template: String,
    pub enforcement_action: EnforcementAction,
    pub matcher: Match,
    pub params: CheckParams,
}

impl Constraint {
    /// Builds a constraint, validating `parameters` against the template schema.
    pub fn new(
        registry: &TemplateRegistry,
        name: impl Into<String>,
        template: &str,
        enforcement_action: EnforcementAction,
        matcher: Match,
        parameters: &serde_json::Map<String, serde_json::Value>,
    ) -> Result<Self, ConstraintError> {
        let name = name.into();
        if name.is_empty() {
            return Err(ConstraintError::Invalid {
                constraint: name,
                message: "empty constraint name".into(),
            });
        }
        let tpl = registry
            .get(template)
            .ok_or_else(|| ConstraintError::UnknownTemplate {
                constraint: name.clone(),
                template: template.to_string(),
            })?;
        let params = tpl.bind(&name, parameters)?;
        Ok(Self {
            name,
            template: tpl.name.to_string(),
            enforcement_action,
            matcher,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Violation {
    pub constraint_name: String,
    pub object_ref: ObjectRef,
    pub message: String,
    pub enforcement_action: EnforcementAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Create,
    Update,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewRequest {
    pub operation: Operation,
    pub object: Resource,
    pub old_object: Option<Resource>,
}

impl ReviewRequest {
    pub fn create(object: Resource) -> Self {
        Self {
            operation: Operation::Create,
            object,
            old_object: None,
        }
    }

    /// Enforces: `old_object` present iff the operation is not a create.
    pub fn new(operation: Operation, object: Resource, old_object: Option<Resource>) -> Result<Self, String> {
        match (operation, &old_object) {
            (Operation::Create, Some(_)) => Err("create requests carry no old object".into()),
            (Operation::Update | Operation::Delete, None) => {
                Err(format!("{operation:?} requests need the old object"))
            }
            _ => Ok(Self {
                operation,
                object,
                old_object,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub allowed: bool,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditReport {
    pub per_constraint: BTreeMap<String, Vec<Violation>>,
    pub total: usize,
}

impl AuditReport {
    pub fn violations(&self) -> impl Iterator<Item = &Violation> {
        self.per_constraint.values().flatten()
    }
}
