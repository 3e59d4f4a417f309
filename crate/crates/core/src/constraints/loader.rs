use std::collections::HashSet;
use std::path::Path;

use serde::Deserialize;
use serde_json::{Map, Value};

use super::{Constraint, ConstraintError, EnforcementAction, Match, TemplateRegistry};
use crate::model::manifest::{parse_documents, Format};
use crate::model::Selector;

/// On-disk constraint document.
///
/// The flat form carries `template`, `name`, `enforcementAction`, `match` and
/// `parameters` at the top level. Upstream-style documents
/// (`kind: K8sAllowedRepos`, `metadata.name`, `spec.{...}`) are accepted too.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConstraintDoc {
    pub template: String,
    pub name: String,
    #[serde(default)]
    pub enforcement_action: EnforcementAction,
    #[serde(default, rename = "match")]
    pub matcher: MatchDoc,
    #[serde(default)]
    pub parameters: Map<String, Value>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MatchDoc {
    #[serde(default)]
    kinds: Vec<KindsEntry>,
    #[serde(default)]
    namespaces: Vec<String>,
    #[serde(default)]
    excluded_namespaces: Vec<String>,
    #[serde(default)]
    label_selector: Option<Selector>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum KindsEntry {
    Kind(String),
    Group {
        #[serde(default)]
        kinds: Vec<String>,
    },
}

impl MatchDoc {
    fn into_match(self) -> Match {
        let kinds = self
            .kinds
            .into_iter()
            .flat_map(|k| match k {
                KindsEntry::Kind(k) => vec![k],
                KindsEntry::Group { kinds } => kinds,
            })
            .collect();
        Match {
            kinds,
            namespaces: self.namespaces,
            excluded_namespaces: self.excluded_namespaces,
            label_selector: self.label_selector.unwrap_or_default(),
        }
    }
}

fn normalize(mut doc: Value) -> Value {
    // upstream CR layout -> flat layout
    if doc.get("template").is_none() {
        if let (Some(kind), Some(spec)) = (doc.get("kind").cloned(), doc.get("spec").cloned()) {
            let mut flat = spec.as_object().cloned().unwrap_or_default();
            flat.insert("template".into(), Value::String(kind.as_str().unwrap_or_default().to_ascii_lowercase()));
            if let Some(name) = doc.pointer("/metadata/name") {
                flat.insert("name".into(), name.clone());
            }
            doc = Value::Object(flat);
        }
    }
    doc
}

impl ConstraintDoc {
    pub fn into_constraint(self, registry: &TemplateRegistry) -> Result<Constraint, ConstraintError> {
        Constraint::new(
            registry,
            self.name,
            &self.template,
            self.enforcement_action,
            self.matcher.into_match(),
            &self.parameters,
        )
    }
}

/// Parses one file's worth of constraint documents.
pub fn parse_constraints(
    bytes: &[u8],
    format: Format,
    registry: &TemplateRegistry,
) -> Result<Vec<Constraint>, ConstraintError> {
    let docs = parse_documents(bytes, format).map_err(|e| ConstraintError::File {
        path: String::new(),
        message: e.to_string(),
    })?;
    docs.into_iter()
        .map(|d| {
            let doc: ConstraintDoc = serde_json::from_value(normalize(d)).map_err(|e| ConstraintError::File {
                path: String::new(),
                message: e.to_string(),
            })?;
            doc.into_constraint(registry)
        })
        .collect()
}

/// Loads every `.json`, `.yaml` and `.yml` file in `dir`. The result is
/// sorted by constraint name; duplicate names are an error.
pub fn load_constraints_dir(dir: &Path, registry: &TemplateRegistry) -> Result<Vec<Constraint>, ConstraintError> {
    let io_err = |p: &Path, e: std::io::Error| ConstraintError::File {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && matches!(p.extension().and_then(|e| e.to_str()), Some("json" | "yaml" | "yml"))
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let parsed = parse_constraints(&bytes, Format::from_path(&path), registry).map_err(|e| match e {
            ConstraintError::File { message, .. } => ConstraintError::File {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })?;
        out.extend(parsed);
    }
    let mut seen = HashSet::new();
    for c in &out {
        if !seen.insert(c.name.clone()) {
            return Err(ConstraintError::Duplicate(c.name.clone()));
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}
