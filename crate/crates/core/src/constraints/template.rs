//! Built-in constraint templates and parameter validation.

use std::collections::BTreeMap;
use std::fmt;

use serde_json::Value;

use super::ConstraintError;
use crate::model::{parse_quantity, Quantity, ResourceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CheckId {
    AllowedRepos,
    ContainerLimits,
    ContainerRequests,
    ContainerRatios,
    RequiredResources,
    DisallowAnonymous,
    ReplicaLimits,
    RequiredProbes,
    PspCapabilities,
    PspHostNamespaces,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    StringList,
    Quantity,
    Number,
    RangeList,
    String,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamType::StringList => "string-list",
            ParamType::Quantity => "quantity",
            ParamType::Number => "number",
            ParamType::RangeList => "range-list",
            ParamType::String => "string",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSpec {
    pub ty: ParamType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintTemplate {
    pub name: &'static str,
    pub check: CheckId,
    pub parameter_schema: BTreeMap<&'static str, ParamSpec>,
}

fn template(name: &'static str, check: CheckId, params: &[(&'static str, ParamType, bool)]) -> ConstraintTemplate {
    ConstraintTemplate {
        name,
        check,
        parameter_schema: params
            .iter()
            .map(|&(n, ty, required)| (n, ParamSpec { ty, required }))
            .collect(),
    }
}

/// The template library, keyed by template name.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<&'static str, ConstraintTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        use ParamType::*;
        let all = [
            template("k8sallowedrepos", CheckId::AllowedRepos, &[("repos", StringList, true)]),
            template(
                "k8scontainerlimits",
                CheckId::ContainerLimits,
                &[("cpu", Quantity, false), ("memory", Quantity, false)],
            ),
            template(
                "k8scontainerrequests",
                CheckId::ContainerRequests,
                &[("cpu", Quantity, false), ("memory", Quantity, false)],
            ),
            template("k8scontainerratios", CheckId::ContainerRatios, &[("ratio", Number, true)]),
            template(
                "k8srequiredresources",
                CheckId::RequiredResources,
                &[("limits", StringList, false), ("requests", StringList, false)],
            ),
            template("k8sdisallowanonymous", CheckId::DisallowAnonymous, &[]),
            template("k8sreplicalimits", CheckId::ReplicaLimits, &[("ranges", RangeList, true)]),
            template("k8srequiredprobes", CheckId::RequiredProbes, &[("probes", StringList, true)]),
            template(
                "k8spspcapabilities",
                CheckId::PspCapabilities,
                &[
                    ("allowedCapabilities", StringList, false),
                    ("requiredDropCapabilities", StringList, false),
                ],
            ),
            template("k8spsphostnamespaces", CheckId::PspHostNamespaces, &[]),
        ];
        Self {
            templates: all.into_iter().map(|t| (t.name, t)).collect(),
        }
    }
}

impl TemplateRegistry {
    pub fn get(&self, name: &str) -> Option<&ConstraintTemplate> {
        self.templates.get(name.to_ascii_lowercase().as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.templates.keys().copied()
    }

    pub fn register(&mut self, template: ConstraintTemplate) {
        self.templates.insert(template.name, template);
    }
}

/// Limit-to-request ratio as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub numerator: u128,
    pub denominator: u128,
}

impl Ratio {
    /// Parses a non-negative decimal such as `"2"` or `"1.5"`.
    pub fn parse(text: &str) -> Option<Self> {
        let (int, frac) = text.split_once('.').unwrap_or((text, ""));
        if int.is_empty() && frac.is_empty()
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
            || frac.len() > 18
        {
            return None;
        }
        let denominator = 10u128.pow(frac.len() as u32);
        let numerator: u128 = format!("{int}{frac}").parse().ok()?;
        Some(Self {
            numerator,
            denominator,
        })
    }

    /// `limit / request <= self`, compared in integers.
    pub fn admits(&self, limit: u64, request: u64) -> bool {
        (limit as u128) * self.denominator <= self.numerator * (request as u128)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denominator == 1 {
            return write!(f, "{}", self.numerator);
        }
        let width = self.denominator.ilog10() as usize;
        let frac = format!("{:0width$}", self.numerator % self.denominator);
        write!(
            f,
            "{}.{}",
            self.numerator / self.denominator,
            frac.trim_end_matches('0')
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ProbeKind {
    Readiness,
    Liveness,
}

impl ProbeKind {
    pub fn field(self) -> &'static str {
        match self {
            ProbeKind::Readiness => "readinessProbe",
            ProbeKind::Liveness => "livenessProbe",
        }
    }
}

/// Validated, typed parameters for one check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckParams {
    AllowedRepos { repos: Vec<String> },
    ContainerLimits { cpu: Option<Quantity>, memory: Option<Quantity> },
    ContainerRequests { cpu: Option<Quantity>, memory: Option<Quantity> },
    ContainerRatios { ratio: Ratio },
    RequiredResources { limits: Vec<ResourceKind>, requests: Vec<ResourceKind> },
    DisallowAnonymous,
    ReplicaLimits { ranges: Vec<ReplicaRange> },
    RequiredProbes { probes: Vec<ProbeKind> },
    PspCapabilities { allowed: Vec<String>, required_drop: Vec<String> },
    PspHostNamespaces,
}

impl CheckParams {
    pub fn check_id(&self) -> CheckId {
        match self {
            CheckParams::AllowedRepos { .. } => CheckId::AllowedRepos,
            CheckParams::ContainerLimits { .. } => CheckId::ContainerLimits,
            CheckParams::ContainerRequests { .. } => CheckId::ContainerRequests,
            CheckParams::ContainerRatios { .. } => CheckId::ContainerRatios,
            CheckParams::RequiredResources { .. } => CheckId::RequiredResources,
            CheckParams::DisallowAnonymous => CheckId::DisallowAnonymous,
            CheckParams::ReplicaLimits { .. } => CheckId::ReplicaLimits,
            CheckParams::RequiredProbes { .. } => CheckId::RequiredProbes,
            CheckParams::PspCapabilities { .. } => CheckId::PspCapabilities,
            CheckParams::PspHostNamespaces => CheckId::PspHostNamespaces,
        }
    }
}

struct Params<'a> {
    constraint: &'a str,
    values: &'a serde_json::Map<String, Value>,
}

impl Params<'_> {
    fn err(&self, param: &str, message: impl Into<String>) -> ConstraintError {
        ConstraintError::InvalidParameter {
            constraint: self.constraint.to_string(),
            parameter: param.to_string(),
            message: message.into(),
        }
    }

    fn strings(&self, name: &str) -> Result<Vec<String>, ConstraintError> {
        match self.values.get(name) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| self.err(name, format!("expected a string, got {v}")))
                })
                .collect(),
            Some(v) => Err(self.err(name, format!("expected a list of strings, got {v}"))),
        }
    }

    fn quantity(&self, name: &str, kind: ResourceKind) -> Result<Option<Quantity>, ConstraintError> {
        let text = match self.values.get(name) {
            None => return Ok(None),
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(v) => return Err(self.err(name, format!("expected a quantity, got {v}"))),
        };
        parse_quantity(&text, kind)
            .map(Some)
            .map_err(|e| self.err(name, e.to_string()))
    }

    fn number_text(&self, name: &str) -> Result<Option<String>, ConstraintError> {
        match self.values.get(name) {
            None => Ok(None),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(self.err(name, format!("expected a number, got {v}"))),
        }
    }

    fn ranges(&self, name: &str) -> Result<Vec<ReplicaRange>, ConstraintError> {
        let Some(value) = self.values.get(name) else {
            return Ok(Vec::new());
        };
        let items = value
            .as_array()
            .ok_or_else(|| self.err(name, format!("expected a list of ranges, got {value}")))?;
        items
            .iter()
            .map(|item| {
                let bound = |keys: &[&str]| -> Result<u32, ConstraintError> {
                    let v = keys
                        .iter()
                        .find_map(|k| item.get(*k))
                        .ok_or_else(|| self.err(name, format!("range {item} lacks {}", keys[0])))?;
                    v.as_u64()
                        .and_then(|n| u32::try_from(n).ok())
                        .ok_or_else(|| self.err(name, format!("range bound {v} is not a non-negative integer")))
                };
                let min = bound(&["min_replicas", "minReplicas", "min"])?;
                let max = bound(&["max_replicas", "maxReplicas", "max"])?;
                if min > max {
                    return Err(self.err(name, format!("range {min}..{max} is empty")));
                }
                Ok(ReplicaRange { min, max })
            })
            .collect()
    }
}

fn resource_kinds(p: &Params<'_>, name: &str) -> Result<Vec<ResourceKind>, ConstraintError> {
    p.strings(name)?
        .iter()
        .map(|s| {
            ResourceKind::from_name(s)
                .ok_or_else(|| p.err(name, format!("unsupported resource {s:?}; expected cpu or memory")))
        })
        .collect()
}

fn json_type_ok(ty: ParamType, v: &Value) -> bool {
    match ty {
        ParamType::StringList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        ParamType::Quantity | ParamType::Number => v.is_string() || v.is_number(),
        ParamType::RangeList => v.as_array().is_some_and(|a| a.iter().all(Value::is_object)),
        ParamType::String => v.is_string(),
    }
}

impl ConstraintTemplate {
    /// Checks `parameters` against the schema and converts them to typed form.
    pub fn bind(&self, constraint: &str, parameters: &serde_json::Map<String, Value>) -> Result<CheckParams, ConstraintError> {
        let p = Params {
            constraint,
            values: parameters,
        };
        for key in parameters.keys() {
            if !self.parameter_schema.contains_key(key.as_str()) {
                return Err(p.err(key, format!("not a parameter of template {}", self.name)));
            }
        }
        for (name, spec) in &self.parameter_schema {
            match parameters.get(*name) {
                None if spec.required => return Err(p.err(name, "required parameter is missing")),
                Some(v) if !json_type_ok(spec.ty, v) => {
                    return Err(p.err(name, format!("expected {}, got {v}", spec.ty)))
                }
                _ => {}
            }
        }
        Ok(match self.check {
            CheckId::AllowedRepos => CheckParams::AllowedRepos {
                repos: p.strings("repos")?,
            },
            CheckId::ContainerLimits => CheckParams::ContainerLimits {
                cpu: p.quantity("cpu", ResourceKind::Cpu)?,
                memory: p.quantity("memory", ResourceKind::Memory)?,
            },
            CheckId::ContainerRequests => CheckParams::ContainerRequests {
                cpu: p.quantity("cpu", ResourceKind::Cpu)?,
                memory: p.quantity("memory", ResourceKind::Memory)?,
            },
            CheckId::ContainerRatios => {
                let text = p.number_text("ratio")?.unwrap_or_default();
                let ratio = Ratio::parse(&text)
                    .ok_or_else(|| p.err("ratio", format!("{text:?} is not a non-negative decimal")))?;
                CheckParams::ContainerRatios { ratio }
            }
            CheckId::RequiredResources => CheckParams::RequiredResources {
                limits: resource_kinds(&p, "limits")?,
                requests: resource_kinds(&p, "requests")?,
            },
            CheckId::DisallowAnonymous => CheckParams::DisallowAnonymous,
            CheckId::ReplicaLimits => CheckParams::ReplicaLimits {
                ranges: p.ranges("ranges")?,
            },
            CheckId::RequiredProbes => CheckParams::RequiredProbes {
                probes: p
                    .strings("probes")?
                    .iter()
                    .map(|s| match s.as_str() {
                        "readinessProbe" => Ok(ProbeKind::Readiness),
                        "livenessProbe" => Ok(ProbeKind::Liveness),
                        other => Err(p.err("probes", format!("unknown probe {other:?}"))),
                    })
                    .collect::<Result<_, _>>()?,
            },
            CheckId::PspCapabilities => CheckParams::PspCapabilities {
                allowed: p.strings("allowedCapabilities")?,
                required_drop: p.strings("requiredDropCapabilities")?,
            },
            CheckId::PspHostNamespaces => CheckParams::PspHostNamespaces,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn bind(template: &str, params: Value) -> Result<CheckParams, ConstraintError> {
        let reg = TemplateRegistry::default();
        reg.get(template).unwrap().bind("c", params.as_object().unwrap())
    }

    #[test]
    fn library_has_ten_templates() {
        assert_eq!(TemplateRegistry::default().names().count(), 10);
        assert!(TemplateRegistry::default().get("K8sAllowedRepos").is_some());
    }

    #[test]
    fn required_and_typed_parameters() {
        assert!(matches!(bind("k8sallowedrepos", json!({})), Err(ConstraintError::InvalidParameter { .. })));
        assert!(bind("k8sallowedrepos", json!({"repos": "x"})).is_err());
        assert!(bind("k8sallowedrepos", json!({"repos": [1]})).is_err());
        assert!(bind("k8sallowedrepos", json!({"repos": ["a"], "extra": 1})).is_err());
        assert_eq!(
            bind("k8sallowedrepos", json!({"repos": ["a"]})).unwrap(),
            CheckParams::AllowedRepos { repos: vec!["a".into()] }
        );
    }

    #[test]
    fn quantity_parameters_use_resource_units() {
        let p = bind("k8scontainerlimits", json!({"cpu": "1500m", "memory": "1Gi"})).unwrap();
        assert_eq!(
            p,
            CheckParams::ContainerLimits {
                cpu: Some(Quantity::millicores(1500)),
                memory: Some(Quantity::bytes(1 << 30))
            }
        );
        assert!(bind("k8scontainerlimits", json!({"cpu": "1Gi"})).is_err());
    }

    #[test]
    fn ranges_validate_bounds() {
        let p = bind("k8sreplicalimits", json!({"ranges": [{"min_replicas": 1, "max_replicas": 10}]})).unwrap();
        assert_eq!(p, CheckParams::ReplicaLimits { ranges: vec![ReplicaRange { min: 1, max: 10 }] });
        assert!(bind("k8sreplicalimits", json!({"ranges": [{"min_replicas": 5, "max_replicas": 1}]})).is_err());
        assert!(bind("k8sreplicalimits", json!({"ranges": [{"min_replicas": -1, "max_replicas": 1}]})).is_err());
    }

    #[test]
    fn ratio_is_exact() {
        let r = Ratio::parse("1.5").unwrap();
        assert_eq!((r.numerator, r.denominator), (15, 10));
        assert!(r.admits(1500, 1000));
        assert!(!r.admits(1501, 1000));
        assert_eq!(r.to_string(), "1.5");
        assert_eq!(Ratio::parse("2").unwrap().to_string(), "2");
        assert!(Ratio::parse("-1").is_none());
        assert!(Ratio::parse("x").is_none());
        assert!(bind("k8scontainerratios", json!({"ratio": 2})).is_ok());
        assert!(bind("k8scontainerratios", json!({"ratio": "2.5"})).is_ok());
        assert!(bind("k8scontainerratios", json!({"ratio": "two"})).is_err());
    }

    #[test]
    fn probe_names_are_checked() {
        assert!(bind("k8srequiredprobes", json!({"probes": ["readinessProbe", "livenessProbe"]})).is_ok());
        assert!(bind("k8srequiredprobes", json!({"probes": ["startupProbe"]})).is_err());
    }
}
