use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use super::ModelError;

/// Label key set on every namespace so selectors can address a namespace by name.
pub const NAMESPACE_NAME_LABEL: &str = "kubernetes.io/metadata.name";

/// Validated string-to-string label map.
///
/// Keys are non-empty and neither keys nor values contain whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct LabelMap(BTreeMap<String, String>);

impl LabelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        key: impl Into<String>,
        value: impl Into<String>,
    ) -> Result<(), ModelError> {
        let (key, value) = (key.into(), value.into());
        check_label(&key, &value)?;
        self.0.insert(key, value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_label(key: &str, value: &str) -> Result<(), ModelError> {
    if key.is_empty() || key.chars().any(char::is_whitespace) {
        return Err(ModelError::InvalidLabel(format!("invalid label key {key:?}")));
    }
    if value.chars().any(char::is_whitespace) {
        return Err(ModelError::InvalidLabel(format!(
            "invalid value {value:?} for label {key:?}"
        )));
    }
    Ok(())
}

impl TryFrom<BTreeMap<String, String>> for LabelMap {
    type Error = ModelError;

    fn try_from(map: BTreeMap<String, String>) -> Result<Self, Self::Error> {
        for (k, v) in &map {
            check_label(k, v)?;
        }
        Ok(Self(map))
    }
}

impl<'de> Deserialize<'de> for LabelMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(deserializer)?;
        LabelMap::try_from(raw).map_err(serde::de::Error::custom)
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for LabelMap {
    /// Panics on invalid labels; meant for literals in code and tests.
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        let mut map = LabelMap::new();
        for (k, v) in iter {
            map.insert(k, v).expect("invalid label literal");
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operator {
    In,
    NotIn,
    Exists,
    DoesNotExist,
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Operator::In => "In",
            Operator::NotIn => "NotIn",
            Operator::Exists => "Exists",
            Operator::DoesNotExist => "DoesNotExist",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Requirement {
    pub key: String,
    pub operator: Operator,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
}

impl Requirement {
    pub fn new(
        key: impl Into<String>,
        operator: Operator,
        values: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, ModelError> {
        let req = Self {
            key: key.into(),
            operator,
            values: values.into_iter().map(Into::into).collect(),
        };
        req.validate()?;
        Ok(req)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.key.is_empty() {
            return Err(ModelError::InvalidSelector("empty requirement key".into()));
        }
        match (self.operator, self.values.is_empty()) {
            (Operator::In | Operator::NotIn, true) => Err(ModelError::InvalidSelector(format!(
                "operator {} on key {:?} requires values",
                self.operator, self.key
            ))),
            (Operator::Exists | Operator::DoesNotExist, false) => {
                Err(ModelError::InvalidSelector(format!(
                    "operator {} on key {:?} takes no values",
                    self.operator, self.key
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn matches(&self, labels: &LabelMap) -> bool {
        let value = labels.get(&self.key);
        match self.operator {
            Operator::In => value.is_some_and(|v| self.values.iter().any(|x| x == v)),
            Operator::NotIn => value.is_none_or(|v| self.values.iter().all(|x| x != v)),
            Operator::Exists => value.is_some(),
            Operator::DoesNotExist => value.is_none(),
        }
    }
}

/// A label selector: equality requirements plus set-based expressions.
///
/// The empty selector matches every label set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Selector {
    #[serde(skip_serializing_if = "LabelMap::is_empty")]
    pub match_labels: LabelMap,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub match_expressions: Vec<Requirement>,
}

impl Selector {
    pub fn everything() -> Self {
        Self::default()
    }

    pub fn from_labels(labels: LabelMap) -> Self {
        Self {
            match_labels: labels,
            match_expressions: Vec::new(),
        }
    }

    pub fn new(match_labels: LabelMap, match_expressions: Vec<Requirement>) -> Result<Self, ModelError> {
        for req in &match_expressions {
            req.validate()?;
        }
        Ok(Self {
            match_labels,
            match_expressions,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.match_labels.is_empty() && self.match_expressions.is_empty()
    }

    pub fn matches(&self, labels: &LabelMap) -> bool {
        selector_matches(self, labels)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(rename_all = "camelCase")]
        struct Raw {
            #[serde(default)]
            match_labels: Option<LabelMap>,
            #[serde(default)]
            match_expressions: Option<Vec<Requirement>>,
        }
        let raw = Raw::deserialize(deserializer)?;
        Selector::new(
            raw.match_labels.unwrap_or_default(),
            raw.match_expressions.unwrap_or_default(),
        )
        .map_err(serde::de::Error::custom)
    }
}

/// True iff every `matchLabels` entry is present with an equal value and
/// every expression holds.
pub fn selector_matches(selector: &Selector, labels: &LabelMap) -> bool {
    selector
        .match_labels
        .iter()
        .all(|(k, v)| labels.get(k) == Some(v))
        && selector.match_expressions.iter().all(|r| r.matches(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pairs: &[(&str, &str)]) -> LabelMap {
        pairs.iter().copied().collect()
    }

    #[test]
    fn empty_selector_matches_anything() {
        assert!(Selector::everything().matches(&LabelMap::new()));
        assert!(Selector::everything().matches(&labels(&[("a", "b")])));
    }

    #[test]
    fn match_labels_is_subset_match() {
        let sel = Selector::from_labels(labels(&[("app", "crabserver")]));
        assert!(sel.matches(&labels(&[("app", "crabserver"), ("tier", "backend")])));
        assert!(!sel.matches(&labels(&[("app", "dbs")])));
        assert!(!sel.matches(&labels(&[("tier", "backend")])));
    }

    #[test]
    fn not_in_excludes_listed_value() {
        let sel = Selector::new(
            LabelMap::new(),
            vec![Requirement::new("env", Operator::NotIn, ["prod"]).unwrap()],
        )
        .unwrap();
        assert!(!sel.matches(&labels(&[("env", "prod")])));
        assert!(sel.matches(&labels(&[("env", "test")])));
        // absent key satisfies NotIn
        assert!(sel.matches(&LabelMap::new()));
    }

    #[test]
    fn exists_and_does_not_exist() {
        let exists = Requirement::new("app", Operator::Exists, Vec::<String>::new()).unwrap();
        let absent = Requirement::new("app", Operator::DoesNotExist, Vec::<String>::new()).unwrap();
        let l = labels(&[("app", "x")]);
        assert!(exists.matches(&l));
        assert!(!absent.matches(&l));
        assert!(absent.matches(&LabelMap::new()));
    }

    #[test]
    fn operator_value_arity_is_enforced() {
        assert!(Requirement::new("k", Operator::In, Vec::<String>::new()).is_err());
        assert!(Requirement::new("k", Operator::Exists, ["v"]).is_err());
        let json = r#"{"matchExpressions":[{"key":"k","operator":"NotIn","values":[]}]}"#;
        assert!(serde_json::from_str::<Selector>(json).is_err());
    }

    #[test]
    fn label_validation() {
        let mut l = LabelMap::new();
        assert!(l.insert("", "x").is_err());
        assert!(l.insert("a b", "x").is_err());
        assert!(l.insert("a", "x y").is_err());
        assert!(l.insert("a", "").is_ok());
    }
}
