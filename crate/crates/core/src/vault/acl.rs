use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::VaultError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Create,
    Read,
    Update,
    Delete,
    List,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Create,
        Capability::Read,
        Capability::Update,
        Capability::Delete,
        Capability::List,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Create => "create",
            Capability::Read => "read",
            Capability::Update => "update",
            Capability::Delete => "delete",
            Capability::List => "list",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Capability {
    type Err = VaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Capability::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| VaultError::Invalid(format!("unknown capability {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub path: String,
    pub capabilities: BTreeSet<Capability>,
}

/// Named set of path rules. `rate_limit` is accepted and stored but not
/// enforced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyDoc {
    pub name: String,
    pub rules: Vec<PolicyRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit: Option<String>,
}

impl PolicyDoc {
    pub fn new(name: impl Into<String>, rules: Vec<PolicyRule>) -> Result<Self, VaultError> {
        let doc = PolicyDoc { name: name.into(), rules, rate_limit: None };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), VaultError> {
        validate_name(&self.name)?;
        if self.rules.is_empty() {
            return Err(VaultError::Invalid(format!("policy {:?} has no rules", self.name)));
        }
        for rule in &self.rules {
            let segments: Vec<&str> = rule.path.split('/').collect();
            if segments.iter().any(|s| s.is_empty()) {
                return Err(VaultError::Invalid(format!("policy path {:?} has an empty segment", rule.path)));
            }
            if segments.len() < 2 || segments[0].contains('*') {
                return Err(VaultError::Invalid(format!(
                    "policy path {:?} must start with a literal mount",
                    rule.path
                )));
            }
            if rule.capabilities.is_empty() {
                return Err(VaultError::Invalid(format!("policy path {:?} grants nothing", rule.path)));
            }
        }
        Ok(())
    }

    pub fn allows(&self, capability: Capability, path: &str) -> bool {
        self.rules
            .iter()
            .any(|r| r.capabilities.contains(&capability) && glob_match(&r.path, path))
    }
}

pub(crate) fn validate_name(name: &str) -> Result<(), VaultError> {
    let ok = !name.is_empty()
        && name.len() <= 253
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(VaultError::Invalid(format!("invalid name {name:?}")))
    }
}

/// Matches `path` against a slash-separated pattern. Both must have the same
/// number of segments; inside a pattern segment `*` matches any run of
/// characters, so a lone `*` matches exactly one whole segment.
pub fn glob_match(pattern: &str, path: &str) -> bool {
    let mut pat = pattern.split('/');
    let mut segs = path.split('/');
    loop {
        match (pat.next(), segs.next()) {
            (None, None) => return true,
            (Some(p), Some(s)) if segment_match(p.as_bytes(), s.as_bytes()) => {}
            _ => return false,
        }
    }
}

fn segment_match(pattern: &[u8], text: &[u8]) -> bool {
    // Iterative wildcard match with single backtrack point.
    let (mut p, mut t) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pattern.len() && pattern[p] == b'*' {
            star = Some((p, t));
            p += 1;
        } else if p < pattern.len() && pattern[p] == text[t] {
            p += 1;
            t += 1;
        } else if let Some((sp, st)) = star {
            p = sp + 1;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|&c| c == b'*')
}

/// Checks a data path: non-empty segments, no wildcards, no dot segments.
pub(crate) fn validate_path(path: &str) -> Result<(), VaultError> {
    let ok = !path.is_empty()
        && path
            .split('/')
            .all(|s| !s.is_empty() && s != "." && s != ".." && !s.contains('*'));
    if ok {
        Ok(())
    } else {
        Err(VaultError::Invalid(format!("invalid path {path:?}")))
    }
}
