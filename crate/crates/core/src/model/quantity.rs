//! Exact resource quantities.
//!
//! CPU is held in millicores and memory in bytes. Text such as `"500m"`,
//! `"2Mi"` or `"1G"` is parsed to an integer so that limit comparisons never
//! go through floating point.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Cpu,
    Memory,
}

impl ResourceKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cpu" => Some(Self::Cpu),
            "memory" => Some(Self::Memory),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cpu => "cpu",
            Self::Memory => "memory",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuantityError {
    #[error("empty {kind} quantity")]
    Empty { kind: ResourceKind },
    #[error("negative {kind} quantity {text:?}")]
    Negative { kind: ResourceKind, text: String },
    #[error("malformed {kind} quantity {text:?}: bad number {token:?}")]
    Malformed {
        kind: ResourceKind,
        text: String,
        token: String,
    },
    #[error("unknown {kind} suffix {token:?} in {text:?}")]
    UnknownSuffix {
        kind: ResourceKind,
        text: String,
        token: String,
    },
    #[error("{kind} quantity {text:?} is finer than one base unit")]
    Fractional { kind: ResourceKind, text: String },
    #[error("{kind} quantity {text:?} overflows")]
    Overflow { kind: ResourceKind, text: String },
}

/// A non-negative resource amount in base units (millicores or bytes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quantity {
    kind: ResourceKind,
    value: u64,
}

impl Quantity {
    pub fn new(kind: ResourceKind, value: u64) -> Self {
        Self { kind, value }
    }

    pub fn millicores(value: u64) -> Self {
        Self::new(ResourceKind::Cpu, value)
    }

    pub fn bytes(value: u64) -> Self {
        Self::new(ResourceKind::Memory, value)
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    /// Value in base units.
    pub fn value(&self) -> u64 {
        self.value
    }

    /// Canonical text form: `"<n>m"` for cpu, plain bytes for memory.
    pub fn to_canonical(&self) -> String {
        match self.kind {
            ResourceKind::Cpu => format!("{}m", self.value),
            ResourceKind::Memory => self.value.to_string(),
        }
    }
}

impl PartialOrd for Quantity {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        (self.kind == other.kind).then(|| self.value.cmp(&other.value))
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_canonical())
    }
}

fn multiplier(kind: ResourceKind, suffix: &str) -> Option<u64> {
    match (kind, suffix) {
        (ResourceKind::Cpu, "") => Some(1000),
        (ResourceKind::Cpu, "m") => Some(1),
        (ResourceKind::Memory, "") => Some(1),
        (ResourceKind::Memory, "K") => Some(1000),
        (ResourceKind::Memory, "M") => Some(1000_u64.pow(2)),
        (ResourceKind::Memory, "G") => Some(1000_u64.pow(3)),
        (ResourceKind::Memory, "Ki") => Some(1 << 10),
        (ResourceKind::Memory, "Mi") => Some(1 << 20),
        (ResourceKind::Memory, "Gi") => Some(1 << 30),
        _ => None,
    }
}

/// Parses `<number><suffix>` into exact base units.
///
/// A decimal fraction is accepted only when it lands on a whole base unit,
/// so `"0.5"` cpu is 500 millicores but `"0.0005"` is rejected.
pub fn parse_quantity(text: &str, kind: ResourceKind) -> Result<Quantity, QuantityError> {
    let text_owned = || text.to_string();
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(QuantityError::Empty { kind });
    }
    if trimmed.starts_with('-') {
        return Err(QuantityError::Negative {
            kind,
            text: text_owned(),
        });
    }
    let split = trimmed
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '+'))
        .unwrap_or(trimmed.len());
    let (number, suffix) = trimmed.split_at(split);
    let malformed = || QuantityError::Malformed {
        kind,
        text: text_owned(),
        token: number.to_string(),
    };
    let number = number.strip_prefix('+').unwrap_or(number);
    let (int_part, frac_part) = match number.split_once('.') {
        Some((i, f)) => (i, f),
        None => (number, ""),
    };
    if int_part.is_empty() && frac_part.is_empty()
        || !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
        || number.ends_with('.')
    {
        return Err(malformed());
    }
    let mult = multiplier(kind, suffix).ok_or_else(|| QuantityError::UnknownSuffix {
        kind,
        text: text_owned(),
        token: suffix.to_string(),
    })?;
    let overflow = || QuantityError::Overflow {
        kind,
        text: text_owned(),
    };

    // value = (int_part . frac_part) * mult, computed as digits * mult / 10^len(frac)
    let digits: String = format!("{int_part}{frac_part}");
    let digits = digits.trim_start_matches('0');
    let mantissa: u128 = if digits.is_empty() {
        0
    } else {
        digits.parse().map_err(|_| overflow())?
    };
    let scale = 10u128
        .checked_pow(frac_part.len() as u32)
        .ok_or_else(overflow)?;
    let scaled = mantissa.checked_mul(mult as u128).ok_or_else(overflow)?;
    if scaled % scale != 0 {
        return Err(QuantityError::Fractional {
            kind,
            text: text_owned(),
        });
    }
    let value = u64::try_from(scaled / scale).map_err(|_| overflow())?;
    Ok(Quantity { kind, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cpu(s: &str) -> u64 {
        parse_quantity(s, ResourceKind::Cpu).unwrap().value()
    }

    fn mem(s: &str) -> u64 {
        parse_quantity(s, ResourceKind::Memory).unwrap().value()
    }

    #[test]
    fn unit_definitions() {
        assert_eq!(cpu("500m"), 500);
        assert_eq!(cpu("1"), 1000);
        assert_eq!(cpu("0.5"), 500);
        assert_eq!(mem("2Mi"), 2 * 1024 * 1024);
        assert_eq!(mem("1G"), 1_000_000_000);
        assert_eq!(mem("3Ki"), 3072);
        assert_eq!(mem("7K"), 7000);
        assert_eq!(mem("1Gi"), 1 << 30);
        assert_eq!(mem("128"), 128);
    }

    #[test]
    fn errors_name_offending_token() {
        let err = parse_quantity("5Ti", ResourceKind::Memory).unwrap_err();
        assert!(matches!(&err, QuantityError::UnknownSuffix { token, .. } if token == "Ti"));
        assert!(err.to_string().contains("Ti"));

        let err = parse_quantity("2Mi", ResourceKind::Cpu).unwrap_err();
        assert!(matches!(err, QuantityError::UnknownSuffix { .. }));

        let err = parse_quantity("1.2.3", ResourceKind::Cpu).unwrap_err();
        assert!(matches!(&err, QuantityError::Malformed { token, .. } if token == "1.2.3"));

        assert!(matches!(
            parse_quantity("-1", ResourceKind::Cpu),
            Err(QuantityError::Negative { .. })
        ));
        assert!(matches!(
            parse_quantity("", ResourceKind::Cpu),
            Err(QuantityError::Empty { .. })
        ));
        assert!(matches!(
            parse_quantity("m", ResourceKind::Cpu),
            Err(QuantityError::Malformed { .. })
        ));
        assert!(matches!(
            parse_quantity("0.0005", ResourceKind::Cpu),
            Err(QuantityError::Fractional { .. })
        ));
        assert!(matches!(
            parse_quantity("99999999999999999999Gi", ResourceKind::Memory),
            Err(QuantityError::Overflow { .. })
        ));
    }

    #[test]
    fn cross_kind_comparison_is_undefined() {
        assert_eq!(Quantity::millicores(1).partial_cmp(&Quantity::bytes(1)), None);
        assert!(Quantity::millicores(1000) < Quantity::millicores(1500));
    }

    fn memory_text() -> impl Strategy<Value = String> {
        (0u64..1_000_000, prop::sample::select(vec!["", "K", "M", "G", "Ki", "Mi", "Gi"]))
            .prop_map(|(n, s)| format!("{n}{s}"))
    }

    proptest! {
        #[test]
        fn canonical_form_round_trips(text in memory_text()) {
            let q = parse_quantity(&text, ResourceKind::Memory).unwrap();
            let again = parse_quantity(&q.to_canonical(), ResourceKind::Memory).unwrap();
            prop_assert_eq!(q, again);
        }

        #[test]
        fn cpu_round_trips(n in 0u64..10_000_000, milli in any::<bool>()) {
            let text = if milli { format!("{n}m") } else { n.to_string() };
            let q = parse_quantity(&text, ResourceKind::Cpu).unwrap();
            prop_assert_eq!(parse_quantity(&q.to_canonical(), ResourceKind::Cpu).unwrap(), q);
        }

        #[test]
        fn monotone_within_suffix(a in 0u64..1_000_000, b in 0u64..1_000_000,
                                  s in prop::sample::select(vec!["", "K", "M", "G", "Ki", "Mi", "Gi"])) {
            prop_assume!(a < b);
            let qa = parse_quantity(&format!("{a}{s}"), ResourceKind::Memory).unwrap();
            let qb = parse_quantity(&format!("{b}{s}"), ResourceKind::Memory).unwrap();
            prop_assert!(qa < qb);
        }
    }
}
