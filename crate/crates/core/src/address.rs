use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Managed,
    Data,
}

/// Identifies one resource or data block: `type.name`, or `data.type.name`.
///
/// Ordering is lexicographic on the canonical text, which is the tie-break
/// order used everywhere plans and graphs need determinism.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResourceAddress {
    pub category: Category,
    pub type_name: String,
    pub name: String,
}

impl ResourceAddress {
    pub fn managed(type_name: impl Into<String>, name: impl Into<String>) -> Self {
        ResourceAddress {
            category: Category::Managed,
            type_name: type_name.into(),
            name: name.into(),
        }
    }

    pub fn data(type_name: impl Into<String>, name: impl Into<String>) -> Self {
        ResourceAddress {
            category: Category::Data,
            type_name: type_name.into(),
            name: name.into(),
        }
    }

    pub fn is_data(&self) -> bool {
        self.category == Category::Data
    }

    /// The provider owning this type: the text before the first underscore.
    pub fn provider_name(&self) -> &str {
        provider_prefix(&self.type_name)
    }
}

pub fn provider_prefix(type_name: &str) -> &str {
    type_name.split('_').next().unwrap_or(type_name)
}

/// Whether `s` is a valid block label / identifier.
pub fn is_valid_label(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl fmt::Display for ResourceAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.category {
            Category::Managed => write!(f, "{}.{}", self.type_name, self.name),
            Category::Data => write!(f, "data.{}.{}", self.type_name, self.name),
        }
    }
}

impl Ord for ResourceAddress {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for ResourceAddress {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid resource address `{0}`")]
pub struct AddressParseError(pub String);

impl FromStr for ResourceAddress {
    type Err = AddressParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('.').collect();
        let addr = match parts.as_slice() {
            ["data", t, n] => ResourceAddress::data(*t, *n),
            [t, n] => ResourceAddress::managed(*t, *n),
            _ => return Err(AddressParseError(s.to_string())),
        };
        if is_valid_label(&addr.type_name) && is_valid_label(&addr.name) {
            Ok(addr)
        } else {
            Err(AddressParseError(s.to_string()))
        }
    }
}

impl Serialize for ResourceAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourceAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
