//! Opaque identifiers. Repository-issued ids are derived from the sequence
//! number of the log entry that created the object, so replaying a log
//! always reproduces the same ids.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub(crate) fn from_seq(seq: u64) -> Self {
                Self(format!("{}-{}", $prefix, seq))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Identifies a registered actor.
    ActorId,
    "actor"
);
string_id!(
    /// Identifies a decision problem, which is also its workspace.
    DpId,
    "dp"
);
string_id!(AnnotationId, "ann");
string_id!(
    /// Stable lineage identifier of a knowledge resource.
    KrId,
    "kr"
);
string_id!(SessionId, "session");

/// A document's resource identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocUri(String);

impl DocUri {
    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocUri {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Points at one version of one knowledge resource lineage.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KrRef {
    pub kr_id: KrId,
    pub version: u32,
}

impl KrRef {
    pub fn new(kr_id: KrId, version: u32) -> Self {
        Self { kr_id, version }
    }
}

impl fmt::Display for KrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kr_id, self.version)
    }
}
