//! Identifier newtypes and small enums shared across modules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
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

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(ProjectId);
string_id!(
    /// A data owner, e.g. a statistics office or a biobank.
    OwnerId
);
string_id!(EnvId);
string_id!(
    /// Any addressable network endpoint: VMs, the fileserver, management
    /// services and remote-site gateways.
    HostId
);
string_id!(JobId);
string_id!(NodeId);

/// Who an environment (and its VMs) belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tenant {
    Project(ProjectId),
    Owner(OwnerId),
    Platform,
}

impl fmt::Display for Tenant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tenant::Project(p) => write!(f, "project:{p}"),
            Tenant::Owner(o) => write!(f, "owner:{o}"),
            Tenant::Platform => f.write_str("platform"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Work,
    Compute,
    Management,
    DataManager,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Work => "work",
            EnvKind::Compute => "compute",
            EnvKind::Management => "management",
            EnvKind::DataManager => "data-manager",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "work" => Ok(EnvKind::Work),
            "compute" => Ok(EnvKind::Compute),
            "management" | "mgmt" => Ok(EnvKind::Management),
            "data-manager" | "datamanager" | "dm" => Ok(EnvKind::DataManager),
            _ => Err(format!("unknown environment kind `{s}`")),
        }
    }
}

/// Environment lifecycle phase. Declaration order is lifecycle order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Requested,
    Allocated,
    Initializing,
    Configured,
    LockedDown,
    Running,
    Destroying,
    Destroyed,
}

impl Phase {
    /// The successor reachable through a normal phase advance.
    pub fn next(self) -> Option<Phase> {
        use Phase::*;
        match self {
            Requested => Some(Allocated),
            Allocated => Some(Initializing),
            Initializing => Some(Configured),
            Configured => Some(LockedDown),
            LockedDown => Some(Running),
            Destroying => Some(Destroyed),
            Running | Destroyed => None,
        }
    }

    pub fn is_active(self) -> bool {
        self != Phase::Destroyed
    }

    /// Whether management-network access is still permitted in this phase.
    pub fn pre_lockdown(self) -> bool {
        self < Phase::LockedDown
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Requested => "requested",
            Phase::Allocated => "allocated",
            Phase::Initializing => "initializing",
            Phase::Configured => "configured",
            Phase::LockedDown => "locked-down",
            Phase::Running => "running",
            Phase::Destroying => "destroying",
            Phase::Destroyed => "destroyed",
        };
        f.write_str(s)
    }
}
