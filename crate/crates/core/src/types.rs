//! Shared identifier and unit types used across the simulator.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Length of one simulated day in virtual seconds.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Day bucket for a virtual timestamp.
pub fn day_index(t: f64) -> u32 {
    if t <= 0.0 {
        0
    } else {
        (t / SECONDS_PER_DAY) as u32
    }
}

/// Opaque catalog file identifier, assigned in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FileId(pub u64);

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub String);

impl StationId {
    pub fn new(s: impl Into<String>) -> Self {
        StationId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MssId(pub String);

impl MssId {
    pub fn new(s: impl Into<String>) -> Self {
        MssId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MssId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Accounting group a file or project belongs to (drives cache fair share).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub String);

impl GroupId {
    pub fn new(s: impl Into<String>) -> Self {
        GroupId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DatasetId(pub u64);

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProjectId(pub u64);

impl fmt::Display for ProjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Consumer slot index within one project.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConsumerId(pub u32);

impl fmt::Display for ConsumerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Data tier of a catalog file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Raw,
    Reconstructed,
    Secondary,
    Montecarlo,
}

impl Tier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::Raw => "raw",
            Tier::Reconstructed => "reconstructed",
            Tier::Secondary => "secondary",
            Tier::Montecarlo => "montecarlo",
        }
    }

    pub fn parse(s: &str) -> Option<Tier> {
        match s {
            "raw" => Some(Tier::Raw),
            "reconstructed" => Some(Tier::Reconstructed),
            "secondary" => Some(Tier::Secondary),
            "montecarlo" => Some(Tier::Montecarlo),
            _ => None,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A node in the transfer/routing graph: a station cache domain or a mass
/// storage system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeId {
    Station(StationId),
    Mss(MssId),
}

impl NodeId {
    pub fn station(s: impl Into<String>) -> Self {
        NodeId::Station(StationId::new(s))
    }

    pub fn mss(s: impl Into<String>) -> Self {
        NodeId::Mss(MssId::new(s))
    }

    pub fn id_str(&self) -> &str {
        match self {
            NodeId::Station(s) => s.as_str(),
            NodeId::Mss(m) => m.as_str(),
        }
    }

    pub fn is_mss(&self) -> bool {
        matches!(self, NodeId::Mss(_))
    }

    pub fn as_station(&self) -> Option<&StationId> {
        match self {
            NodeId::Station(s) => Some(s),
            NodeId::Mss(_) => None,
        }
    }
}

// Ordered by rendered id so lexicographic tie-breaks match what operators
// see in logs; variant only disambiguates a station/mss name collision.
impl Ord for NodeId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.id_str()
            .cmp(other.id_str())
            .then_with(|| self.variant_rank().cmp(&other.variant_rank()))
    }
}

impl PartialOrd for NodeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NodeId {
    fn variant_rank(&self) -> u8 {
        match self {
            NodeId::Station(_) => 0,
            NodeId::Mss(_) => 1,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id_str())
    }
}

/// Undirected link endpoints, normalized so (a,b) == (b,a).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkKey {
    pub a: NodeId,
    pub b: NodeId,
}

impl LinkKey {
    pub fn new(x: NodeId, y: NodeId) -> Self {
        if x <= y {
            LinkKey { a: x, b: y }
        } else {
            LinkKey { a: y, b: x }
        }
    }

    pub fn touches(&self, n: &NodeId) -> bool {
        &self.a == n || &self.b == n
    }
}

impl fmt::Display for LinkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}--{}", self.a, self.b)
    }
}
