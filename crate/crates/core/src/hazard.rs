//! The six severe-event categories forecast jointly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_HAZARDS: usize = 6;

/// Per-hazard event counts, indexed by [`Hazard::index`].
pub type HazardCounts = [u32; NUM_HAZARDS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hazard {
    ExtremeCold,
    Flood,
    Frost,
    Hail,
    Heat,
    ExtremeRain,
}

impl Hazard {
    pub const ALL: [Hazard; NUM_HAZARDS] = [
        Hazard::ExtremeCold,
        Hazard::Flood,
        Hazard::Frost,
        Hazard::Hail,
        Hazard::Heat,
        Hazard::ExtremeRain,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Hazard> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Hazard::ExtremeCold => "ExtremeCold",
            Hazard::Flood => "Flood",
            Hazard::Frost => "Frost",
            Hazard::Hail => "Hail",
            Hazard::Heat => "Heat",
            Hazard::ExtremeRain => "ExtremeRain",
        }
    }

    /// Column name used for this hazard's target in table CSVs.
    pub fn target_column(self) -> String {
        format!("target_{}", self.name())
    }
}

impl fmt::Display for Hazard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Hazard {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|h| h.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown hazard type {s:?}")))
    }
}
