use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Number of anatomical region classes.
pub const NUM_REGIONS: usize = 14;

/// The 14 anatomical region classes. Discriminants are the stable integer
/// codes used in every file format and tensor layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum AnatomicalRegion {
    Clavicle = 0,
    Shoulder = 1,
    Skull = 2,
    Rib = 3,
    Elbow = 4,
    Knee = 5,
    Wrist = 6,
    Hand = 7,
    Foot = 8,
    Ankle = 9,
    PelvisHip = 10,
    CervicalSpine = 11,
    ThoracicSpine = 12,
    LumbarSpine = 13,
}

impl AnatomicalRegion {
    pub const ALL: [AnatomicalRegion; NUM_REGIONS] = [
        AnatomicalRegion::Clavicle,
        AnatomicalRegion::Shoulder,
        AnatomicalRegion::Skull,
        AnatomicalRegion::Rib,
        AnatomicalRegion::Elbow,
        AnatomicalRegion::Knee,
        AnatomicalRegion::Wrist,
        AnatomicalRegion::Hand,
        AnatomicalRegion::Foot,
        AnatomicalRegion::Ankle,
        AnatomicalRegion::PelvisHip,
        AnatomicalRegion::CervicalSpine,
        AnatomicalRegion::ThoracicSpine,
        AnatomicalRegion::LumbarSpine,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    /// Canonical lowercase name as used in manifests.
    pub fn name(self) -> &'static str {
        match self {
            AnatomicalRegion::Clavicle => "clavicle",
            AnatomicalRegion::Shoulder => "shoulder",
            AnatomicalRegion::Skull => "skull",
            AnatomicalRegion::Rib => "rib",
            AnatomicalRegion::Elbow => "elbow",
            AnatomicalRegion::Knee => "knee",
            AnatomicalRegion::Wrist => "wrist",
            AnatomicalRegion::Hand => "hand",
            AnatomicalRegion::Foot => "foot",
            AnatomicalRegion::Ankle => "ankle",
            AnatomicalRegion::PelvisHip => "pelvis_hip",
            AnatomicalRegion::CervicalSpine => "cervical_spine",
            AnatomicalRegion::ThoracicSpine => "thoracic_spine",
            AnatomicalRegion::LumbarSpine => "lumbar_spine",
        }
    }
}

impl fmt::Display for AnatomicalRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnatomicalRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}
