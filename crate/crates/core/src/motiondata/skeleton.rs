use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Body-part groups the skeleton is partitioned into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PartGroup {
    Pelvis,
    Torso,
    Legs,
    Arms,
    Head,
}

impl PartGroup {
    pub const ALL: [PartGroup; 5] = [
        PartGroup::Pelvis,
        PartGroup::Torso,
        PartGroup::Legs,
        PartGroup::Arms,
        PartGroup::Head,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn name(self) -> &'static str {
        match self {
            PartGroup::Pelvis => "pelvis",
            PartGroup::Torso => "torso",
            PartGroup::Legs => "legs",
            PartGroup::Arms => "arms",
            PartGroup::Head => "head",
        }
    }
}

/// A set of part groups, stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartSet(u8);

impl PartSet {
    pub const EMPTY: PartSet = PartSet(0);
    pub const FULL: PartSet = PartSet(0b1_1111);

    pub fn of(groups: &[PartGroup]) -> Self {
        PartSet(groups.iter().fold(0, |m, g| m | g.bit()))
    }

    pub fn contains(self, g: PartGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn is_superset_of(self, other: PartSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn union(self, other: PartSet) -> Self {
        PartSet(self.0 | other.0)
    }

    pub fn minus(self, other: PartSet) -> Self {
        PartSet(self.0 & !other.0)
    }

    pub fn intersects(self, other: PartSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn groups(self) -> impl Iterator<Item = PartGroup> {
        PartGroup::ALL.into_iter().filter(move |g| self.contains(*g))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::FULL.0 == 0).then_some(PartSet(bits))
    }
}

impl fmt::Debug for PartSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.groups().map(PartGroup::name)).finish()
    }
}

pub const JOINT_COUNT: usize = 22;
pub const ROOT_FEATURES: usize = 4;
pub const FEATURE_DIM: usize = ROOT_FEATURES + 3 * (JOINT_COUNT - 1);

/// Fixed 22-joint skeleton. Joint 0 is the pelvis (root).
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    names: Vec<&'static str>,
    groups: Vec<PartGroup>,
    rest: Vec<[f64; 3]>,
}

const JOINTS: [(&str, PartGroup, [f64; 3]); JOINT_COUNT] = [
    ("pelvis", PartGroup::Pelvis, [0.0, 0.0, 0.0]),
    ("spine1", PartGroup::Torso, [0.0, 0.10, 0.0]),
    ("spine2", PartGroup::Torso, [0.0, 0.22, 0.0]),
    ("spine3", PartGroup::Torso, [0.0, 0.36, 0.0]),
    ("neck", PartGroup::Torso, [0.0, 0.50, 0.0]),
    ("head", PartGroup::Head, [0.0, 0.62, 0.02]),
    ("l_hip", PartGroup::Legs, [0.09, -0.05, 0.0]),
    ("l_knee", PartGroup::Legs, [0.09, -0.45, 0.0]),
    ("l_ankle", PartGroup::Legs, [0.09, -0.85, 0.0]),
    ("l_foot", PartGroup::Legs, [0.09, -0.90, 0.12]),
    ("r_hip", PartGroup::Legs, [-0.09, -0.05, 0.0]),
    ("r_knee", PartGroup::Legs, [-0.09, -0.45, 0.0]),
    ("r_ankle", PartGroup::Legs, [-0.09, -0.85, 0.0]),
    ("r_foot", PartGroup::Legs, [-0.09, -0.90, 0.12]),
    ("l_collar", PartGroup::Arms, [0.07, 0.45, 0.0]),
    ("l_shoulder", PartGroup::Arms, [0.18, 0.46, 0.0]),
    ("l_elbow", PartGroup::Arms, [0.18, 0.18, 0.0]),
    ("l_wrist", PartGroup::Arms, [0.18, -0.07, 0.0]),
    ("r_collar", PartGroup::Arms, [-0.07, 0.45, 0.0]),
    ("r_shoulder", PartGroup::Arms, [-0.18, 0.46, 0.0]),
    ("r_elbow", PartGroup::Arms, [-0.18, 0.18, 0.0]),
    ("r_wrist", PartGroup::Arms, [-0.18, -0.07, 0.0]),
];

impl Default for Skeleton {
    fn default() -> Self {
        Self::standard()
    }
}

impl Skeleton {
    pub fn standard() -> Self {
        Self {
            names: JOINTS.iter().map(|j| j.0).collect(),
            groups: JOINTS.iter().map(|j| j.1).collect(),
            rest: JOINTS.iter().map(|j| j.2).collect(),
        }
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn feature_dim(&self) -> usize {
        ROOT_FEATURES + 3 * (self.joint_count() - 1)
    }

    pub fn joint_name(&self, j: usize) -> &'static str {
        self.names[j]
    }

    pub fn group_of(&self, j: usize) -> PartGroup {
        self.groups[j]
    }

    /// Rest-pose offset of joint `j` from the pelvis, in meters.
    pub fn rest_offset(&self, j: usize) -> [f64; 3] {
        self.rest[j]
    }

    pub fn joints_in(&self, group: PartGroup) -> Vec<usize> {
        (0..self.joint_count()).filter(|&j| self.groups[j] == group).collect()
    }

    /// Feature columns of joint `j >= 1`.
    pub fn joint_columns(&self, j: usize) -> Range<usize> {
        assert!(
            j >= 1 && j < self.joint_count(),
            "joint {j} has no local-position columns"
        );
        let start = ROOT_FEATURES + 3 * (j - 1);
        start..start + 3
    }

    /// Feature columns owned by a group, ascending. The pelvis owns root
    /// translation and heading.
    pub fn group_columns(&self, group: PartGroup) -> Vec<usize> {
        if group == PartGroup::Pelvis {
            return (0..ROOT_FEATURES).collect();
        }
        self.joints_in(group)
            .into_iter()
            .flat_map(|j| self.joint_columns(j))
            .collect()
    }

    /// Columns of every group in `parts`, ascending.
    pub fn columns_of(&self, parts: PartSet) -> Vec<usize> {
        let mut cols: Vec<usize> = parts.groups().flat_map(|g| self.group_columns(g)).collect();
        cols.sort_unstable();
        cols
    }
}
