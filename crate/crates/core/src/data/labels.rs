/// Group activity names, in index order.
pub const GROUP_LABELS: [&str; 8] = [
    "r_spike",
    "l_spike",
    "r_set",
    "l_set",
    "r_pass",
    "l_pass",
    "r_winpoint",
    "l_winpoint",
];

/// Individual action names, in index order.
pub const ACTION_LABELS: [&str; 9] = [
    "spiking", "blocking", "setting", "jumping", "digging", "standing", "falling", "waiting",
    "moving",
];

pub const NUM_JOINTS: usize = 16;

/// Keypoint order of every pose.
pub const JOINTS: [&str; NUM_JOINTS] = [
    "r_ankle",
    "r_knee",
    "r_hip",
    "l_hip",
    "l_knee",
    "l_ankle",
    "pelvis",
    "spine",
    "neck",
    "head",
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
];

pub const PELVIS: usize = 6;

/// Joint index seen at position `j` after a horizontal mirror.
pub const JOINT_MIRROR: [usize; NUM_JOINTS] =
    [5, 4, 3, 2, 1, 0, 6, 7, 8, 9, 15, 14, 13, 12, 11, 10];

/// Name ↔ index tables plus the left/right flip map.
#[derive(Debug, Clone, Copy, Default)]
pub struct LabelMaps;

impl LabelMaps {
    pub fn group_index(&self, name: &str) -> Option<usize> {
        GROUP_LABELS.iter().position(|&g| g == name)
    }

    pub fn group_name(&self, index: usize) -> Option<&'static str> {
        GROUP_LABELS.get(index).copied()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        ACTION_LABELS.iter().position(|&a| a == name)
    }

    pub fn action_name(&self, index: usize) -> Option<&'static str> {
        ACTION_LABELS.get(index).copied()
    }

    /// Swaps the `r_`/`l_` side of a group label.
    pub fn flip_group(&self, index: usize) -> usize {
        let name = GROUP_LABELS[index];
        let mirrored = match name.split_at(2) {
            ("r_", rest) => format!("l_{rest}"),
            ("l_", rest) => format!("r_{rest}"),
            _ => unreachable!("every group label is sided"),
        };
        self.group_index(&mirrored).expect("mirrored label exists")
    }

    /// Actions carry no side, so flipping leaves them unchanged.
    pub fn flip_action(&self, index: usize) -> usize {
        index
    }
}
