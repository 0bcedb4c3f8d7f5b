//! Dataset records, normalization, flip augmentation and synthetic clips.

pub mod labels;
pub mod record;
pub mod sample;
pub mod synth;

pub use labels::{
    LabelMaps, ACTION_LABELS, GROUP_LABELS, JOINTS, JOINT_MIRROR, NUM_JOINTS, PELVIS,
};
pub use record::{
    dataset_to_string, load_dataset, parse_dataset, save_dataset, DatasetRecord, PersonRecord,
};
pub use sample::{
    horizontal_flip, normalize, normalize_all, select_window, window_range, ClipWindow,
    PersonTrack, Sample,
};
pub use synth::{key_person, synth_generate, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(String),
    #[error("{} invalid record(s):\n  {}", .0.len(), .0.join("\n  "))]
    InvalidRecords(Vec<String>),
    #[error("record {id}: {reason}")]
    Record { id: String, reason: String },
    #[error("record {id}: {frames} frames, window needs {needed}")]
    TooFewFrames {
        id: String,
        frames: usize,
        needed: usize,
    },
    #[error("record {0}: coordinates already look normalized; normalization must run once on pixel data")]
    AlreadyNormalized(String),
    #[error("invalid synthetic config: {0}")]
    Synth(String),
}
