use std::cmp::Ordering;
use std::ops::Range;

use super::labels::{LabelMaps, JOINT_MIRROR, NUM_JOINTS, PELVIS};
use super::record::DatasetRecord;
use super::DataError;
use crate::model::PogarsConfig;

/// One person after normalization: frame-relative centers and
/// pelvis-relative keypoints, both scaled by the frame size.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonTrack {
    pub centers: Vec<[f32; 2]>,
    pub keypoints: Vec<[[f32; 2]; NUM_JOINTS]>,
    pub action: usize,
}

/// A normalized clip, persons ordered left to right at the keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub persons: Vec<PersonTrack>,
    pub ball: Option<Vec<[f32; 2]>>,
    pub group: usize,
    /// keyframe position inside the window
    pub keyframe: usize,
}

impl Sample {
    pub fn frames(&self) -> usize {
        self.persons.first().map_or(0, |p| p.centers.len())
    }

    /// Verifies the normalized-sample invariants.
    pub fn check(&self) -> Result<(), String> {
        let t = self.frames();
        if self.keyframe >= t {
            return Err(format!("keyframe {} outside {t} frames", self.keyframe));
        }
        for (i, p) in self.persons.iter().enumerate() {
            if p.centers.len() != t || p.keypoints.len() != t {
                return Err(format!("person {i}: ragged frame count"));
            }
            if p.keypoints.iter().any(|k| k[PELVIS] != [0.0, 0.0]) {
                return Err(format!("person {i}: pelvis offset not zero"));
            }
            if p.centers.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("person {i}: center outside the unit square"));
            }
        }
        if let Some(ball) = &self.ball {
            if ball.len() != t || ball.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err("ball track malformed".into());
            }
        }
        let sorted = self
            .persons
            .windows(2)
            .all(|w| compare(&w[0], &w[1], self.keyframe) != Ordering::Greater);
        if !sorted {
            return Err("persons not ordered by keyframe x".into());
        }
        Ok(())
    }
}

fn compare(a: &PersonTrack, b: &PersonTrack, keyframe: usize) -> Ordering {
    let (ca, cb) = (a.centers[keyframe], b.centers[keyframe]);
    ca[0].total_cmp(&cb[0]).then(ca[1].total_cmp(&cb[1]))
}

/// Stable sort by keyframe x, then y; equal keys keep their input order.
fn sort_persons(persons: &mut [PersonTrack], keyframe: usize) {
    persons.sort_by(|a, b| compare(a, b, keyframe));
}

/// Length of the network window and where the keyframe sits inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipWindow {
    pub frames: usize,
    pub keyframe_index: usize,
}

impl From<&PogarsConfig> for ClipWindow {
    fn from(cfg: &PogarsConfig) -> Self {
        ClipWindow {
            frames: cfg.frames,
            keyframe_index: cfg.keyframe_index,
        }
    }
}

impl Default for ClipWindow {
    fn default() -> Self {
        ClipWindow {
            frames: 36,
            keyframe_index: 15,
        }
    }
}

/// Source range of the window. The annotated keyframe is the middle source
/// frame; the window is placed so it lands at `keyframe_index`, shifted only
/// as far as needed to stay inside the clip.
pub fn window_range(source_frames: usize, window: ClipWindow) -> Option<Range<usize>> {
    if source_frames < window.frames || window.frames == 0 {
        return None;
    }
    let source_key = source_frames / 2;
    let start = source_key
        .saturating_sub(window.keyframe_index)
        .min(source_frames - window.frames);
    Some(start..start + window.frames)
}

pub fn select_window<T>(seq: &[T], window: ClipWindow) -> Option<&[T]> {
    window_range(seq.len(), window).map(|r| &seq[r])
}

const GRID: f64 = (1u64 << 24) as f64;

/// Snaps a unit coordinate onto the 2⁻²⁴ grid inside [0, 1]. Every grid
/// point is an f32 and `1 - x` of a grid point is exact, which makes the
/// mirror map bit-exact.
fn unit_coord(v: f64) -> f32 {
    ((v * GRID).round() / GRID).clamp(0.0, 1.0) as f32
}

fn looks_normalized(record: &DatasetRecord) -> bool {
    let in_unit = |v: &f64| v.abs() <= 1.0;
    record.frame_width.max(record.frame_height) > 2
        && record.persons.iter().all(|p| {
            p.centers.iter().flatten().all(in_unit)
                && p.keypoints.iter().flatten().flatten().all(in_unit)
        })
}

/// Scales a pixel-space record into a [`Sample`] for the given window.
pub fn normalize(record: &DatasetRecord, window: ClipWindow) -> Result<Sample, DataError> {
    let fail = |reason: String| DataError::Record {
        id: record.id.clone(),
        reason,
    };
    record.validate().map_err(fail)?;
    if window.keyframe_index >= window.frames {
        return Err(fail(format!(
            "keyframe index {} outside a {}-frame window",
            window.keyframe_index, window.frames
        )));
    }
    if looks_normalized(record) {
        return Err(DataError::AlreadyNormalized(record.id.clone()));
    }
    let range = window_range(record.frames, window).ok_or_else(|| DataError::TooFewFrames {
        id: record.id.clone(),
        frames: record.frames,
        needed: window.frames,
    })?;
    let (w, h) = (
        f64::from(record.frame_width),
        f64::from(record.frame_height),
    );
    let unit = |p: &[f64; 2]| [unit_coord(p[0] / w), unit_coord(p[1] / h)];
    let maps = LabelMaps;
    let mut persons: Vec<PersonTrack> = record
        .persons
        .iter()
        .map(|p| PersonTrack {
            centers: p.centers[range.clone()].iter().map(unit).collect(),
            keypoints: p.keypoints[range.clone()]
                .iter()
                .map(|kps| {
                    let pelvis = kps[PELVIS];
                    std::array::from_fn(|j| {
                        [
                            ((kps[j][0] - pelvis[0]) / w) as f32,
                            ((kps[j][1] - pelvis[1]) / h) as f32,
                        ]
                    })
                })
                .collect(),
            action: maps.action_index(&p.action).expect("validated"),
        })
        .collect();
    sort_persons(&mut persons, window.keyframe_index);
    Ok(Sample {
        id: record.id.clone(),
        persons,
        ball: record
            .ball
            .as_ref()
            .map(|b| b[range.clone()].iter().map(unit).collect()),
        group: maps.group_index(&record.group).expect("validated"),
        keyframe: window.keyframe_index,
    })
}

/// Normalizes every record, collecting all failures.
pub fn normalize_all(
    records: &[DatasetRecord],
    window: ClipWindow,
) -> Result<Vec<Sample>, DataError> {
    let mut out = Vec::with_capacity(records.len());
    let mut issues = Vec::new();
    for r in records {
        match normalize(r, window) {
            Ok(s) => out.push(s),
            Err(e) => issues.push(e.to_string()),
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(DataError::InvalidRecords(issues))
    }
}

/// Mirrors a normalized sample left to right.
pub fn horizontal_flip(sample: &Sample, maps: &LabelMaps) -> Sample {
    // `0.0 - x` rather than `-x`, so zero offsets stay +0.0
    let mirror_unit = |c: &[f32; 2]| [1.0 - c[0], c[1]];
    let mut persons: Vec<PersonTrack> = sample
        .persons
        .iter()
        .map(|p| PersonTrack {
            centers: p.centers.iter().map(mirror_unit).collect(),
            keypoints: p
                .keypoints
                .iter()
                .map(|k| {
                    std::array::from_fn(|j| [0.0 - k[JOINT_MIRROR[j]][0], k[JOINT_MIRROR[j]][1]])
                })
                .collect(),
            action: maps.flip_action(p.action),
        })
        .collect();
    sort_persons(&mut persons, sample.keyframe);
    Sample {
        id: sample.id.clone(),
        persons,
        ball: sample
            .ball
            .as_ref()
            .map(|b| b.iter().map(mirror_unit).collect()),
        group: maps.flip_group(sample.group),
        keyframe: sample.keyframe,
    }
}
