//! Line-delimited JSON dataset files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::labels::{LabelMaps, JOINT_MIRROR, NUM_JOINTS};
use super::DataError;

/// One tracked person in pixel space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonRecord {
    pub action: String,
    /// `frames × [x, y]` bounding-box centers
    pub centers: Vec<[f64; 2]>,
    /// `frames × 16 × [x, y]` absolute keypoints
    pub keypoints: Vec<Vec<[f64; 2]>>,
}

/// One annotated clip as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub frame_width: u32,
    pub frame_height: u32,
    pub frames: usize,
    pub group: String,
    pub persons: Vec<PersonRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball: Option<Vec<[f64; 2]>>,
}

impl DatasetRecord {
    /// Checks every schema invariant; returns the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let maps = LabelMaps;
        if self.frame_width == 0 || self.frame_height == 0 {
            return Err(format!(
                "zero frame dimensions {}x{}",
                self.frame_width, self.frame_height
            ));
        }
        if self.frames == 0 {
            return Err("frames must be positive".into());
        }
        if maps.group_index(&self.group).is_none() {
            return Err(format!("unknown group label {:?}", self.group));
        }
        if self.persons.is_empty() {
            return Err("no persons".into());
        }
        for (p, person) in self.persons.iter().enumerate() {
            if maps.action_index(&person.action).is_none() {
                return Err(format!(
                    "person {p}: unknown action label {:?}",
                    person.action
                ));
            }
            if person.centers.len() != self.frames {
                return Err(format!(
                    "person {p}: frame-count mismatch, {} centers for {} frames",
                    person.centers.len(),
                    self.frames
                ));
            }
            if person.keypoints.len() != self.frames {
                return Err(format!(
                    "person {p}: frame-count mismatch, {} keypoint frames for {} frames",
                    person.keypoints.len(),
                    self.frames
                ));
            }
            for (t, kps) in person.keypoints.iter().enumerate() {
                if kps.len() != NUM_JOINTS {
                    return Err(format!(
                        "person {p}, frame {t}: keypoint count {} (expected {NUM_JOINTS})",
                        kps.len()
                    ));
                }
            }
            let finite = person
                .centers
                .iter()
                .chain(person.keypoints.iter().flatten())
                .flatten()
                .all(|v| v.is_finite());
            if !finite {
                return Err(format!("person {p}: non-finite coordinate"));
            }
        }
        if let Some(ball) = &self.ball {
            if ball.len() != self.frames {
                return Err(format!(
                    "ball: frame-count mismatch, {} positions for {} frames",
                    ball.len(),
                    self.frames
                ));
            }
            if !ball.iter().flatten().all(|v| v.is_finite()) {
                return Err("ball: non-finite coordinate".into());
            }
        }
        Ok(())
    }

    /// The record as seen in a horizontally mirrored video.
    pub fn mirrored(&self) -> DatasetRecord {
        let w = f64::from(self.frame_width);
        let mx = |p: &[f64; 2]| [w - p[0], p[1]];
        let maps = LabelMaps;
        DatasetRecord {
            id: self.id.clone(),
            frame_width: self.frame_width,
            frame_height: self.frame_height,
            frames: self.frames,
            group: maps
                .group_index(&self.group)
                .map(|g| {
                    maps.group_name(maps.flip_group(g))
                        .expect("valid index")
                        .to_string()
                })
                .unwrap_or_else(|| self.group.clone()),
            persons: self
                .persons
                .iter()
                .map(|p| PersonRecord {
                    action: p.action.clone(),
                    centers: p.centers.iter().map(mx).collect(),
                    keypoints: p
                        .keypoints
                        .iter()
                        .map(|kps| (0..kps.len()).map(|j| mx(&kps[JOINT_MIRROR[j]])).collect())
                        .collect(),
                })
                .collect(),
            ball: self.ball.as_ref().map(|b| b.iter().map(mx).collect()),
        }
    }
}

/// Parses dataset text. Blank lines and lines starting with `#` are skipped.
/// Every invalid record is reported with its line number.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, DataError> {
    let mut records = Vec::new();
    let mut issues = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        match serde_json::from_str::<DatasetRecord>(trimmed) {
            Ok(rec) => match rec.validate() {
                Ok(()) => records.push(rec),
                Err(reason) => issues.push(format!("line {line_no} (id {}): {reason}", rec.id)),
            },
            Err(e) => issues.push(format!("line {line_no}: malformed record: {e}")),
        }
    }
    if !issues.is_empty() {
        return Err(DataError::InvalidRecords(issues));
    }
    Ok(records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))?;
    let records = parse_dataset(&text)?;
    if records.is_empty() {
        log::warn!("{}: dataset is empty", path.display());
    }
    Ok(records)
}

/// Serializes records one per line, after optional `#` header lines.
pub fn dataset_to_string(records: &[DatasetRecord], header: &[String]) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(
    path: &Path,
    records: &[DatasetRecord],
    header: &[String],
) -> Result<(), DataError> {
    crate::io::write_atomic(path, dataset_to_string(records, header).as_bytes())
        .map_err(|e| DataError::Io(format!("{}: {e}", path.display())))
}
