//! Binary checkpoints.
//!
//! Layout: 8-byte magic `POGARSCK`, u32 LE format version, u64 LE header
//! length, a JSON header, then little-endian f32 payload: parameters in
//! manifest order, then ADAM first moments, then second moments, each
//! section laid out like the parameters.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::trainer::Trainer;
use super::{TrainConfig, TrainError};
use crate::model::{param_specs, PogarsConfig, PogarsParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"POGARSCK";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// offset in floats from the start of the parameter section
    pub offset: usize,
}

/// Position of the shuffle generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position, decimal
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainError> {
        use rand::SeedableRng;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| TrainError::Malformed(format!("rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: PogarsConfig,
    train: TrainConfig,
    epochs_done: usize,
    adam_step: u64,
    rng: RngState,
    manifest: Vec<ManifestEntry>,
    /// parameter floats; the payload holds three sections of this size
    param_floats: usize,
}

/// Everything needed to evaluate or continue a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: PogarsConfig,
    pub train: TrainConfig,
    pub params: PogarsParams<f32>,
    pub adam: AdamState<f32>,
    pub rng: RngState,
    pub epochs_done: usize,
}

impl Trainer<f32> {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.config.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            rng: RngState::capture(&self.rng),
            epochs_done: self.epochs_done,
        }
    }

    /// Resumes from a checkpoint; history starts empty.
    pub fn from_checkpoint(c: Checkpoint) -> Result<Self, TrainError> {
        c.params.check(&c.model)?;
        c.adam.check(&c.params)?;
        Ok(Trainer {
            rng: c.rng.restore()?,
            model: c.model,
            config: c.train,
            params: c.params,
            adam: c.adam,
            epochs_done: c.epochs_done,
            history: Vec::new(),
        })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainError> {
        self.params.check(&self.model)?;
        self.adam.check(&self.params)?;
        let mut manifest = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            epochs_done: self.epochs_done,
            adam_step: self.adam.step,
            rng: self.rng.clone(),
            manifest,
            param_floats: offset,
        };
        let json = serde_json::to_vec(&header).map_err(|e| TrainError::Malformed(e.to_string()))?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 12 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let sections = [
            self.params
                .iter()
                .map(|(_, t)| t.values())
                .collect::<Vec<_>>(),
            self.adam.m.values().map(Vec::as_slice).collect(),
            self.adam.v.values().map(Vec::as_slice).collect(),
        ];
        for section in sections {
            for values in section {
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        if bytes.len() < PREAMBLE {
            return Err(TrainError::Truncated(format!(
                "{} bytes, the fixed preamble alone is {PREAMBLE}",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(TrainError::Malformed("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(TrainError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let payload_start = PREAMBLE.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            TrainError::Truncated(format!(
                "header of {header_len} bytes at offset {PREAMBLE} runs past end of file ({} bytes)",
                bytes.len()
            ))
        })?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
            .map_err(|e| TrainError::Malformed(format!("header: {e}")))?;

        let expected_bytes = 3 * header.param_floats * 4;
        let payload = &bytes[payload_start..];
        if payload.len() != expected_bytes {
            return Err(TrainError::Truncated(format!(
                "payload at offset {payload_start} has {} bytes, manifest needs {expected_bytes} \
                 (3 sections × {} floats)",
                payload.len(),
                header.param_floats
            )));
        }
        check_manifest(&header)?;

        let floats: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let section = |k: usize, entry: &ManifestEntry| {
            let n: usize = entry.shape.iter().product();
            let start = k * header.param_floats + entry.offset;
            floats[start..start + n].to_vec()
        };
        let mut tensors = BTreeMap::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for entry in &header.manifest {
            tensors.insert(
                entry.name.clone(),
                Tensor::new(entry.shape.clone(), section(0, entry))?,
            );
            m.insert(entry.name.clone(), section(1, entry));
            v.insert(entry.name.clone(), section(2, entry));
        }
        Ok(Checkpoint {
            params: PogarsParams::from_tensors(tensors),
            adam: AdamState {
                step: header.adam_step,
                m,
                v,
            },
            model: header.model,
            train: header.train,
            rng: header.rng,
            epochs_done: header.epochs_done,
        })
    }
}

fn check_manifest(header: &Header) -> Result<(), TrainError> {
    header.model.validate()?;
    let specs = param_specs(&header.model);
    let mut sorted: Vec<_> = specs.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    if sorted.len() != header.manifest.len() {
        return Err(TrainError::Malformed(format!(
            "manifest lists {} tensors, the stored config implies {}",
            header.manifest.len(),
            sorted.len()
        )));
    }
    let mut offset = 0;
    for (spec, entry) in sorted.iter().zip(&header.manifest) {
        if spec.name != entry.name || spec.shape != entry.shape {
            return Err(TrainError::Malformed(format!(
                "manifest entry {} {:?} disagrees with config ({} {:?})",
                entry.name, entry.shape, spec.name, spec.shape
            )));
        }
        if entry.offset != offset {
            return Err(TrainError::Malformed(format!(
                "manifest entry {} at offset {}, expected {offset}",
                entry.name, entry.offset
            )));
        }
        offset += spec.shape.iter().product::<usize>();
    }
    if offset != header.param_floats {
        return Err(TrainError::Malformed(format!(
            "manifest covers {offset} floats, header claims {}",
            header.param_floats
        )));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<(), TrainError> {
    let bytes = c.to_bytes()?;
    crate::io::write_atomic(path, &bytes)
        .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes =
        std::fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
    Checkpoint::from_bytes(&bytes)
}
