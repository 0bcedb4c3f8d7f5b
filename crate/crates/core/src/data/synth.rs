//! Deterministic synthetic clips with a known key person.
//!
//! Each right-side class has a fixed motion template played by one key
//! person, peaking at the middle source frame. Left-side classes are the
//! pixel-space mirror of a right-side clip, so paired classes are exact
//! mirror images before noise. Everyone else stands and drifts on a seeded
//! random walk. The key person is the only one whose action is not
//! `standing`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::labels::{LabelMaps, GROUP_LABELS, NUM_JOINTS};
use super::record::{DatasetRecord, PersonRecord};
use super::sample::Sample;
use super::DataError;

pub const SYNTH_WIDTH: u32 = 1280;
pub const SYNTH_HEIGHT: u32 = 720;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// first `classes` group labels are generated
    pub classes: usize,
    pub per_class: usize,
    pub persons: usize,
    /// source clip length; the keyframe is the middle frame
    pub frames: usize,
    /// Gaussian coordinate noise, as a fraction of the frame size
    pub noise: f64,
    pub seed: u64,
    /// when set, only the ball trajectory depends on the class and nobody acts
    pub ball_cue: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            per_class: 16,
            persons: 12,
            frames: 41,
            noise: 0.01,
            seed: 1,
            ball_cue: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Synth(m));
        if self.classes == 0 || self.classes > GROUP_LABELS.len() {
            return fail(format!(
                "classes must be in 1..={}, got {}",
                GROUP_LABELS.len(),
                self.classes
            ));
        }
        if self.per_class == 0 || self.persons == 0 || self.frames == 0 {
            return fail("per_class, persons and frames must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!(
                "noise must be a finite non-negative number, got {}",
                self.noise
            ));
        }
        Ok(())
    }
}

// Standing pose, pixel offsets from the pelvis (y grows downward).
const BASE_POSE: [[f64; 2]; NUM_JOINTS] = [
    [-12.0, 75.0],
    [-10.0, 38.0],
    [-10.0, 0.0],
    [10.0, 0.0],
    [10.0, 38.0],
    [12.0, 75.0],
    [0.0, 0.0],
    [0.0, -25.0],
    [0.0, -55.0],
    [0.0, -70.0],
    [-22.0, 10.0],
    [-20.0, -20.0],
    [-16.0, -50.0],
    [16.0, -50.0],
    [20.0, -20.0],
    [22.0, 10.0],
];

#[derive(Debug, Clone, Copy)]
enum Motion {
    Spike,
    Set,
    Pass,
    Winpoint,
}

impl Motion {
    fn action(self) -> &'static str {
        match self {
            Motion::Spike => "spiking",
            Motion::Set => "setting",
            Motion::Pass => "digging",
            Motion::Winpoint => "moving",
        }
    }

    /// Peak joint displacements and pelvis displacement, each scaled by the
    /// temporal envelope. All templates are left/right asymmetric.
    fn peak(self) -> ([[f64; 2]; NUM_JOINTS], [f64; 2]) {
        let mut d = [[0.0; 2]; NUM_JOINTS];
        let body;
        match self {
            Motion::Spike => {
                d[10] = [-10.0, -120.0];
                d[11] = [-6.0, -70.0];
                d[12] = [-2.0, -8.0];
                d[1] = [0.0, -18.0];
                d[4] = [0.0, -18.0];
                d[0] = [4.0, -30.0];
                d[5] = [-4.0, -30.0];
                body = [0.0, -45.0];
            }
            Motion::Set => {
                d[10] = [20.0, -105.0];
                d[11] = [12.0, -55.0];
                d[15] = [2.0, -105.0];
                d[14] = [-4.0, -55.0];
                d[9] = [18.0, 4.0];
                d[8] = [12.0, 0.0];
                body = [0.0, 0.0];
            }
            Motion::Pass => {
                d[10] = [38.0, 30.0];
                d[15] = [18.0, 30.0];
                d[11] = [22.0, 18.0];
                d[14] = [6.0, 18.0];
                d[1] = [14.0, -16.0];
                d[4] = [14.0, -16.0];
                d[9] = [8.0, 20.0];
                d[8] = [6.0, 16.0];
                body = [0.0, 35.0];
            }
            Motion::Winpoint => {
                d[15] = [40.0, -95.0];
                d[14] = [25.0, -50.0];
                d[10] = [-30.0, -30.0];
                d[11] = [-12.0, -10.0];
                body = [70.0, -10.0];
            }
        }
        (d, body)
    }
}

fn envelope(t: usize, center: usize) -> f64 {
    let dt = t as f64 - center as f64;
    (-dt * dt / (2.0 * 3.0 * 3.0)).exp()
}

fn pose_at(pelvis: [f64; 2], scale: f64, extra: &[[f64; 2]; NUM_JOINTS], e: f64) -> Vec<[f64; 2]> {
    (0..NUM_JOINTS)
        .map(|j| {
            [
                pelvis[0] + scale * BASE_POSE[j][0] + e * extra[j][0],
                pelvis[1] + scale * BASE_POSE[j][1] + e * extra[j][1],
            ]
        })
        .collect()
}

/// Court x positions of the bystanders, as fractions of the width. They
/// stand in evenly spaced lanes that leave a gap around the key person,
/// so the key person keeps the same rank in x order from clip to clip.
fn lanes(count: usize, gap: Option<f64>) -> Vec<f64> {
    const LO: f64 = 0.05;
    const HI: f64 = 0.95;
    const HALF_GAP: f64 = 0.06;
    let usable = HI - LO - if gap.is_some() { 2.0 * HALF_GAP } else { 0.0 };
    (0..count)
        .map(|i| {
            let x = LO + usable * (i as f64 + 0.5) / count as f64;
            match gap {
                Some(g) if x > g - HALF_GAP => x + 2.0 * HALF_GAP,
                _ => x,
            }
        })
        .collect()
}

fn bystander(cfg: &SynthConfig, lane: f64, rng: &mut ChaCha8Rng) -> PersonRecord {
    let (w, h) = (f64::from(SYNTH_WIDTH), f64::from(SYNTH_HEIGHT));
    let mut pos = [
        (lane + rng.gen_range(-0.01..0.01)) * w,
        rng.gen_range(0.4..0.8) * h,
    ];
    let scale = rng.gen_range(0.85..1.15);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let step = Normal::new(0.0, 2.0).expect("valid sigma");
    let mut centers = Vec::with_capacity(cfg.frames);
    let mut keypoints = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        pos[0] += step.sample(rng);
        pos[1] += step.sample(rng);
        let sway = 4.0 * (phase + 0.3 * t as f64).sin();
        let mut extra = [[0.0; 2]; NUM_JOINTS];
        extra[10] = [sway, 0.0];
        extra[15] = [sway, 0.0];
        centers.push(pos);
        keypoints.push(pose_at(pos, scale, &extra, 1.0));
    }
    PersonRecord {
        action: "standing".into(),
        centers,
        keypoints,
    }
}

/// Noise-free right-side clip: the key person (if any) is person 0.
fn right_side_clip(cfg: &SynthConfig, class_pair: usize, rng: &mut ChaCha8Rng) -> DatasetRecord {
    let (w, h) = (f64::from(SYNTH_WIDTH), f64::from(SYNTH_HEIGHT));
    let key = cfg.frames / 2;
    let mut persons = Vec::with_capacity(cfg.persons);
    let mut key_wrist = vec![[0.75 * w, 0.55 * h]; cfg.frames];
    if !cfg.ball_cue {
        let motion = [Motion::Spike, Motion::Set, Motion::Pass, Motion::Winpoint][class_pair];
        let (peak, body) = motion.peak();
        let anchor = [0.75 * w, 0.55 * h];
        let mut centers = Vec::with_capacity(cfg.frames);
        let mut keypoints = Vec::with_capacity(cfg.frames);
        for t in 0..cfg.frames {
            let e = envelope(t, key);
            let pelvis = [anchor[0] + e * body[0], anchor[1] + e * body[1]];
            let pose = pose_at(pelvis, 1.0, &peak, e);
            key_wrist[t] = pose[10];
            centers.push(pelvis);
            keypoints.push(pose);
        }
        persons.push(PersonRecord {
            action: motion.action().into(),
            centers,
            keypoints,
        });
    }
    let gap = (!persons.is_empty()).then_some(0.75);
    for lane in lanes(cfg.persons - persons.len(), gap) {
        persons.push(bystander(cfg, lane, rng));
    }
    let ball = if cfg.ball_cue {
        // the class sets where the ball arcs; nobody's pose carries it
        let x = (0.58 + 0.1 * class_pair as f64) * w;
        (0..cfg.frames)
            .map(|t| {
                let s = (t as f64 - key as f64) / cfg.frames as f64;
                [x + 40.0 * s, (0.3 + 0.8 * s * s) * h]
            })
            .collect()
    } else {
        let start = [0.5 * w, 0.15 * h];
        (0..cfg.frames)
            .map(|t| {
                let s = 1.0 / (1.0 + (-(t as f64 - key as f64) / 2.0).exp());
                [
                    start[0] + s * (key_wrist[t][0] - start[0]),
                    start[1] + s * (key_wrist[t][1] - start[1]),
                ]
            })
            .collect()
    };
    DatasetRecord {
        id: String::new(),
        frame_width: SYNTH_WIDTH,
        frame_height: SYNTH_HEIGHT,
        frames: cfg.frames,
        group: GROUP_LABELS[2 * class_pair].into(),
        persons,
        ball: Some(ball),
    }
}

fn add_noise(record: &mut DatasetRecord, noise: f64, rng: &mut ChaCha8Rng) {
    if noise == 0.0 {
        return;
    }
    let nx = Normal::new(0.0, noise * f64::from(record.frame_width)).expect("finite sigma");
    let ny = Normal::new(0.0, noise * f64::from(record.frame_height)).expect("finite sigma");
    let mut jitter = |p: &mut [f64; 2]| {
        p[0] += nx.sample(rng);
        p[1] += ny.sample(rng);
    };
    for person in &mut record.persons {
        person.centers.iter_mut().for_each(&mut jitter);
        person.keypoints.iter_mut().flatten().for_each(&mut jitter);
    }
    if let Some(ball) = &mut record.ball {
        ball.iter_mut().for_each(&mut jitter);
    }
}

fn sample_seed(seed: u64, class: usize, k: usize) -> u64 {
    seed ^ ((class as u64) << 48) ^ ((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generates `classes × per_class` pixel-space records, class-major.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<DatasetRecord>, DataError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.classes * cfg.per_class);
    for class in 0..cfg.classes {
        for k in 0..cfg.per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, class, k));
            let right = right_side_clip(cfg, class / 2, &mut rng);
            let mut record = if class % 2 == 0 {
                right
            } else {
                right.mirrored()
            };
            add_noise(&mut record, cfg.noise, &mut rng);
            record.id = format!("synth-{class}-{k:04}");
            out.push(record);
        }
    }
    Ok(out)
}

/// Index of the generator's key person: the only one not `standing`.
pub fn key_person(sample: &Sample) -> Option<usize> {
    let standing = LabelMaps.action_index("standing").expect("known action");
    let mut movers = sample
        .persons
        .iter()
        .enumerate()
        .filter(|(_, p)| p.action != standing);
    match (movers.next(), movers.next()) {
        (Some((i, _)), None) => Some(i),
        _ => None,
    }
}
