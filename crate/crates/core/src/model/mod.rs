//! The pose-only group activity network.
//!
//! Late fusion (default) runs every person through position embedding,
//! temporal attention, the residual conv trunk and temporal pooling
//! independently, then weights persons with spatial attention before the
//! group head. The individual-action head reads the unweighted pooled
//! features. Early fusion stacks all persons on the channel axis first.

pub mod config;
pub mod encoding;
pub mod forward;
pub mod params;

pub use config::{Fusion, PogarsConfig};
pub use encoding::sinusoidal_encode;
pub use forward::{forward_tape, multitask_loss, ForwardVars, LossVars};
pub use params::{param_specs, BoundParams, ParamSpec, PogarsParams};

use crate::data::{Sample, NUM_JOINTS};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameters do not match config: {0}")]
    ConfigMismatch(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("sample {id}: {found} persons, model expects {expected}")]
    PersonCount {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("sample {id}: {found} frames, model expects {expected}")]
    FrameCount {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("ball branch called on a model without ball input")]
    BallDisabled,
    #[error("model expects a ball track but the batch has none")]
    MissingBall,
    #[error("sample {0}: model expects a ball track but the sample has none")]
    SampleWithoutBall(String),
    #[error("batch input shapes do not match config: {0}")]
    BatchShape(String),
    #[error("label error: {0}")]
    Label(String),
}

/// Network inputs for `B` samples in the stacked per-person layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    /// `[B·N, pose_dim, T]`, joint j at channels `2j` (x) and `2j+1` (y)
    pub keypoints: Tensor<S>,
    /// `[B·N, 2, T]`
    pub centers: Tensor<S>,
    /// `[B, 2, T]`
    pub ball: Option<Tensor<S>>,
    pub group_labels: Vec<usize>,
    /// `B·N` labels in row order
    pub action_labels: Vec<usize>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_samples(samples: &[&Sample], cfg: &PogarsConfig) -> Result<Self, ModelError> {
        if cfg.pose_dim != 2 * NUM_JOINTS {
            return Err(ModelError::BatchShape(format!(
                "samples carry {} keypoint channels, config expects {}",
                2 * NUM_JOINTS,
                cfg.pose_dim
            )));
        }
        let (n, t) = (cfg.persons, cfg.frames);
        let b = samples.len();
        let mut keypoints = Vec::with_capacity(b * n * cfg.pose_dim * t);
        let mut centers = Vec::with_capacity(b * n * 2 * t);
        let mut action_labels = Vec::with_capacity(b * n);
        let with_ball = cfg.ball_enabled;
        let mut ball = Vec::new();
        for s in samples {
            if s.persons.len() != n {
                return Err(ModelError::PersonCount {
                    id: s.id.clone(),
                    expected: n,
                    found: s.persons.len(),
                });
            }
            if s.frames() != t {
                return Err(ModelError::FrameCount {
                    id: s.id.clone(),
                    expected: t,
                    found: s.frames(),
                });
            }
            for person in &s.persons {
                for j in 0..NUM_JOINTS {
                    for axis in 0..2 {
                        keypoints.extend(
                            person
                                .keypoints
                                .iter()
                                .map(|kp| S::from_f32(kp[j][axis]).unwrap()),
                        );
                    }
                }
                for axis in 0..2 {
                    centers.extend(person.centers.iter().map(|c| S::from_f32(c[axis]).unwrap()));
                }
                action_labels.push(person.action);
            }
            if with_ball {
                let track = s
                    .ball
                    .as_ref()
                    .ok_or_else(|| ModelError::SampleWithoutBall(s.id.clone()))?;
                for axis in 0..2 {
                    ball.extend(track.iter().map(|c| S::from_f32(c[axis]).unwrap()));
                }
            }
        }
        Ok(Batch {
            keypoints: Tensor::new([b * n, cfg.pose_dim, t], keypoints)?,
            centers: Tensor::new([b * n, 2, t], centers)?,
            ball: if with_ball {
                Some(Tensor::new([b, 2, t], ball)?)
            } else {
                None
            },
            group_labels: samples.iter().map(|s| s.group).collect(),
            action_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.group_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.group_labels.is_empty()
    }

    pub(crate) fn check(&self, cfg: &PogarsConfig) -> Result<(), ModelError> {
        let (b, n, t) = (self.len(), cfg.persons, cfg.frames);
        let ok = self.keypoints.shape() == [b * n, cfg.pose_dim, t]
            && self.centers.shape() == [b * n, 2, t]
            && self.action_labels.len() == b * n
            && self.ball.as_ref().is_none_or(|o| o.shape() == [b, 2, t]);
        if !ok || b == 0 {
            return Err(ModelError::BatchShape(format!(
                "keypoints {:?}, centers {:?}, {} samples, N={n}, T={t}",
                self.keypoints.shape(),
                self.centers.shape(),
                b
            )));
        }
        Ok(())
    }
}

/// What one forward pass reports for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<S> {
    /// `[G]`
    pub group_logits: Tensor<S>,
    /// `[N, A]`
    pub action_logits: Tensor<S>,
    /// `[N, T]` per person (late fusion) or `[1, T]` for the fused stream
    pub temporal_weights: Tensor<S>,
    /// `[N]`; absent for early fusion
    pub spatial_weights: Option<Tensor<S>>,
}

fn row_slice<S: Scalar>(t: &Tensor<S>, start: usize, rows: usize) -> Tensor<S> {
    let width: usize = t.shape()[1..].iter().product();
    let mut shape = t.shape().to_vec();
    shape[0] = rows;
    Tensor::new(
        shape,
        t.values()[start * width..(start + rows) * width].to_vec(),
    )
    .expect("slice within tensor")
}

/// Splits batched forward handles into per-sample outputs.
pub fn collect_outputs<S: Scalar>(
    tape: &Tape<'_, S>,
    vars: &ForwardVars,
    cfg: &PogarsConfig,
    batch: usize,
) -> Vec<ForwardOutput<S>> {
    let n = cfg.persons;
    let group = tape.value(vars.group_logits);
    let action = tape.value(vars.action_logits);
    let temporal = tape.value(vars.temporal_weights);
    let spatial = vars.spatial_weights.map(|v| tape.value(v));
    let stream_rows = match cfg.fusion {
        Fusion::Late => n,
        Fusion::Early => 1,
    };
    (0..batch)
        .map(|i| {
            let g = row_slice(group, i, 1);
            ForwardOutput {
                group_logits: g.reshaped([cfg.group_classes]).expect("one row"),
                action_logits: row_slice(action, i * n, n),
                temporal_weights: row_slice(temporal, i * stream_rows, stream_rows),
                spatial_weights: spatial
                    .map(|s| row_slice(s, i, 1).reshaped([n]).expect("one row")),
            }
        })
        .collect()
}

/// Runs the network on several samples at once.
pub fn forward_batch<S: Scalar>(
    samples: &[&Sample],
    params: &PogarsParams<S>,
    cfg: &PogarsConfig,
) -> Result<Vec<ForwardOutput<S>>, ModelError> {
    cfg.validate()?;
    params.check(cfg)?;
    let batch = Batch::from_samples(samples, cfg)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let vars = forward_tape(&mut tape, &bound, cfg, &batch)?;
    Ok(collect_outputs(&tape, &vars, cfg, samples.len()))
}

/// Runs the network on one sample.
pub fn forward<S: Scalar>(
    sample: &Sample,
    params: &PogarsParams<S>,
    cfg: &PogarsConfig,
) -> Result<ForwardOutput<S>, ModelError> {
    Ok(forward_batch(&[sample], params, cfg)?.remove(0))
}

/// Early-fusion forward; rejects configs that are not in early-fusion mode.
pub fn forward_early_fusion<S: Scalar>(
    sample: &Sample,
    params: &PogarsParams<S>,
    cfg: &PogarsConfig,
) -> Result<ForwardOutput<S>, ModelError> {
    if cfg.fusion != Fusion::Early {
        return Err(ModelError::InvalidConfig(
            "forward_early_fusion needs fusion = early".into(),
        ));
    }
    forward(sample, params, cfg)
}

/// Scalar loss components. `total` is composed as `alpha·action + group`
/// in double precision from the per-sample values.
///
/// The parts are snapped to a 2⁻⁴⁰ grid first. For losses below 2¹² and
/// a power-of-two `alpha` every sum is then exact, so
/// `compose(g, a, 2).total - compose(g, a, 0).total == 2·a` holds bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub group: f64,
    pub action: f64,
}

impl LossParts {
    pub fn compose(group: f64, action: f64, alpha: f64) -> Self {
        const GRID: f64 = (1u64 << 40) as f64;
        let snap = |v: f64| (v * GRID).round() / GRID;
        let (group, action) = (snap(group), snap(action));
        LossParts {
            total: alpha * action + group,
            group,
            action,
        }
    }
}

/// Reads the batch-mean loss components out of a recorded loss.
pub fn loss_parts<S: Scalar>(tape: &Tape<'_, S>, loss: &LossVars, alpha: f64) -> LossParts {
    let mean = |v: crate::tensor::Var| {
        let vals = tape.value(v).values();
        vals.iter().map(|x| x.as_f64()).sum::<f64>() / vals.len() as f64
    };
    LossParts::compose(mean(loss.group), mean(loss.action), alpha)
}

/// Multi-task loss of logits already computed, outside of any training tape.
pub fn multitask_loss_value<S: Scalar>(
    group_logits: &Tensor<S>,
    action_logits: &Tensor<S>,
    group_labels: &[usize],
    action_labels: &[usize],
    alpha: f64,
) -> Result<LossParts, ModelError> {
    let mut tape = Tape::new();
    let g = tape.leaf(group_logits);
    let a = tape.leaf(action_logits);
    let loss = multitask_loss(&mut tape, g, a, group_labels, action_labels, alpha)?;
    Ok(loss_parts(&tape, &loss, alpha))
}
