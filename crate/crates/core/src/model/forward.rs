//! Forward stages of the network, each recorded on a [`Tape`].
//!
//! Per-person stages run on a stacked `[B·N, C, T]` layout so a whole
//! minibatch shares one convolution per layer; spatial attention and the
//! heads regroup rows per sample.

use super::config::{Fusion, PogarsConfig};
use super::encoding::sinusoidal_encode;
use super::params::BoundParams;
use super::{Batch, ModelError};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

type Result<T> = std::result::Result<T, ModelError>;

fn linear<S: Scalar>(tape: &mut Tape<'_, S>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(tape.linear(x, w, b)?)
}

/// A linear map over the channel axis of `[S, C, T]`, applied per frame.
fn channel_linear<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let ws = tape.shape(w).to_vec();
    let w3 = tape.reshape(w, &[ws[0], ws[1], 1])?;
    Ok(tape.conv1d(x, w3, b, 0)?)
}

fn conv<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    padding: usize,
) -> Result<Var> {
    let k = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    Ok(tape.conv1d(x, k, b, padding)?)
}

/// Per-frame 2→pos_embed_dim map of person centers `[S, 2, T]`.
pub fn embed_positions<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    centers: Var,
) -> Result<Var> {
    channel_linear(tape, p, "pos_embed", centers)
}

/// `(K | Ĉ)`: keypoint channels first, then the position embedding.
pub fn assemble_person_features<S: Scalar>(
    tape: &mut Tape<'_, S>,
    keypoints: Var,
    embedded: Var,
) -> Result<Var> {
    Ok(tape.concat(&[keypoints, embedded], 1)?)
}

/// Frame weights `softmax_T(φ(F))` and the reweighted features, per stream row.
///
/// Returns `(F′ [S, C, T], weights [S, T])`.
pub fn temporal_attention<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    f: Var,
) -> Result<(Var, Var)> {
    let shape = tape.shape(f).to_vec();
    let (rows, frames) = (shape[0], shape[2]);
    let h = channel_linear(tape, p, "temporal_attn.0", f)?;
    let h = tape.relu(h)?;
    let logits = channel_linear(tape, p, "temporal_attn.1", h)?;
    let logits = tape.reshape(logits, &[rows, frames])?;
    let weights = tape.softmax(logits, 1)?;
    let w3 = tape.reshape(weights, &[rows, 1, frames])?;
    let attended = tape.mul(w3, f)?;
    Ok((attended, weights))
}

/// conv→relu→conv→relu→conv, plus the (projected) input, then relu.
pub fn conv_block<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    prefix: &str,
    x: Var,
    kernel: usize,
) -> Result<Var> {
    let pad = (kernel - 1) / 2;
    let h = conv(tape, p, &format!("{prefix}.conv1"), x, pad)?;
    let h = tape.relu(h)?;
    let h = conv(tape, p, &format!("{prefix}.conv2"), h, pad)?;
    let h = tape.relu(h)?;
    let h = conv(tape, p, &format!("{prefix}.conv3"), h, pad)?;
    let skip_name = format!("{prefix}.skip");
    let skip = match p.get(&format!("{skip_name}.weight")) {
        Ok(_) => conv(tape, p, &skip_name, x, 0)?,
        Err(_) => x,
    };
    let sum = tape.add(h, skip)?;
    Ok(tape.relu(sum)?)
}

/// The stacked residual blocks, `[S, C₀, T] → [S, C_last, T]`.
pub fn temporal_conv_stack<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    cfg: &PogarsConfig,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    (0..cfg.blocks()).try_fold(x, |h, b| {
        conv_block(tape, p, &format!("{prefix}.block{b}"), h, cfg.kernel_size)
    })
}

/// Mean over the time axis: `[S, C, T] → [S, C]`.
pub fn temporal_pool<S: Scalar>(tape: &mut Tape<'_, S>, e: Var) -> Result<Var> {
    Ok(tape.mean_axis(e, 2)?)
}

/// Person weights `softmax_N(ψ(Ê))` per sample.
///
/// `pooled` is `[B·N, D]`; returns `(Ê′ [B·N, D], weights [B, N])`.
pub fn spatial_attention<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    pooled: Var,
    persons: usize,
) -> Result<(Var, Var)> {
    let rows = tape.shape(pooled)[0];
    let batch = rows / persons;
    let h = linear(tape, p, "spatial_attn.0", pooled)?;
    let h = tape.relu(h)?;
    let logits = linear(tape, p, "spatial_attn.1", h)?;
    let logits = tape.reshape(logits, &[batch, persons])?;
    let weights = tape.softmax(logits, 1)?;
    let column = tape.reshape(weights, &[rows, 1])?;
    let attended = tape.mul(column, pooled)?;
    Ok((attended, weights))
}

/// Ball trajectory `[B, 2, T]` (normalized) → pooled ball feature `[B, D]`.
pub fn ball_branch<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    cfg: &PogarsConfig,
    ball: &crate::Tensor<S>,
) -> Result<Var> {
    if !cfg.ball_enabled {
        return Err(ModelError::BallDisabled);
    }
    let enc = sinusoidal_encode(ball, cfg.ball_encoding_dim, cfg.ball_position_scale)?;
    let enc = if enc.shape().len() == 2 {
        enc.reshaped([1, enc.shape()[0], enc.shape()[1]])?
    } else {
        enc
    };
    let x = tape.constant(enc);
    let g = temporal_conv_stack(tape, p, cfg, "ball.trunk", x)?;
    temporal_pool(tape, g)
}

/// Rows `[B, R, D]` flattened in order, then linear→relu→linear to group logits.
pub fn group_head<S: Scalar>(tape: &mut Tape<'_, S>, p: &BoundParams, rows: Var) -> Result<Var> {
    let s = tape.shape(rows).to_vec();
    let flat = tape.reshape(rows, &[s[0], s[1] * s[2]])?;
    let h = linear(tape, p, "group_head.0", flat)?;
    let h = tape.relu(h)?;
    linear(tape, p, "group_head.1", h)
}

/// Shared per-row linear→relu→linear to action logits.
pub fn individual_head<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    features: Var,
) -> Result<Var> {
    let h = linear(tape, p, "action_head.0", features)?;
    let h = tape.relu(h)?;
    linear(tape, p, "action_head.1", h)
}

/// Handles to everything a forward pass exposes.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[B, G]`
    pub group_logits: Var,
    /// `[B·N, A]`
    pub action_logits: Var,
    /// `[B·N, T]` for late fusion, `[B, T]` for early fusion
    pub temporal_weights: Var,
    /// `[B, N]`, late fusion only
    pub spatial_weights: Option<Var>,
    /// Pooled trunk features, `[B·N, D]` (late) or `[B, D]` (early)
    pub pooled: Var,
    /// Spatially attended features `[B·N, D]`, late fusion only
    pub attended: Option<Var>,
    /// Pooled ball feature `[B, D]` when the ball branch is enabled
    pub ball: Option<Var>,
}

/// Records the full network on `tape` for a batch of samples.
pub fn forward_tape<S: Scalar>(
    tape: &mut Tape<'_, S>,
    p: &BoundParams,
    cfg: &PogarsConfig,
    batch: &Batch<S>,
) -> Result<ForwardVars> {
    batch.check(cfg)?;
    let (b, n) = (batch.len(), cfg.persons);
    let keypoints = tape.constant(batch.keypoints.clone());
    let centers = tape.constant(batch.centers.clone());
    let embedded = embed_positions(tape, p, centers)?;
    let features = assemble_person_features(tape, keypoints, embedded)?;

    let ball = match (&batch.ball, cfg.ball_enabled) {
        (Some(o), true) => Some(ball_branch(tape, p, cfg, o)?),
        (None, true) => return Err(ModelError::MissingBall),
        (_, false) => None,
    };
    let d = cfg.feature_dim();

    match cfg.fusion {
        Fusion::Late => {
            let (attended_f, temporal_weights) = temporal_attention(tape, p, features)?;
            let e = temporal_conv_stack(tape, p, cfg, "trunk", attended_f)?;
            let pooled = temporal_pool(tape, e)?;
            let (attended, spatial_weights) = spatial_attention(tape, p, pooled, n)?;
            let mut rows = tape.reshape(attended, &[b, n, d])?;
            if let Some(g) = ball {
                let g3 = tape.reshape(g, &[b, 1, d])?;
                rows = tape.concat(&[rows, g3], 1)?;
            }
            let group_logits = group_head(tape, p, rows)?;
            let action_logits = individual_head(tape, p, pooled)?;
            Ok(ForwardVars {
                group_logits,
                action_logits,
                temporal_weights,
                spatial_weights: Some(spatial_weights),
                pooled,
                attended: Some(attended),
                ball,
            })
        }
        Fusion::Early => {
            let frames = cfg.frames;
            // [B·N, C, T] → [B, N·C, T] stacks persons on the channel axis in x-order
            let fused = tape.reshape(features, &[b, n * cfg.person_feature_dim(), frames])?;
            let (attended_f, temporal_weights) = temporal_attention(tape, p, fused)?;
            let e = temporal_conv_stack(tape, p, cfg, "trunk", attended_f)?;
            let pooled = temporal_pool(tape, e)?;
            let mut rows = tape.reshape(pooled, &[b, 1, d])?;
            if let Some(g) = ball {
                let g3 = tape.reshape(g, &[b, 1, d])?;
                rows = tape.concat(&[rows, g3], 1)?;
            }
            let group_logits = group_head(tape, p, rows)?;
            let shared = individual_head(tape, p, pooled)?;
            let shared = tape.reshape(shared, &[b, 1, cfg.action_classes])?;
            let copies = vec![shared; n];
            let replicated = tape.concat(&copies, 1)?;
            let action_logits = tape.reshape(replicated, &[b * n, cfg.action_classes])?;
            Ok(ForwardVars {
                group_logits,
                action_logits,
                temporal_weights,
                spatial_weights: None,
                pooled,
                attended: None,
                ball,
            })
        }
    }
}

/// Tape handles of the multi-task loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    /// Batch mean of `α·L_IA + L_GA`, scalar
    pub total: Var,
    /// Per-sample group cross entropy `[B]`
    pub group: Var,
    /// Per-sample mean action cross entropy `[B]`
    pub action: Var,
}

/// `α·L_IA + L_GA` per sample, averaged over the batch.
pub fn multitask_loss<S: Scalar>(
    tape: &mut Tape<'_, S>,
    group_logits: Var,
    action_logits: Var,
    group_labels: &[usize],
    action_labels: &[usize],
    alpha: f64,
) -> Result<LossVars> {
    let batch = group_labels.len();
    if batch == 0 || !action_labels.len().is_multiple_of(batch) {
        return Err(ModelError::Label(format!(
            "{} action labels for {batch} samples",
            action_labels.len()
        )));
    }
    let persons = action_labels.len() / batch;
    let group = tape.cross_entropy(group_logits, group_labels)?;
    let group = tape.reshape(group, &[batch])?;
    let per_person = tape.cross_entropy(action_logits, action_labels)?;
    let per_person = tape.reshape(per_person, &[batch, persons])?;
    let action = tape.mean_axis(per_person, 1)?;
    let weighted = tape.scale(action, S::from_f64_lossy(alpha))?;
    let combined = tape.add(weighted, group)?;
    let total = tape.mean(combined)?;
    Ok(LossVars {
        total,
        group,
        action,
    })
}
