use serde::{Deserialize, Serialize};

use super::ModelError;

/// How person features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Each person is modelled independently; features meet at the heads.
    Late,
    /// Persons are stacked on the channel axis before temporal modelling.
    Early,
}

impl std::str::FromStr for Fusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "late" => Ok(Fusion::Late),
            "early" => Ok(Fusion::Early),
            other => Err(format!(
                "unknown fusion mode {other:?} (expected late or early)"
            )),
        }
    }
}

/// Architecture hyperparameters. The defaults are the full-size network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PogarsConfig {
    pub persons: usize,
    pub frames: usize,
    pub keyframe_index: usize,
    /// Keypoint channels per frame (16 joints × 2).
    pub pose_dim: usize,
    pub pos_embed_dim: usize,
    /// Conv trunk widths; entry 0 is the per-person feature width and each
    /// following entry is the output width of one residual block.
    pub channels: Vec<usize>,
    pub kernel_size: usize,
    pub phi_hidden: usize,
    pub psi_hidden: usize,
    pub head_hidden: usize,
    pub group_classes: usize,
    pub action_classes: usize,
    pub alpha: f64,
    pub fusion: Fusion,
    pub ball_enabled: bool,
    pub ball_encoding_dim: usize,
    /// Normalized ball coordinates are multiplied by this before the
    /// sinusoidal encoding.
    pub ball_position_scale: f64,
}

impl Default for PogarsConfig {
    fn default() -> Self {
        PogarsConfig {
            persons: 12,
            frames: 36,
            keyframe_index: 15,
            pose_dim: 32,
            pos_embed_dim: 32,
            channels: vec![64, 128, 256, 512, 1024],
            kernel_size: 3,
            phi_hidden: 32,
            psi_hidden: 256,
            head_hidden: 256,
            group_classes: 8,
            action_classes: 9,
            alpha: 2.0,
            fusion: Fusion::Late,
            ball_enabled: false,
            ball_encoding_dim: 64,
            ball_position_scale: 100.0,
        }
    }
}

impl PogarsConfig {
    /// The small network used for full-model gradient checks.
    pub fn tiny() -> Self {
        PogarsConfig {
            persons: 3,
            frames: 8,
            keyframe_index: 3,
            pose_dim: 4,
            pos_embed_dim: 4,
            channels: vec![8, 16, 16, 16, 32],
            phi_hidden: 4,
            psi_hidden: 8,
            head_hidden: 8,
            ball_encoding_dim: 8,
            ..Self::default()
        }
    }

    pub fn person_feature_dim(&self) -> usize {
        self.channels[0]
    }

    /// Width of the pooled per-person (and ball) feature.
    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    pub fn blocks(&self) -> usize {
        self.channels.len() - 1
    }

    /// Input width of the temporal stream: one person, or all persons stacked.
    pub fn stream_dim(&self) -> usize {
        match self.fusion {
            Fusion::Late => self.person_feature_dim(),
            Fusion::Early => self.person_feature_dim() * self.persons,
        }
    }

    /// Rows feeding the group head: persons (or the fused stream) plus the ball.
    pub fn group_rows(&self) -> usize {
        let base = match self.fusion {
            Fusion::Late => self.persons,
            Fusion::Early => 1,
        };
        base + usize::from(self.ball_enabled)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.channels.len() < 2 {
            return bad(format!(
                "need at least one conv block, channels {:?}",
                self.channels
            ));
        }
        if self.channels.contains(&0) {
            return bad("conv widths must be positive".into());
        }
        if self.pose_dim + self.pos_embed_dim != self.person_feature_dim() {
            return bad(format!(
                "pose_dim {} + pos_embed_dim {} must equal channels[0] = {}",
                self.pose_dim,
                self.pos_embed_dim,
                self.person_feature_dim()
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel_size {} must be odd", self.kernel_size));
        }
        if self.persons == 0 || self.frames == 0 {
            return bad("persons and frames must be positive".into());
        }
        if self.keyframe_index >= self.frames {
            return bad(format!(
                "keyframe_index {} outside {} frames",
                self.keyframe_index, self.frames
            ));
        }
        if self.ball_encoding_dim == 0 || !self.ball_encoding_dim.is_multiple_of(4) {
            return bad(format!(
                "ball_encoding_dim {} must be a positive multiple of 4",
                self.ball_encoding_dim
            ));
        }
        if [
            self.phi_hidden,
            self.psi_hidden,
            self.head_hidden,
            self.group_classes,
            self.action_classes,
        ]
        .contains(&0)
        {
            return bad("hidden widths and class counts must be positive".into());
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!(
                "alpha {} must be finite and non-negative",
                self.alpha
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let c = PogarsConfig::default();
        c.validate().unwrap();
        assert_eq!(c.person_feature_dim(), 64);
        assert_eq!(c.feature_dim(), 1024);
        assert_eq!(c.blocks(), 4);
        assert_eq!(c.group_rows(), 12);
        let ball = PogarsConfig {
            ball_enabled: true,
            ..c
        };
        assert_eq!(ball.group_rows(), 13);
    }

    #[test]
    fn early_fusion_stream_width() {
        let c = PogarsConfig {
            fusion: Fusion::Early,
            ..PogarsConfig::default()
        };
        assert_eq!(c.stream_dim(), 768);
        assert_eq!(c.group_rows(), 1);
    }

    #[test]
    fn rejects_inconsistent_widths() {
        let c = PogarsConfig {
            pos_embed_dim: 16,
            ..PogarsConfig::default()
        };
        assert!(c.validate().is_err());
        let c = PogarsConfig {
            kernel_size: 4,
            ..PogarsConfig::default()
        };
        assert!(c.validate().is_err());
        PogarsConfig::tiny().validate().unwrap();
    }
}
