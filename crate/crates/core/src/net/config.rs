//! Network configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body_model::{generate_toy_model, BodyModelDef};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupervisionMode {
    Parts,
    Keypoints,
    None,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Attention,
    Pooling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Pare,
    Gap,
}

/// Which body model the network poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BodyModelSource {
    Toy { seed: u64, vertices: usize, betas: usize },
    File { path: String },
}

impl BodyModelSource {
    pub fn load(&self, joints: usize) -> Result<BodyModelDef> {
        let m = match self {
            BodyModelSource::Toy { seed, vertices, betas } => generate_toy_model(*seed, *vertices, joints, *betas)?,
            BodyModelSource::File { path } => BodyModelDef::load(path)?,
        };
        if m.num_joints() != joints {
            return Err(CoreError::Config(format!(
                "body model has {} joints but the network is configured for {joints}",
                m.num_joints()
            )));
        }
        Ok(m)
    }
}

/// Part supervision that applies at a given step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartSupervision {
    Off,
    Segmentation,
    Heatmaps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub architecture: Architecture,
    pub image_size: usize,
    /// Output channels of each stride-2 backbone stage.
    pub backbone_channels: Vec<usize>,
    /// Extra stride-1 convolutions per backbone stage.
    pub backbone_depth: usize,
    /// Channels of the convolution after each 2× upsampling in both branches.
    pub branch_channels: Vec<usize>,
    /// C, the per-pixel feature size of the 3D branch.
    pub feature_channels: usize,
    /// J, joints regressed and attended over.
    pub num_joints: usize,
    pub supervision_mode: SupervisionMode,
    pub sampling_mode: SamplingMode,
    pub mixed_switch_step: u64,
    /// Gaussian width, in part-map pixels, of keypoint heatmap targets.
    pub heatmap_sigma: f64,
    pub gap_hidden: usize,
    pub gap_iterations: usize,
    /// Initial camera scale.
    pub init_scale: f64,
    pub body_model: BodyModelSource,
    pub use_posedirs: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Pare,
            image_size: 64,
            backbone_channels: vec![16, 32, 48, 64],
            backbone_depth: 1,
            branch_channels: vec![32, 24, 16],
            feature_channels: 64,
            num_joints: 24,
            supervision_mode: SupervisionMode::Mixed,
            sampling_mode: SamplingMode::Attention,
            mixed_switch_step: 6000,
            heatmap_sigma: 2.0,
            gap_hidden: 256,
            gap_iterations: 3,
            init_scale: 0.9,
            body_model: BodyModelSource::Toy { seed: 0, vertices: 1200, betas: 10 },
            use_posedirs: false,
        }
    }
}

impl NetConfig {
    /// Full-resolution variant: 224 px input, 7×7 backbone output, 56×56 maps.
    pub fn paper_scale() -> Self {
        Self {
            image_size: 224,
            backbone_channels: vec![64, 128, 256, 512, 512],
            branch_channels: vec![256, 256, 256],
            feature_channels: 256,
            ..Self::default()
        }
    }

    pub fn total_stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    /// Side of the backbone feature map.
    pub fn backbone_size(&self) -> usize {
        self.image_size / self.total_stride()
    }

    /// Side of the part and feature maps (H = W).
    pub fn map_size(&self) -> usize {
        self.backbone_size() << self.branch_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone_channels must be nonempty and positive".into());
        }
        if self.image_size == 0 || self.image_size % self.total_stride() != 0 {
            return bad(format!(
                "image_size {} is not divisible by the backbone stride {}",
                self.image_size,
                self.total_stride()
            ));
        }
        if self.branch_channels.contains(&0) || self.feature_channels == 0 || self.num_joints == 0 {
            return bad("branch widths, feature_channels and num_joints must be ≥ 1".into());
        }
        if !(self.heatmap_sigma > 0.0) || !(self.init_scale > 0.0) {
            return bad("heatmap_sigma and init_scale must be positive".into());
        }
        if self.architecture == Architecture::Gap && (self.gap_hidden == 0 || self.gap_iterations == 0) {
            return bad("gap_hidden and gap_iterations must be ≥ 1".into());
        }
        Ok(())
    }

    /// Part supervision active at `step`.
    pub fn part_supervision(&self, step: u64) -> PartSupervision {
        if self.architecture == Architecture::Gap {
            return PartSupervision::Off;
        }
        match self.supervision_mode {
            SupervisionMode::Parts => PartSupervision::Segmentation,
            SupervisionMode::Keypoints => PartSupervision::Heatmaps,
            SupervisionMode::None => PartSupervision::Off,
            SupervisionMode::Mixed if step < self.mixed_switch_step => PartSupervision::Segmentation,
            SupervisionMode::Mixed => PartSupervision::Off,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
