use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Cross-frame attention over every pyramid level.
    Dcfa,
    /// Cross-frame attention once, on the fused global features.
    Scfa,
    /// Inflow/outflow decoded straight from the attention output.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PositionalEncoding {
    None,
    /// Depthwise 3x3 convolution added to the token map.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Two 3x3 convolutions per scale, widths doubling from `backbone_width`.
    Small,
    /// VGG16 convolution layout (13 convolutions, 4 pools used).
    Vgg16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcfaConfig {
    pub n_units: usize,
    pub n_blocks_per_unit: usize,
    pub n_heads: usize,
    /// MLP hidden width as a multiple of the embedding width.
    pub mlp_ratio: usize,
    pub positional_encoding: PositionalEncoding,
    pub variant: Variant,
    /// Residual connection around cross attention.
    pub mca_residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Pyramid levels N_f; level i has stride 2^(i+1).
    pub n_levels: usize,
    /// Feature channels C, also the attention embedding width.
    pub channels: usize,
    pub backbone: BackboneKind,
    pub backbone_width: usize,
    /// Narrowest decoder stage.
    pub decoder_min_channels: usize,
    pub dio_channels: usize,
    /// Persons per pixel represented by one unit of a head's activation.
    /// Heads work at unit scale while densities are far below one.
    pub density_unit: f64,
    /// Negative slope of the head rectifiers during training; inference
    /// always clips at zero.
    #[serde(default = "default_train_leak")]
    pub train_leak: f64,
    pub dcfa: DcfaConfig,
    /// MLP hidden width of the SCFA stack; `None` picks the width whose
    /// parameter count is closest to the DCFA build.
    #[serde(default)]
    pub scfa_mlp_hidden: Option<usize>,
    pub seed: u64,
}

fn default_train_leak() -> f64 {
    0.1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-scale layout: VGG16 backbone, C = 128.
    pub fn full() -> Self {
        Self {
            n_levels: 3,
            channels: 128,
            backbone: BackboneKind::Vgg16,
            backbone_width: 64,
            decoder_min_channels: 16,
            dio_channels: 16,
            density_unit: 0.01,
            train_leak: default_train_leak(),
            dcfa: DcfaConfig {
                n_units: 3,
                n_blocks_per_unit: 2,
                n_heads: 4,
                mlp_ratio: 2,
                positional_encoding: PositionalEncoding::None,
                variant: Variant::Dcfa,
                mca_residual: true,
            },
            scfa_mlp_hidden: None,
            seed: 0,
        }
    }

    /// Laptop-scale model.
    pub fn desk() -> Self {
        Self {
            channels: 32,
            backbone: BackboneKind::Small,
            backbone_width: 16,
            decoder_min_channels: 8,
            ..Self::full()
        }
    }

    /// Smallest useful model: two levels, C = 8, one block per unit.
    pub fn tiny() -> Self {
        Self {
            n_levels: 2,
            channels: 8,
            backbone: BackboneKind::Small,
            backbone_width: 16,
            decoder_min_channels: 16,
            dio_channels: 16,
            density_unit: 0.01,
            train_leak: default_train_leak(),
            dcfa: DcfaConfig {
                n_units: 2,
                n_blocks_per_unit: 1,
                n_heads: 2,
                mlp_ratio: 2,
                positional_encoding: PositionalEncoding::None,
                variant: Variant::Dcfa,
                mca_residual: true,
            },
            scfa_mlp_hidden: None,
            seed: 0,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.dcfa.variant = variant;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.dcfa.n_heads
    }

    /// Input sides must be multiples of this (inputs are padded up to it).
    pub fn size_multiple(&self) -> usize {
        1 << (self.n_levels + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dcfa;
        if self.n_levels == 0 {
            return Err(Error::Config("n_levels must be >= 1".into()));
        }
        if self.backbone == BackboneKind::Vgg16 && self.n_levels > 4 {
            return Err(Error::Config("the VGG16 layout provides at most 4 levels".into()));
        }
        if self.channels == 0 || self.backbone_width == 0 || self.decoder_min_channels == 0 || self.dio_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if d.n_heads == 0 || self.channels % d.n_heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.channels, d.n_heads
            )));
        }
        if d.n_units == 0 || d.n_blocks_per_unit == 0 || d.mlp_ratio == 0 {
            return Err(Error::Config("n_units, n_blocks_per_unit and mlp_ratio must be >= 1".into()));
        }
        if d.variant != Variant::Scfa && d.n_units != self.n_levels {
            return Err(Error::Config(format!(
                "n_units ({}) must equal the number of pyramid levels ({})",
                d.n_units, self.n_levels
            )));
        }
        if !(0.0..1.0).contains(&self.train_leak) {
            return Err(Error::Config("train_leak must lie in [0, 1)".into()));
        }
        if !(self.density_unit > 0.0 && self.density_unit.is_finite()) {
            return Err(Error::Config("density_unit must be positive".into()));
        }
        if self.scfa_mlp_hidden == Some(0) {
            return Err(Error::Config("scfa_mlp_hidden must be positive".into()));
        }
        Ok(())
    }
}
