//! Image encoders, visibility-aware feature fusion, the color and deviation heads,
//! and the conditional discriminator.

mod discriminator;
mod generator;
pub mod layers;

use serde::{Deserialize, Serialize};

pub use discriminator::{DiscOutput, Discriminator, DISC_INPUT_CHANNELS};
pub use generator::{
    cell_weights, positional_encode, positional_encode_into, Branch, FeatureMaps, Fusion, Generator, PointBatch,
};

/// Which point features enter fusion. Absent features and their visibility bits are zeroed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum FeatureSet {
    #[serde(rename = "q")]
    Q,
    #[serde(rename = "q+p")]
    QP,
    #[serde(rename = "q+p'")]
    QMirror,
    #[serde(rename = "q+p+p'")]
    #[default]
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub texture_dim: usize,
    pub geometry_dim: usize,
    /// Frequencies of the point encoding.
    pub pe_levels: usize,
    /// Frequencies of the view-direction encoding fed to the color head.
    pub dir_levels: usize,
    pub hidden: usize,
    pub fusion_hidden: usize,
    pub disc_channels: usize,
    /// Deviation bound as a fraction of the scene diagonal.
    pub delta_fraction: f64,
    pub features: FeatureSet,
    /// Feed point visibility to the fusion weights; off zeroes those inputs.
    pub fusion_visibility: bool,
    pub disc_visibility_head: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            texture_dim: 16,
            geometry_dim: 16,
            pe_levels: 4,
            dir_levels: 2,
            hidden: 32,
            fusion_hidden: 32,
            disc_channels: 16,
            delta_fraction: 0.05,
            features: FeatureSet::All,
            fusion_visibility: true,
            disc_visibility_head: true,
        }
    }
}

impl NetConfig {
    pub fn pe_dim(&self) -> usize {
        6 * self.pe_levels
    }

    pub fn dir_dim(&self) -> usize {
        6 * self.dir_levels
    }

    pub fn texture_fused_dim(&self) -> usize {
        self.pe_dim() + 5 * self.texture_dim
    }

    pub fn geometry_fused_dim(&self) -> usize {
        self.pe_dim() + 3 * self.geometry_dim
    }

    pub fn validate(&self) -> crate::Result<()> {
        let dims = [self.texture_dim, self.geometry_dim, self.pe_levels, self.hidden, self.fusion_hidden, self.disc_channels];
        if dims.contains(&0) {
            return Err(crate::error::invalid("network widths and encoding levels must be positive"));
        }
        if !(self.delta_fraction >= 0.0 && self.delta_fraction.is_finite()) {
            return Err(crate::error::invalid("delta_fraction must be finite and non-negative"));
        }
        Ok(())
    }
}
