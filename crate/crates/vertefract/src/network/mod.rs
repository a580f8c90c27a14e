//! The dual-pathway voxel-classification CNN.
//!
//! Eleven weighted layers: eight valid (unpadded) convolutions per pathway,
//! two fused 1x1x1 hidden layers after concatenating the pathways, and a
//! 1x1x1 classification layer over the three voxel classes. The subsampled
//! pathway sees the same location at a coarser grid for spatial context.
//!
//! `NetworkConfig` carries the architecture description; receptive field
//! and parameter count are derived from it and checkable without weights.

mod conv;
mod model;

pub use conv::softmax_channels;
pub use model::{
    cross_entropy_loss_and_grad, ConvLayer, ModelWeights, SegmentInput, N_CONV_LAYERS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variants: in-plane-only filters, five input slices fed to
/// the first layer, or fully 3D filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(rename = "1slice")]
    OneSlice,
    #[serde(rename = "5slices")]
    FiveSlices,
    #[serde(rename = "3d")]
    ThreeD,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::OneSlice => "1slice",
            Variant::FiveSlices => "5slices",
            Variant::ThreeD => "3d",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1slice" => Ok(Variant::OneSlice),
            "5slices" => Ok(Variant::FiveSlices),
            "3d" => Ok(Variant::ThreeD),
            other => Err(Error::Argument(format!(
                "unknown variant '{other}', expected 1slice, 5slices or 3d"
            ))),
        }
    }
}

/// Receptive fields per axis: the normal pathway's, and the subsampled
/// pathway's expressed in input voxels (normal rf times the per-axis
/// subsampling factor).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    pub normal: [usize; 3],
    pub subsampled_effective: [usize; 3],
}

/// Segment geometry: network input sizes implied by a desired output patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpec {
    pub output_dims: [usize; 3],
    pub input_dims: [usize; 3],
    pub input_subsampled_dims: [usize; 3],
}

/// Architecture description. Filter shapes are `[x, y, z]` with axis 0 the
/// sagittal-normal axis, matching the volume convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub conv1_filter: [usize; 3],
    pub conv_rest_filter: [usize; 3],
    /// Output channels of the eight conv layers (both pathways).
    pub conv_channels: Vec<usize>,
    /// Output channels of the two hidden fusion layers.
    pub fusion_channels: Vec<usize>,
    pub n_classes: usize,
    pub subsample_factor: usize,
}

impl NetworkConfig {
    /// The calibrated default plan for a variant. All three land within
    /// 0.2% of each other and of the 230K parameter budget.
    pub fn for_variant(variant: Variant) -> NetworkConfig {
        let (conv1_filter, conv_rest_filter, conv_channels, fusion_channels) = match variant {
            Variant::ThreeD => (
                [3, 3, 3],
                [3, 3, 3],
                vec![18, 18, 24, 24, 24, 24, 30, 30],
                vec![55, 55],
            ),
            Variant::OneSlice => (
                [1, 3, 3],
                [1, 3, 3],
                vec![30, 30, 40, 40, 40, 40, 50, 50],
                vec![108, 108],
            ),
            Variant::FiveSlices => (
                [5, 3, 3],
                [1, 3, 3],
                vec![30, 30, 40, 40, 40, 40, 50, 50],
                vec![100, 100],
            ),
        };
        NetworkConfig {
            variant,
            conv1_filter,
            conv_rest_filter,
            conv_channels,
            fusion_channels,
            n_classes: 3,
            subsample_factor: 3,
        }
    }

    /// A small plan with the same topology, for fast experiments and tests.
    pub fn downsized(variant: Variant, width: usize) -> NetworkConfig {
        let mut cfg = NetworkConfig::for_variant(variant);
        cfg.conv_channels = vec![width; N_CONV_LAYERS];
        cfg.fusion_channels = vec![2 * width, 2 * width];
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != N_CONV_LAYERS {
            return Err(Error::Config(format!(
                "expected {N_CONV_LAYERS} conv layers, got {}",
                self.conv_channels.len()
            )));
        }
        if self.conv_channels.contains(&0)
            || self.fusion_channels.contains(&0)
        {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.fusion_channels.is_empty() {
            return Err(Error::Config(
                "at least one fusion layer is required".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.subsample_factor == 0 {
            return Err(Error::Config("subsample factor must be positive".into()));
        }
        for f in [self.conv1_filter, self.conv_rest_filter] {
            if f.iter().any(|&k| k == 0 || k % 2 == 0) {
                return Err(Error::Config(format!(
                    "filter extents must be odd and positive, got {f:?}"
                )));
            }
        }
        Ok(())
    }

    /// Filter shape of conv layer `i` (0-based).
    pub fn filter_of_layer(&self, i: usize) -> [usize; 3] {
        if i == 0 {
            self.conv1_filter
        } else {
            self.conv_rest_filter
        }
    }

    /// Per-axis receptive field of the stride-1 conv stack:
    /// `1 + sum(filter_extent - 1)` over the eight layers.
    pub fn receptive_field(&self) -> ReceptiveField {
        let mut normal = [0usize; 3];
        for a in 0..3 {
            normal[a] = 1
                + (self.conv1_filter[a] - 1)
                + (N_CONV_LAYERS - 1) * (self.conv_rest_filter[a] - 1);
        }
        let factors = self.subsample_factors();
        let mut eff = [0usize; 3];
        for a in 0..3 {
            eff[a] = normal[a] * factors[a];
        }
        ReceptiveField {
            normal,
            subsampled_effective: eff,
        }
    }

    /// Per-axis subsampling of the context pathway. Axes the deep stack
    /// never convolves over (through-plane in the 2D-style variants) are
    /// not downsampled, so those variants stay slice-separable.
    pub fn subsample_factors(&self) -> [usize; 3] {
        let mut f = [0usize; 3];
        for a in 0..3 {
            f[a] = if self.conv_rest_filter[a] == 1 {
                1
            } else {
                self.subsample_factor
            };
        }
        f
    }

    /// Exact learnable-parameter count: convolution weights and biases of
    /// both pathways plus the fusion/classification layers, and the
    /// per-channel PReLU slopes.
    pub fn count_parameters(&self) -> usize {
        let mut total = 0usize;
        // one pathway
        let mut pathway = 0usize;
        let mut c_in = 1usize;
        for (i, &c_out) in self.conv_channels.iter().enumerate() {
            pathway += conv_param_count(self.filter_of_layer(i), c_in, c_out);
            pathway += c_out; // prelu slope per channel
            c_in = c_out;
        }
        total += 2 * pathway;

        let mut c = 2 * *self.conv_channels.last().unwrap();
        for &h in &self.fusion_channels {
            total += conv_param_count([1, 1, 1], c, h) + h;
            c = h;
        }
        total += conv_param_count([1, 1, 1], c, self.n_classes);
        total
    }

    /// Segment geometry for a desired output patch. `phase` is the output
    /// region's global start modulo the subsampling factor, which shifts
    /// how output voxels align with coarse-grid cells.
    pub fn segment_spec(&self, output_dims: [usize; 3], phase: [usize; 3]) -> SegmentSpec {
        let rf = self.receptive_field().normal;
        let factors = self.subsample_factors();
        let mut input_dims = [0usize; 3];
        let mut sub_dims = [0usize; 3];
        for a in 0..3 {
            input_dims[a] = output_dims[a] + rf[a] - 1;
            let m = (output_dims[a] - 1 + phase[a] % factors[a]) / factors[a] + 1;
            sub_dims[a] = m + rf[a] - 1;
        }
        SegmentSpec {
            output_dims,
            input_dims,
            input_subsampled_dims: sub_dims,
        }
    }

    /// Output patch dims for a given normal-pathway input size.
    pub fn output_dims_for_input(&self, input_dims: [usize; 3]) -> Result<[usize; 3]> {
        let rf = self.receptive_field().normal;
        let mut out = [0usize; 3];
        for a in 0..3 {
            if input_dims[a] < rf[a] {
                return Err(Error::Shape(format!(
                    "input {input_dims:?} smaller than receptive field {rf:?} on axis {a}"
                )));
            }
            out[a] = input_dims[a] - (rf[a] - 1);
        }
        Ok(out)
    }
}

/// Weights-plus-biases count of a single convolution layer.
pub fn conv_param_count(filter: [usize; 3], c_in: usize, c_out: usize) -> usize {
    filter[0] * filter[1] * filter[2] * c_in * c_out + c_out
}
