//! Whole-volume inference: tile the volume into non-overlapping output
//! regions, classify each through the network, and assemble a per-voxel
//! probability map.

use std::path::Path;

use ndarray::{Array4, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::ModelWeights;
use crate::nifti;
use crate::sampling::PreparedVolume;
use crate::volume::{array3_from_x_fastest, x_fastest_from_array3, Volume};

/// Per-voxel probabilities over (background, normal, fracture), aligned to
/// the resampled volume grid. Channel order is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    /// `[class, x, y, z]`
    data: Array4<f32>,
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl ProbabilityMap {
    pub fn new(data: Array4<f32>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::Shape(format!(
                "probability map needs 3 class channels, got {}",
                data.shape()[0]
            )));
        }
        Ok(ProbabilityMap {
            data,
            spacing,
            origin,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[1], s[2], s[3]]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn prob(&self, class: usize, idx: [usize; 3]) -> f32 {
        self.data[[class, idx[0], idx[1], idx[2]]]
    }

    /// The fracture channel as a standalone view.
    pub fn fracture(&self) -> ndarray::ArrayView3<'_, f32> {
        self.data.index_axis(Axis(0), 2)
    }

    /// Continuous voxel index of a physical point (mm).
    pub fn world_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = (p[a] - self.origin[a]) / self.spacing[a];
        }
        out
    }

    pub fn nearest_voxel(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let cont = self.world_to_index(p);
        let dims = self.dims();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let r = cont[a].round();
            if r < 0.0 || r >= dims[a] as f64 {
                return None;
            }
            out[a] = r as usize;
        }
        Some(out)
    }

    /// Stored as one 4D container, channels last, fixed class order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let dims = self.dims();
        let mut flat = Vec::with_capacity(self.data.len());
        for c in 0..3 {
            let channel = self.data.index_axis(Axis(0), c).to_owned();
            flat.extend_from_slice(&x_fastest_from_array3(&channel));
        }
        nifti::write(
            path.as_ref(),
            &nifti::NiftiData {
                dims: [dims[0], dims[1], dims[2], 3],
                spacing: self.spacing.map(|s| s as f32),
                origin: self.origin.map(|o| o as f32),
                data: flat,
            },
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw = nifti::read(path.as_ref())?;
        if raw.dims[3] != 3 {
            return Err(Error::Format(format!(
                "{}: expected 3 class channels, found {}",
                path.as_ref().display(),
                raw.dims[3]
            )));
        }
        let dims = [raw.dims[0], raw.dims[1], raw.dims[2]];
        let per_channel = dims[0] * dims[1] * dims[2];
        let mut data = Array4::<f32>::zeros((3, dims[0], dims[1], dims[2]));
        for c in 0..3 {
            let channel =
                array3_from_x_fastest(dims, &raw.data[c * per_channel..(c + 1) * per_channel]);
            data.index_axis_mut(Axis(0), c).assign(&channel);
        }
        ProbabilityMap::new(data, raw.spacing.map(f64::from), raw.origin.map(f64::from))
    }
}

/// Classify every voxel of a preprocessed (resampled, normalized) volume.
///
/// `tile` is the normal-pathway input size per tile and must reach the
/// receptive field on every axis. Output tiles partition the volume, each
/// voxel is predicted exactly once, and because the conv stack is pure and
/// the coarse grid is globally anchored the result is independent of the
/// tile size.
pub fn infer_volume(
    image: &Volume,
    weights: &ModelWeights,
    tile: [usize; 3],
) -> Result<ProbabilityMap> {
    let cfg = weights.cfg();
    let rf = cfg.receptive_field().normal;
    for a in 0..3 {
        if tile[a] < rf[a] {
            return Err(Error::Config(format!(
                "tile {tile:?} is smaller than the receptive field {rf:?}"
            )));
        }
    }
    let out_tile = cfg.output_dims_for_input(tile)?;
    let dims = image.dims();
    let prepared = PreparedVolume::new(cfg, image.clone());

    // enumerate output regions
    let mut regions = Vec::new();
    let mut sx = 0;
    while sx < dims[0] {
        let ox = out_tile[0].min(dims[0] - sx);
        let mut sy = 0;
        while sy < dims[1] {
            let oy = out_tile[1].min(dims[1] - sy);
            let mut sz = 0;
            while sz < dims[2] {
                let oz = out_tile[2].min(dims[2] - sz);
                regions.push(([sx, sy, sz], [ox, oy, oz]));
                sz += out_tile[2];
            }
            sy += out_tile[1];
        }
        sx += out_tile[0];
    }

    let tiles: Vec<Result<Array4<f64>>> = regions
        .par_iter()
        .map(|&(start, size)| {
            let seg = prepared.extract(cfg, start, size);
            weights.forward(&seg)
        })
        .collect();

    let mut data = Array4::<f32>::zeros((3, dims[0], dims[1], dims[2]));
    for ((start, size), tile) in regions.into_iter().zip(tiles) {
        let tile = tile?;
        for c in 0..3 {
            for x in 0..size[0] {
                for y in 0..size[1] {
                    for z in 0..size[2] {
                        data[[c, start[0] + x, start[1] + y, start[2] + z]] =
                            tile[[c, x, y, z]] as f32;
                    }
                }
            }
        }
    }

    ProbabilityMap::new(data, image.spacing(), image.origin())
}
