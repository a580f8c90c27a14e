//! 3D volumes with physical-space metadata: loading, saving, isotropic
//! resampling and intensity normalization.
//!
//! Array axis convention, fixed across the crate:
//!   axis 0 = x, sagittal-normal (left-right)
//!   axis 1 = y, anterior-posterior
//!   axis 2 = z, longitudinal (head-foot)
//!
//! A voxel at index `(i, j, k)` sits at physical position
//! `origin + (i, j, k) * spacing` in mm.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::nifti;

/// Array axis running head-foot.
pub const LONGITUDINAL_AXIS: usize = 2;
/// Array axis normal to the sagittal plane.
pub const SAGITTAL_AXIS: usize = 0;

/// Interpolation used by [`Volume::resample_isotropic`].
///
/// `Nearest` is mandatory for label volumes; `Trilinear` for intensities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    Trilinear,
    Nearest,
}

/// A 3D scalar grid with voxel spacing and origin in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
    spacing: [f64; 3],
    origin: [f64; 3],
}

/// Summary intensity statistics over all voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeStats {
    pub mean: f64,
    pub std: f64,
    pub voxel_count: usize,
}

impl Volume {
    pub fn new(data: Array3<f32>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if data.iter().len() == 0 || data.shape().contains(&0) {
            return Err(Error::Argument("volume dimensions must be positive".into()));
        }
        if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Argument(format!(
                "voxel spacing must be strictly positive, got {spacing:?}"
            )));
        }
        Ok(Volume {
            data,
            spacing,
            origin,
        })
    }

    /// Uniform volume, mostly for tests and phantoms.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], value: f32) -> Self {
        Volume::new(Array3::from_elem(dims, value), spacing, origin)
            .expect("filled() requires positive dims and spacing")
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Continuous voxel index of a physical point (mm).
    pub fn world_to_index(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = (p[a] - self.origin[a]) / self.spacing[a];
        }
        out
    }

    /// Physical position (mm) of a voxel index.
    pub fn index_to_world(&self, idx: [usize; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.origin[a] + idx[a] as f64 * self.spacing[a];
        }
        out
    }

    /// Voxel nearest to a physical point, or `None` when the point rounds
    /// outside the grid.
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

    pub fn stats(&self) -> VolumeStats {
        let n = self.data.len();
        let mean = self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        let ss = self
            .data
            .iter()
            .map(|&v| {
                let d = f64::from(v) - mean;
                d * d
            })
            .sum::<f64>();
        VolumeStats {
            mean,
            std: (ss / n as f64).sqrt(),
            voxel_count: n,
        }
    }

    /// Read a volume from a NIfTI-1 file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw = nifti::read(path.as_ref())?;
        if raw.dims[3] != 1 {
            return Err(Error::Format(format!(
                "{}: expected a scalar volume, found {} channels",
                path.as_ref().display(),
                raw.dims[3]
            )));
        }
        let dims = [raw.dims[0], raw.dims[1], raw.dims[2]];
        let data = array3_from_x_fastest(dims, &raw.data);
        Volume::new(data, raw.spacing.map(f64::from), raw.origin.map(f64::from))
    }

    /// Write the volume as a NIfTI-1 file. Spacing and origin are stored at
    /// f32 precision, the container's native width.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let dims = self.dims();
        nifti::write(
            path.as_ref(),
            &nifti::NiftiData {
                dims: [dims[0], dims[1], dims[2], 1],
                spacing: self.spacing.map(|s| s as f32),
                origin: self.origin.map(|o| o as f32),
                data: x_fastest_from_array3(&self.data),
            },
        )
    }

    /// Resample onto an isotropic grid with the given spacing (mm).
    ///
    /// The output grid is anchored at the input origin and has
    /// `round(dim * spacing / target)` voxels per axis. Samples outside the
    /// input grid clamp to the nearest edge voxel.
    pub fn resample_isotropic(&self, target: f64, mode: ResampleMode) -> Result<Volume> {
        if target <= 0.0 || !target.is_finite() {
            return Err(Error::Argument(format!(
                "target spacing must be positive, got {target}"
            )));
        }
        let in_dims = self.dims();
        let out_dims = resampled_dims(in_dims, self.spacing, target);

        // Continuous source index per output index, per axis.
        let src_coord = |a: usize, j: usize| (j as f64) * target / self.spacing[a];

        let mut out = Array3::<f32>::zeros(out_dims);
        match mode {
            ResampleMode::Nearest => {
                for i in 0..out_dims[0] {
                    let x = clamp_index(src_coord(0, i).round(), in_dims[0]);
                    for j in 0..out_dims[1] {
                        let y = clamp_index(src_coord(1, j).round(), in_dims[1]);
                        for k in 0..out_dims[2] {
                            let z = clamp_index(src_coord(2, k).round(), in_dims[2]);
                            out[[i, j, k]] = self.data[[x, y, z]];
                        }
                    }
                }
            }
            ResampleMode::Trilinear => {
                for i in 0..out_dims[0] {
                    let (x0, x1, fx) = lerp_taps(src_coord(0, i), in_dims[0]);
                    for j in 0..out_dims[1] {
                        let (y0, y1, fy) = lerp_taps(src_coord(1, j), in_dims[1]);
                        for k in 0..out_dims[2] {
                            let (z0, z1, fz) = lerp_taps(src_coord(2, k), in_dims[2]);
                            let d = &self.data;
                            let c00 = lerp(d[[x0, y0, z0]], d[[x1, y0, z0]], fx);
                            let c10 = lerp(d[[x0, y1, z0]], d[[x1, y1, z0]], fx);
                            let c01 = lerp(d[[x0, y0, z1]], d[[x1, y0, z1]], fx);
                            let c11 = lerp(d[[x0, y1, z1]], d[[x1, y1, z1]], fx);
                            let c0 = lerp(c00, c10, fy);
                            let c1 = lerp(c01, c11, fy);
                            out[[i, j, k]] = lerp(c0, c1, fz);
                        }
                    }
                }
            }
        }

        Volume::new(out, [target; 3], self.origin)
    }

    /// Shift and scale intensities to zero mean and unit standard deviation.
    pub fn normalize(&self) -> Result<Volume> {
        let stats = self.stats();
        if stats.voxel_count < 2 {
            return Err(Error::DegenerateInput(
                "normalization needs at least 2 voxels".into(),
            ));
        }
        if stats.std <= 1e-8 * stats.mean.abs().max(1.0) {
            return Err(Error::DegenerateInput(
                "constant volume has zero intensity standard deviation".into(),
            ));
        }
        let mean = stats.mean as f32;
        let inv_std = (1.0 / stats.std) as f32;
        let data = self.data.mapv(|v| (v - mean) * inv_std);
        Volume::new(data, self.spacing, self.origin)
    }
}

/// Output grid size of [`Volume::resample_isotropic`]: per-axis
/// `round(dim * spacing / target)`, at least 1.
pub fn resampled_dims(dims: [usize; 3], spacing: [f64; 3], target: f64) -> [usize; 3] {
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = ((dims[a] as f64 * spacing[a] / target).round() as usize).max(1);
    }
    out
}

fn clamp_index(x: f64, dim: usize) -> usize {
    if x <= 0.0 {
        0
    } else if x >= (dim - 1) as f64 {
        dim - 1
    } else {
        x as usize
    }
}

/// Edge-clamped linear taps: floor index, next index, fractional weight.
fn lerp_taps(x: f64, dim: usize) -> (usize, usize, f32) {
    if x <= 0.0 {
        return (0, 0, 0.0);
    }
    let max = (dim - 1) as f64;
    if x >= max {
        return (dim - 1, dim - 1, 0.0);
    }
    let i0 = x.floor();
    let frac = (x - i0) as f32;
    let i0 = i0 as usize;
    (i0, (i0 + 1).min(dim - 1), frac)
}

// This form is exact for t = 0 and for a == b, which the identity and
// constant-volume contracts rely on.
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// NIfTI stores x fastest; our arrays are indexed `[x, y, z]`.
pub(crate) fn array3_from_x_fastest(dims: [usize; 3], flat: &[f32]) -> Array3<f32> {
    let mut arr = Array3::zeros(dims);
    let mut it = flat.iter();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                arr[[i, j, k]] = *it.next().unwrap();
            }
        }
    }
    arr
}

pub(crate) fn x_fastest_from_array3(arr: &Array3<f32>) -> Vec<f32> {
    let s = arr.shape();
    let mut out = Vec::with_capacity(arr.len());
    for k in 0..s[2] {
        for j in 0..s[1] {
            for i in 0..s[0] {
                out.push(arr[[i, j, k]]);
            }
        }
    }
    out
}
