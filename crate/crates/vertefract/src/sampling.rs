//! Segment extraction for both pathways.
//!
//! The coarse companion grid is anchored at the volume origin (cell `j`
//! covers voxels `[f*j, f*j + f)`), not at the segment: a voxel's coarse
//! context is then a function of its global position only, so predictions
//! do not depend on how a volume is tiled, and training segments see
//! exactly the geometry inference will use. Context outside the volume is
//! zero, which equals the mean of normalized intensities.

use ndarray::{Array3, Array4};

use crate::network::{NetworkConfig, SegmentInput};
use crate::volume::Volume;

/// A preprocessed volume plus its globally anchored coarse companion.
#[derive(Debug, Clone)]
pub struct PreparedVolume {
    volume: Volume,
    coarse: Array3<f64>,
    factors: [usize; 3],
    rf_margin: [usize; 3],
}

impl PreparedVolume {
    /// Build the coarse grid by averaging factor-sized blocks (zero-padded
    /// at the far edges). The volume is expected to be resampled and
    /// normalized already.
    pub fn new(cfg: &NetworkConfig, volume: Volume) -> PreparedVolume {
        let factors = cfg.subsample_factors();
        let dims = volume.dims();
        let mut cdims = [0usize; 3];
        for a in 0..3 {
            cdims[a] = dims[a].div_ceil(factors[a]);
        }
        let block = (factors[0] * factors[1] * factors[2]) as f64;
        let data = volume.data();
        let mut coarse = Array3::<f64>::zeros(cdims);
        for cx in 0..cdims[0] {
            for cy in 0..cdims[1] {
                for cz in 0..cdims[2] {
                    let mut acc = 0.0;
                    for dx in 0..factors[0] {
                        let x = cx * factors[0] + dx;
                        if x >= dims[0] {
                            continue;
                        }
                        for dy in 0..factors[1] {
                            let y = cy * factors[1] + dy;
                            if y >= dims[1] {
                                continue;
                            }
                            for dz in 0..factors[2] {
                                let z = cz * factors[2] + dz;
                                if z >= dims[2] {
                                    continue;
                                }
                                acc += f64::from(data[[x, y, z]]);
                            }
                        }
                    }
                    coarse[[cx, cy, cz]] = acc / block;
                }
            }
        }

        let rf = cfg.receptive_field().normal;
        PreparedVolume {
            volume,
            coarse,
            factors,
            rf_margin: [rf[0] / 2, rf[1] / 2, rf[2] / 2],
        }
    }

    pub fn volume(&self) -> &Volume {
        &self.volume
    }

    /// Extract both pathway inputs for the output region starting at
    /// `out_start` (which must lie inside the volume together with
    /// `out_dims`). Context beyond the volume is zero-padded.
    pub fn extract(
        &self,
        cfg: &NetworkConfig,
        out_start: [usize; 3],
        out_dims: [usize; 3],
    ) -> SegmentInput {
        let dims = self.volume.dims();
        for a in 0..3 {
            assert!(
                out_start[a] + out_dims[a] <= dims[a],
                "output region exceeds volume on axis {a}"
            );
        }
        let mut phase = [0usize; 3];
        for a in 0..3 {
            phase[a] = out_start[a] % self.factors[a];
        }
        let spec = cfg.segment_spec(out_dims, phase);

        let mut n_start = [0i64; 3];
        let mut c_start = [0i64; 3];
        for a in 0..3 {
            n_start[a] = out_start[a] as i64 - self.rf_margin[a] as i64;
            c_start[a] = (out_start[a] / self.factors[a]) as i64 - self.rf_margin[a] as i64;
        }

        let normal = extract_padded(self.volume.data(), n_start, spec.input_dims, |v| {
            f64::from(v)
        });
        let subsampled = extract_padded(&self.coarse, c_start, spec.input_subsampled_dims, |v| v);
        SegmentInput {
            normal,
            subsampled,
            phase,
        }
    }
}

/// Copy a region (possibly extending past the array) into a 1-channel
/// network input, zero where out of bounds.
fn extract_padded<T: Copy>(
    src: &Array3<T>,
    start: [i64; 3],
    dims: [usize; 3],
    convert: impl Fn(T) -> f64,
) -> Array4<f64> {
    let sdims = src.shape();
    let mut out = Array4::<f64>::zeros((1, dims[0], dims[1], dims[2]));
    // in-bounds overlap in output coordinates
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        lo[a] = (-start[a]).max(0) as usize;
        hi[a] = ((sdims[a] as i64 - start[a]).clamp(0, dims[a] as i64)) as usize;
    }
    for x in lo[0]..hi[0] {
        let sx = (start[0] + x as i64) as usize;
        for y in lo[1]..hi[1] {
            let sy = (start[1] + y as i64) as usize;
            for z in lo[2]..hi[2] {
                let sz = (start[2] + z as i64) as usize;
                out[[0, x, y, z]] = convert(src[[sx, sy, sz]]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Variant;
    use ndarray::Array3;

    fn cfg() -> NetworkConfig {
        NetworkConfig::downsized(Variant::ThreeD, 2)
    }

    fn volume(dims: [usize; 3]) -> Volume {
        let data = Array3::from_shape_fn(dims, |(i, j, k)| (i * 10000 + j * 100 + k) as f32);
        Volume::new(data, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn coarse_grid_averages_blocks_anchored_at_origin() {
        let vol = Volume::new(
            Array3::from_shape_fn([6, 6, 6], |(i, _, _)| i as f32),
            [1.0; 3],
            [0.0; 3],
        )
        .unwrap();
        let prep = PreparedVolume::new(&cfg(), vol);
        // cell (0,0,0) covers x in 0..3 -> mean of {0,1,2} = 1
        assert!((prep.coarse[[0, 0, 0]] - 1.0).abs() < 1e-12);
        assert!((prep.coarse[[1, 0, 0]] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_grid_zero_pads_partial_blocks() {
        let vol = Volume::new(Array3::from_elem([4, 3, 3], 3.0), [1.0; 3], [0.0; 3]).unwrap();
        let prep = PreparedVolume::new(&cfg(), vol);
        assert_eq!(prep.coarse.shape(), &[2, 1, 1]);
        assert!((prep.coarse[[0, 0, 0]] - 3.0).abs() < 1e-12);
        // second x-cell holds one in-bounds plane of 3.0 out of three
        assert!((prep.coarse[[1, 0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extract_interior_matches_direct_slice() {
        let c = cfg();
        let vol = volume([40, 40, 40]);
        let prep = PreparedVolume::new(&c, vol.clone());
        let seg = prep.extract(&c, [12, 13, 14], [3, 3, 3]);
        assert_eq!(seg.phase, [0, 1, 2]);
        // normal input starts rf_margin = 8 before the output region
        assert_eq!(seg.normal.shape(), &[1, 19, 19, 19]);
        for x in 0..19 {
            for y in 0..19 {
                for z in 0..19 {
                    let want = f64::from(vol.data()[[12 - 8 + x, 13 - 8 + y, 14 - 8 + z]]);
                    assert_eq!(seg.normal[[0, x, y, z]], want);
                }
            }
        }
    }

    #[test]
    fn extract_near_border_zero_pads_context() {
        let c = cfg();
        let vol = volume([20, 20, 20]);
        let prep = PreparedVolume::new(&c, vol.clone());
        let seg = prep.extract(&c, [0, 0, 0], [3, 3, 3]);
        // first 8 voxels of context on each axis are outside -> zero
        assert_eq!(seg.normal[[0, 0, 0, 0]], 0.0);
        assert_eq!(seg.normal[[0, 7, 7, 7]], 0.0);
        assert_eq!(seg.normal[[0, 8, 8, 8]], f64::from(vol.data()[[0, 0, 0]]));
    }

    #[test]
    fn extraction_is_consistent_across_tilings() {
        // the same output voxel extracted via two different output regions
        // sees identical pathway inputs where their receptive fields overlap
        let c = cfg();
        let vol = volume([30, 30, 30]);
        let prep = PreparedVolume::new(&c, vol);
        let a = prep.extract(&c, [9, 9, 9], [6, 6, 6]);
        let b = prep.extract(&c, [12, 9, 9], [3, 6, 6]);
        // voxel (12,9,9) is output index (3,0,0) in a and (0,0,0) in b;
        // its normal-pathway window must agree
        for x in 0..17 {
            for y in 0..17 {
                for z in 0..17 {
                    assert_eq!(a.normal[[0, x + 3, y, z]], b.normal[[0, x, y, z]]);
                }
            }
        }
    }
}
