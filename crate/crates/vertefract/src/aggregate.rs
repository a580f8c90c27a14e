//! Aggregation of voxel probabilities into patient-level and
//! vertebra-level fracture decisions.
//!
//! Patient level: threshold the fracture channel, find 26-connected
//! components, discard those smaller than the noise threshold, and call
//! the case positive when any fracture voxels survive. Vertebra level:
//! Gaussian-weighted mean fracture probability inside a cube around each
//! vertebra centroid.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotations::VertebraName;
use crate::error::{Error, Result};
use crate::inference::ProbabilityMap;

/// The two patient-level hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientHyperparams {
    /// Fracture voxels must reach this probability to be selected.
    pub probability_threshold: f64,
    /// Components smaller than this voxel count are discarded as noise.
    pub noise_threshold: usize,
}

impl PatientHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability_threshold) {
            return Err(Error::Argument(format!(
                "probability threshold must lie in [0, 1], got {}",
                self.probability_threshold
            )));
        }
        Ok(())
    }
}

/// A retained fracture component: voxel count and inclusive index bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentInfo {
    pub size: usize,
    pub bbox_lo: [usize; 3],
    pub bbox_hi: [usize; 3],
}

/// Patient-level outcome for one probability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResult {
    pub fracture_voxel_count: usize,
    pub components: Vec<ComponentInfo>,
    pub decision: bool,
}

/// All 26-connected components of a binary mask, as voxel lists.
pub fn connected_components_26(mask: &Array3<bool>) -> Vec<Vec<[usize; 3]>> {
    let dims = mask.shape();
    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let mut visited = Array3::<bool>::from_elem((nx, ny, nz), false);
    let mut components = Vec::new();
    let mut stack: Vec<[usize; 3]> = Vec::new();

    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                if !mask[[x, y, z]] || visited[[x, y, z]] {
                    continue;
                }
                let mut voxels = Vec::new();
                visited[[x, y, z]] = true;
                stack.push([x, y, z]);
                while let Some(v) = stack.pop() {
                    voxels.push(v);
                    for dx in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dz in -1i64..=1 {
                                if dx == 0 && dy == 0 && dz == 0 {
                                    continue;
                                }
                                let n = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                                if n[0] < 0
                                    || n[1] < 0
                                    || n[2] < 0
                                    || n[0] >= nx as i64
                                    || n[1] >= ny as i64
                                    || n[2] >= nz as i64
                                {
                                    continue;
                                }
                                let n = [n[0] as usize, n[1] as usize, n[2] as usize];
                                if mask[n] && !visited[n] {
                                    visited[n] = true;
                                    stack.push(n);
                                }
                            }
                        }
                    }
                }
                components.push(voxels);
            }
        }
    }
    components
}

/// Patient-level detection on one probability map.
pub fn patient_detect(map: &ProbabilityMap, hp: &PatientHyperparams) -> Result<PatientResult> {
    hp.validate()?;
    let frac = map.fracture();
    let mask = frac.mapv(|p| f64::from(p) >= hp.probability_threshold);
    Ok(detect_on_mask(&mask, hp.noise_threshold))
}

/// The component/count/decision step on an already binarized mask.
pub fn detect_on_mask(mask: &Array3<bool>, noise_threshold: usize) -> PatientResult {
    let mut kept = Vec::new();
    let mut count = 0usize;
    for voxels in connected_components_26(mask) {
        if voxels.len() < noise_threshold {
            continue;
        }
        count += voxels.len();
        let mut lo = voxels[0];
        let mut hi = voxels[0];
        for v in &voxels {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        kept.push(ComponentInfo {
            size: voxels.len(),
            bbox_lo: lo,
            bbox_hi: hi,
        });
    }
    PatientResult {
        fracture_voxel_count: count,
        components: kept,
        decision: count > 0,
    }
}

/// One swept operating point, tagged with the hyperparameters that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub hp: PatientHyperparams,
    pub fpr: f64,
    pub tpr: f64,
}

/// Per-case decisions for every grid point, in grid order. Computing the
/// rows per case keeps only one probability map in memory at a time.
pub fn patient_decision_row(
    map: &ProbabilityMap,
    grid: &[PatientHyperparams],
) -> Result<Vec<bool>> {
    grid.iter()
        .map(|hp| patient_detect(map, hp).map(|r| r.decision))
        .collect()
}

/// (FPR, TPR) per grid point from per-case decision rows and case labels.
pub fn sweep_from_decisions(
    rows: &[Vec<bool>],
    labels: &[bool],
    grid: &[PatientHyperparams],
) -> Result<Vec<SweepPoint>> {
    if rows.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} decision rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation(
            "hyperparameter sweep needs at least one positive and one negative case".into(),
        ));
    }
    let mut points = Vec::with_capacity(grid.len());
    for (gi, hp) in grid.iter().enumerate() {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (row, &label) in rows.iter().zip(labels) {
            if row[gi] {
                if label {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        points.push(SweepPoint {
            hp: *hp,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(points)
}

/// Sweep a hyperparameter grid over labeled probability maps.
pub fn sweep_hyperparams(
    cases: &[(&ProbabilityMap, bool)],
    grid: &[PatientHyperparams],
) -> Result<Vec<SweepPoint>> {
    let rows: Vec<Vec<bool>> = cases
        .iter()
        .map(|(map, _)| patient_decision_row(map, grid))
        .collect::<Result<_>>()?;
    let labels: Vec<bool> = cases.iter().map(|&(_, l)| l).collect();
    sweep_from_decisions(&rows, &labels, grid)
}

/// The default sweep grid: probability thresholds crossed with noise
/// thresholds, spanning permissive to strict.
pub fn default_sweep_grid() -> Vec<PatientHyperparams> {
    let probs = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9];
    let noises = [0usize, 5, 10, 20, 50, 100, 200, 400, 800, 1600];
    let mut grid = Vec::with_capacity(probs.len() * noises.len());
    for &p in &probs {
        for &n in &noises {
            grid.push(PatientHyperparams {
                probability_threshold: p,
                noise_threshold: n,
            });
        }
    }
    grid
}

/// One vertebra's summary score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraScore {
    pub name: VertebraName,
    /// The centroid the cube was placed on (mm), after any perturbation.
    pub centroid: [f64; 3],
    pub score: f64,
}

/// Gaussian-weighted mean fracture probability inside an axis-aligned cube
/// of `cube_size` voxels centered on the voxel nearest the centroid.
///
/// Weights are `exp(-||x - c||^2 / (2 sigma^2))` with distances in mm to
/// the centroid itself; the cube is clipped at the volume border and the
/// weights renormalize over the surviving voxels. Even cube sizes extend
/// half a voxel further toward the negative axes.
pub fn vertebra_score(
    map: &ProbabilityMap,
    centroid: [f64; 3],
    cube_size: usize,
    sigma_mm: f64,
) -> Result<f64> {
    if cube_size < 1 {
        return Err(Error::Argument("cube size must be at least 1".into()));
    }
    if sigma_mm <= 0.0 || sigma_mm.is_nan() {
        return Err(Error::Argument("kernel sigma must be positive".into()));
    }
    let center = map
        .nearest_voxel(centroid)
        .ok_or_else(|| Error::Argument(format!("centroid {centroid:?} outside the volume")))?;

    let dims = map.dims();
    let spacing = map.spacing();
    let origin = map.origin();
    let lo_off = cube_size / 2;
    let hi_off = cube_size - 1 - lo_off;

    let mut weight_sum = 0.0f64;
    let mut acc = 0.0f64;
    let lo = |c: usize| c.saturating_sub(lo_off);
    let hi = |c: usize, d: usize| (c + hi_off).min(d - 1);
    for x in lo(center[0])..=hi(center[0], dims[0]) {
        for y in lo(center[1])..=hi(center[1], dims[1]) {
            for z in lo(center[2])..=hi(center[2], dims[2]) {
                let mut d2 = 0.0;
                for (a, &idx) in [x, y, z].iter().enumerate() {
                    let pos = origin[a] + idx as f64 * spacing[a];
                    let d = pos - centroid[a];
                    d2 += d * d;
                }
                let w = (-d2 / (2.0 * sigma_mm * sigma_mm)).exp();
                weight_sum += w;
                acc += w * f64::from(map.prob(2, [x, y, z]));
            }
        }
    }
    Ok(acc / weight_sum)
}

/// Score every annotation's vertebra on the map.
pub fn score_vertebrae(
    map: &ProbabilityMap,
    vertebrae: &[(VertebraName, [f64; 3])],
    cube_size: usize,
    sigma_mm: f64,
) -> Result<Vec<VertebraScore>> {
    vertebrae
        .iter()
        .map(|&(name, centroid)| {
            Ok(VertebraScore {
                name,
                centroid,
                score: vertebra_score(map, centroid, cube_size, sigma_mm)?,
            })
        })
        .collect()
}

/// Add independent zero-mean Gaussian noise per axis to each centroid,
/// simulating automated localization error; results are clamped to the
/// given physical bounds.
pub fn perturb_centroids(
    centroids: &[[f64; 3]],
    sigma_mm: f64,
    bounds_lo: [f64; 3],
    bounds_hi: [f64; 3],
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    centroids
        .iter()
        .map(|c| {
            let mut out = *c;
            for a in 0..3 {
                let g: f64 = rng.sample(StandardNormal);
                out[a] = (c[a] + sigma_mm * g).clamp(bounds_lo[a], bounds_hi[a]);
            }
            out
        })
        .collect()
}

/// Physical bounds (voxel centers) of a map, for centroid clamping.
pub fn map_bounds(map: &ProbabilityMap) -> ([f64; 3], [f64; 3]) {
    let dims = map.dims();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for a in 0..3 {
        lo[a] = map.origin()[a];
        hi[a] = map.origin()[a] + (dims[a] - 1) as f64 * map.spacing()[a];
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use ndarray::Array4;
    /// Build a map with the given fracture-channel values; the rest of the
    /// probability mass goes to background.
    fn map_from_fracture(frac: Array3<f32>) -> ProbabilityMap {
        let dims = frac.dim();
        let mut data = Array4::<f32>::zeros((3, dims.0, dims.1, dims.2));
        for ((x, y, z), &p) in frac.indexed_iter() {
            data[[2, x, y, z]] = p;
            data[[0, x, y, z]] = 1.0 - p;
        }
        ProbabilityMap::new(data, [1.0; 3], [0.0; 3]).unwrap()
    }

    fn blob(frac: &mut Array3<f32>, lo: [usize; 3], hi: [usize; 3], p: f32) {
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    frac[[x, y, z]] = p;
                }
            }
        }
    }

    /// Union-find components, an independent oracle for the flood fill.
    fn components_oracle(mask: &Array3<bool>) -> Vec<usize> {
        let dims = mask.shape().to_vec();
        let n = dims.iter().product::<usize>();
        let idx = |x: usize, y: usize, z: usize| (x * dims[1] + y) * dims[2] + z;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    if !mask[[x, y, z]] {
                        continue;
                    }
                    for dx in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dz in -1i64..=1 {
                                let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                                if nx < 0
                                    || ny < 0
                                    || nz < 0
                                    || nx >= dims[0] as i64
                                    || ny >= dims[1] as i64
                                    || nz >= dims[2] as i64
                                {
                                    continue;
                                }
                                let (nx, ny, nz) = (nx as usize, ny as usize, nz as usize);
                                if mask[[nx, ny, nz]] {
                                    let a = find(&mut parent, idx(x, y, z));
                                    let b = find(&mut parent, idx(nx, ny, nz));
                                    parent[a] = b;
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut sizes = std::collections::BTreeMap::new();
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    if mask[[x, y, z]] {
                        let root = find(&mut parent, idx(x, y, z));
                        *sizes.entry(root).or_insert(0usize) += 1;
                    }
                }
            }
        }
        let mut out: Vec<usize> = sizes.into_values().collect();
        out.sort_unstable();
        out
    }

    #[test]
    fn all_zero_map_is_negative() {
        let map = map_from_fracture(Array3::zeros((10, 10, 10)));
        let r = patient_detect(
            &map,
            &PatientHyperparams {
                probability_threshold: 0.1,
                noise_threshold: 0,
            },
        )
        .unwrap();
        assert_eq!(r.fracture_voxel_count, 0);
        assert!(!r.decision);
    }

    #[test]
    fn noise_threshold_gates_a_single_blob() {
        // one 5x5x4 = 100 voxel blob at probability 0.9
        let mut frac = Array3::zeros((20, 20, 20));
        blob(&mut frac, [10, 10, 10], [14, 14, 13], 0.9);
        let map = map_from_fracture(frac);
        let keep = patient_detect(
            &map,
            &PatientHyperparams {
                probability_threshold: 0.5,
                noise_threshold: 50,
            },
        )
        .unwrap();
        assert_eq!(keep.fracture_voxel_count, 100);
        assert!(keep.decision);
        let drop = patient_detect(
            &map,
            &PatientHyperparams {
                probability_threshold: 0.5,
                noise_threshold: 101,
            },
        )
        .unwrap();
        assert_eq!(drop.fracture_voxel_count, 0);
        assert!(!drop.decision);
    }

    #[test]
    fn two_blobs_with_one_below_noise_threshold() {
        // a 5x6x1 = 30 voxel blob and a 4x4x5 = 80 voxel blob
        let mut frac = Array3::zeros((24, 24, 24));
        blob(&mut frac, [0, 0, 0], [4, 5, 0], 0.9);
        blob(&mut frac, [10, 10, 10], [13, 13, 14], 0.9);
        let map = map_from_fracture(frac);
        let r = patient_detect(
            &map,
            &PatientHyperparams {
                probability_threshold: 0.5,
                noise_threshold: 50,
            },
        )
        .unwrap();
        assert_eq!(r.fracture_voxel_count, 80);
        assert_eq!(r.components.len(), 1);
        assert!(r.decision);
    }

    #[test]
    fn components_match_union_find_oracle_on_random_masks() {
        let mut rng = seeds::rng_for(1, "cc-test");
        for density in [0.05, 0.2, 0.5, 0.8] {
            for _ in 0..25 {
                let mask = Array3::from_shape_fn((12, 12, 12), |_| rng.gen_bool(density));
                let mut got: Vec<usize> = connected_components_26(&mask)
                    .iter()
                    .map(|c| c.len())
                    .collect();
                got.sort_unstable();
                assert_eq!(got, components_oracle(&mask));
            }
        }
    }

    #[test]
    fn detection_is_monotone_in_both_thresholds() {
        let mut rng = seeds::rng_for(2, "mono-test");
        let frac = Array3::from_shape_fn((15, 15, 15), |_| rng.gen_range(0.0..1.0f32));
        let map = map_from_fracture(frac);
        let mut prev = usize::MAX;
        for pt in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let r = patient_detect(
                &map,
                &PatientHyperparams {
                    probability_threshold: pt,
                    noise_threshold: 5,
                },
            )
            .unwrap();
            assert!(r.fracture_voxel_count <= prev);
            prev = r.fracture_voxel_count;
        }
        prev = usize::MAX;
        for nt in [0, 5, 20, 100] {
            let r = patient_detect(
                &map,
                &PatientHyperparams {
                    probability_threshold: 0.4,
                    noise_threshold: nt,
                },
            )
            .unwrap();
            assert!(r.fracture_voxel_count <= prev);
            prev = r.fracture_voxel_count;
        }
    }

    #[test]
    fn sweep_extremes_hit_the_roc_corners() {
        // every case has some fracture probability above zero
        let mut cases = Vec::new();
        for i in 0..4 {
            let mut frac = Array3::zeros((10, 10, 10));
            blob(&mut frac, [2, 2, 2], [4, 4, 4], 0.3 + 0.1 * i as f32);
            cases.push((map_from_fracture(frac), i % 2 == 0));
        }
        let refs: Vec<(&ProbabilityMap, bool)> = cases.iter().map(|(m, l)| (m, *l)).collect();
        let grid = [
            PatientHyperparams {
                probability_threshold: 0.0,
                noise_threshold: 0,
            },
            PatientHyperparams {
                probability_threshold: 1.0,
                noise_threshold: 0,
            },
        ];
        let pts = sweep_hyperparams(&refs, &grid).unwrap();
        assert_eq!((pts[0].fpr, pts[0].tpr), (1.0, 1.0));
        assert_eq!((pts[1].fpr, pts[1].tpr), (0.0, 0.0));
    }

    #[test]
    fn sweep_matches_hand_enumerated_toy_set() {
        // case A (positive): 64-voxel blob at 0.9
        // case B (negative): 4-voxel blob at 0.9
        // case C (negative): nothing
        let mut fa = Array3::zeros((12, 12, 12));
        blob(&mut fa, [1, 1, 1], [4, 4, 4], 0.9);
        let mut fb = Array3::zeros((12, 12, 12));
        blob(&mut fb, [1, 1, 1], [2, 2, 1], 0.9);
        let fc = Array3::zeros((12, 12, 12));
        let (a, b, c) = (
            map_from_fracture(fa),
            map_from_fracture(fb),
            map_from_fracture(fc),
        );
        let cases = [(&a, true), (&b, false), (&c, false)];
        let grid = [
            PatientHyperparams {
                probability_threshold: 0.5,
                noise_threshold: 0,
            },
            PatientHyperparams {
                probability_threshold: 0.5,
                noise_threshold: 20,
            },
            PatientHyperparams {
                probability_threshold: 0.95,
                noise_threshold: 0,
            },
        ];
        let pts = sweep_hyperparams(&cases, &grid).unwrap();
        // grid 0: A positive (tpr 1), B positive (fpr 0.5), C negative
        assert_eq!((pts[0].tpr, pts[0].fpr), (1.0, 0.5));
        // grid 1: noise 20 kills B's 4-voxel blob
        assert_eq!((pts[1].tpr, pts[1].fpr), (1.0, 0.0));
        // grid 2: threshold above every probability
        assert_eq!((pts[2].tpr, pts[2].fpr), (0.0, 0.0));
    }

    #[test]
    fn single_class_labels_are_an_evaluation_error() {
        let m = map_from_fracture(Array3::zeros((8, 8, 8)));
        let cases = [(&m, true)];
        assert!(matches!(
            sweep_hyperparams(&cases, &default_sweep_grid()),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn vertebra_score_of_uniform_field_is_that_probability() {
        let map = map_from_fracture(Array3::from_elem((20, 20, 20), 0.37));
        let s = vertebra_score(&map, [10.0, 10.0, 10.0], 10, 5.0).unwrap();
        assert!((s - 0.37).abs() < 1e-6);
    }

    #[test]
    fn vertebra_score_of_zero_field_is_zero() {
        let map = map_from_fracture(Array3::zeros((20, 20, 20)));
        let s = vertebra_score(&map, [9.5, 10.0, 10.0], 10, 5.0).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn single_hot_center_voxel_matches_kernel_sum_oracle() {
        let mut frac = Array3::zeros((21, 21, 21));
        frac[[10, 10, 10]] = 1.0;
        let map = map_from_fracture(frac);
        let centroid = [10.0, 10.0, 10.0];
        let (cube, sigma) = (10usize, 5.0f64);
        let got = vertebra_score(&map, centroid, cube, sigma).unwrap();

        // direct kernel sum over the same cube
        let lo_off = cube / 2;
        let hi_off = cube - 1 - lo_off;
        let mut wsum = 0.0;
        let mut num = 0.0;
        for x in 10 - lo_off..=10 + hi_off {
            for y in 10 - lo_off..=10 + hi_off {
                for z in 10 - lo_off..=10 + hi_off {
                    let d2 = (x as f64 - 10.0).powi(2)
                        + (y as f64 - 10.0).powi(2)
                        + (z as f64 - 10.0).powi(2);
                    let w = (-d2 / (2.0 * sigma * sigma)).exp();
                    wsum += w;
                    if (x, y, z) == (10, 10, 10) {
                        num += w;
                    }
                }
            }
        }
        assert!((got - num / wsum).abs() < 1e-12, "{got} vs {}", num / wsum);
    }

    #[test]
    fn score_is_bounded_by_cube_probabilities_and_ignores_outside() {
        let mut frac = Array3::from_elem((30, 30, 30), 0.2f32);
        blob(&mut frac, [12, 12, 12], [18, 18, 18], 0.8);
        let map = map_from_fracture(frac.clone());
        let s = vertebra_score(&map, [15.0, 15.0, 15.0], 5, 4.0).unwrap();
        // bounds at f32 precision, since the map stores f32
        assert!(s >= f64::from(0.2f32) - 1e-9 && s <= f64::from(0.8f32) + 1e-9);
        // cube 5 around (15,15,15) spans 13..=17; relabel everything outside
        blob(&mut frac, [0, 0, 0], [29, 29, 11], 0.99);
        let map2 = map_from_fracture(frac);
        let s2 = vertebra_score(&map2, [15.0, 15.0, 15.0], 5, 4.0).unwrap();
        assert_eq!(s, s2);
    }

    #[test]
    fn centroid_outside_volume_is_an_argument_error() {
        let map = map_from_fracture(Array3::zeros((10, 10, 10)));
        assert!(matches!(
            vertebra_score(&map, [50.0, 5.0, 5.0], 10, 5.0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn perturb_with_zero_sigma_is_identity() {
        let mut rng = seeds::rng_for(3, "perturb");
        let cs = vec![[1.0, 2.0, 3.0], [7.5, 8.5, 9.5]];
        let out = perturb_centroids(&cs, 0.0, [0.0; 3], [20.0; 3], &mut rng);
        assert_eq!(out, cs);
    }

    #[test]
    fn perturbation_statistics_match_sigma() {
        let mut rng = seeds::rng_for(4, "perturb");
        let n = 100_000;
        let cs = vec![[50.0, 50.0, 50.0]; n];
        let out = perturb_centroids(&cs, 3.0, [-1e9; 3], [1e9; 3], &mut rng);
        for a in 0..3 {
            let mean = out.iter().map(|c| c[a] - 50.0).sum::<f64>() / n as f64;
            let var = out
                .iter()
                .map(|c| (c[a] - 50.0 - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            assert!(mean.abs() < 0.05, "axis {a} mean {mean}");
            assert!(
                (var.sqrt() - 3.0).abs() < 0.06,
                "axis {a} std {}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn perturbed_centroids_stay_in_bounds() {
        let mut rng = seeds::rng_for(5, "perturb");
        let cs = vec![[0.5, 0.5, 0.5]; 1000];
        let out = perturb_centroids(&cs, 10.0, [0.0; 3], [1.5; 3], &mut rng);
        for c in out {
            for a in 0..3 {
                assert!((0.0..=1.5).contains(&c[a]));
            }
        }
    }
}
