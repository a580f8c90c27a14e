//! Dense 3-class label volumes built from sparse vertebra annotations.
//!
//! Each annotated vertebra stamps an ellipsoid around its centroid; for
//! fractured vertebrae the ellipsoid is flattened along the longitudinal
//! axis. Voxels outside every ellipsoid are background. The labels are not
//! voxel-perfect vertebra segmentations and do not need to be for the
//! detection task.

use std::path::Path;

use ndarray::Array3;

use crate::annotations::{AnnotationSet, Grade, VertebraName};
use crate::error::{Error, Result};
use crate::volume::{ResampleMode, Volume, LONGITUDINAL_AXIS};

/// Voxel classes, in the fixed channel order used everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum VoxelClass {
    Background = 0,
    Normal = 1,
    Fracture = 2,
}

impl VoxelClass {
    pub fn from_u8(v: u8) -> Option<VoxelClass> {
        match v {
            0 => Some(VoxelClass::Background),
            1 => Some(VoxelClass::Normal),
            2 => Some(VoxelClass::Fracture),
            _ => None,
        }
    }
}

/// Fracture status after collapsing the severity grades.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryClass {
    Normal,
    Fracture,
}

/// Collapse a Genant grade to normal/fracture: mild, moderate and severe
/// all count as fracture.
pub fn binary_class_of(grade: Grade) -> BinaryClass {
    match grade {
        Grade::Normal => BinaryClass::Normal,
        Grade::Mild | Grade::Moderate | Grade::Severe => BinaryClass::Fracture,
    }
}

impl BinaryClass {
    pub fn voxel_class(self) -> VoxelClass {
        match self {
            BinaryClass::Normal => VoxelClass::Normal,
            BinaryClass::Fracture => VoxelClass::Fracture,
        }
    }
}

/// Ellipsoid parameters for label generation. Radii in mm; `flatten` scales
/// the longitudinal radius of fractured vertebrae.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub radii_mm: [f64; 3],
    pub flatten: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        // Radii sized so ellipsoids of adjacent vertebrae (~28 mm apart in
        // adults) stay disjoint.
        LabelConfig {
            radii_mm: [12.0, 12.0, 12.0],
            flatten: 0.5,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii_mm.iter().any(|&r| r <= 0.0 || !r.is_finite()) {
            return Err(Error::Argument(format!(
                "ellipsoid radii must be positive, got {:?}",
                self.radii_mm
            )));
        }
        if !(self.flatten > 0.0 && self.flatten < 1.0) {
            return Err(Error::Argument(format!(
                "flatten ratio must lie in (0, 1), got {}",
                self.flatten
            )));
        }
        Ok(())
    }

    /// Per-axis radii for a vertebra of the given binary class.
    pub fn radii_for(&self, class: BinaryClass) -> [f64; 3] {
        let mut r = self.radii_mm;
        if class == BinaryClass::Fracture {
            r[LONGITUDINAL_AXIS] *= self.flatten;
        }
        r
    }
}

/// A volume whose voxels take values in {background, normal, fracture}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    data: Array3<u8>,
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl LabelVolume {
    pub fn new(data: Array3<u8>, spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| **v > 2) {
            return Err(Error::Validation(format!(
                "label volume contains value {v} outside {{0, 1, 2}}"
            )));
        }
        if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Argument("label spacing must be positive".into()));
        }
        Ok(LabelVolume {
            data,
            spacing,
            origin,
        })
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

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn class_at(&self, idx: [usize; 3]) -> VoxelClass {
        VoxelClass::from_u8(self.data[idx]).expect("validated at construction")
    }

    /// Voxels per class, indexed by class value.
    pub fn class_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }

    /// View as an intensity volume (values 0.0/1.0/2.0), e.g. for saving.
    pub fn to_volume(&self) -> Volume {
        Volume::new(self.data.mapv(f32::from), self.spacing, self.origin)
            .expect("label volume metadata already validated")
    }

    pub fn from_volume(vol: &Volume) -> Result<Self> {
        let mut data = Array3::zeros(vol.dims());
        for (o, &v) in data.iter_mut().zip(vol.data()) {
            if v != 0.0 && v != 1.0 && v != 2.0 {
                return Err(Error::Validation(format!(
                    "volume is not a label volume: found value {v}"
                )));
            }
            *o = v as u8;
        }
        LabelVolume::new(data, vol.spacing(), vol.origin())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_volume().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        LabelVolume::from_volume(&Volume::load(path)?)
    }

    /// Nearest-neighbor resampling; labels never interpolate.
    pub fn resample_isotropic(&self, target: f64) -> Result<Self> {
        let vol = self
            .to_volume()
            .resample_isotropic(target, ResampleMode::Nearest)?;
        LabelVolume::from_volume(&vol)
    }
}

/// Result of label generation: the dense volume plus any vertebrae skipped
/// because their centroid fell outside the reference grid.
#[derive(Debug, Clone)]
pub struct LabelBuild {
    pub labels: LabelVolume,
    pub skipped: Vec<VertebraName>,
}

/// Stamp one ellipsoid per annotated vertebra onto the reference grid.
///
/// When two ellipsoids claim a voxel the vertebra with the smaller
/// Mahalanobis distance (under its own ellipsoid axes) wins.
pub fn build_label_volume(
    annotations: &AnnotationSet,
    reference: &Volume,
    cfg: &LabelConfig,
) -> Result<LabelBuild> {
    cfg.validate()?;
    let dims = reference.dims();
    let spacing = reference.spacing();
    let mut labels = Array3::<u8>::zeros(dims);
    let mut best = Array3::<f64>::from_elem(dims, f64::INFINITY);
    let mut skipped = Vec::new();

    for ann in annotations.annotations() {
        if reference.nearest_voxel(ann.centroid).is_none() {
            skipped.push(ann.name);
            continue;
        }
        let class = binary_class_of(ann.grade);
        let radii = cfg.radii_for(class);
        let value = class.voxel_class() as u8;

        // Voxel bounding box of the ellipsoid, clipped to the grid.
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let c = (ann.centroid[a] - reference.origin()[a]) / spacing[a];
            let r = radii[a] / spacing[a];
            lo[a] = (c - r).floor().max(0.0) as usize;
            hi[a] = ((c + r).ceil() as usize).min(dims[a] - 1);
        }

        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let p = reference.index_to_world([i, j, k]);
                    let mut m = 0.0;
                    for a in 0..3 {
                        let d = (p[a] - ann.centroid[a]) / radii[a];
                        m += d * d;
                    }
                    if m <= 1.0 && m < best[[i, j, k]] {
                        best[[i, j, k]] = m;
                        labels[[i, j, k]] = value;
                    }
                }
            }
        }
    }

    Ok(LabelBuild {
        labels: LabelVolume::new(labels, spacing, reference.origin())?,
        skipped,
    })
}
