//! Synthetic spine phantoms with exact ground truth.
//!
//! Each case stacks ellipsoidal vertebra-like bodies along the
//! longitudinal axis with a mild curvature; fractured bodies are flattened
//! by a drawn ratio. The emitted label volume is produced by the same
//! label builder the training pipeline uses, so ground truth is consistent
//! by construction.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationSet, Grade, VertebraAnnotation, VertebraName};
use crate::error::{Error, Result};
use crate::labels::{build_label_volume, LabelConfig, LabelVolume};
use crate::seeds;
use crate::volume::Volume;

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_cases: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Inclusive range of vertebrae per case.
    pub vertebrae_range: [usize; 2],
    /// Per-vertebra fracture probability.
    pub fracture_prevalence: f64,
    /// Fractured bodies keep this fraction of their longitudinal radius.
    pub flatten_range: [f64; 2],
    /// Body intensity above the zero background.
    pub vertebra_intensity: f64,
    pub noise_std: f64,
    /// Lateral bow of the stacked centroids.
    pub curvature_amplitude_mm: f64,
    pub vertebra_spacing_mm: f64,
    pub body_radii_mm: [f64; 3],
    /// The corpus generator clears fractures from the mildest positive
    /// cases until at least this many cases are negative, so stratified
    /// folding stays feasible.
    pub min_negative_cases: usize,
    /// Symmetrically, fracture one vertebra of leading negative cases
    /// until at least this many cases are positive, so every fold's
    /// training portion sees fractures.
    pub min_positive_cases: usize,
    pub label: LabelConfig,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_cases: 90,
            dims: [96, 96, 96],
            spacing: [1.0; 3],
            vertebrae_range: [3, 3],
            fracture_prevalence: 0.19,
            flatten_range: [0.4, 0.75],
            vertebra_intensity: 4.0,
            noise_std: 1.0,
            curvature_amplitude_mm: 3.0,
            vertebra_spacing_mm: 28.0,
            body_radii_mm: [12.0, 12.0, 12.0],
            min_negative_cases: 10,
            min_positive_cases: 8,
            label: LabelConfig::default(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fracture_prevalence) {
            return Err(Error::Config("prevalence must lie in [0, 1]".into()));
        }
        if self.vertebra_intensity <= 0.0 {
            return Err(Error::Config("vertebra contrast must be positive".into()));
        }
        if self.vertebrae_range[0] < 1 || self.vertebrae_range[0] > self.vertebrae_range[1] {
            return Err(Error::Config(format!(
                "bad vertebrae range {:?}",
                self.vertebrae_range
            )));
        }
        if !(self.flatten_range[0] > 0.0
            && self.flatten_range[0] <= self.flatten_range[1]
            && self.flatten_range[1] < 1.0)
        {
            return Err(Error::Config(format!(
                "flatten range {:?} must lie in (0, 1)",
                self.flatten_range
            )));
        }
        if self.n_cases > 0 && self.min_negative_cases + self.min_positive_cases > self.n_cases {
            return Err(Error::Config(format!(
                "negative floor {} plus positive floor {} exceeds {} cases",
                self.min_negative_cases, self.min_positive_cases, self.n_cases
            )));
        }
        self.label.validate()?;
        let needed = (self.vertebrae_range[1] - 1) as f64 * self.vertebra_spacing_mm
            + 2.0 * self.body_radii_mm[2];
        let extent = self.dims[2] as f64 * self.spacing[2];
        if extent < needed {
            return Err(Error::Config(format!(
                "longitudinal extent {extent:.0} mm cannot fit {} vertebrae ({needed:.0} mm)",
                self.vertebrae_range[1]
            )));
        }
        Ok(())
    }
}

/// One generated case.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub volume: Volume,
    pub annotations: AnnotationSet,
    pub labels: LabelVolume,
}

/// Per-case fracture plan, drawn before rendering so the corpus generator
/// can rebalance negatives deterministically.
#[derive(Debug, Clone)]
pub struct CasePlan {
    pub fractured: Vec<bool>,
}

pub fn draw_plan(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> CasePlan {
    let n = rng.gen_range(spec.vertebrae_range[0]..=spec.vertebrae_range[1]);
    let fractured = (0..n)
        .map(|_| rng.gen_bool(spec.fracture_prevalence))
        .collect();
    CasePlan { fractured }
}

/// Generate one case: draw a plan and render it with the same RNG.
pub fn generate_case(
    spec: &PhantomSpec,
    case_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<PhantomCase> {
    spec.validate()?;
    let plan = draw_plan(spec, rng);
    render_case(spec, case_id, &plan, rng)
}

/// Render a planned case: stamp the bodies, add noise, build labels.
pub fn render_case(
    spec: &PhantomSpec,
    case_id: &str,
    plan: &CasePlan,
    rng: &mut ChaCha8Rng,
) -> Result<PhantomCase> {
    let n = plan.fractured.len();
    let dims = spec.dims;
    let extent_z = dims[2] as f64 * spec.spacing[2];
    let stack_len = (n - 1) as f64 * spec.vertebra_spacing_mm;
    let z0 = (extent_z - stack_len) / 2.0;

    let names = VertebraName::all();
    // a consecutive run ending low in the spine, as abdominal fields of
    // view do
    let start = rng.gen_range(8..=names.len() - n);

    let cx = dims[0] as f64 * spec.spacing[0] / 2.0;
    let cy = dims[1] as f64 * spec.spacing[1] / 2.0;
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    struct Body {
        centroid: [f64; 3],
        radii: [f64; 3],
    }

    let mut annotations = Vec::with_capacity(n);
    let mut bodies = Vec::with_capacity(n);
    for (i, &fractured) in plan.fractured.iter().enumerate() {
        let z = z0 + i as f64 * spec.vertebra_spacing_mm + rng.gen_range(-1.5..1.5);
        let bow =
            spec.curvature_amplitude_mm * (std::f64::consts::TAU * z / extent_z + phase).sin();
        let x = cx + rng.gen_range(-1.5..1.5);
        let y = cy + bow + rng.gen_range(-1.5..1.5);
        let centroid = [x, y, z];

        let mut radii = spec.body_radii_mm;
        for r in radii.iter_mut() {
            *r *= rng.gen_range(0.9..1.05);
        }
        let grade = if fractured {
            let flatten = rng.gen_range(spec.flatten_range[0]..=spec.flatten_range[1]);
            radii[2] *= flatten;
            grade_for_flatten(flatten)
        } else {
            Grade::Normal
        };

        annotations.push(VertebraAnnotation::new(names[start + i], grade, centroid)?);
        bodies.push(Body { centroid, radii });
    }
    let annotations = AnnotationSet::new(case_id, annotations)?;

    let mut volume = Volume::filled(dims, spec.spacing, [0.0; 3], 0.0);
    for body in &bodies {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let c = body.centroid[a] / spec.spacing[a];
            let r = body.radii[a] / spec.spacing[a];
            lo[a] = (c - r).floor().max(0.0) as usize;
            hi[a] = ((c + r).ceil() as usize).min(dims[a] - 1);
        }
        let intensity = spec.vertebra_intensity as f32;
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let p = volume.index_to_world([i, j, k]);
                    let m: f64 = (0..3)
                        .map(|a| {
                            let d = (p[a] - body.centroid[a]) / body.radii[a];
                            d * d
                        })
                        .sum();
                    if m <= 1.0 {
                        volume.data_mut()[[i, j, k]] = intensity;
                    }
                }
            }
        }
    }
    if spec.noise_std > 0.0 {
        let std = spec.noise_std;
        for v in volume.data_mut().iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += (std * g) as f32;
        }
    }

    let labels = build_label_volume(&annotations, &volume, &spec.label)?.labels;
    Ok(PhantomCase {
        volume,
        annotations,
        labels,
    })
}

/// A loose mirror of height-loss grading on the drawn flatten ratio.
fn grade_for_flatten(flatten: f64) -> Grade {
    if flatten > 0.6 {
        Grade::Mild
    } else if flatten > 0.45 {
        Grade::Moderate
    } else {
        Grade::Severe
    }
}

/// Corpus manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub n_vertebrae: usize,
    pub n_fractured: usize,
    pub fractured: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub spec: PhantomSpec,
    pub cases: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(corpus_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
        let path = corpus_dir.as_ref().join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

pub fn case_dir(corpus_dir: impl AsRef<Path>, case_id: &str) -> PathBuf {
    corpus_dir.as_ref().join("cases").join(case_id)
}

/// Write `spec.n_cases` cases plus a manifest under `out_dir`.
///
/// Case plans are drawn first; if fewer than `spec.min_negative_cases`
/// cases came out negative, the positive cases with the fewest fractures
/// are cleared (lowest index first) until the floor is met. Rendering is
/// per-case seeded, so the tree is bit-reproducible for a given spec.
pub fn generate_corpus(spec: &PhantomSpec, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut plans: Vec<CasePlan> = (0..spec.n_cases)
        .map(|i| {
            let mut rng = seeds::rng_for_indexed(spec.seed, "phantom/plan", i as u64);
            draw_plan(spec, &mut rng)
        })
        .collect();
    rebalance_plans(&mut plans, spec.min_negative_cases, spec.min_positive_cases);

    let ids: Vec<String> = (0..spec.n_cases).map(|i| format!("case_{i:03}")).collect();

    let rendered: Vec<Result<PhantomCase>> = plans
        .par_iter()
        .enumerate()
        .map(|(i, plan)| {
            let mut rng = seeds::rng_for_indexed(spec.seed, "phantom/render", i as u64);
            render_case(spec, &ids[i], plan, &mut rng)
        })
        .collect();

    let mut entries = Vec::with_capacity(spec.n_cases);
    for (i, case) in rendered.into_iter().enumerate() {
        let case = case?;
        let dir = case_dir(out_dir, &ids[i]);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        case.volume.save(dir.join("volume.nii"))?;
        case.labels.save(dir.join("labels.nii"))?;
        case.annotations.save(dir.join("annotations.txt"))?;
        let n_fractured = plans[i].fractured.iter().filter(|&&f| f).count();
        entries.push(ManifestEntry {
            id: ids[i].clone(),
            n_vertebrae: plans[i].fractured.len(),
            n_fractured,
            fractured: n_fractured > 0,
        });
    }

    let manifest = CorpusManifest {
        seed: spec.seed,
        spec: spec.clone(),
        cases: entries,
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Load one corpus case back from disk.
pub fn load_case(corpus_dir: impl AsRef<Path>, case_id: &str) -> Result<PhantomCase> {
    let dir = case_dir(corpus_dir, case_id);
    Ok(PhantomCase {
        volume: Volume::load(dir.join("volume.nii"))?,
        annotations: AnnotationSet::parse_file(dir.join("annotations.txt"))?,
        labels: LabelVolume::load(dir.join("labels.nii"))?,
    })
}

fn rebalance_plans(plans: &mut [CasePlan], min_negatives: usize, min_positives: usize) {
    loop {
        let negatives = plans
            .iter()
            .filter(|p| p.fractured.iter().all(|&f| !f))
            .count();
        if negatives >= min_negatives || negatives == plans.len() {
            break;
        }
        // clear the positive case with the fewest fractures, lowest index
        let victim = plans
            .iter()
            .enumerate()
            .filter(|(_, p)| p.fractured.iter().any(|&f| f))
            .min_by_key(|(i, p)| (p.fractured.iter().filter(|&&f| f).count(), *i))
            .map(|(i, _)| i)
            .expect("at least one positive case exists here");
        for f in plans[victim].fractured.iter_mut() {
            *f = false;
        }
    }
    loop {
        let positives = plans.len()
            - plans
                .iter()
                .filter(|p| p.fractured.iter().all(|&f| !f))
                .count();
        if positives >= min_positives || positives == plans.len() {
            break;
        }
        // fracture one vertebra of the first fully-negative case
        let victim = plans
            .iter()
            .position(|p| p.fractured.iter().all(|&f| !f))
            .expect("at least one negative case exists here");
        plans[victim].fractured[0] = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            n_cases: 6,
            dims: [48, 48, 72],
            vertebrae_range: [2, 2],
            min_negative_cases: 2,
            min_positive_cases: 2,
            seed: 11,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn centroid_voxel_carries_the_body_intensity_without_noise() {
        let spec = PhantomSpec {
            noise_std: 0.0,
            vertebrae_range: [1, 1],
            dims: [48, 48, 48],
            ..PhantomSpec::default()
        };
        let mut rng = seeds::rng_for(3, "phantom-test");
        let case = generate_case(&spec, "c", &mut rng).unwrap();
        let ann = &case.annotations.annotations()[0];
        let idx = case.volume.nearest_voxel(ann.centroid).unwrap();
        assert_eq!(case.volume.data()[idx], spec.vertebra_intensity as f32);
    }

    #[test]
    fn zero_prevalence_gives_only_normal_grades() {
        let spec = PhantomSpec {
            fracture_prevalence: 0.0,
            ..small_spec()
        };
        let mut rng = seeds::rng_for(4, "phantom-test");
        for _ in 0..5 {
            let case = generate_case(&spec, "c", &mut rng).unwrap();
            assert!(case
                .annotations
                .annotations()
                .iter()
                .all(|a| a.grade == Grade::Normal));
        }
    }

    #[test]
    fn fracture_fraction_tracks_prevalence_over_many_draws() {
        let spec = PhantomSpec {
            vertebrae_range: [3, 3],
            ..PhantomSpec::default()
        };
        let mut total = 0usize;
        let mut fractured = 0usize;
        let mut i = 0u64;
        while total < 2000 {
            let mut rng = seeds::rng_for_indexed(spec.seed, "prevalence-test", i);
            let plan = draw_plan(&spec, &mut rng);
            total += plan.fractured.len();
            fractured += plan.fractured.iter().filter(|&&f| f).count();
            i += 1;
        }
        let frac = fractured as f64 / total as f64;
        assert!((frac - 0.19).abs() < 0.02, "prevalence {frac}");
    }

    #[test]
    fn labels_rebuild_bit_exactly_from_emitted_annotations() {
        let spec = small_spec();
        let mut rng = seeds::rng_for(5, "phantom-test");
        let case = generate_case(&spec, "c", &mut rng).unwrap();
        let rebuilt = build_label_volume(&case.annotations, &case.volume, &spec.label)
            .unwrap()
            .labels;
        assert_eq!(rebuilt, case.labels);
    }

    #[test]
    fn corpus_is_bit_reproducible_and_enforces_negative_floor() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let spec = PhantomSpec {
            n_cases: 8,
            dims: [40, 40, 72],
            vertebrae_range: [2, 2],
            fracture_prevalence: 0.9, // nearly everything positive pre-enforcement
            min_negative_cases: 3,
            min_positive_cases: 3,
            seed: 21,
            ..PhantomSpec::default()
        };
        let ma = generate_corpus(&spec, dir_a.path()).unwrap();
        let mb = generate_corpus(&spec, dir_b.path()).unwrap();
        assert_eq!(ma, mb);
        assert!(ma.cases.iter().filter(|c| !c.fractured).count() >= 3);

        // byte-compare every emitted file
        for case in &ma.cases {
            for file in ["volume.nii", "labels.nii", "annotations.txt"] {
                let a = std::fs::read(case_dir(dir_a.path(), &case.id).join(file)).unwrap();
                let b = std::fs::read(case_dir(dir_b.path(), &case.id).join(file)).unwrap();
                assert_eq!(a, b, "{} {file}", case.id);
            }
        }
    }

    #[test]
    fn empty_corpus_writes_an_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec {
            n_cases: 0,
            min_negative_cases: 0,
            min_positive_cases: 0,
            ..small_spec()
        };
        let m = generate_corpus(&spec, dir.path()).unwrap();
        assert!(m.cases.is_empty());
        assert!(CorpusManifest::load(dir.path()).unwrap().cases.is_empty());
    }

    #[test]
    fn corpus_round_trips_through_load_case() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let manifest = generate_corpus(&spec, dir.path()).unwrap();
        let case = load_case(dir.path(), &manifest.cases[0].id).unwrap();
        assert_eq!(case.volume.dims(), spec.dims);
        assert_eq!(case.labels.dims(), spec.dims);
        assert_eq!(case.annotations.len(), manifest.cases[0].n_vertebrae);
        // consistency also holds for files read back from disk
        let rebuilt = build_label_volume(&case.annotations, &case.volume, &spec.label)
            .unwrap()
            .labels;
        assert_eq!(rebuilt, case.labels);
    }

    #[test]
    fn undersized_volume_is_a_config_error() {
        let spec = PhantomSpec {
            dims: [30, 30, 20],
            ..PhantomSpec::default()
        };
        let mut rng = seeds::rng_for(6, "phantom-test");
        assert!(matches!(
            generate_case(&spec, "c", &mut rng),
            Err(Error::Config(_))
        ));
    }
}
