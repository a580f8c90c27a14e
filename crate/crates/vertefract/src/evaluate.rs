//! Stratified k-fold cross-validation and report assembly.
//!
//! Folds partition the cases with a per-fold minimum of negative cases;
//! each fold's model trains on the remaining cases minus a held-back
//! validation subset that drives learning-rate annealing. Held-out
//! predictions are pooled into a patient-level hull ROC (over the
//! hyperparameter sweep) and a vertebra-level score ROC (with perturbed
//! centroids), both bootstrapped.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{
    self, map_bounds, patient_decision_row, perturb_centroids, score_vertebrae, PatientHyperparams,
    SweepPoint,
};
use crate::annotations::AnnotationSet;
use crate::error::{Error, Result};
use crate::inference::infer_volume;
use crate::labels::{binary_class_of, BinaryClass, LabelVolume};
use crate::network::NetworkConfig;
use crate::rocs::{
    bootstrap_roc_from_decisions, bootstrap_roc_from_scores, operating_point, roc_convex_hull,
    roc_from_scores, BootstrapRoc, OperatingCriterion, OperatingPoint, RocCurve, RocPoint,
};
use crate::seeds;
use crate::trainer::{train, EpochRecord, TrainingCase, TrainingConfig};
use crate::volume::{ResampleMode, Volume};

/// Disjoint test folds plus, per fold, the validation subset reserved from
/// that fold's training portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
    pub validation: Vec<Vec<String>>,
}

/// Stratified fold assignment: negatives are dealt round-robin first so
/// every fold reaches `min_negatives`, then positives fill the folds to
/// even size. `val_fraction` of each training portion is reserved for
/// validation. Deterministic for a given seed.
pub fn make_folds(
    cases: &[(String, bool)],
    k: usize,
    min_negatives: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if cases.len() < k {
        return Err(Error::Config(format!(
            "{} cases cannot fill {k} folds",
            cases.len()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(
            "validation fraction must lie in [0, 1)".into(),
        ));
    }
    let mut negatives: Vec<&String> = cases.iter().filter(|(_, f)| !f).map(|(id, _)| id).collect();
    let mut positives: Vec<&String> = cases.iter().filter(|(_, f)| *f).map(|(id, _)| id).collect();
    if negatives.len() < k * min_negatives {
        return Err(Error::Config(format!(
            "stratification needs at least {} negative cases ({k} folds x {min_negatives}), found {}",
            k * min_negatives,
            negatives.len()
        )));
    }

    use rand::seq::SliceRandom;
    let mut rng = seeds::rng_for(seed, "folds");
    negatives.shuffle(&mut rng);
    positives.shuffle(&mut rng);

    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, id) in negatives.iter().enumerate() {
        folds[i % k].push((*id).clone());
    }
    let offset = negatives.len();
    for (i, id) in positives.iter().enumerate() {
        folds[(offset + i) % k].push((*id).clone());
    }

    let mut validation = Vec::with_capacity(k);
    for i in 0..k {
        let mut pool: Vec<String> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        let mut vrng = seeds::rng_for_indexed(seed, "folds/validation", i as u64);
        pool.shuffle(&mut vrng);
        let n_val = ((pool.len() as f64 * val_fraction).round() as usize).max(1);
        pool.truncate(n_val);
        pool.sort();
        validation.push(pool);
    }

    Ok(FoldPlan { folds, validation })
}

/// One raw corpus case handed to cross-validation.
#[derive(Debug, Clone)]
pub struct CvCase {
    pub id: String,
    pub volume: Volume,
    pub annotations: AnnotationSet,
    pub labels: LabelVolume,
}

/// Cross-validation parameters around the per-fold training configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    pub min_negatives: usize,
    pub val_fraction: f64,
    pub target_spacing_mm: f64,
    /// Normal-pathway input size per inference tile.
    pub inference_tile: [usize; 3],
    pub cube_size_voxels: usize,
    pub kernel_sigma_mm: f64,
    pub centroid_noise_mm: f64,
    pub bootstrap_resamples: usize,
    pub sweep_grid: Vec<PatientHyperparams>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            min_negatives: 2,
            val_fraction: 0.15,
            target_spacing_mm: 1.0,
            inference_tile: [57, 57, 57],
            cube_size_voxels: 10,
            kernel_sigma_mm: 5.0,
            centroid_noise_mm: 3.0,
            bootstrap_resamples: 1000,
            sweep_grid: aggregate::default_sweep_grid(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_cases: Vec<String>,
    pub validation_cases: Vec<String>,
    pub n_train_cases: usize,
    pub final_train_loss: f64,
    pub final_val_metric: f64,
    pub final_lr: f64,
    pub epochs: Vec<EpochRecord>,
    /// Hull AUC over this fold's own test cases, when both classes occur.
    pub patient_hull_auc: Option<f64>,
    pub vertebra_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub case_id: String,
    pub fold: usize,
    pub fractured: bool,
    /// Decision per sweep grid point.
    pub decisions: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraRecord {
    pub case_id: String,
    pub fold: usize,
    pub vertebra: String,
    pub grade: String,
    pub fractured: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientLevelReport {
    pub sweep_points: Vec<SweepPoint>,
    pub hull: RocCurve,
    pub bootstrap: BootstrapRoc,
    pub youden: OperatingPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraLevelReport {
    pub n_vertebrae: usize,
    pub n_fractured: usize,
    pub curve: RocCurve,
    pub bootstrap: BootstrapRoc,
}

/// The full cross-validation report. Contains no wall-clock times, so two
/// runs with the same seed serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub seed: u64,
    pub k: usize,
    pub fold_plan: FoldPlan,
    pub folds: Vec<FoldReport>,
    pub patient_level: PatientLevelReport,
    pub vertebra_level: VertebraLevelReport,
    pub patient_records: Vec<PatientRecord>,
    pub vertebra_records: Vec<VertebraRecord>,
}

impl CvReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("report encode: {e}")))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        let json = self.to_json()?;
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        Ok(format!("{:x}", hasher.finalize()))
    }
}

/// Mid-sagittal intensity/fracture-probability slices kept for plotting.
#[derive(Debug, Clone)]
pub struct OverlaySlice {
    pub case_id: String,
    pub intensity: Array2<f32>,
    pub fracture: Array2<f32>,
}

/// Everything a cross-validation run produces: the (digestable) report
/// plus raster-plot inputs.
#[derive(Debug, Clone)]
pub struct CvOutputs {
    pub report: CvReport,
    pub overlays: Vec<OverlaySlice>,
}

/// Run the full stratified cross-validation experiment.
pub fn run_cross_validation(
    cases: &[CvCase],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainingConfig,
    cv: &CvConfig,
) -> Result<CvOutputs> {
    net_cfg.validate()?;
    train_cfg.validate()?;
    let labeled: Vec<(String, bool)> = cases
        .iter()
        .map(|c| (c.id.clone(), c.annotations.has_fracture()))
        .collect();
    let plan = make_folds(&labeled, cv.k, cv.min_negatives, cv.val_fraction, cv.seed)?;

    // preprocess every case once: resample to the working grid, then
    // normalize
    let prepared: Vec<TrainingCase> = cases
        .iter()
        .map(|c| {
            let volume = c
                .volume
                .resample_isotropic(cv.target_spacing_mm, ResampleMode::Trilinear)?
                .normalize()?;
            let labels = c.labels.resample_isotropic(cv.target_spacing_mm)?;
            Ok(TrainingCase {
                id: c.id.clone(),
                volume,
                labels,
            })
        })
        .collect::<Result<_>>()?;
    let index_of = |id: &str| prepared.iter().position(|c| c.id == id).unwrap();

    let mut fold_reports = Vec::with_capacity(cv.k);
    let mut patient_records: Vec<PatientRecord> = Vec::new();
    let mut vertebra_records: Vec<VertebraRecord> = Vec::new();
    let mut overlays = Vec::new();

    for fold in 0..cv.k {
        let test_ids = &plan.folds[fold];
        let val_ids = &plan.validation[fold];
        let is_test = |id: &str| test_ids.iter().any(|t| t == id);
        let is_val = |id: &str| val_ids.iter().any(|v| v == id);

        let train_cases: Vec<TrainingCase> = prepared
            .iter()
            .filter(|c| !is_test(&c.id) && !is_val(&c.id))
            .cloned()
            .collect();
        let val_cases: Vec<TrainingCase> =
            prepared.iter().filter(|c| is_val(&c.id)).cloned().collect();

        // fold discipline: a model must never see its own test cases
        for c in train_cases.iter().chain(val_cases.iter()) {
            if is_test(&c.id) {
                return Err(Error::Validation(format!(
                    "fold {fold}: case '{}' leaked into training",
                    c.id
                )));
            }
        }

        let mut fold_train_cfg = train_cfg.clone();
        fold_train_cfg.seed = seeds::derive_seed_indexed(cv.seed, "cv/fold", fold as u64);
        let outcome = train(&train_cases, &val_cases, net_cfg, &fold_train_cfg)?;

        // held-out inference, one case at a time
        for id in test_ids {
            let case = &prepared[index_of(id)];
            let raw = &cases[index_of(id)];
            let map = infer_volume(&case.volume, &outcome.weights, cv.inference_tile)?;

            let decisions = patient_decision_row(&map, &cv.sweep_grid)?;
            patient_records.push(PatientRecord {
                case_id: id.clone(),
                fold,
                fractured: raw.annotations.has_fracture(),
                decisions,
            });

            let centroids: Vec<[f64; 3]> = raw
                .annotations
                .annotations()
                .iter()
                .map(|a| a.centroid)
                .collect();
            let (lo, hi) = map_bounds(&map);
            let mut noise_rng =
                seeds::rng_for_indexed(cv.seed, "cv/centroid-noise", index_of(id) as u64);
            let perturbed =
                perturb_centroids(&centroids, cv.centroid_noise_mm, lo, hi, &mut noise_rng);
            let names: Vec<_> = raw
                .annotations
                .annotations()
                .iter()
                .zip(&perturbed)
                .map(|(a, &c)| (a.name, c))
                .collect();
            let scores = score_vertebrae(&map, &names, cv.cube_size_voxels, cv.kernel_sigma_mm)?;
            for (ann, score) in raw.annotations.annotations().iter().zip(&scores) {
                vertebra_records.push(VertebraRecord {
                    case_id: id.clone(),
                    fold,
                    vertebra: ann.name.to_string(),
                    grade: ann.grade.to_string(),
                    fractured: binary_class_of(ann.grade) == BinaryClass::Fracture,
                    score: score.score,
                });
            }

            // keep the first test case of each fold for overlay plots
            if overlays.len() <= fold {
                let dims = case.volume.dims();
                let x_mid = dims[0] / 2;
                let mut intensity = Array2::<f32>::zeros((dims[1], dims[2]));
                let mut fracture = Array2::<f32>::zeros((dims[1], dims[2]));
                for y in 0..dims[1] {
                    for z in 0..dims[2] {
                        intensity[[y, z]] = case.volume.data()[[x_mid, y, z]];
                        fracture[[y, z]] = map.prob(2, [x_mid, y, z]);
                    }
                }
                overlays.push(OverlaySlice {
                    case_id: id.clone(),
                    intensity,
                    fracture,
                });
            }
        }

        let last = outcome.log.last().expect("epochs >= 1");
        fold_reports.push(FoldReport {
            fold,
            test_cases: test_ids.clone(),
            validation_cases: val_ids.clone(),
            n_train_cases: train_cases.len(),
            final_train_loss: last.train_loss,
            final_val_metric: last.val_metric,
            final_lr: last.lr,
            epochs: outcome.log,
            patient_hull_auc: None,
            vertebra_auc: None,
        });
    }

    // every held-out case appears exactly once
    debug_assert_eq!(patient_records.len(), cases.len());

    // pooled patient-level hull ROC
    let rows: Vec<Vec<bool>> = patient_records
        .iter()
        .map(|r| r.decisions.clone())
        .collect();
    let labels: Vec<bool> = patient_records.iter().map(|r| r.fractured).collect();
    let sweep_points = aggregate::sweep_from_decisions(&rows, &labels, &cv.sweep_grid)?;
    let hull_input: Vec<RocPoint> = sweep_points
        .iter()
        .map(|p| RocPoint {
            fpr: p.fpr,
            tpr: p.tpr,
        })
        .collect();
    let hull = roc_convex_hull(&hull_input)?;
    let patient_boot = bootstrap_roc_from_decisions(
        &rows,
        &labels,
        cv.bootstrap_resamples,
        seeds::derive_seed(cv.seed, "cv/bootstrap-patient"),
    )?;
    let youden = operating_point(&hull, OperatingCriterion::MaxYouden)?;

    // pooled vertebra-level score ROC
    let v_scores: Vec<f64> = vertebra_records.iter().map(|r| r.score).collect();
    let v_labels: Vec<bool> = vertebra_records.iter().map(|r| r.fractured).collect();
    let v_curve = roc_from_scores(&v_scores, &v_labels)?;
    let vertebra_boot = bootstrap_roc_from_scores(
        &v_scores,
        &v_labels,
        cv.bootstrap_resamples,
        seeds::derive_seed(cv.seed, "cv/bootstrap-vertebra"),
    )?;

    // per-fold transparency metrics where the fold supports them
    for fr in fold_reports.iter_mut() {
        let fold = fr.fold;
        let f_rows: Vec<Vec<bool>> = patient_records
            .iter()
            .filter(|r| r.fold == fold)
            .map(|r| r.decisions.clone())
            .collect();
        let f_labels: Vec<bool> = patient_records
            .iter()
            .filter(|r| r.fold == fold)
            .map(|r| r.fractured)
            .collect();
        if f_labels.iter().any(|&l| l) && f_labels.iter().any(|&l| !l) {
            let pts = aggregate::sweep_from_decisions(&f_rows, &f_labels, &cv.sweep_grid)?;
            let input: Vec<RocPoint> = pts
                .iter()
                .map(|p| RocPoint {
                    fpr: p.fpr,
                    tpr: p.tpr,
                })
                .collect();
            fr.patient_hull_auc = Some(roc_convex_hull(&input)?.auc);
        }
        let fv_scores: Vec<f64> = vertebra_records
            .iter()
            .filter(|r| r.fold == fold)
            .map(|r| r.score)
            .collect();
        let fv_labels: Vec<bool> = vertebra_records
            .iter()
            .filter(|r| r.fold == fold)
            .map(|r| r.fractured)
            .collect();
        if fv_labels.iter().any(|&l| l) && fv_labels.iter().any(|&l| !l) {
            fr.vertebra_auc = Some(roc_from_scores(&fv_scores, &fv_labels)?.auc);
        }
    }

    let n_fractured = vertebra_records.iter().filter(|r| r.fractured).count();
    let report = CvReport {
        seed: cv.seed,
        k: cv.k,
        fold_plan: plan,
        folds: fold_reports,
        patient_level: PatientLevelReport {
            sweep_points,
            hull,
            bootstrap: patient_boot,
            youden,
        },
        vertebra_level: VertebraLevelReport {
            n_vertebrae: vertebra_records.len(),
            n_fractured,
            curve: v_curve,
            bootstrap: vertebra_boot,
        },
        patient_records,
        vertebra_records,
    };

    Ok(CvOutputs { report, overlays })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cases(n_pos: usize, n_neg: usize) -> Vec<(String, bool)> {
        let mut v = Vec::new();
        for i in 0..n_pos {
            v.push((format!("pos_{i:03}"), true));
        }
        for i in 0..n_neg {
            v.push((format!("neg_{i:03}"), false));
        }
        v
    }

    #[test]
    fn folds_partition_and_stratify() {
        let cs = cases(79, 11);
        let plan = make_folds(&cs, 5, 2, 0.15, 42).unwrap();
        assert_eq!(plan.folds.len(), 5);
        // equal sizes for 90 cases
        for f in &plan.folds {
            assert_eq!(f.len(), 18);
        }
        // partition: disjoint, covering
        let mut all: Vec<&String> = plan.folds.iter().flatten().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 90);
        // at least two negatives per fold
        for f in &plan.folds {
            let negs = f.iter().filter(|id| id.starts_with("neg")).count();
            assert!(negs >= 2, "fold has {negs} negatives");
        }
        // validation subsets: 15% of the 72-case training portion = 11
        for (i, val) in plan.validation.iter().enumerate() {
            assert_eq!(val.len(), 11);
            for id in val {
                assert!(!plan.folds[i].contains(id), "validation overlaps fold");
            }
        }
    }

    #[test]
    fn infeasible_stratification_is_a_config_error() {
        let cs = cases(9, 1);
        match make_folds(&cs, 5, 2, 0.15, 1) {
            Err(Error::Config(msg)) => assert!(msg.contains("10"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn all_positive_corpus_fails_in_the_roc_stage() {
        use crate::network::{NetworkConfig, Variant};
        use crate::phantom::{generate_case, PhantomSpec};

        let spec = PhantomSpec {
            n_cases: 4,
            dims: [40, 40, 72],
            vertebrae_range: [2, 2],
            fracture_prevalence: 1.0,
            min_negative_cases: 0,
            min_positive_cases: 0,
            ..PhantomSpec::default()
        };
        let cases: Vec<CvCase> = (0..4u64)
            .map(|i| {
                let mut rng = crate::seeds::rng_for_indexed(3, "degenerate", i);
                let c = generate_case(&spec, &format!("p{i}"), &mut rng).unwrap();
                CvCase {
                    id: format!("p{i}"),
                    volume: c.volume,
                    annotations: c.annotations,
                    labels: c.labels,
                }
            })
            .collect();

        let net = NetworkConfig::downsized(Variant::ThreeD, 2);
        let train_cfg = TrainingConfig {
            epochs: 1,
            segment_batch: 1,
            batches_per_epoch: 1,
            output_patch: [3, 3, 3],
            val_segments: 2,
            ..TrainingConfig::default()
        };
        let cv = CvConfig {
            k: 2,
            min_negatives: 0,
            inference_tile: [25, 25, 25],
            bootstrap_resamples: 10,
            ..CvConfig::default()
        };
        match run_cross_validation(&cases, &net, &train_cfg, &cv) {
            Err(Error::Evaluation(_)) => {}
            other => panic!("expected an evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn folds_are_deterministic_per_seed() {
        let cs = cases(30, 12);
        let a = make_folds(&cs, 5, 2, 0.15, 7).unwrap();
        let b = make_folds(&cs, 5, 2, 0.15, 7).unwrap();
        let c = make_folds(&cs, 5, 2, 0.15, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
