//! Command implementations behind the `vertefract` binary: thin,
//! deterministic wrappers over the library operations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::aggregate::{patient_detect, score_vertebrae, PatientHyperparams};
use crate::annotations::AnnotationSet;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluate::{run_cross_validation, CvCase, CvOutputs};
use crate::inference::{infer_volume, ProbabilityMap};
use crate::labels::{binary_class_of, build_label_volume, BinaryClass};
use crate::network::ModelWeights;
use crate::phantom::{self, CorpusManifest};
use crate::plot;
use crate::rocs::RocPoint;
use crate::seeds;
use crate::trainer::{train, TrainingCase};
use crate::volume::{ResampleMode, Volume};

/// Generate a phantom corpus under `out_dir`.
pub fn cmd_phantom_gen(cfg: &ExperimentConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let manifest = phantom::generate_corpus(&cfg.phantom, out_dir)?;
    let negatives = manifest.cases.iter().filter(|c| !c.fractured).count();
    log::info!(
        "wrote {} cases ({negatives} negative) to {}",
        manifest.cases.len(),
        out_dir.display()
    );
    Ok(manifest)
}

/// Build dense label volumes for every annotation file in a directory.
///
/// For each `<case>.txt` in `annotations_dir` there must be a
/// `<case>.nii` in `volumes_dir`; the label volume is built on that
/// volume's grid after resampling to the configured working spacing and
/// written to `out_dir/<case>_labels.nii`.
pub fn cmd_build_labels(
    cfg: &ExperimentConfig,
    annotations_dir: &Path,
    volumes_dir: &Path,
    out_dir: &Path,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(annotations_dir)
        .map_err(|e| Error::io(annotations_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Argument(format!(
            "no .txt annotation files in {}",
            annotations_dir.display()
        )));
    }
    for ann_path in &entries {
        let stem = ann_path.file_stem().unwrap().to_string_lossy();
        let vol_path = volumes_dir.join(format!("{stem}.nii"));
        let annotations = AnnotationSet::parse_file(ann_path)?;
        let volume = Volume::load(&vol_path)?
            .resample_isotropic(cfg.evaluation.target_spacing_mm, ResampleMode::Trilinear)?;
        let built = build_label_volume(&annotations, &volume, &cfg.phantom.label)?;
        for name in &built.skipped {
            log::warn!("{stem}: centroid of {name} outside the volume, skipped");
        }
        built
            .labels
            .save(out_dir.join(format!("{stem}_labels.nii")))?;
    }
    Ok(entries.len())
}

#[derive(Serialize)]
struct TrainLogLine<'a> {
    #[serde(flatten)]
    record: &'a crate::trainer::EpochRecord,
    wall_time_s: f64,
}

/// Train on a corpus; a seeded 15% of the cases is held back as the
/// validation set that drives annealing. Writes `checkpoint.bin` and a
/// line-delimited `training_log.jsonl` under `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, corpus_dir: &Path, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = CorpusManifest::load(corpus_dir)?;
    if manifest.cases.is_empty() {
        return Err(Error::Config("corpus has no cases".into()));
    }
    let started = Instant::now();

    let mut ids: Vec<String> = manifest.cases.iter().map(|c| c.id.clone()).collect();
    use rand::seq::SliceRandom;
    ids.shuffle(&mut seeds::rng_for(cfg.training.seed, "train/val-split"));
    let n_val =
        ((ids.len() as f64 * cfg.evaluation.val_fraction).round() as usize).clamp(1, ids.len() - 1);
    let (val_ids, train_ids) = ids.split_at(n_val);

    let load = |id: &String| -> Result<TrainingCase> {
        let case = phantom::load_case(corpus_dir, id)?;
        let volume = case
            .volume
            .resample_isotropic(cfg.evaluation.target_spacing_mm, ResampleMode::Trilinear)?
            .normalize()?;
        let labels = case
            .labels
            .resample_isotropic(cfg.evaluation.target_spacing_mm)?;
        Ok(TrainingCase {
            id: id.clone(),
            volume,
            labels,
        })
    };
    let train_cases: Vec<TrainingCase> = train_ids.iter().map(load).collect::<Result<_>>()?;
    let val_cases: Vec<TrainingCase> = val_ids.iter().map(load).collect::<Result<_>>()?;

    let net_cfg = cfg.network.to_network_config()?;
    let outcome = train(&train_cases, &val_cases, &net_cfg, &cfg.training)?;

    let ckpt = out_dir.join("checkpoint.bin");
    outcome.weights.save(&ckpt)?;

    let wall = started.elapsed().as_secs_f64();
    let mut log_text = String::new();
    for record in &outcome.log {
        let line = TrainLogLine {
            record,
            wall_time_s: wall,
        };
        log_text.push_str(&serde_json::to_string(&line).expect("log line encode"));
        log_text.push('\n');
    }
    let log_path = out_dir.join("training_log.jsonl");
    std::fs::write(&log_path, log_text).map_err(|e| Error::io(&log_path, e))?;
    log::info!(
        "trained {} epochs on {} cases; checkpoint at {}",
        outcome.log.len(),
        train_cases.len(),
        ckpt.display()
    );
    Ok(ckpt)
}

/// Preprocess one volume and classify every voxel into a probability map.
pub fn cmd_infer(
    cfg: &ExperimentConfig,
    volume_path: &Path,
    checkpoint: &Path,
    out_path: &Path,
) -> Result<()> {
    let weights = ModelWeights::load(checkpoint)?;
    let volume = Volume::load(volume_path)?
        .resample_isotropic(cfg.evaluation.target_spacing_mm, ResampleMode::Trilinear)?
        .normalize()?;
    let map = infer_volume(&volume, &weights, cfg.evaluation.inference_tile)?;
    map.save(out_path)
}

/// Aggregation mode for `cmd_aggregate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateMode {
    Patient,
    Vertebra,
}

#[derive(Serialize)]
struct PatientLine<'a> {
    map: &'a str,
    probability_threshold: f64,
    noise_threshold: usize,
    fracture_voxel_count: usize,
    n_components: usize,
    decision: bool,
}

#[derive(Serialize)]
struct VertebraLine<'a> {
    map: &'a str,
    vertebra: String,
    grade: String,
    fractured: bool,
    score: f64,
}

/// Aggregate a probability map into line-delimited result records.
///
/// Patient mode applies the given hyperparameters; vertebra mode scores
/// every vertebra named in the annotation file.
#[allow(clippy::too_many_arguments)]
pub fn cmd_aggregate(
    cfg: &ExperimentConfig,
    map_path: &Path,
    mode: AggregateMode,
    hp: PatientHyperparams,
    annotations_path: Option<&Path>,
    out_path: &Path,
) -> Result<()> {
    let map = ProbabilityMap::load(map_path)?;
    let map_name = map_path.to_string_lossy();
    let mut out = String::new();
    match mode {
        AggregateMode::Patient => {
            let result = patient_detect(&map, &hp)?;
            let line = PatientLine {
                map: &map_name,
                probability_threshold: hp.probability_threshold,
                noise_threshold: hp.noise_threshold,
                fracture_voxel_count: result.fracture_voxel_count,
                n_components: result.components.len(),
                decision: result.decision,
            };
            out.push_str(&serde_json::to_string(&line).expect("record encode"));
            out.push('\n');
        }
        AggregateMode::Vertebra => {
            let ann_path = annotations_path
                .ok_or_else(|| Error::Argument("vertebra mode needs --annotations".into()))?;
            let annotations = AnnotationSet::parse_file(ann_path)?;
            let vertebrae: Vec<_> = annotations
                .annotations()
                .iter()
                .map(|a| (a.name, a.centroid))
                .collect();
            let scores = score_vertebrae(
                &map,
                &vertebrae,
                cfg.evaluation.cube_size_voxels,
                cfg.evaluation.kernel_sigma_mm,
            )?;
            for (ann, s) in annotations.annotations().iter().zip(&scores) {
                let line = VertebraLine {
                    map: &map_name,
                    vertebra: ann.name.to_string(),
                    grade: ann.grade.to_string(),
                    fractured: binary_class_of(ann.grade) == BinaryClass::Fracture,
                    score: s.score,
                };
                out.push_str(&serde_json::to_string(&line).expect("record encode"));
                out.push('\n');
            }
        }
    }
    std::fs::write(out_path, out).map_err(|e| Error::io(out_path, e))
}

/// Run the cross-validation experiment on a corpus: writes `report.json`
/// and the ROC/overlay plots, returns the outputs and the report digest.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    corpus_dir: &Path,
    out_dir: &Path,
) -> Result<(CvOutputs, String)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let manifest = CorpusManifest::load(corpus_dir)?;
    let cases: Vec<CvCase> = manifest
        .cases
        .iter()
        .map(|e| {
            let c = phantom::load_case(corpus_dir, &e.id)?;
            Ok(CvCase {
                id: e.id.clone(),
                volume: c.volume,
                annotations: c.annotations,
                labels: c.labels,
            })
        })
        .collect::<Result<_>>()?;

    let net_cfg = cfg.network.to_network_config()?;
    let outputs = run_cross_validation(&cases, &net_cfg, &cfg.training, &cfg.evaluation)?;

    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, outputs.report.to_json()?)
        .map_err(|e| Error::io(&report_path, e))?;
    let digest = outputs.report.digest()?;

    let sweep: Vec<RocPoint> = outputs
        .report
        .patient_level
        .sweep_points
        .iter()
        .map(|p| RocPoint {
            fpr: p.fpr,
            tpr: p.tpr,
        })
        .collect();
    plot::roc_plot(
        out_dir.join("roc_patient.png"),
        &outputs.report.patient_level.hull.points,
        Some(&outputs.report.patient_level.bootstrap.mean_curve),
        Some(&sweep),
    )?;
    plot::roc_plot(
        out_dir.join("roc_vertebra.png"),
        &outputs.report.vertebra_level.curve.points,
        Some(&outputs.report.vertebra_level.bootstrap.mean_curve),
        None,
    )?;
    for overlay in &outputs.overlays {
        plot::overlay_plot(
            out_dir.join(format!("overlay_{}.png", overlay.case_id)),
            &overlay.intensity,
            &overlay.fracture,
        )?;
    }

    log::info!(
        "patient hull AUC {:.4} ({:.4} +/- {:.4}); vertebra AUC {:.4} ({:.4} +/- {:.4})",
        outputs.report.patient_level.hull.auc,
        outputs.report.patient_level.bootstrap.mean_auc,
        outputs.report.patient_level.bootstrap.std_auc,
        outputs.report.vertebra_level.curve.auc,
        outputs.report.vertebra_level.bootstrap.mean_auc,
        outputs.report.vertebra_level.bootstrap.std_auc,
    );
    Ok((outputs, digest))
}
