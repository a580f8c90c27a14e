//! A miniature end-to-end experiment: phantom corpus, stratified k-fold
//! cross-validation, pooled patient-level hull ROC and vertebra-level
//! score ROC. Uses a shortened regime so it finishes in about two minutes;
//! the `evaluate` subcommand (or `configs/smoke.toml` / `configs/full.toml`)
//! runs the real profiles.

use vertefract::evaluate::{run_cross_validation, CvCase, CvConfig};
use vertefract::network::{NetworkConfig, Variant};
use vertefract::phantom::{generate_corpus, load_case, PhantomSpec};
use vertefract::trainer::TrainingConfig;

fn main() {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = PhantomSpec {
        n_cases: 12,
        min_negative_cases: 6,
        min_positive_cases: 4,
        seed: 31,
        ..PhantomSpec::default()
    };
    let manifest = generate_corpus(&spec, dir.path()).expect("corpus");
    println!(
        "corpus: {} cases, {} negative",
        manifest.cases.len(),
        manifest.cases.iter().filter(|c| !c.fractured).count()
    );

    let cases: Vec<CvCase> = manifest
        .cases
        .iter()
        .map(|e| {
            let c = load_case(dir.path(), &e.id).expect("case load");
            CvCase {
                id: e.id.clone(),
                volume: c.volume,
                annotations: c.annotations,
                labels: c.labels,
            }
        })
        .collect();

    let net = NetworkConfig::downsized(Variant::ThreeD, 4);
    let train_cfg = TrainingConfig {
        epochs: 12,
        segment_batch: 6,
        batches_per_epoch: 8,
        output_patch: [11, 11, 11],
        anneal_patience: 5,
        anneal_min_delta: 1e-3,
        val_segments: 32,
        ..TrainingConfig::default()
    };
    let cv = CvConfig {
        k: 3,
        inference_tile: [73, 73, 73],
        bootstrap_resamples: 500,
        seed: 67,
        ..CvConfig::default()
    };

    let out = run_cross_validation(&cases, &net, &train_cfg, &cv).expect("cross-validation");
    let r = &out.report;
    println!(
        "\npatient-level hull AUC {:.3} (bootstrap {:.3} +/- {:.3}) over {} swept classifiers",
        r.patient_level.hull.auc,
        r.patient_level.bootstrap.mean_auc,
        r.patient_level.bootstrap.std_auc,
        r.patient_level.sweep_points.len()
    );
    println!(
        "vertebra-level AUC {:.3} (bootstrap {:.3} +/- {:.3}) over {} vertebrae ({} fractured)",
        r.vertebra_level.curve.auc,
        r.vertebra_level.bootstrap.mean_auc,
        r.vertebra_level.bootstrap.std_auc,
        r.vertebra_level.n_vertebrae,
        r.vertebra_level.n_fractured
    );
    for f in &r.folds {
        println!(
            "  fold {}: {} test cases, final loss {:.3}, val metric {:.3}, lr {:.6}",
            f.fold,
            f.test_cases.len(),
            f.final_train_loss,
            f.final_val_metric,
            f.final_lr
        );
    }
    println!("report digest {}", r.digest().expect("digest"));
}
