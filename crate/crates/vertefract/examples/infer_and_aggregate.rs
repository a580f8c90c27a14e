//! The second pipeline stage end to end on one held-out case: train
//! briefly, classify every voxel, then aggregate the probability map to a
//! patient-level decision and per-vertebra scores.

use vertefract::aggregate::{patient_detect, vertebra_score, PatientHyperparams};
use vertefract::inference::infer_volume;
use vertefract::network::{NetworkConfig, Variant};
use vertefract::phantom::{generate_case, PhantomSpec};
use vertefract::seeds;
use vertefract::trainer::{train, TrainingCase, TrainingConfig};
use vertefract::volume::ResampleMode;

fn main() {
    let spec = PhantomSpec::default();
    let preprocess = |i: u64| {
        let mut rng = seeds::rng_for_indexed(23, "infer-demo", i);
        let case = generate_case(&spec, &format!("case_{i}"), &mut rng).expect("phantom");
        let volume = case
            .volume
            .resample_isotropic(1.0, ResampleMode::Trilinear)
            .and_then(|v| v.normalize())
            .expect("preprocess");
        (case, volume)
    };

    let mut train_cases = Vec::new();
    for i in 0..6 {
        let (case, volume) = preprocess(i);
        train_cases.push(TrainingCase {
            id: format!("case_{i}"),
            volume,
            labels: case.labels,
        });
    }
    let val_cases = train_cases.split_off(5);

    let net = NetworkConfig::downsized(Variant::ThreeD, 4);
    let cfg = TrainingConfig {
        segment_batch: 6,
        batches_per_epoch: 8,
        output_patch: [11, 11, 11],
        anneal_patience: 5,
        anneal_min_delta: 1e-3,
        val_segments: 32,
        seed: 9,
        ..TrainingConfig::default()
    };
    println!("training on {} cases...", train_cases.len());
    let outcome = train(&train_cases, &val_cases, &net, &cfg).expect("training");

    // a case the model never saw
    let (held_out, volume) = preprocess(100);
    println!(
        "held-out case has {} vertebrae, fractured: {}",
        held_out.annotations.len(),
        held_out.annotations.has_fracture()
    );

    let map = infer_volume(&volume, &outcome.weights, [73, 73, 73]).expect("inference");
    println!("probability map covers {:?} voxels", map.dims());

    let hp = PatientHyperparams {
        probability_threshold: 0.1,
        noise_threshold: 100,
    };
    let patient = patient_detect(&map, &hp).expect("patient aggregation");
    println!(
        "patient level at (p >= {}, component >= {} voxels): {} fracture voxels in {} components -> {}",
        hp.probability_threshold,
        hp.noise_threshold,
        patient.fracture_voxel_count,
        patient.components.len(),
        if patient.decision { "POSITIVE" } else { "negative" }
    );

    println!("vertebra level (10-voxel cube, 5 mm kernel):");
    for ann in held_out.annotations.annotations() {
        let score = vertebra_score(&map, ann.centroid, 10, 5.0).expect("vertebra score");
        println!(
            "  {:<4} {:<9} score {:.3}",
            ann.name.to_string(),
            ann.grade.to_string(),
            score
        );
    }
}
