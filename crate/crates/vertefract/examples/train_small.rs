//! Train a downsized classifier on a handful of phantom cases and watch
//! the loss, validation metric and learning-rate schedule.
//!
//! Takes a couple of minutes; pass a smaller epoch count to go faster:
//! cargo run --release --example train_small -- 10

use vertefract::network::{NetworkConfig, Variant};
use vertefract::phantom::{generate_case, PhantomSpec};
use vertefract::seeds;
use vertefract::trainer::{train, TrainingCase, TrainingConfig};
use vertefract::volume::ResampleMode;

fn main() {
    let epochs: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(35);
    let spec = PhantomSpec::default();

    let mut cases = Vec::new();
    for i in 0..8u64 {
        let mut rng = seeds::rng_for_indexed(11, "train-small", i);
        let case = generate_case(&spec, &format!("case_{i}"), &mut rng).expect("phantom");
        let volume = case
            .volume
            .resample_isotropic(1.0, ResampleMode::Trilinear)
            .and_then(|v| v.normalize())
            .expect("preprocess");
        cases.push(TrainingCase {
            id: format!("case_{i}"),
            volume,
            labels: case.labels,
        });
    }
    let (train_cases, val_cases) = cases.split_at(6);

    let net = NetworkConfig::downsized(Variant::ThreeD, 4);
    let cfg = TrainingConfig {
        epochs,
        segment_batch: 6,
        batches_per_epoch: 8,
        output_patch: [11, 11, 11],
        anneal_patience: 5,
        anneal_min_delta: 1e-3,
        val_segments: 32,
        seed: 3,
        ..TrainingConfig::default()
    };

    println!(
        "training a {}-parameter net on {} cases ({} validation), {} segments per epoch",
        net.count_parameters(),
        train_cases.len(),
        val_cases.len(),
        cfg.segment_batch * cfg.batches_per_epoch
    );
    let outcome = train(train_cases, val_cases, &net, &cfg).expect("training");
    println!(
        "{:>5} {:>12} {:>12} {:>10}",
        "epoch", "train loss", "val metric", "lr"
    );
    for rec in &outcome.log {
        println!(
            "{:>5} {:>12.4} {:>12.4} {:>10.6}",
            rec.epoch, rec.train_loss, rec.val_metric, rec.lr
        );
    }
}
