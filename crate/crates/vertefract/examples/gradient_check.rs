//! Verify the analytic gradients against central finite differences on a
//! downsized network, the same check the acceptance suite runs at scale.

use rand::Rng;
use vertefract::network::{ModelWeights, NetworkConfig, Variant};
use vertefract::phantom::{generate_case, PhantomSpec};
use vertefract::seeds;
use vertefract::trainer::{batch_loss, batch_loss_and_gradients, sample_segments, TrainingConfig};
use vertefract::volume::ResampleMode;

fn main() {
    let mut net = NetworkConfig::downsized(Variant::ThreeD, 3);
    net.fusion_channels = vec![5, 5];
    let mut rng = seeds::rng_for(2, "gradient-demo");
    let mut weights = ModelWeights::init(&net, &mut rng).unwrap();

    let spec = PhantomSpec {
        dims: [64, 64, 64],
        vertebrae_range: [1, 2],
        ..PhantomSpec::default()
    };
    let case = generate_case(&spec, "demo", &mut rng).unwrap();
    let volume = case
        .volume
        .resample_isotropic(1.0, ResampleMode::Trilinear)
        .and_then(|v| v.normalize())
        .unwrap();
    let cfg = TrainingConfig {
        output_patch: [5, 5, 5],
        ..TrainingConfig::default()
    };
    let segments = sample_segments(&volume, &case.labels, &net, &cfg, 2, &mut rng).unwrap();
    let batch: Vec<_> = segments.into_iter().map(|s| (s.input, s.target)).collect();

    let (l1, l2) = (1e-5, 1e-4);
    let (loss, grads) = batch_loss_and_gradients(&weights, &batch, l1, l2).unwrap();
    println!("loss {loss:.6} over {} parameters", weights.param_count());

    let n = weights.param_count();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    println!(
        "{:>8} {:>15} {:>15} {:>11}",
        "param", "analytic", "numeric", "rel err"
    );
    for _ in 0..12 {
        let i = rng.gen_range(0..n);
        let orig = weights.get_param(i);
        weights.set_param(i, orig + eps);
        let plus = batch_loss(&weights, &batch, l1, l2).unwrap();
        weights.set_param(i, orig - eps);
        let minus = batch_loss(&weights, &batch, l1, l2).unwrap();
        weights.set_param(i, orig);

        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads.get_param(i);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
        println!("{i:>8} {analytic:>15.8} {numeric:>15.8} {rel:>11.2e}");
    }
    println!("worst relative error {worst:.2e} (tolerance 1e-3)");
    assert!(worst < 1e-3);
}
