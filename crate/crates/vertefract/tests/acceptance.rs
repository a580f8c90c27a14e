//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its runtime (run with `--nocapture` to see them).
//!
//! The end-to-end experiment (criterion 6) defaults to the 20-case smoke
//! profile from `configs/smoke.toml`; the full 90-case profile runs via
//! `cargo test --release --test acceptance -- --ignored`. The determinism
//! criterion reuses the smoke runs, so the experiment executes exactly
//! twice per suite invocation.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array3, Array4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vertefract::aggregate::{patient_detect, vertebra_score, PatientHyperparams};
use vertefract::cli;
use vertefract::config::ExperimentConfig;
use vertefract::inference::ProbabilityMap;
use vertefract::labels::build_label_volume;
use vertefract::network::{ModelWeights, NetworkConfig, Variant};
use vertefract::phantom::{self, CorpusManifest};
use vertefract::rocs::{bootstrap_roc_from_scores, roc_convex_hull, roc_from_scores, RocPoint};
use vertefract::trainer::{batch_loss, batch_loss_and_gradients, sample_segments, TrainingConfig};
use vertefract::volume::ResampleMode;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pass(criterion: &str, started: Instant) {
    println!(
        "acceptance {criterion}: PASS ({:.2} s)",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_1_receptive_field_arithmetic() {
    let t = Instant::now();
    let rf3 = NetworkConfig::for_variant(Variant::ThreeD).receptive_field();
    assert_eq!(rf3.normal, [17, 17, 17]);
    assert_eq!(rf3.subsampled_effective, [51, 51, 51]);
    let rf1 = NetworkConfig::for_variant(Variant::OneSlice).receptive_field();
    assert_eq!(rf1.normal, [1, 17, 17]);
    let rf5 = NetworkConfig::for_variant(Variant::FiveSlices).receptive_field();
    assert_eq!(rf5.normal, [5, 17, 17]);
    pass("criterion 1 (receptive-field arithmetic)", t);
}

#[test]
fn criterion_2_parameter_budget() {
    let t = Instant::now();
    let counts: Vec<usize> = [Variant::OneSlice, Variant::FiveSlices, Variant::ThreeD]
        .iter()
        .map(|&v| NetworkConfig::for_variant(v).count_parameters())
        .collect();
    let n3d = counts[2] as f64;
    assert!(
        (n3d - 230_000.0).abs() / 230_000.0 <= 0.10,
        "3d count {n3d} outside 230K +/- 10%"
    );
    for i in 0..3 {
        for j in i + 1..3 {
            let rel = (counts[i] as f64 - counts[j] as f64).abs() / counts[j] as f64;
            assert!(rel <= 0.01, "variant counts {counts:?} differ by {rel:.4}");
        }
    }
    pass("criterion 2 (parameter budget)", t);
}

#[test]
fn criterion_3_gradient_correctness() {
    let t = Instant::now();
    let mut net = NetworkConfig::downsized(Variant::ThreeD, 3);
    net.fusion_channels = vec![5, 5];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut weights = ModelWeights::init(&net, &mut rng).unwrap();

    // a small phantom batch with all three classes present
    let spec = phantom::PhantomSpec {
        dims: [64, 64, 64],
        vertebrae_range: [2, 2],
        fracture_prevalence: 1.0,
        ..phantom::PhantomSpec::default()
    };
    let case = phantom::generate_case(&spec, "gradcheck", &mut rng).unwrap();
    let volume = case
        .volume
        .resample_isotropic(1.0, ResampleMode::Trilinear)
        .and_then(|v| v.normalize())
        .unwrap();
    let cfg = TrainingConfig {
        output_patch: [5, 5, 5],
        sampling_weights: [0.3, 0.3, 0.4],
        ..TrainingConfig::default()
    };
    let segments = sample_segments(&volume, &case.labels, &net, &cfg, 2, &mut rng).unwrap();
    let batch: Vec<_> = segments.into_iter().map(|s| (s.input, s.target)).collect();

    let (l1, l2) = (1e-5, 1e-4);
    let (_, grads) = batch_loss_and_gradients(&weights, &batch, l1, l2).unwrap();

    let n = weights.param_count();
    let n_required = 60;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut worst: f64 = 0.0;
    let numeric_at = |weights: &mut ModelWeights, i: usize, eps: f64| {
        let orig = weights.get_param(i);
        weights.set_param(i, orig + eps);
        let plus = batch_loss(weights, &batch, l1, l2).unwrap();
        weights.set_param(i, orig - eps);
        let minus = batch_loss(weights, &batch, l1, l2).unwrap();
        weights.set_param(i, orig);
        (plus - minus) / (2.0 * eps)
    };
    while checked < n_required {
        let i = rng.gen_range(0..n);
        // the loss is piecewise smooth (PReLU); a valid finite-difference
        // probe must agree with itself across step sizes, otherwise the
        // stencil straddles a kink and measures nothing
        let coarse = numeric_at(&mut weights, i, 1e-5);
        let numeric = numeric_at(&mut weights, i, 2.5e-6);
        let stencil_rel =
            (coarse - numeric).abs() / coarse.abs().max(numeric.abs()).max(1e-8);
        if stencil_rel > 5e-4 {
            skipped += 1;
            assert!(skipped < 60, "too many non-smooth probe points");
            continue;
        }
        let analytic = grads.get_param(i);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        assert!(
            rel < 1e-3,
            "param {i}: numeric {numeric} vs analytic {analytic} (rel {rel:.2e})"
        );
        worst = worst.max(rel);
        checked += 1;
    }
    println!(
        "  gradient check: {checked} params (skipped {skipped} kink-straddling probes), worst relative error {worst:.2e}"
    );
    pass("criterion 3 (gradient correctness)", t);
}

/// Union-find connected components, an oracle independent of the BFS
/// flood fill inside `patient_detect`.
fn component_sizes_oracle(mask: &Array3<bool>) -> Vec<usize> {
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
    sizes.into_values().collect()
}

fn map_from_fracture(frac: Array3<f32>) -> ProbabilityMap {
    let d = frac.dim();
    let mut data = Array4::<f32>::zeros((3, d.0, d.1, d.2));
    for ((x, y, z), &p) in frac.indexed_iter() {
        data[[2, x, y, z]] = p;
        data[[0, x, y, z]] = 1.0 - p;
    }
    ProbabilityMap::new(data, [1.0; 3], [0.0; 3]).unwrap()
}

#[test]
fn criterion_4_aggregation_oracle_equivalence() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(44);

    // patient level: 1000 random 20^3 masks, full agreement required
    for trial in 0..1000 {
        let density = rng.gen_range(0.02..0.6);
        let frac = Array3::from_shape_fn((20, 20, 20), |_| {
            if rng.gen_bool(density) {
                0.9f32
            } else {
                0.0
            }
        });
        let noise_threshold = rng.gen_range(0..40);
        let map = map_from_fracture(frac.clone());
        let got = patient_detect(
            &map,
            &PatientHyperparams {
                probability_threshold: 0.5,
                noise_threshold,
            },
        )
        .unwrap();

        let mask = frac.mapv(|p| p >= 0.5);
        let sizes = component_sizes_oracle(&mask);
        let want: usize = sizes.iter().filter(|&&s| s >= noise_threshold).sum();
        assert_eq!(
            got.fracture_voxel_count, want,
            "trial {trial}: flood fill disagrees with union-find oracle"
        );
        assert_eq!(got.decision, want > 0, "trial {trial}");
    }

    // vertebra level: 100 random cubes against the direct kernel sum
    for trial in 0..100 {
        let dims = [24usize, 24, 24];
        let frac = Array3::from_shape_fn(dims, |_| rng.gen_range(0.0f32..1.0));
        let map = map_from_fracture(frac.clone());
        let centroid = [
            rng.gen_range(4.0..20.0),
            rng.gen_range(4.0..20.0),
            rng.gen_range(4.0..20.0),
        ];
        let cube = rng.gen_range(1..=12);
        let sigma = rng.gen_range(1.0..8.0);
        let got = vertebra_score(&map, centroid, cube, sigma).unwrap();

        // direct kernel sum over the clipped cube
        let center = [
            centroid[0].round() as usize,
            centroid[1].round() as usize,
            centroid[2].round() as usize,
        ];
        let lo_off = cube / 2;
        let hi_off = cube - 1 - lo_off;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for x in center[0].saturating_sub(lo_off)..=(center[0] + hi_off).min(dims[0] - 1) {
            for y in center[1].saturating_sub(lo_off)..=(center[1] + hi_off).min(dims[1] - 1) {
                for z in center[2].saturating_sub(lo_off)..=(center[2] + hi_off).min(dims[2] - 1) {
                    let d2 = (x as f64 - centroid[0]).powi(2)
                        + (y as f64 - centroid[1]).powi(2)
                        + (z as f64 - centroid[2]).powi(2);
                    let w = (-d2 / (2.0 * sigma * sigma)).exp();
                    num += w * f64::from(frac[[x, y, z]]);
                    den += w;
                }
            }
        }
        let want = num / den;
        assert!(
            (got - want).abs() < 1e-9,
            "trial {trial}: score {got} vs kernel-sum oracle {want}"
        );
    }
    pass("criterion 4 (aggregation oracle equivalence)", t);
}

#[test]
fn criterion_5_roc_machinery() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(55);

    // hull dominance on 100 random point sets
    for _ in 0..100 {
        let points: Vec<RocPoint> = (0..40)
            .map(|_| RocPoint {
                fpr: rng.gen_range(0.0..1.0),
                tpr: rng.gen_range(0.0..1.0),
            })
            .collect();
        let hull = roc_convex_hull(&points).unwrap();
        for p in &points {
            assert!(
                p.tpr <= hull.tpr_at(p.fpr) + 1e-9,
                "input point above its hull"
            );
        }
    }

    // separated scores
    let scores = [0.9, 0.8, 0.75, 0.3, 0.2, 0.1];
    let labels = [true, true, true, false, false, false];
    assert_eq!(roc_from_scores(&scores, &labels).unwrap().auc, 1.0);

    // label-independent scores on 10,000 samples
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let auc = roc_from_scores(&scores, &labels).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.03, "independent-data AUC {auc}");

    // bootstrap determinism per seed
    let scores = [0.9, 0.3, 0.6, 0.55, 0.2, 0.1, 0.7, 0.4];
    let labels = [true, true, true, false, false, false, true, false];
    let a = bootstrap_roc_from_scores(&scores, &labels, 1000, 99).unwrap();
    let b = bootstrap_roc_from_scores(&scores, &labels, 1000, 99).unwrap();
    assert_eq!(a, b);
    pass("criterion 5 (ROC machinery)", t);
}

/// Outcome of one full experiment run through the CLI layer.
struct ExperimentRun {
    digest: String,
    report_bytes: Vec<u8>,
    patient_hull_auc: f64,
    vertebra_auc: f64,
}

fn run_experiment(cfg: &ExperimentConfig, root: &Path, tag: &str) -> ExperimentRun {
    let corpus = root.join(format!("corpus_{tag}"));
    let out = root.join(format!("eval_{tag}"));
    cli::cmd_phantom_gen(cfg, &corpus).unwrap();
    let (outputs, digest) = cli::cmd_evaluate(cfg, &corpus, &out).unwrap();

    // the regime ran as configured: 35 epochs per fold, learning rate
    // starting at 1e-3 and never increasing
    for fold in &outputs.report.folds {
        assert_eq!(fold.epochs.len(), cfg.training.epochs);
        assert_eq!(fold.epochs[0].lr, 1e-3);
        for pair in fold.epochs.windows(2) {
            assert!(pair[1].lr <= pair[0].lr);
        }
    }
    assert_eq!(cfg.training.epochs, 35);

    ExperimentRun {
        digest,
        report_bytes: std::fs::read(out.join("report.json")).unwrap(),
        patient_hull_auc: outputs.report.patient_level.hull.auc,
        vertebra_auc: outputs.report.vertebra_level.curve.auc,
    }
}

struct SmokeRuns {
    _dir: tempfile::TempDir,
    first: ExperimentRun,
    second: ExperimentRun,
}

/// Criteria 6 (smoke form) and 8 share these two runs.
fn smoke_runs() -> &'static SmokeRuns {
    static RUNS: OnceLock<SmokeRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut cfg = ExperimentConfig::load(configs_dir().join("smoke.toml")).unwrap();
        cfg.apply_seed(cfg.seed);
        let dir = tempfile::tempdir().unwrap();
        let first = run_experiment(&cfg, dir.path(), "a");
        let second = run_experiment(&cfg, dir.path(), "b");
        SmokeRuns {
            _dir: dir,
            first,
            second,
        }
    })
}

#[test]
fn criterion_6_end_to_end_phantom_smoke() {
    let t = Instant::now();
    let runs = smoke_runs();
    println!(
        "  smoke profile: patient hull AUC {:.4}, vertebra AUC {:.4}",
        runs.first.patient_hull_auc, runs.first.vertebra_auc
    );
    assert!(
        runs.first.patient_hull_auc >= 0.95,
        "patient hull AUC {} below 0.95",
        runs.first.patient_hull_auc
    );
    assert!(
        runs.first.vertebra_auc >= 0.93,
        "vertebra AUC {} below 0.93",
        runs.first.vertebra_auc
    );
    pass("criterion 6 (end-to-end phantom, 20-case smoke profile)", t);
}

#[test]
#[ignore = "full 90-case profile, ~15 minutes; run with -- --ignored"]
fn criterion_6_end_to_end_phantom_full_90_cases() {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::load(configs_dir().join("full.toml")).unwrap();
    cfg.apply_seed(cfg.seed);
    assert_eq!(cfg.phantom.n_cases, 90);
    let dir = tempfile::tempdir().unwrap();
    let run = run_experiment(&cfg, dir.path(), "full");
    println!(
        "  full profile: patient hull AUC {:.4}, vertebra AUC {:.4}",
        run.patient_hull_auc, run.vertebra_auc
    );
    assert!(run.patient_hull_auc >= 0.95);
    assert!(run.vertebra_auc >= 0.93);
    pass("criterion 6 (end-to-end phantom, full 90-case profile)", t);
}

#[test]
fn criterion_7_label_builder_consistency() {
    let t = Instant::now();
    let spec = phantom::PhantomSpec {
        n_cases: 20,
        seed: 777,
        ..phantom::PhantomSpec::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom::generate_corpus(&spec, dir.path()).unwrap();
    assert_eq!(manifest.cases.len(), 20);
    for entry in &manifest.cases {
        let case = phantom::load_case(dir.path(), &entry.id).unwrap();
        let rebuilt = build_label_volume(&case.annotations, &case.volume, &spec.label)
            .unwrap()
            .labels;
        assert_eq!(
            &rebuilt, &case.labels,
            "{}: rebuilt labels differ from the emitted ones",
            entry.id
        );
    }
    // and the manifest round-trips
    assert_eq!(CorpusManifest::load(dir.path()).unwrap(), manifest);
    pass("criterion 7 (label-builder consistency)", t);
}

#[test]
fn criterion_8_determinism_of_the_smoke_profile() {
    let t = Instant::now();
    let runs = smoke_runs();
    assert_eq!(
        runs.first.digest, runs.second.digest,
        "same-seed smoke runs produced different report digests"
    );
    assert_eq!(
        runs.first.report_bytes, runs.second.report_bytes,
        "same-seed smoke runs produced different report files"
    );
    println!("  report digest {}", runs.first.digest);
    pass("criterion 8 (determinism across identical runs)", t);
}
