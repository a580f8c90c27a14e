//! ROC machinery on its own: a threshold-sweep curve, the convex hull over
//! discrete classifier points, bootstrap resampling and operating-point
//! selection.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;

use vertefract::rocs::{
    bootstrap_roc_from_scores, operating_point, roc_convex_hull, roc_from_scores,
    OperatingCriterion, RocPoint,
};

fn main() {
    // continuous scores: two shifted score distributions
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..120 {
        let fractured = rng.gen_bool(0.3);
        let base: f64 = if fractured { 0.62 } else { 0.38 };
        scores.push(base + rng.gen_range(-0.3..0.3));
        labels.push(fractured);
    }
    let curve = roc_from_scores(&scores, &labels).expect("roc");
    println!(
        "score ROC: {} points, AUC {:.3}",
        curve.points.len(),
        curve.auc
    );

    let boot = bootstrap_roc_from_scores(&scores, &labels, 1000, 7).expect("bootstrap");
    println!(
        "bootstrap (n=1000): AUC {:.3} +/- {:.3}",
        boot.mean_auc, boot.std_auc
    );

    // discrete classifiers, one per hyperparameter pair
    let classifiers = vec![
        RocPoint {
            fpr: 0.05,
            tpr: 0.42,
        },
        RocPoint {
            fpr: 0.10,
            tpr: 0.70,
        },
        RocPoint {
            fpr: 0.15,
            tpr: 0.65,
        }, // dominated
        RocPoint {
            fpr: 0.25,
            tpr: 0.88,
        },
        RocPoint {
            fpr: 0.45,
            tpr: 0.86,
        }, // dominated
        RocPoint {
            fpr: 0.55,
            tpr: 0.97,
        },
    ];
    let hull = roc_convex_hull(&classifiers).expect("hull");
    println!(
        "\nhull over {} classifier points -> {} vertices, AUC {:.3}:",
        classifiers.len(),
        hull.points.len(),
        hull.auc
    );
    for p in &hull.points {
        println!("  ({:.2}, {:.2})", p.fpr, p.tpr);
    }

    for (name, criterion) in [
        ("max Youden", OperatingCriterion::MaxYouden),
        (
            "specificity >= 0.9",
            OperatingCriterion::MinSpecificity(0.9),
        ),
        ("recall >= 0.95", OperatingCriterion::MinRecall(0.95)),
    ] {
        let op = operating_point(&hull, criterion).expect("operating point");
        println!(
            "operating point, {name}: recall {:.3}, specificity {:.3}{}",
            op.recall,
            op.specificity,
            if op.exact {
                ""
            } else {
                " (nearest achievable)"
            }
        );
    }
}
