//! ROC construction: threshold-sweep curves over continuous scores, the
//! convex hull over discrete classifier points (one per hyperparameter
//! pair), bootstrap resampling for AUC uncertainty, and operating-point
//! selection.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (false-positive-rate, true-positive-rate) point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// An ROC curve: points sorted by FPR from (0,0) to (1,1), with the
/// trapezoidal area under it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    fn from_sorted_points(points: Vec<RocPoint>) -> RocCurve {
        let auc = trapezoid_auc(&points);
        RocCurve { points, auc }
    }

    /// Linear interpolation of TPR at the given FPR; vertical segments
    /// evaluate to their upper end.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let pts = &self.points;
        if fpr <= pts[0].fpr {
            return pts[0].tpr;
        }
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if fpr <= b.fpr {
                if b.fpr == a.fpr {
                    continue; // vertical: keep walking to the upper end
                }
                if fpr == b.fpr {
                    continue; // exact hit: prefer the highest tpr at this fpr
                }
                let t = (fpr - a.fpr) / (b.fpr - a.fpr);
                return a.tpr + t * (b.tpr - a.tpr);
            }
        }
        // fpr matches the last point(s) or exceeds the curve
        pts.iter()
            .filter(|p| p.fpr <= fpr)
            .map(|p| p.tpr)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    auc
}

fn check_two_classes(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation(
            "ROC needs at least one positive and one negative label".into(),
        ));
    }
    Ok((pos, neg))
}

/// Threshold-sweep ROC over continuous scores (higher score = more
/// fracture-like).
pub fn roc_from_scores(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (n_pos, n_neg) = check_two_classes(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
    });

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        // advance over the tie group so equal scores move together
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    Ok(RocCurve::from_sorted_points(points))
}

/// Upper-left convex hull of classifier points plus the (0,0) and (1,1)
/// anchors: the envelope of classifiers optimal for some cost trade-off.
pub fn roc_convex_hull(points: &[RocPoint]) -> Result<RocCurve> {
    if points.is_empty() {
        return Err(Error::Argument(
            "convex hull needs at least one point".into(),
        ));
    }
    for p in points {
        if !(0.0..=1.0).contains(&p.fpr) || !(0.0..=1.0).contains(&p.tpr) {
            return Err(Error::Argument(format!(
                "ROC point ({}, {}) outside the unit square",
                p.fpr, p.tpr
            )));
        }
    }
    let mut all: Vec<RocPoint> = Vec::with_capacity(points.len() + 2);
    all.push(RocPoint { fpr: 0.0, tpr: 0.0 });
    all.extend_from_slice(points);
    all.push(RocPoint { fpr: 1.0, tpr: 1.0 });
    all.sort_by(|a, b| {
        a.fpr
            .partial_cmp(&b.fpr)
            .unwrap()
            .then(a.tpr.partial_cmp(&b.tpr).unwrap())
    });

    // monotone-chain upper hull
    let mut hull: Vec<RocPoint> = Vec::new();
    for p in all {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.fpr - a.fpr) * (p.tpr - a.tpr) - (b.tpr - a.tpr) * (p.fpr - a.fpr);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        if let Some(last) = hull.last() {
            if last.fpr == p.fpr && last.tpr == p.tpr {
                continue;
            }
        }
        hull.push(p);
    }
    Ok(RocCurve::from_sorted_points(hull))
}

/// Bootstrap summary: AUC mean and standard deviation over the resamples
/// plus the pointwise-mean curve on a fixed 101-point FPR grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRoc {
    pub mean_auc: f64,
    pub std_auc: f64,
    /// (fpr, mean tpr) on the fixed grid.
    pub mean_curve: Vec<RocPoint>,
    pub n_resamples: usize,
}

pub const BOOTSTRAP_GRID_POINTS: usize = 101;

fn summarize_bootstrap(aucs: &[f64], curves: &[Vec<f64>]) -> BootstrapRoc {
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let var = aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let mut mean_curve = Vec::with_capacity(BOOTSTRAP_GRID_POINTS);
    for g in 0..BOOTSTRAP_GRID_POINTS {
        let fpr = g as f64 / (BOOTSTRAP_GRID_POINTS - 1) as f64;
        let tpr = curves.iter().map(|c| c[g]).sum::<f64>() / n;
        mean_curve.push(RocPoint { fpr, tpr });
    }
    BootstrapRoc {
        mean_auc: mean,
        std_auc: var.sqrt(),
        mean_curve,
        n_resamples: aucs.len(),
    }
}

fn curve_on_grid(curve: &RocCurve) -> Vec<f64> {
    (0..BOOTSTRAP_GRID_POINTS)
        .map(|g| curve.tpr_at(g as f64 / (BOOTSTRAP_GRID_POINTS - 1) as f64))
        .collect()
}

/// Indices of a resample with replacement, redrawn until both classes are
/// present.
fn stratified_resample(labels: &[bool], rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let idx: Vec<usize> = (0..labels.len())
            .map(|_| rng.gen_range(0..labels.len()))
            .collect();
        let pos = idx.iter().filter(|&&i| labels[i]).count();
        if pos > 0 && pos < idx.len() {
            return idx;
        }
    }
}

/// Bootstrap a score-based ROC (vertebra level): resample the scored units
/// with replacement n times.
pub fn bootstrap_roc_from_scores(
    scores: &[f64],
    labels: &[bool],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapRoc> {
    check_two_classes(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aucs = Vec::with_capacity(n_resamples);
    let mut curves = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let idx = stratified_resample(labels, &mut rng);
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let curve = roc_from_scores(&s, &l)?;
        aucs.push(curve.auc);
        curves.push(curve_on_grid(&curve));
    }
    Ok(summarize_bootstrap(&aucs, &curves))
}

/// Bootstrap a hull-based ROC (patient level): resample cases with
/// replacement, rebuild the swept points and their convex hull each time.
/// `rows[case][grid_point]` holds the case's decision for each
/// hyperparameter pair.
pub fn bootstrap_roc_from_decisions(
    rows: &[Vec<bool>],
    labels: &[bool],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapRoc> {
    if rows.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} decision rows for {} labels",
            rows.len(),
            labels.len()
        )));
    }
    check_two_classes(labels)?;
    let n_grid = rows.first().map_or(0, |r| r.len());
    if n_grid == 0 || rows.iter().any(|r| r.len() != n_grid) {
        return Err(Error::Argument(
            "decision rows must share a nonempty grid".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aucs = Vec::with_capacity(n_resamples);
    let mut curves = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let idx = stratified_resample(labels, &mut rng);
        let n_pos = idx.iter().filter(|&&i| labels[i]).count();
        let n_neg = idx.len() - n_pos;
        let mut points = Vec::with_capacity(n_grid);
        for g in 0..n_grid {
            let mut tp = 0usize;
            let mut fp = 0usize;
            for &i in &idx {
                if rows[i][g] {
                    if labels[i] {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            points.push(RocPoint {
                fpr: fp as f64 / n_neg as f64,
                tpr: tp as f64 / n_pos as f64,
            });
        }
        let hull = roc_convex_hull(&points)?;
        aucs.push(hull.auc);
        curves.push(curve_on_grid(&hull));
    }
    Ok(summarize_bootstrap(&aucs, &curves))
}

/// How to pick an operating point on a curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatingCriterion {
    /// Maximize TPR - FPR.
    MaxYouden,
    /// Highest recall among points with specificity at least this.
    MinSpecificity(f64),
    /// Highest specificity among points with recall at least this.
    MinRecall(f64),
}

/// A selected operating point. `exact` is false when the criterion was
/// infeasible and the nearest achievable point is returned instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub recall: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub exact: bool,
}

pub fn operating_point(curve: &RocCurve, criterion: OperatingCriterion) -> Result<OperatingPoint> {
    if curve.points.is_empty() {
        return Err(Error::Argument("empty ROC curve".into()));
    }
    let mk = |p: &RocPoint, exact: bool| OperatingPoint {
        recall: p.tpr,
        specificity: 1.0 - p.fpr,
        fpr: p.fpr,
        tpr: p.tpr,
        exact,
    };
    let best_by = |cands: &[&RocPoint], key: &dyn Fn(&RocPoint) -> (f64, f64)| {
        cands
            .iter()
            .max_by(|a, b| {
                let ka = key(a);
                let kb = key(b);
                ka.partial_cmp(&kb).unwrap()
            })
            .map(|p| **p)
    };
    let all: Vec<&RocPoint> = curve.points.iter().collect();
    match criterion {
        OperatingCriterion::MaxYouden => {
            let p = best_by(&all, &|p| (p.tpr - p.fpr, -p.fpr)).unwrap();
            Ok(mk(&p, true))
        }
        OperatingCriterion::MinSpecificity(s) => {
            let feasible: Vec<&RocPoint> = all
                .iter()
                .copied()
                .filter(|p| 1.0 - p.fpr >= s - 1e-12)
                .collect();
            if feasible.is_empty() {
                let p = best_by(&all, &|p| (1.0 - p.fpr, p.tpr)).unwrap();
                Ok(mk(&p, false))
            } else {
                let p = best_by(&feasible, &|p| (p.tpr, 1.0 - p.fpr)).unwrap();
                Ok(mk(&p, true))
            }
        }
        OperatingCriterion::MinRecall(r) => {
            let feasible: Vec<&RocPoint> =
                all.iter().copied().filter(|p| p.tpr >= r - 1e-12).collect();
            if feasible.is_empty() {
                let p = best_by(&all, &|p| (p.tpr, -p.fpr)).unwrap();
                Ok(mk(&p, false))
            } else {
                let p = best_by(&feasible, &|p| (-p.fpr, p.tpr)).unwrap();
                Ok(mk(&p, true))
            }
        }
    }
}
