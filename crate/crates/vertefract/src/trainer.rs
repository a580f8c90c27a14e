//! Training: class-weighted segment sampling, augmentation, the RMSProp
//! loop with cross-entropy loss, L1/L2 regularization and plateau-driven
//! learning-rate annealing.
//!
//! Every random draw is pre-planned from the config seed before any
//! compute starts, so results are bit-reproducible and independent of the
//! worker count.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelVolume, VoxelClass};
use crate::network::{cross_entropy_loss_and_grad, ModelWeights, NetworkConfig, SegmentInput};
use crate::sampling::PreparedVolume;
use crate::seeds;
use crate::volume::Volume;

/// Training regime parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    /// Multiply the learning rate by this factor on a validation plateau.
    pub anneal_factor: f64,
    /// Epochs without improvement before annealing.
    pub anneal_patience: usize,
    /// Minimum validation-metric improvement that resets the plateau.
    pub anneal_min_delta: f64,
    pub l1_weight: f64,
    pub l2_weight: f64,
    /// Segments per optimizer step.
    pub segment_batch: usize,
    /// Optimizer steps per epoch.
    pub batches_per_epoch: usize,
    /// Output patch side lengths of a training segment.
    pub output_patch: [usize; 3],
    /// Center-class probabilities (background, normal, fracture).
    pub sampling_weights: [f64; 3],
    pub intensity_noise_std: f64,
    pub flip_axes: [bool; 3],
    /// Fixed validation segments used for the plateau metric.
    pub val_segments: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 35,
            initial_lr: 1e-3,
            anneal_factor: 0.5,
            anneal_patience: 3,
            anneal_min_delta: 1e-4,
            l1_weight: 1e-6,
            l2_weight: 1e-4,
            segment_batch: 8,
            batches_per_epoch: 6,
            output_patch: [9, 9, 9],
            sampling_weights: [0.5, 0.25, 0.25],
            intensity_noise_std: 0.05,
            flip_axes: [true, true, true],
            val_segments: 24,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.segment_batch < 1 || self.batches_per_epoch < 1 {
            return Err(Error::Config("batch geometry must be positive".into()));
        }
        if self.sampling_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Config("sampling weights must be nonnegative".into()));
        }
        let sum: f64 = self.sampling_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "sampling weights must sum to 1, got {sum}"
            )));
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return Err(Error::Config("anneal factor must lie in (0, 1]".into()));
        }
        if self.anneal_patience < 1 {
            return Err(Error::Config("anneal patience must be at least 1".into()));
        }
        if self.output_patch.contains(&0) {
            return Err(Error::Config("output patch must be positive".into()));
        }
        if self.intensity_noise_std < 0.0 {
            return Err(Error::Config("noise std must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One preprocessed case: intensity volume (resampled, normalized) and its
/// label volume on the same grid.
#[derive(Debug, Clone)]
pub struct TrainingCase {
    pub id: String,
    pub volume: Volume,
    pub labels: LabelVolume,
}

/// A training segment: both pathway inputs, the target label patch, and
/// where it came from.
#[derive(Debug, Clone)]
pub struct SampledSegment {
    pub input: SegmentInput,
    pub target: Array3<u8>,
    pub center: [usize; 3],
    pub center_class: VoxelClass,
}

/// Per-epoch log entry. Wall time is appended by the callers that write
/// log files; keeping it out of this record keeps training outputs
/// bit-comparable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub log: Vec<EpochRecord>,
}

/// Draws class-weighted segment centers from one case.
///
/// Vertebra-class center lists are precomputed (they are small); background
/// centers are drawn by rejection since background dominates the volume.
pub(crate) struct CaseSampler {
    prepared: PreparedVolume,
    labels: LabelVolume,
    out_dims: [usize; 3],
    lo: [usize; 3],
    hi: [usize; 3], // inclusive
    centers: [Vec<[u16; 3]>; 3],
    background_count: usize,
}

impl CaseSampler {
    pub fn new(
        net_cfg: &NetworkConfig,
        out_dims: [usize; 3],
        volume: Volume,
        labels: LabelVolume,
    ) -> Result<CaseSampler> {
        if volume.dims() != labels.dims() {
            return Err(Error::Shape(format!(
                "image dims {:?} and label dims {:?} differ",
                volume.dims(),
                labels.dims()
            )));
        }
        let dims = volume.dims();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let half = out_dims[a] / 2;
            if dims[a] < out_dims[a] {
                return Err(Error::Shape(format!(
                    "volume dims {dims:?} smaller than output patch {out_dims:?}"
                )));
            }
            lo[a] = half;
            hi[a] = dims[a] - out_dims[a] + half;
        }

        let mut centers: [Vec<[u16; 3]>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        let mut background_count = 0usize;
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    match labels.data()[[x, y, z]] {
                        0 => background_count += 1,
                        c => centers[c as usize].push([x as u16, y as u16, z as u16]),
                    }
                }
            }
        }

        Ok(CaseSampler {
            prepared: PreparedVolume::new(net_cfg, volume),
            labels,
            out_dims,
            lo,
            hi,
            centers,
            background_count,
        })
    }

    fn class_available(&self, class: usize) -> bool {
        if class == 0 {
            self.background_count > 0
        } else {
            !self.centers[class].is_empty()
        }
    }

    /// Sampling weights with absent classes zeroed and the remainder
    /// renormalized.
    fn effective_weights(&self, weights: [f64; 3]) -> Result<[f64; 3]> {
        let mut w = weights;
        let mut dropped = Vec::new();
        for c in 0..3 {
            if w[c] > 0.0 && !self.class_available(c) {
                dropped.push(c);
                w[c] = 0.0;
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            // every requested class is absent: fall back to whatever exists
            for c in 0..3 {
                w[c] = if self.class_available(c) { 1.0 } else { 0.0 };
            }
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Config(
                "label volume has no sampleable voxels".into(),
            ));
        }
        if !dropped.is_empty() {
            log::warn!(
                "classes {dropped:?} absent from labels; their sampling weight was redistributed"
            );
        }
        for c in 0..3 {
            w[c] /= sum;
        }
        Ok(w)
    }

    fn draw_class(w: [f64; 3], rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        if u < w[0] {
            0
        } else if u < w[0] + w[1] {
            1
        } else {
            2
        }
    }

    fn draw_center(&self, class: usize, rng: &mut ChaCha8Rng) -> [usize; 3] {
        if class == 0 {
            loop {
                let mut c = [0usize; 3];
                for a in 0..3 {
                    c[a] = rng.gen_range(self.lo[a]..=self.hi[a]);
                }
                if self.labels.data()[c] == 0 {
                    return c;
                }
            }
        } else {
            let list = &self.centers[class];
            let pick = list[rng.gen_range(0..list.len())];
            [pick[0] as usize, pick[1] as usize, pick[2] as usize]
        }
    }

    fn extract(&self, net_cfg: &NetworkConfig, center: [usize; 3]) -> SampledSegment {
        let mut start = [0usize; 3];
        for a in 0..3 {
            start[a] = center[a] - self.out_dims[a] / 2;
        }
        let input = self.prepared.extract(net_cfg, start, self.out_dims);
        let target = Array3::from_shape_fn(self.out_dims, |(x, y, z)| {
            self.labels.data()[[start[0] + x, start[1] + y, start[2] + z]]
        });
        SampledSegment {
            input,
            target,
            center,
            center_class: VoxelClass::from_u8(self.labels.data()[center]).unwrap(),
        }
    }
}

/// Draw `n` class-weighted training segments from one case. Centers are
/// restricted to positions whose output patch fits in the volume; the
/// surrounding network context is zero-padded where it runs out of bounds.
pub fn sample_segments(
    image: &Volume,
    labels: &LabelVolume,
    net_cfg: &NetworkConfig,
    cfg: &TrainingConfig,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampledSegment>> {
    cfg.validate()?;
    let sampler = CaseSampler::new(net_cfg, cfg.output_patch, image.clone(), labels.clone())?;
    let weights = sampler.effective_weights(cfg.sampling_weights)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let class = CaseSampler::draw_class(weights, rng);
        let center = sampler.draw_center(class, rng);
        out.push(sampler.extract(net_cfg, center));
    }
    Ok(out)
}

/// Apply augmentation in place: independent 50% flips along the enabled
/// axes (inputs and target flipped identically) and additive zero-mean
/// Gaussian intensity noise on both pathway inputs.
///
/// Flips reuse the segment's coarse-grid alignment as-is; the coarse
/// context may shift by up to one cell relative to a freshly extracted
/// flipped segment, which is within that pathway's spatial tolerance.
pub fn augment(segment: &mut SampledSegment, cfg: &TrainingConfig, rng: &mut ChaCha8Rng) {
    for axis in 0..3 {
        if cfg.flip_axes[axis] && rng.gen_bool(0.5) {
            flip_segment(segment, axis);
        }
    }
    if cfg.intensity_noise_std > 0.0 {
        let std = cfg.intensity_noise_std;
        for v in segment.input.normal.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += std * g;
        }
        for v in segment.input.subsampled.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v += std * g;
        }
    }
}

/// Flip a segment along a volume axis (0 = x, 1 = y, 2 = z). Involutive.
pub fn flip_segment(segment: &mut SampledSegment, axis: usize) {
    segment.input.normal.invert_axis(ndarray::Axis(axis + 1));
    segment
        .input
        .subsampled
        .invert_axis(ndarray::Axis(axis + 1));
    segment.target.invert_axis(ndarray::Axis(axis));
}

/// Full training objective on a batch: mean cross-entropy plus
/// `l1 * sum|w| + l2 * sum w^2` over convolution weights.
pub fn batch_loss(
    weights: &ModelWeights,
    batch: &[(SegmentInput, Array3<u8>)],
    l1: f64,
    l2: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    for (input, target) in batch {
        let probs = weights.forward(input)?;
        let (ce, _) = cross_entropy_loss_and_grad(&probs, target);
        loss += ce;
    }
    loss /= batch.len() as f64;
    Ok(loss + regularization_loss(weights, l1, l2))
}

/// Objective and parameter gradients on a batch. Per-segment gradients are
/// computed independently and reduced in segment order, so the result does
/// not depend on the thread count.
pub fn batch_loss_and_gradients(
    weights: &ModelWeights,
    batch: &[(SegmentInput, Array3<u8>)],
    l1: f64,
    l2: f64,
) -> Result<(f64, ModelWeights)> {
    let b = batch.len() as f64;
    let per_segment: Vec<Result<(f64, ModelWeights)>> = batch
        .par_iter()
        .map(|(input, target)| {
            let cache = weights.forward_cached(input)?;
            let (ce, mut d_logits) = cross_entropy_loss_and_grad(&cache.probs, target);
            d_logits.mapv_inplace(|v| v / b);
            let grads = weights.backward(input, &cache, &d_logits);
            Ok((ce, grads))
        })
        .collect();

    let mut loss = 0.0;
    let mut total = weights.zeros_like();
    for item in per_segment {
        let (ce, grads) = item?;
        loss += ce;
        for (t, g) in total.layers_mut().zip(grads.layers()) {
            t.weights += &g.weights;
            t.bias += &g.bias;
            if let (Some(ta), Some(ga)) = (t.prelu.as_mut(), g.prelu.as_ref()) {
                *ta += ga;
            }
        }
    }
    loss /= b;

    // regularization on conv weights only
    loss += regularization_loss(weights, l1, l2);
    for (t, w) in total.layers_mut().zip(weights.layers()) {
        ndarray::Zip::from(&mut t.weights)
            .and(&w.weights)
            .for_each(|g, &wv| {
                *g += l1 * wv.signum() + 2.0 * l2 * wv;
            });
    }
    Ok((loss, total))
}

fn regularization_loss(weights: &ModelWeights, l1: f64, l2: f64) -> f64 {
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for l in weights.layers() {
        for &w in l.weights.iter() {
            abs_sum += w.abs();
            sq_sum += w * w;
        }
    }
    l1 * abs_sum + l2 * sq_sum
}

/// RMSProp with the conventional decay 0.9 and epsilon 1e-6.
struct RmsProp {
    cache: ModelWeights,
    rho: f64,
    eps: f64,
}

impl RmsProp {
    fn new(template: &ModelWeights) -> RmsProp {
        RmsProp {
            cache: template.zeros_like(),
            rho: 0.9,
            eps: 1e-6,
        }
    }

    fn step(&mut self, weights: &mut ModelWeights, grads: &ModelWeights, lr: f64) {
        let rho = self.rho;
        let eps = self.eps;
        for ((w, g), c) in weights
            .layers_mut()
            .zip(grads.layers())
            .zip(self.cache.layers_mut())
        {
            let upd = |wv: &mut f64, gv: f64, cv: &mut f64| {
                *cv = rho * *cv + (1.0 - rho) * gv * gv;
                *wv -= lr * gv / (cv.sqrt() + eps);
            };
            ndarray::Zip::from(&mut w.weights)
                .and(&g.weights)
                .and(&mut c.weights)
                .for_each(|wv, &gv, cv| upd(wv, gv, cv));
            ndarray::Zip::from(&mut w.bias)
                .and(&g.bias)
                .and(&mut c.bias)
                .for_each(|wv, &gv, cv| upd(wv, gv, cv));
            if let (Some(wa), Some(ga), Some(ca)) =
                (w.prelu.as_mut(), g.prelu.as_ref(), c.prelu.as_mut())
            {
                ndarray::Zip::from(wa)
                    .and(ga)
                    .and(ca)
                    .for_each(|wv, &gv, cv| upd(wv, gv, cv));
            }
        }
    }
}

struct PlanItem {
    case: usize,
    center: [usize; 3],
    noise_seed: u64,
}

/// Train on the given cases for exactly `cfg.epochs` epochs.
///
/// The validation cases feed the plateau signal that anneals the learning
/// rate; they are never sampled for gradients. Returns the final weights
/// and one log record per epoch.
pub fn train(
    train_cases: &[TrainingCase],
    val_cases: &[TrainingCase],
    net_cfg: &NetworkConfig,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    if train_cases.is_empty() {
        return Err(Error::Config("need at least one training case".into()));
    }
    if val_cases.is_empty() {
        return Err(Error::Config(
            "plateau annealing needs a non-empty validation set".into(),
        ));
    }
    for t in train_cases {
        if val_cases.iter().any(|v| v.id == t.id) {
            return Err(Error::Validation(format!(
                "case '{}' appears in both training and validation sets",
                t.id
            )));
        }
    }

    let samplers: Vec<CaseSampler> = train_cases
        .iter()
        .map(|c| {
            CaseSampler::new(
                net_cfg,
                cfg.output_patch,
                c.volume.clone(),
                c.labels.clone(),
            )
        })
        .collect::<Result<_>>()?;
    let val_samplers: Vec<CaseSampler> = val_cases
        .iter()
        .map(|c| {
            CaseSampler::new(
                net_cfg,
                cfg.output_patch,
                c.volume.clone(),
                c.labels.clone(),
            )
        })
        .collect::<Result<_>>()?;

    // pre-draw the complete sampling plan
    let mut plan_rng = seeds::rng_for(cfg.seed, "trainer/plan");
    let mut plan: Vec<Vec<PlanItem>> = Vec::with_capacity(cfg.epochs * cfg.batches_per_epoch);
    for _ in 0..cfg.epochs * cfg.batches_per_epoch {
        let mut batch = Vec::with_capacity(cfg.segment_batch);
        for _ in 0..cfg.segment_batch {
            let case = plan_rng.gen_range(0..samplers.len());
            let weights = samplers[case].effective_weights(cfg.sampling_weights)?;
            let class = CaseSampler::draw_class(weights, &mut plan_rng);
            let center = samplers[case].draw_center(class, &mut plan_rng);
            let noise_seed = plan_rng.gen();
            batch.push(PlanItem {
                case,
                center,
                noise_seed,
            });
        }
        plan.push(batch);
    }

    // fixed validation segments, classes as balanced as availability allows
    let mut val_rng = seeds::rng_for(cfg.seed, "trainer/validation");
    let mut val_batch: Vec<(SegmentInput, Array3<u8>)> = Vec::with_capacity(cfg.val_segments);
    for i in 0..cfg.val_segments {
        let case = i % val_samplers.len();
        let weights = val_samplers[case].effective_weights([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])?;
        let class = CaseSampler::draw_class(weights, &mut val_rng);
        let center = val_samplers[case].draw_center(class, &mut val_rng);
        let seg = val_samplers[case].extract(net_cfg, center);
        val_batch.push((seg.input, seg.target));
    }

    let mut init_rng = seeds::rng_for(cfg.seed, "trainer/init");
    let mut weights = ModelWeights::init(net_cfg, &mut init_rng)?;
    let mut optimizer = RmsProp::new(&weights);

    let mut lr = cfg.initial_lr;
    let mut best_metric = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for batch_plan in &plan[epoch * cfg.batches_per_epoch..(epoch + 1) * cfg.batches_per_epoch]
        {
            let batch: Vec<(SegmentInput, Array3<u8>)> = batch_plan
                .par_iter()
                .map(|item| {
                    let mut seg = samplers[item.case].extract(net_cfg, item.center);
                    let mut rng = ChaCha8Rng::seed_from_u64(item.noise_seed);
                    augment(&mut seg, cfg, &mut rng);
                    (seg.input, seg.target)
                })
                .collect();
            let (loss, grads) =
                batch_loss_and_gradients(&weights, &batch, cfg.l1_weight, cfg.l2_weight)?;
            optimizer.step(&mut weights, &grads, lr);
            epoch_loss += loss;
        }
        epoch_loss /= cfg.batches_per_epoch as f64;

        let val_metric = mean_per_class_accuracy(&weights, &val_batch)?;
        log.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_metric,
            lr,
        });

        if val_metric > best_metric + cfg.anneal_min_delta {
            best_metric = val_metric;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.anneal_patience {
                lr *= cfg.anneal_factor;
                stale = 0;
            }
        }
    }

    Ok(TrainOutcome { weights, log })
}

/// Mean of the per-class voxel recalls over the given segments (classes
/// absent from the targets are left out of the mean).
pub fn mean_per_class_accuracy(
    weights: &ModelWeights,
    batch: &[(SegmentInput, Array3<u8>)],
) -> Result<f64> {
    let per_segment: Vec<Result<[[usize; 2]; 3]>> = batch
        .par_iter()
        .map(|(input, target)| {
            let probs = weights.forward(input)?;
            let mut counts = [[0usize; 2]; 3]; // [class][correct, total]
            let sh = target.shape();
            for x in 0..sh[0] {
                for y in 0..sh[1] {
                    for z in 0..sh[2] {
                        let t = target[[x, y, z]] as usize;
                        let mut argmax = 0;
                        let mut best = f64::NEG_INFINITY;
                        for c in 0..3 {
                            let p = probs[[c, x, y, z]];
                            if p > best {
                                best = p;
                                argmax = c;
                            }
                        }
                        counts[t][1] += 1;
                        if argmax == t {
                            counts[t][0] += 1;
                        }
                    }
                }
            }
            Ok(counts)
        })
        .collect();

    let mut totals = [[0usize; 2]; 3];
    for item in per_segment {
        let counts = item?;
        for c in 0..3 {
            totals[c][0] += counts[c][0];
            totals[c][1] += counts[c][1];
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in totals {
        if t[1] > 0 {
            sum += t[0] as f64 / t[1] as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Evaluation("no validation voxels".into()));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{AnnotationSet, Grade, VertebraAnnotation};
    use crate::labels::{build_label_volume, LabelConfig};
    use crate::network::Variant;
    use ndarray::Array3;

    fn net_cfg() -> NetworkConfig {
        NetworkConfig::downsized(Variant::ThreeD, 2)
    }

    fn small_train_cfg() -> TrainingConfig {
        TrainingConfig {
            epochs: 2,
            segment_batch: 2,
            batches_per_epoch: 2,
            output_patch: [3, 3, 3],
            val_segments: 4,
            ..TrainingConfig::default()
        }
    }

    /// A bright sphere on dark background with matching labels: trivially
    /// separable.
    fn toy_case(id: &str, fractured: bool, seed: u64) -> TrainingCase {
        let dims = [40, 40, 40];
        let mut vol = Volume::filled(dims, [1.0; 3], [0.0; 3], 0.0);
        let grade = if fractured {
            Grade::Moderate
        } else {
            Grade::Normal
        };
        let ann = AnnotationSet::new(
            id,
            vec![
                VertebraAnnotation::new("L2".parse().unwrap(), grade, [20.0, 20.0, 20.0]).unwrap(),
            ],
        )
        .unwrap();
        let cfg = LabelConfig {
            radii_mm: [9.0, 9.0, 9.0],
            flatten: 0.5,
        };
        // draw the body, flattened when fractured
        let radii = cfg.radii_for(crate::labels::binary_class_of(grade));
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    let p = vol.index_to_world([x, y, z]);
                    let m: f64 = (0..3)
                        .map(|a| {
                            let d = (p[a] - 20.0) / radii[a];
                            d * d
                        })
                        .sum();
                    if m <= 1.0 {
                        vol.data_mut()[[x, y, z]] = 4.0;
                    }
                }
            }
        }
        let mut rng = seeds::rng_for_indexed(seed, "toy-noise", 0);
        vol.data_mut().mapv_inplace(|v| {
            let g: f64 = rng.sample(StandardNormal);
            v + g as f32
        });
        let vol = vol.normalize().unwrap();
        let labels = build_label_volume(&ann, &vol, &cfg).unwrap().labels;
        TrainingCase {
            id: id.into(),
            volume: vol,
            labels,
        }
    }

    #[test]
    fn forced_sampling_weights_pin_the_center_class() {
        let case = toy_case("a", true, 1);
        let mut rng = seeds::rng_for(7, "test");
        let cfg = TrainingConfig {
            sampling_weights: [0.0, 0.0, 1.0],
            output_patch: [3, 3, 3],
            ..TrainingConfig::default()
        };
        let segs =
            sample_segments(&case.volume, &case.labels, &net_cfg(), &cfg, 20, &mut rng).unwrap();
        assert!(segs.iter().all(|s| s.center_class == VoxelClass::Fracture));

        let cfg = TrainingConfig {
            sampling_weights: [1.0, 0.0, 0.0],
            output_patch: [3, 3, 3],
            ..TrainingConfig::default()
        };
        let segs =
            sample_segments(&case.volume, &case.labels, &net_cfg(), &cfg, 20, &mut rng).unwrap();
        assert!(segs
            .iter()
            .all(|s| s.center_class == VoxelClass::Background));
    }

    #[test]
    fn absent_class_weight_is_redistributed_not_fatal() {
        let case = toy_case("a", false, 2); // no fracture voxels anywhere
        let mut rng = seeds::rng_for(8, "test");
        let cfg = TrainingConfig {
            sampling_weights: [0.0, 0.0, 1.0],
            output_patch: [3, 3, 3],
            ..TrainingConfig::default()
        };
        let segs =
            sample_segments(&case.volume, &case.labels, &net_cfg(), &cfg, 10, &mut rng).unwrap();
        assert_eq!(segs.len(), 10);
        assert!(segs.iter().all(|s| s.center_class != VoxelClass::Fracture));
    }

    #[test]
    fn center_class_frequencies_follow_the_weights() {
        let case = toy_case("a", true, 3);
        let sampler = CaseSampler::new(
            &net_cfg(),
            [3, 3, 3],
            case.volume.clone(),
            case.labels.clone(),
        )
        .unwrap();
        let weights = sampler.effective_weights([0.5, 0.25, 0.25]).unwrap();
        let mut rng = seeds::rng_for(9, "test");
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let class = CaseSampler::draw_class(weights, &mut rng);
            let center = sampler.draw_center(class, &mut rng);
            counts[case.labels.data()[center] as usize] += 1;
        }
        for c in 0..3 {
            let freq = counts[c] as f64 / n as f64;
            assert!(
                (freq - weights[c]).abs() < 0.02,
                "class {c}: {freq} vs {}",
                weights[c]
            );
        }
    }

    #[test]
    fn augment_without_noise_or_flips_is_identity() {
        let case = toy_case("a", true, 4);
        let mut rng = seeds::rng_for(10, "test");
        let cfg = TrainingConfig {
            intensity_noise_std: 0.0,
            flip_axes: [false, false, false],
            output_patch: [3, 3, 3],
            ..TrainingConfig::default()
        };
        let mut segs =
            sample_segments(&case.volume, &case.labels, &net_cfg(), &cfg, 1, &mut rng).unwrap();
        let before = segs[0].clone();
        augment(&mut segs[0], &cfg, &mut rng);
        assert_eq!(segs[0].input, before.input);
        assert_eq!(segs[0].target, before.target);
    }

    #[test]
    fn flip_is_an_involution() {
        let case = toy_case("a", true, 5);
        let mut rng = seeds::rng_for(11, "test");
        let cfg = TrainingConfig {
            output_patch: [3, 3, 3],
            ..TrainingConfig::default()
        };
        let mut segs =
            sample_segments(&case.volume, &case.labels, &net_cfg(), &cfg, 1, &mut rng).unwrap();
        let before = segs[0].clone();
        for axis in 0..3 {
            flip_segment(&mut segs[0], axis);
            flip_segment(&mut segs[0], axis);
            assert_eq!(segs[0].input, before.input, "axis {axis}");
            assert_eq!(segs[0].target, before.target, "axis {axis}");
        }
    }

    #[test]
    fn noise_statistics_match_the_configured_std() {
        let n = 1_000_000usize;
        let mut seg = SampledSegment {
            input: SegmentInput {
                normal: ndarray::Array4::zeros((1, 100, 100, 100)),
                subsampled: ndarray::Array4::zeros((1, 1, 1, 1)),
                phase: [0, 0, 0],
            },
            target: Array3::zeros((1, 1, 1)),
            center: [0, 0, 0],
            center_class: VoxelClass::Background,
        };
        let cfg = TrainingConfig {
            intensity_noise_std: 0.1,
            flip_axes: [false, false, false],
            ..TrainingConfig::default()
        };
        let mut rng = seeds::rng_for(12, "test");
        augment(&mut seg, &cfg, &mut rng);
        let mean = seg.input.normal.iter().sum::<f64>() / n as f64;
        let var = seg
            .input
            .normal
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < 1e-3, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.002, "std {}", var.sqrt());
    }

    #[test]
    fn batch_gradients_match_finite_differences_on_sampled_params() {
        let case = toy_case("a", true, 6);
        let mut rng = seeds::rng_for(13, "test");
        let cfg = TrainingConfig {
            output_patch: [3, 3, 3],
            ..TrainingConfig::default()
        };
        let segs =
            sample_segments(&case.volume, &case.labels, &net_cfg(), &cfg, 2, &mut rng).unwrap();
        let batch: Vec<_> = segs.into_iter().map(|s| (s.input, s.target)).collect();
        let mut init_rng = seeds::rng_for(14, "test");
        let mut weights = ModelWeights::init(&net_cfg(), &mut init_rng).unwrap();
        let (l1, l2) = (1e-4, 1e-3);
        let (_, grads) = batch_loss_and_gradients(&weights, &batch, l1, l2).unwrap();

        let n = weights.param_count();
        let eps = 1e-5;
        for &i in &[0usize, n / 3, n / 2, n - 1, n - 7] {
            let orig = weights.get_param(i);
            weights.set_param(i, orig + eps);
            let plus = batch_loss(&weights, &batch, l1, l2).unwrap();
            weights.set_param(i, orig - eps);
            let minus = batch_loss(&weights, &batch, l1, l2).unwrap();
            weights.set_param(i, orig);
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get_param(i);
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-3,
                "param {i}: numeric {numeric} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights_at_initialization() {
        let train_cases = vec![toy_case("a", true, 15)];
        let val_cases = vec![toy_case("b", false, 16)];
        let cfg = TrainingConfig {
            epochs: 1,
            initial_lr: 0.0,
            l1_weight: 0.0,
            l2_weight: 0.0,
            ..small_train_cfg()
        };
        let outcome = train(&train_cases, &val_cases, &net_cfg(), &cfg).unwrap();
        let mut init_rng = seeds::rng_for(cfg.seed, "trainer/init");
        let init = ModelWeights::init(&net_cfg(), &mut init_rng).unwrap();
        assert_eq!(outcome.weights, init);
        assert_eq!(outcome.log.len(), 1);
    }

    #[test]
    fn training_is_bit_reproducible_given_a_seed() {
        let train_cases = vec![toy_case("a", true, 17)];
        let val_cases = vec![toy_case("b", false, 18)];
        let cfg = small_train_cfg();
        let one = train(&train_cases, &val_cases, &net_cfg(), &cfg).unwrap();
        let two = train(&train_cases, &val_cases, &net_cfg(), &cfg).unwrap();
        assert_eq!(one.weights, two.weights);
        assert_eq!(one.log, two.log);
    }

    #[test]
    fn log_has_one_entry_per_epoch_and_lr_never_increases() {
        let train_cases = vec![toy_case("a", true, 19)];
        let val_cases = vec![toy_case("b", false, 20)];
        let cfg = TrainingConfig {
            epochs: 6,
            anneal_patience: 1,
            ..small_train_cfg()
        };
        let outcome = train(&train_cases, &val_cases, &net_cfg(), &cfg).unwrap();
        assert_eq!(outcome.log.len(), 6);
        assert_eq!(outcome.log[0].lr, 1e-3);
        for pair in outcome.log.windows(2) {
            assert!(pair[1].lr <= pair[0].lr);
        }
    }

    #[test]
    fn empty_validation_set_is_a_config_error() {
        let train_cases = vec![toy_case("a", true, 21)];
        match train(&train_cases, &[], &net_cfg(), &small_train_cfg()) {
            Err(Error::Config(_)) => {}
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_train_and_validation_cases_are_rejected() {
        let a = toy_case("a", true, 22);
        match train(
            std::slice::from_ref(&a),
            std::slice::from_ref(&a),
            &net_cfg(),
            &small_train_cfg(),
        ) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn loss_decreases_on_a_separable_toy_batch() {
        let train_cases = vec![toy_case("a", true, 23), toy_case("c", false, 24)];
        let val_cases = vec![toy_case("b", false, 25)];
        let cfg = TrainingConfig {
            epochs: 4,
            segment_batch: 4,
            batches_per_epoch: 3,
            output_patch: [3, 3, 3],
            val_segments: 6,
            ..TrainingConfig::default()
        };
        let outcome = train(&train_cases, &val_cases, &net_cfg(), &cfg).unwrap();
        let first = outcome.log.first().unwrap().train_loss;
        let last = outcome.log.last().unwrap().train_loss;
        assert!(last < first, "loss went from {first} to {last}");
    }
}
