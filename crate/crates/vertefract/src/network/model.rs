//! Dual-pathway model weights, the forward pass, backpropagation and
//! checkpoint I/O.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array3, Array4, Array5};
use rand::Rng;
use rand_distr::StandardNormal;

use super::conv::{
    conv3d_backward_input, conv3d_backward_weights, conv3d_valid, prelu_backward, prelu_forward,
    softmax_channels,
};
use super::NetworkConfig;
use crate::error::{Error, Result};

pub const N_CONV_LAYERS: usize = 8;

const CHECKPOINT_MAGIC: &[u8; 8] = b"VFRNET1\0";

/// One convolution layer; fusion/classifier layers are 1x1x1. The
/// classification layer has no PReLU slope.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weights: Array5<f64>,
    pub bias: Array1<f64>,
    pub prelu: Option<Array1<f64>>,
}

impl ConvLayer {
    fn zeros(filter: [usize; 3], c_in: usize, c_out: usize, prelu: bool) -> ConvLayer {
        ConvLayer {
            weights: Array5::zeros((c_out, c_in, filter[0], filter[1], filter[2])),
            bias: Array1::zeros(c_out),
            prelu: prelu.then(|| Array1::zeros(c_out)),
        }
    }

    fn init(
        filter: [usize; 3],
        c_in: usize,
        c_out: usize,
        prelu: bool,
        rng: &mut impl Rng,
    ) -> ConvLayer {
        let fan_in = (filter[0] * filter[1] * filter[2] * c_in) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weights = Array5::from_shape_fn((c_out, c_in, filter[0], filter[1], filter[2]), |_| {
            let g: f64 = rng.sample(StandardNormal);
            g * std
        });
        ConvLayer {
            weights,
            bias: Array1::zeros(c_out),
            prelu: prelu.then(|| Array1::from_elem(c_out, 0.25)),
        }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len() + self.prelu.as_ref().map_or(0, |a| a.len())
    }
}

/// All learnable parameters. The same structure doubles as the gradient
/// and optimizer-state container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    cfg: NetworkConfig,
    pub normal: Vec<ConvLayer>,
    pub subsampled: Vec<ConvLayer>,
    pub fusion: Vec<ConvLayer>,
}

/// Both pathway inputs for one location, plus the coarse-grid phase (the
/// output region's global start modulo the subsampling factor), which fixes
/// how output voxels align with coarse cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentInput {
    pub normal: Array4<f64>,
    pub subsampled: Array4<f64>,
    pub phase: [usize; 3],
}

struct PathwayCache {
    /// Input of each conv layer (index 0 is the pathway input).
    inputs: Vec<Array4<f64>>,
    /// Pre-activation of each conv layer.
    pre: Vec<Array4<f64>>,
    /// Activation after the last layer.
    output: Array4<f64>,
}

pub(crate) struct ForwardCache {
    normal: PathwayCache,
    subsampled: PathwayCache,
    fused: PathwayCache,
    pub probs: Array4<f64>,
    out_dims: [usize; 3],
}

impl ModelWeights {
    /// He-style initialization; biases zero, PReLU slopes 0.25.
    pub fn init(cfg: &NetworkConfig, rng: &mut impl Rng) -> Result<ModelWeights> {
        cfg.validate()?;
        let build = |rng: &mut dyn FnMut(
            [usize; 3],
            usize,
            usize,
            bool,
        ) -> ConvLayer|
         -> (Vec<ConvLayer>, Vec<ConvLayer>, Vec<ConvLayer>) {
            let pathway = |rng: &mut dyn FnMut([usize; 3], usize, usize, bool) -> ConvLayer| {
                let mut layers = Vec::with_capacity(N_CONV_LAYERS);
                let mut c_in = 1;
                for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
                    layers.push(rng(cfg.filter_of_layer(i), c_in, c_out, true));
                    c_in = c_out;
                }
                layers
            };
            let normal = pathway(rng);
            let subsampled = pathway(rng);
            let mut fusion = Vec::new();
            let mut c = 2 * *cfg.conv_channels.last().unwrap();
            for &h in &cfg.fusion_channels {
                fusion.push(rng([1, 1, 1], c, h, true));
                c = h;
            }
            fusion.push(rng([1, 1, 1], c, cfg.n_classes, false));
            (normal, subsampled, fusion)
        };
        let mut make =
            |f: [usize; 3], ci: usize, co: usize, p: bool| ConvLayer::init(f, ci, co, p, rng);
        let (normal, subsampled, fusion) = build(&mut make);
        Ok(ModelWeights {
            cfg: cfg.clone(),
            normal,
            subsampled,
            fusion,
        })
    }

    /// Same shapes, all parameters zero (for gradients and optimizer state).
    pub fn zeros_like(&self) -> ModelWeights {
        let z = |layers: &[ConvLayer]| {
            layers
                .iter()
                .map(|l| {
                    let ws = l.weights.shape();
                    ConvLayer::zeros([ws[2], ws[3], ws[4]], ws[1], ws[0], l.prelu.is_some())
                })
                .collect()
        };
        ModelWeights {
            cfg: self.cfg.clone(),
            normal: z(&self.normal),
            subsampled: z(&self.subsampled),
            fusion: z(&self.fusion),
        }
    }

    pub fn cfg(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// All layers in the canonical (checkpoint) order.
    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.normal
            .iter()
            .chain(self.subsampled.iter())
            .chain(self.fusion.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.normal
            .iter_mut()
            .chain(self.subsampled.iter_mut())
            .chain(self.fusion.iter_mut())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    /// Read a parameter by flat index in canonical order.
    pub fn get_param(&self, index: usize) -> f64 {
        let mut i = index;
        for l in self.layers() {
            for arr in layer_slices(l) {
                if i < arr.len() {
                    return arr[i];
                }
                i -= arr.len();
            }
        }
        panic!("parameter index {index} out of range");
    }

    /// Write a parameter by flat index in canonical order.
    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut i = index;
        for l in self.layers_mut() {
            for arr in layer_slices_mut(l) {
                if i < arr.len() {
                    arr[i] = value;
                    return;
                }
                i -= arr.len();
            }
        }
        panic!("parameter index {index} out of range");
    }

    /// Forward pass: per-voxel class probabilities `[n_classes, ox, oy, oz]`.
    ///
    /// Keeps only the live activation per layer; training uses
    /// `forward_cached` instead.
    pub fn forward(&self, segment: &SegmentInput) -> Result<Array4<f64>> {
        let out_dims = self.check_segment(segment)?;

        let run_lean = |layers: &[ConvLayer], input: &Array4<f64>| {
            let mut a = conv3d_valid(&input.view(), &layers[0].weights, &layers[0].bias);
            a = prelu_forward(&a, layers[0].prelu.as_ref().unwrap());
            for layer in &layers[1..] {
                let z = conv3d_valid(&a.view(), &layer.weights, &layer.bias);
                a = prelu_forward(&z, layer.prelu.as_ref().unwrap());
            }
            a
        };
        let normal_out = run_lean(&self.normal, &segment.normal);
        let sub_out = run_lean(&self.subsampled, &segment.subsampled);
        let mut a = self.fuse(&normal_out, &sub_out, out_dims, segment.phase);
        for (li, layer) in self.fusion.iter().enumerate() {
            let z = conv3d_valid(&a.view(), &layer.weights, &layer.bias);
            a = if li == self.fusion.len() - 1 {
                z
            } else {
                prelu_forward(&z, layer.prelu.as_ref().unwrap())
            };
        }
        Ok(softmax_channels(&a))
    }

    fn check_segment(&self, segment: &SegmentInput) -> Result<[usize; 3]> {
        let nd = segment.normal.shape();
        if nd[0] != 1 {
            return Err(Error::Shape(format!(
                "expected a single input channel, got {}",
                nd[0]
            )));
        }
        let out_dims = self.cfg.output_dims_for_input([nd[1], nd[2], nd[3]])?;
        let spec = self.cfg.segment_spec(out_dims, segment.phase);
        let sd = segment.subsampled.shape();
        if [sd[1], sd[2], sd[3]] != spec.input_subsampled_dims {
            return Err(Error::Shape(format!(
                "subsampled input dims {:?} do not match expected {:?} for output {:?} and phase {:?}",
                &sd[1..4],
                spec.input_subsampled_dims,
                out_dims,
                segment.phase
            )));
        }
        Ok(out_dims)
    }

    fn fuse(
        &self,
        normal_out: &Array4<f64>,
        sub_out: &Array4<f64>,
        out_dims: [usize; 3],
        phase: [usize; 3],
    ) -> Array4<f64> {
        let factors = self.cfg.subsample_factors();
        let upsampled = upsample_with_phase(sub_out, out_dims, factors, phase);
        let c8 = *self.cfg.conv_channels.last().unwrap();
        let mut fused_input = Array4::<f64>::zeros((2 * c8, out_dims[0], out_dims[1], out_dims[2]));
        fused_input
            .slice_mut(s![..c8, .., .., ..])
            .assign(normal_out);
        fused_input
            .slice_mut(s![c8.., .., .., ..])
            .assign(&upsampled);
        fused_input
    }

    pub(crate) fn forward_cached(&self, segment: &SegmentInput) -> Result<ForwardCache> {
        let out_dims = self.check_segment(segment)?;

        let normal = run_pathway(&self.normal, &segment.normal);
        let subsampled = run_pathway(&self.subsampled, &segment.subsampled);
        let fused_input = self.fuse(&normal.output, &subsampled.output, out_dims, segment.phase);
        let (fused, logits) = run_fusion(&self.fusion, &fused_input);
        let probs = softmax_channels(&logits);

        Ok(ForwardCache {
            normal,
            subsampled,
            fused,
            probs,
            out_dims,
        })
    }

    /// Backpropagate `d_logits` through the whole network; returns parameter
    /// gradients in a `ModelWeights`-shaped container.
    pub(crate) fn backward(
        &self,
        segment: &SegmentInput,
        cache: &ForwardCache,
        d_logits: &Array4<f64>,
    ) -> ModelWeights {
        let mut grads = self.zeros_like();

        // fusion stack (hidden layers have PReLU, classifier does not)
        let mut d = d_logits.clone();
        for (li, layer) in self.fusion.iter().enumerate().rev() {
            let is_classifier = li == self.fusion.len() - 1;
            let d_z = if is_classifier {
                d
            } else {
                let (d_z, d_alpha) =
                    prelu_backward(&cache.fused.pre[li], layer.prelu.as_ref().unwrap(), &d);
                *grads.fusion[li].prelu.as_mut().unwrap() += &d_alpha;
                d_z
            };
            let input = &cache.fused.inputs[li];
            let (d_w, d_b) = conv3d_backward_weights(&input.view(), &d_z, [1, 1, 1]);
            grads.fusion[li].weights += &d_w;
            grads.fusion[li].bias += &d_b;
            let idim = input.shape();
            d = conv3d_backward_input(&layer.weights, &d_z, [idim[0], idim[1], idim[2], idim[3]]);
        }

        // split the fused-input gradient between the pathways
        let c8 = *self.cfg.conv_channels.last().unwrap();
        let d_normal_out = d.slice(s![..c8, .., .., ..]).to_owned();
        let d_upsampled = d.slice(s![c8.., .., .., ..]).to_owned();
        let factors = self.cfg.subsample_factors();
        let sub_out_shape = cache.subsampled.output.shape();
        let d_sub_out = downsample_sum_with_phase(
            &d_upsampled,
            [sub_out_shape[1], sub_out_shape[2], sub_out_shape[3]],
            factors,
            segment.phase,
        );
        debug_assert_eq!(cache.out_dims, {
            let s = d_normal_out.shape();
            [s[1], s[2], s[3]]
        });

        backprop_pathway(&self.normal, &cache.normal, d_normal_out, &mut grads.normal);
        backprop_pathway(
            &self.subsampled,
            &cache.subsampled,
            d_sub_out,
            &mut grads.subsampled,
        );
        grads
    }

    /// Write a versioned checkpoint: config header plus raw parameter data
    /// in canonical order. Byte-exact round trip.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&self.cfg)
            .map_err(|e| Error::Format(format!("checkpoint header encode: {e}")))?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(&mut file);
        w.write_all(CHECKPOINT_MAGIC)
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&(header.len() as u32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&header).map_err(|e| Error::io(path, e))?;
        w.write_all(&(self.param_count() as u64).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        for l in self.layers() {
            for arr in layer_slices(l) {
                for v in arr {
                    w.write_all(&v.to_le_bytes())
                        .map_err(|e| Error::io(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelWeights> {
        let path = path.as_ref();
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|e| Error::io(path, e))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "{}: not a recognized checkpoint (magic {magic:?})",
                path.display()
            )));
        }
        let mut len4 = [0u8; 4];
        file.read_exact(&mut len4).map_err(|e| Error::io(path, e))?;
        let mut header = vec![0u8; u32::from_le_bytes(len4) as usize];
        file.read_exact(&mut header)
            .map_err(|e| Error::io(path, e))?;
        let cfg: NetworkConfig = serde_json::from_slice(&header)
            .map_err(|e| Error::Format(format!("checkpoint header decode: {e}")))?;
        cfg.validate()?;

        let mut count8 = [0u8; 8];
        file.read_exact(&mut count8)
            .map_err(|e| Error::io(path, e))?;
        let count = u64::from_le_bytes(count8) as usize;

        let mut model = {
            // shapes from config; data filled below
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            ModelWeights::init(&cfg, &mut rng)?
        };
        if model.param_count() != count {
            return Err(Error::Format(format!(
                "checkpoint parameter count {count} does not match config ({})",
                model.param_count()
            )));
        }
        let mut buf = vec![0u8; count * 8];
        file.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        let mut offset = 0usize;
        for l in model.layers_mut() {
            for arr in layer_slices_mut(l) {
                for v in arr {
                    *v = f64::from_le_bytes(buf[offset..offset + 8].try_into().unwrap());
                    offset += 8;
                }
            }
        }
        Ok(model)
    }
}

use rand_chacha::rand_core::SeedableRng;

fn layer_slices(l: &ConvLayer) -> Vec<&[f64]> {
    let mut v = vec![
        l.weights.as_slice().expect("standard layout"),
        l.bias.as_slice().expect("standard layout"),
    ];
    if let Some(a) = &l.prelu {
        v.push(a.as_slice().expect("standard layout"));
    }
    v
}

fn layer_slices_mut(l: &mut ConvLayer) -> Vec<&mut [f64]> {
    let mut v = Vec::with_capacity(3);
    v.push(l.weights.as_slice_mut().expect("standard layout"));
    v.push(l.bias.as_slice_mut().expect("standard layout"));
    if let Some(a) = &mut l.prelu {
        v.push(a.as_slice_mut().expect("standard layout"));
    }
    v
}

fn run_pathway(layers: &[ConvLayer], input: &Array4<f64>) -> PathwayCache {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = input.clone();
    for layer in layers {
        let z = conv3d_valid(&a.view(), &layer.weights, &layer.bias);
        inputs.push(a);
        a = prelu_forward(&z, layer.prelu.as_ref().expect("pathway layers use PReLU"));
        pre.push(z);
    }
    PathwayCache {
        inputs,
        pre,
        output: a,
    }
}

fn run_fusion(layers: &[ConvLayer], input: &Array4<f64>) -> (PathwayCache, Array4<f64>) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = input.clone();
    let mut logits = None;
    for (li, layer) in layers.iter().enumerate() {
        let z = conv3d_valid(&a.view(), &layer.weights, &layer.bias);
        inputs.push(a.clone());
        if li == layers.len() - 1 {
            pre.push(z.clone());
            logits = Some(z.clone());
            a = z;
        } else {
            let act = prelu_forward(&z, layer.prelu.as_ref().unwrap());
            pre.push(z);
            a = act;
        }
    }
    (
        PathwayCache {
            inputs,
            pre,
            output: a.clone(),
        },
        logits.expect("at least one fusion layer"),
    )
}

fn backprop_pathway(
    layers: &[ConvLayer],
    cache: &PathwayCache,
    d_output: Array4<f64>,
    grads: &mut [ConvLayer],
) {
    let mut d_a = d_output;
    for (li, layer) in layers.iter().enumerate().rev() {
        let (d_z, d_alpha) = prelu_backward(&cache.pre[li], layer.prelu.as_ref().unwrap(), &d_a);
        *grads[li].prelu.as_mut().unwrap() += &d_alpha;
        let input = &cache.inputs[li];
        let ws = layer.weights.shape();
        let (d_w, d_b) = conv3d_backward_weights(&input.view(), &d_z, [ws[2], ws[3], ws[4]]);
        grads[li].weights += &d_w;
        grads[li].bias += &d_b;
        if li > 0 {
            let idim = input.shape();
            d_a = conv3d_backward_input(&layer.weights, &d_z, [idim[0], idim[1], idim[2], idim[3]]);
        }
    }
}

/// Nearest (repetition) upsampling of the coarse pathway output onto the
/// output grid: output voxel `p` reads coarse cell `(p + phase) / factor`.
fn upsample_with_phase(
    sub: &Array4<f64>,
    out_dims: [usize; 3],
    factors: [usize; 3],
    phase: [usize; 3],
) -> Array4<f64> {
    let c = sub.shape()[0];
    let mut out = Array4::<f64>::zeros((c, out_dims[0], out_dims[1], out_dims[2]));
    for ch in 0..c {
        for x in 0..out_dims[0] {
            let sx = (x + phase[0] % factors[0]) / factors[0];
            for y in 0..out_dims[1] {
                let sy = (y + phase[1] % factors[1]) / factors[1];
                for z in 0..out_dims[2] {
                    let sz = (z + phase[2] % factors[2]) / factors[2];
                    out[[ch, x, y, z]] = sub[[ch, sx, sy, sz]];
                }
            }
        }
    }
    out
}

/// Adjoint of `upsample_with_phase`: scatter-add gradients back onto the
/// coarse grid.
fn downsample_sum_with_phase(
    d_up: &Array4<f64>,
    sub_dims: [usize; 3],
    factors: [usize; 3],
    phase: [usize; 3],
) -> Array4<f64> {
    let sh = d_up.shape();
    let c = sh[0];
    let mut out = Array4::<f64>::zeros((c, sub_dims[0], sub_dims[1], sub_dims[2]));
    for ch in 0..c {
        for x in 0..sh[1] {
            let sx = (x + phase[0] % factors[0]) / factors[0];
            for y in 0..sh[2] {
                let sy = (y + phase[1] % factors[1]) / factors[1];
                for z in 0..sh[3] {
                    let sz = (z + phase[2] % factors[2]) / factors[2];
                    out[[ch, sx, sy, sz]] += d_up[[ch, x, y, z]];
                }
            }
        }
    }
    out
}

/// Mean cross-entropy over all target voxels plus its gradient w.r.t. the
/// logits: `(p - onehot) / n`.
pub fn cross_entropy_loss_and_grad(probs: &Array4<f64>, target: &Array3<u8>) -> (f64, Array4<f64>) {
    let sh = probs.shape();
    let n_classes = sh[0];
    let n = target.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = probs.clone();
    for x in 0..sh[1] {
        for y in 0..sh[2] {
            for z in 0..sh[3] {
                let t = target[[x, y, z]] as usize;
                debug_assert!(t < n_classes);
                loss -= probs[[t, x, y, z]].max(1e-12).ln();
                d_logits[[t, x, y, z]] -= 1.0;
            }
        }
    }
    d_logits.mapv_inplace(|v| v / n);
    (loss / n, d_logits)
}
