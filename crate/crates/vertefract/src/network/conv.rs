//! Dense valid 3D convolution and the pointwise nonlinearities, with the
//! backward passes needed for training.
//!
//! Arrays are `[channel, x, y, z]` with z contiguous. The kernels walk
//! output rows with a stack-local accumulator and contiguous input-row
//! slices, which the compiler turns into fused multiply-add loops. Each
//! output element accumulates in a fixed order, so results are bitwise
//! reproducible and independent of how a volume is tiled.

use ndarray::{Array1, Array4, Array5, ArrayView4, Axis, Zip};

/// Shapes of one conv application.
struct Geometry {
    c_in: usize,
    c_out: usize,
    k: [usize; 3],
    i: [usize; 3],
    o: [usize; 3],
}

fn geometry(input: &ArrayView4<f64>, weights: &Array5<f64>) -> Geometry {
    let is = input.shape();
    let ws = weights.shape();
    debug_assert_eq!(ws[1], is[0], "channel mismatch");
    Geometry {
        c_in: is[0],
        c_out: ws[0],
        k: [ws[2], ws[3], ws[4]],
        i: [is[1], is[2], is[3]],
        o: [is[1] - ws[2] + 1, is[2] - ws[3] + 1, is[3] - ws[4] + 1],
    }
}

/// Valid (unpadded) convolution. `input` is `[c_in, ix, iy, iz]`, `weights`
/// `[c_out, c_in, kx, ky, kz]`; output is `[c_out, ox, oy, oz]` with
/// `o = i - k + 1`.
pub fn conv3d_valid(
    input: &ArrayView4<f64>,
    weights: &Array5<f64>,
    bias: &Array1<f64>,
) -> Array4<f64> {
    let g = geometry(input, weights);
    debug_assert_eq!(bias.len(), g.c_out);
    let input = input.as_standard_layout();
    let inf = input.as_slice().expect("standard layout");
    let wf = weights.as_slice().expect("standard layout");

    let mut out = Array4::<f64>::zeros((g.c_out, g.o[0], g.o[1], g.o[2]));
    let outf = out.as_slice_mut().expect("standard layout");

    if g.k == [1, 1, 1] {
        conv_channel_mix(&g, inf, wf, bias, outf);
    } else if g.k[1] == 3 && g.k[2] == 3 {
        conv_rows_3x3(&g, inf, wf, bias, outf);
    } else {
        conv_rows_generic(&g, inf, wf, bias, outf);
    }
    out
}

/// 1x1x1 filters are a per-voxel channel mix; run it as long-row axpys
/// over the whole (x, y, z) block.
fn conv_channel_mix(g: &Geometry, inf: &[f64], wf: &[f64], bias: &Array1<f64>, outf: &mut [f64]) {
    let n = g.i[0] * g.i[1] * g.i[2];
    for co in 0..g.c_out {
        let orow = &mut outf[co * n..(co + 1) * n];
        orow.iter_mut().for_each(|o| *o = bias[co]);
        for ci in 0..g.c_in {
            let w = wf[co * g.c_in + ci];
            let irow = &inf[ci * n..(ci + 1) * n];
            for (o, &v) in orow.iter_mut().zip(irow) {
                *o += w * v;
            }
        }
    }
}

/// In-plane 3x3 filters (every shipped variant): all nine (ky, kz) taps fuse
/// into one accumulator pass per (ci, dx), reading three input rows.
fn conv_rows_3x3(g: &Geometry, inf: &[f64], wf: &[f64], bias: &Array1<f64>, outf: &mut [f64]) {
    let (iy, iz) = (g.i[1], g.i[2]);
    let (ox, oy, oz) = (g.o[0], g.o[1], g.o[2]);
    let (kx, c_in) = (g.k[0], g.c_in);
    let mut acc = vec![0.0f64; oz];

    for co in 0..g.c_out {
        let b = bias[co];
        for x in 0..ox {
            for y in 0..oy {
                acc.iter_mut().for_each(|a| *a = b);
                for ci in 0..c_in {
                    let cbase = ci * g.i[0] * iy * iz;
                    for dx in 0..kx {
                        let rbase = cbase + (x + dx) * iy * iz + y * iz;
                        let r0 = &inf[rbase..rbase + iz];
                        let r1 = &inf[rbase + iz..rbase + 2 * iz];
                        let r2 = &inf[rbase + 2 * iz..rbase + 3 * iz];
                        let wb = (((co * c_in + ci) * kx + dx) * 3) * 3;
                        let w = &wf[wb..wb + 9];
                        let (r00, r01, r02) = (&r0[..oz], &r0[1..1 + oz], &r0[2..2 + oz]);
                        let (r10, r11, r12) = (&r1[..oz], &r1[1..1 + oz], &r1[2..2 + oz]);
                        let (r20, r21, r22) = (&r2[..oz], &r2[1..1 + oz], &r2[2..2 + oz]);
                        for z in 0..oz {
                            acc[z] += w[0] * r00[z]
                                + w[1] * r01[z]
                                + w[2] * r02[z]
                                + w[3] * r10[z]
                                + w[4] * r11[z]
                                + w[5] * r12[z]
                                + w[6] * r20[z]
                                + w[7] * r21[z]
                                + w[8] * r22[z];
                        }
                    }
                }
                let obase = ((co * ox + x) * oy + y) * oz;
                outf[obase..obase + oz].copy_from_slice(&acc);
            }
        }
    }
}

fn conv_rows_generic(g: &Geometry, inf: &[f64], wf: &[f64], bias: &Array1<f64>, outf: &mut [f64]) {
    let (iy, iz) = (g.i[1], g.i[2]);
    let (ox, oy, oz) = (g.o[0], g.o[1], g.o[2]);
    let (kx, ky, kz) = (g.k[0], g.k[1], g.k[2]);
    let mut acc = vec![0.0f64; oz];

    for co in 0..g.c_out {
        let b = bias[co];
        for x in 0..ox {
            for y in 0..oy {
                acc.iter_mut().for_each(|a| *a = b);
                for ci in 0..g.c_in {
                    let cbase = ci * g.i[0] * iy * iz;
                    for dx in 0..kx {
                        let xbase = cbase + (x + dx) * iy * iz;
                        for dy in 0..ky {
                            let row = &inf[xbase + (y + dy) * iz..xbase + (y + dy) * iz + iz];
                            let wbase = (((co * g.c_in + ci) * kx + dx) * ky + dy) * kz;
                            for dz in 0..kz {
                                let w = wf[wbase + dz];
                                for (a, &v) in acc.iter_mut().zip(&row[dz..dz + oz]) {
                                    *a += w * v;
                                }
                            }
                        }
                    }
                }
                let obase = ((co * ox + x) * oy + y) * oz;
                outf[obase..obase + oz].copy_from_slice(&acc);
            }
        }
    }
}

/// Gradients of the loss w.r.t. the weights and bias of a conv layer, given
/// the layer input and the gradient at the layer output.
pub fn conv3d_backward_weights(
    input: &ArrayView4<f64>,
    d_out: &Array4<f64>,
    filter: [usize; 3],
) -> (Array5<f64>, Array1<f64>) {
    let is = input.shape();
    let os = d_out.shape();
    let (c_in, ix, iy, iz) = (is[0], is[1], is[2], is[3]);
    let (c_out, ox, oy, oz) = (os[0], os[1], os[2], os[3]);
    let (kx, ky, kz) = (filter[0], filter[1], filter[2]);

    let input = input.as_standard_layout();
    let inf = input.as_slice().expect("standard layout");
    let gf = d_out.as_slice().expect("standard layout");

    let mut d_w = Array5::<f64>::zeros((c_out, c_in, kx, ky, kz));
    let dwf = d_w.as_slice_mut().expect("standard layout");
    let mut d_b = Array1::<f64>::zeros(c_out);

    if (kx, ky, kz) == (1, 1, 1) {
        // channel-dot path for the fusion layers
        let n = ix * iy * iz;
        for co in 0..c_out {
            let g = &gf[co * n..(co + 1) * n];
            d_b[co] = g.iter().sum();
            for ci in 0..c_in {
                let v = &inf[ci * n..(ci + 1) * n];
                let mut dot = 0.0;
                for (&a, &b) in g.iter().zip(v) {
                    dot += a * b;
                }
                dwf[co * c_in + ci] = dot;
            }
        }
        return (d_w, d_b);
    }

    for co in 0..c_out {
        let mut bias_acc = 0.0;
        for x in 0..ox {
            for y in 0..oy {
                let gbase = ((co * ox + x) * oy + y) * oz;
                let grow = &gf[gbase..gbase + oz];
                bias_acc += grow.iter().sum::<f64>();
                for ci in 0..c_in {
                    let cbase = ci * ix * iy * iz;
                    for dx in 0..kx {
                        let xbase = cbase + (x + dx) * iy * iz;
                        if (ky, kz) == (3, 3) {
                            let rbase = xbase + y * iz;
                            let wb = (((co * c_in + ci) * kx + dx) * 3) * 3;
                            let mut d = [0.0f64; 9];
                            for (dy, dacc) in d.chunks_mut(3).enumerate() {
                                let row = &inf[rbase + dy * iz..rbase + dy * iz + iz];
                                let (ra, rb, rc) = (&row[..oz], &row[1..1 + oz], &row[2..2 + oz]);
                                let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                                for z in 0..oz {
                                    let g = grow[z];
                                    s0 += g * ra[z];
                                    s1 += g * rb[z];
                                    s2 += g * rc[z];
                                }
                                dacc[0] = s0;
                                dacc[1] = s1;
                                dacc[2] = s2;
                            }
                            for (slot, v) in dwf[wb..wb + 9].iter_mut().zip(d) {
                                *slot += v;
                            }
                        } else {
                            for dy in 0..ky {
                                let row = &inf[xbase + (y + dy) * iz..xbase + (y + dy) * iz + iz];
                                let wbase = (((co * c_in + ci) * kx + dx) * ky + dy) * kz;
                                for dz in 0..kz {
                                    let mut dot = 0.0;
                                    for (&g, &v) in grow.iter().zip(&row[dz..dz + oz]) {
                                        dot += g * v;
                                    }
                                    dwf[wbase + dz] += dot;
                                }
                            }
                        }
                    }
                }
            }
        }
        d_b[co] = bias_acc;
    }
    (d_w, d_b)
}

/// Gradient of the loss w.r.t. the layer input (the transposed convolution
/// of `d_out` with the kernel).
pub fn conv3d_backward_input(
    weights: &Array5<f64>,
    d_out: &Array4<f64>,
    input_dims: [usize; 4],
) -> Array4<f64> {
    let ws = weights.shape();
    let os = d_out.shape();
    let (c_out, c_in, kx, ky, kz) = (ws[0], ws[1], ws[2], ws[3], ws[4]);
    let (ox, oy, oz) = (os[1], os[2], os[3]);
    let (iy, iz) = (input_dims[2], input_dims[3]);

    let wf = weights.as_slice().expect("standard layout");
    let gf = d_out.as_slice().expect("standard layout");

    let mut d_in =
        Array4::<f64>::zeros((input_dims[0], input_dims[1], input_dims[2], input_dims[3]));
    let dinf = d_in.as_slice_mut().expect("standard layout");

    if (kx, ky, kz) == (1, 1, 1) {
        // channel-mix path for the fusion layers
        let n = input_dims[1] * iy * iz;
        for ci in 0..c_in {
            let (head, tail) = dinf.split_at_mut(ci * n);
            let _ = head;
            let drow = &mut tail[..n];
            for co in 0..c_out {
                let w = wf[co * c_in + ci];
                let g = &gf[co * n..(co + 1) * n];
                for (d, &gv) in drow.iter_mut().zip(g) {
                    *d += w * gv;
                }
            }
        }
        return d_in;
    }

    for co in 0..c_out {
        for x in 0..ox {
            for y in 0..oy {
                let gbase = ((co * ox + x) * oy + y) * oz;
                let grow = &gf[gbase..gbase + oz];
                for ci in 0..c_in {
                    let cbase = ci * input_dims[1] * iy * iz;
                    for dx in 0..kx {
                        let xbase = cbase + (x + dx) * iy * iz;
                        for dy in 0..ky {
                            let rbase = xbase + (y + dy) * iz;
                            let wbase = (((co * c_in + ci) * kx + dx) * ky + dy) * kz;
                            for dz in 0..kz {
                                let w = wf[wbase + dz];
                                let drow = &mut dinf[rbase + dz..rbase + dz + oz];
                                for (d, &g) in drow.iter_mut().zip(grow) {
                                    *d += w * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    d_in
}

/// PReLU with one learned slope per channel: `a = max(z, 0) + alpha * min(z, 0)`.
pub fn prelu_forward(z: &Array4<f64>, alpha: &Array1<f64>) -> Array4<f64> {
    let mut out = z.clone();
    for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let a = alpha[c];
        plane.mapv_inplace(|v| if v > 0.0 { v } else { a * v });
    }
    out
}

/// Backward through PReLU: returns (d_z, d_alpha).
pub fn prelu_backward(
    z: &Array4<f64>,
    alpha: &Array1<f64>,
    d_a: &Array4<f64>,
) -> (Array4<f64>, Array1<f64>) {
    let mut d_z = Array4::<f64>::zeros(z.raw_dim());
    let mut d_alpha = Array1::<f64>::zeros(alpha.len());
    for c in 0..alpha.len() {
        let a = alpha[c];
        let zc = z.index_axis(Axis(0), c);
        let gc = d_a.index_axis(Axis(0), c);
        let mut dzc = d_z.index_axis_mut(Axis(0), c);
        let mut acc = 0.0;
        Zip::from(&mut dzc)
            .and(&zc)
            .and(&gc)
            .for_each(|dz, &zv, &gv| {
                if zv > 0.0 {
                    *dz = gv;
                } else {
                    *dz = a * gv;
                    acc += gv * zv;
                }
            });
        d_alpha[c] = acc;
    }
    (d_z, d_alpha)
}

/// Numerically stable softmax over the channel axis, per voxel.
pub fn softmax_channels(logits: &Array4<f64>) -> Array4<f64> {
    let mut out = logits.clone();
    let (c, nx, ny, nz) = {
        let s = logits.shape();
        (s[0], s[1], s[2], s[3])
    };
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let mut max = f64::NEG_INFINITY;
                for ch in 0..c {
                    max = max.max(out[[ch, x, y, z]]);
                }
                let mut sum = 0.0;
                for ch in 0..c {
                    let e = (out[[ch, x, y, z]] - max).exp();
                    out[[ch, x, y, z]] = e;
                    sum += e;
                }
                for ch in 0..c {
                    out[[ch, x, y, z]] /= sum;
                }
            }
        }
    }
    out
}
