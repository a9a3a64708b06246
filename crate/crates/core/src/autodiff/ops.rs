//! Raw forward/backward kernels shared by the tape and the inference path.
//!
//! Convolutions are same-padded (zero fill), stride 1, odd kernel extents.
//! Layouts are channels-first: 2-D tensors are (N, C, H, W), 3-D tensors
//! are (N, C, D, H, W). Kernels are (Cout, Cin, k...) and biases (Cout).
//! All loops write disjoint output slices per (sample, channel) task, so
//! results are bitwise identical for any worker count.

use rayon::prelude::*;

/// Below this many multiply-accumulates a kernel runs serially; the rayon
/// dispatch overhead dominates otherwise.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Copy, Debug)]
pub struct Conv2dDims {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv2dDims {
    pub fn out_len(&self) -> usize {
        self.n * self.c_out * self.h * self.w
    }

    fn work(&self) -> usize {
        self.n * self.c_out * self.c_in * self.kh * self.kw * self.h * self.w
    }
}

/// out_plane[y, x] += w * in_plane[y + dy, x + dx] over the valid range.
#[inline]
fn shift_axpy(out: &mut [f64], input: &[f64], h: usize, w: usize, dy: isize, dx: isize, wt: f64) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy.max(0)) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let dst = &mut out[y * w + x0..y * w + x1];
        let src = &input[sy * w + (x0 as isize + dx) as usize..];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += wt * s;
        }
    }
}

/// Dot of out_plane and in_plane shifted by (dy, dx) over the valid range.
#[inline]
fn shift_dot(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy.max(0)) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx.max(0)) as usize;
    if x0 >= x1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let pa = &a[y * w + x0..y * w + x1];
        let pb = &b[sy * w + (x0 as isize + dx) as usize..sy * w + (x0 as isize + dx) as usize + (x1 - x0)];
        for (u, v) in pa.iter().zip(pb) {
            acc += u * v;
        }
    }
    acc
}

pub fn conv2d_forward(x: &[f64], k: &[f64], bias: Option<&[f64]>, d: Conv2dDims) -> Vec<f64> {
    let plane = d.h * d.w;
    let rh = (d.kh / 2) as isize;
    let rw = (d.kw / 2) as isize;
    let mut out = vec![0.0; d.out_len()];
    let body = |(idx, out_plane): (usize, &mut [f64])| {
        let n = idx / d.c_out;
        let co = idx % d.c_out;
        if let Some(b) = bias {
            out_plane.fill(b[co]);
        }
        for ci in 0..d.c_in {
            let xin = &x[(n * d.c_in + ci) * plane..(n * d.c_in + ci + 1) * plane];
            let kbase = ((co * d.c_in + ci) * d.kh) * d.kw;
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wt = k[kbase + ky * d.kw + kx];
                    shift_axpy(out_plane, xin, d.h, d.w, ky as isize - rh, kx as isize - rw, wt);
                }
            }
        }
    };
    if d.work() >= PAR_THRESHOLD {
        out.par_chunks_mut(plane).enumerate().for_each(body);
    } else {
        out.chunks_mut(plane).enumerate().for_each(body);
    }
    out
}

/// Gradients of conv2d wrt input, kernel and bias.
pub fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    d: Conv2dDims,
    with_bias: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let plane = d.h * d.w;
    let rh = (d.kh / 2) as isize;
    let rw = (d.kw / 2) as isize;

    let mut gx = vec![0.0; d.n * d.c_in * plane];
    let gx_body = |(idx, gx_plane): (usize, &mut [f64])| {
        let n = idx / d.c_in;
        let ci = idx % d.c_in;
        for co in 0..d.c_out {
            let go = &gout[(n * d.c_out + co) * plane..(n * d.c_out + co + 1) * plane];
            let kbase = ((co * d.c_in + ci) * d.kh) * d.kw;
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wt = k[kbase + ky * d.kw + kx];
                    // forward read x at (y + dy); reverse scatters with -dy
                    shift_axpy(gx_plane, go, d.h, d.w, rh - ky as isize, rw - kx as isize, wt);
                }
            }
        }
    };
    if d.work() >= PAR_THRESHOLD {
        gx.par_chunks_mut(plane).enumerate().for_each(gx_body);
    } else {
        gx.chunks_mut(plane).enumerate().for_each(gx_body);
    }

    let kchunk = d.c_in * d.kh * d.kw;
    let mut gk = vec![0.0; d.c_out * kchunk];
    let gk_body = |(co, gk_slice): (usize, &mut [f64])| {
        for n in 0..d.n {
            let go = &gout[(n * d.c_out + co) * plane..(n * d.c_out + co + 1) * plane];
            for ci in 0..d.c_in {
                let xin = &x[(n * d.c_in + ci) * plane..(n * d.c_in + ci + 1) * plane];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        gk_slice[(ci * d.kh + ky) * d.kw + kx] +=
                            shift_dot(go, xin, d.h, d.w, ky as isize - rh, kx as isize - rw);
                    }
                }
            }
        }
    };
    if d.work() >= PAR_THRESHOLD {
        gk.par_chunks_mut(kchunk).enumerate().for_each(gk_body);
    } else {
        gk.chunks_mut(kchunk).enumerate().for_each(gk_body);
    }

    let gb = with_bias.then(|| {
        let mut gb = vec![0.0; d.c_out];
        for n in 0..d.n {
            for co in 0..d.c_out {
                gb[co] += gout[(n * d.c_out + co) * plane..(n * d.c_out + co + 1) * plane]
                    .iter()
                    .sum::<f64>();
            }
        }
        gb
    });
    (gx, gk, gb)
}

#[derive(Clone, Copy, Debug)]
pub struct Conv3dDims {
    pub n: usize,
    pub c_in: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
}

impl Conv3dDims {
    pub fn out_len(&self) -> usize {
        self.n * self.c_out * self.d * self.h * self.w
    }

    fn work(&self) -> usize {
        self.n * self.c_out * self.c_in * self.kd * self.kh * self.kw * self.d * self.h * self.w
    }
}

pub fn conv3d_forward(x: &[f64], k: &[f64], bias: Option<&[f64]>, dm: Conv3dDims) -> Vec<f64> {
    let plane = dm.h * dm.w;
    let vol = dm.d * plane;
    let rd = (dm.kd / 2) as isize;
    let rh = (dm.kh / 2) as isize;
    let rw = (dm.kw / 2) as isize;
    let mut out = vec![0.0; dm.out_len()];
    let body = |(idx, out_vol): (usize, &mut [f64])| {
        let n = idx / dm.c_out;
        let co = idx % dm.c_out;
        if let Some(b) = bias {
            out_vol.fill(b[co]);
        }
        for ci in 0..dm.c_in {
            let xin = &x[(n * dm.c_in + ci) * vol..(n * dm.c_in + ci + 1) * vol];
            for kz in 0..dm.kd {
                let dz = kz as isize - rd;
                let z0 = (-dz).max(0) as usize;
                let z1 = (dm.d as isize - dz.max(0)) as usize;
                for ky in 0..dm.kh {
                    for kx in 0..dm.kw {
                        let wt = k[(((co * dm.c_in + ci) * dm.kd + kz) * dm.kh + ky) * dm.kw + kx];
                        for z in z0..z1 {
                            let sz = (z as isize + dz) as usize;
                            shift_axpy(
                                &mut out_vol[z * plane..(z + 1) * plane],
                                &xin[sz * plane..(sz + 1) * plane],
                                dm.h,
                                dm.w,
                                ky as isize - rh,
                                kx as isize - rw,
                                wt,
                            );
                        }
                    }
                }
            }
        }
    };
    if dm.work() >= PAR_THRESHOLD {
        out.par_chunks_mut(vol).enumerate().for_each(body);
    } else {
        out.chunks_mut(vol).enumerate().for_each(body);
    }
    out
}

pub fn conv3d_backward(
    x: &[f64],
    k: &[f64],
    gout: &[f64],
    dm: Conv3dDims,
    with_bias: bool,
) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
    let plane = dm.h * dm.w;
    let vol = dm.d * plane;
    let rd = (dm.kd / 2) as isize;
    let rh = (dm.kh / 2) as isize;
    let rw = (dm.kw / 2) as isize;

    let mut gx = vec![0.0; dm.n * dm.c_in * vol];
    let gx_body = |(idx, gx_vol): (usize, &mut [f64])| {
        let n = idx / dm.c_in;
        let ci = idx % dm.c_in;
        for co in 0..dm.c_out {
            let go = &gout[(n * dm.c_out + co) * vol..(n * dm.c_out + co + 1) * vol];
            for kz in 0..dm.kd {
                let dz = rd - kz as isize;
                let z0 = (-dz).max(0) as usize;
                let z1 = (dm.d as isize - dz.max(0)) as usize;
                for ky in 0..dm.kh {
                    for kx in 0..dm.kw {
                        let wt = k[(((co * dm.c_in + ci) * dm.kd + kz) * dm.kh + ky) * dm.kw + kx];
                        for z in z0..z1 {
                            let sz = (z as isize + dz) as usize;
                            shift_axpy(
                                &mut gx_vol[z * plane..(z + 1) * plane],
                                &go[sz * plane..(sz + 1) * plane],
                                dm.h,
                                dm.w,
                                rh - ky as isize,
                                rw - kx as isize,
                                wt,
                            );
                        }
                    }
                }
            }
        }
    };
    if dm.work() >= PAR_THRESHOLD {
        gx.par_chunks_mut(vol).enumerate().for_each(gx_body);
    } else {
        gx.chunks_mut(vol).enumerate().for_each(gx_body);
    }

    let kchunk = dm.c_in * dm.kd * dm.kh * dm.kw;
    let mut gk = vec![0.0; dm.c_out * kchunk];
    let gk_body = |(co, gk_slice): (usize, &mut [f64])| {
        for n in 0..dm.n {
            let go = &gout[(n * dm.c_out + co) * vol..(n * dm.c_out + co + 1) * vol];
            for ci in 0..dm.c_in {
                let xin = &x[(n * dm.c_in + ci) * vol..(n * dm.c_in + ci + 1) * vol];
                for kz in 0..dm.kd {
                    let dz = kz as isize - rd;
                    let z0 = (-dz).max(0) as usize;
                    let z1 = (dm.d as isize - dz.max(0)) as usize;
                    for ky in 0..dm.kh {
                        for kx in 0..dm.kw {
                            let mut acc = 0.0;
                            for z in z0..z1 {
                                let sz = (z as isize + dz) as usize;
                                acc += shift_dot(
                                    &go[z * plane..(z + 1) * plane],
                                    &xin[sz * plane..(sz + 1) * plane],
                                    dm.h,
                                    dm.w,
                                    ky as isize - rh,
                                    kx as isize - rw,
                                );
                            }
                            gk_slice[((ci * dm.kd + kz) * dm.kh + ky) * dm.kw + kx] += acc;
                        }
                    }
                }
            }
        }
    };
    if dm.work() >= PAR_THRESHOLD {
        gk.par_chunks_mut(kchunk).enumerate().for_each(gk_body);
    } else {
        gk.chunks_mut(kchunk).enumerate().for_each(gk_body);
    }

    let gb = with_bias.then(|| {
        let mut gb = vec![0.0; dm.c_out];
        for n in 0..dm.n {
            for co in 0..dm.c_out {
                gb[co] += gout[(n * dm.c_out + co) * vol..(n * dm.c_out + co + 1) * vol]
                    .iter()
                    .sum::<f64>();
            }
        }
        gb
    });
    (gx, gk, gb)
}

/// Per-channel batch statistics for a tensor with the channel on `axis`.
pub struct ChannelStats {
    pub mean: Vec<f64>,
    /// Population variance.
    pub var: Vec<f64>,
    /// Samples per channel.
    pub count: usize,
}

pub fn channel_stats(x: &[f64], shape: &[usize], axis: usize) -> ChannelStats {
    let c = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let count = outer * inner;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for o in 0..outer {
            let base = (o * c + ch) * inner;
            for v in &x[base..base + inner] {
                sum += v;
                sum2 += v * v;
            }
        }
        let m = sum / count as f64;
        mean[ch] = m;
        var[ch] = (sum2 / count as f64 - m * m).max(0.0);
    }
    ChannelStats { mean, var, count }
}

/// y = scale * (x - mean) * istd + shift, per channel.
pub fn batchnorm_apply(
    x: &[f64],
    shape: &[usize],
    axis: usize,
    mean: &[f64],
    istd: &[f64],
    scale: &[f64],
    shift: &[f64],
) -> Vec<f64> {
    let c = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for ch in 0..c {
            let base = (o * c + ch) * inner;
            let a = scale[ch] * istd[ch];
            let b = shift[ch] - scale[ch] * istd[ch] * mean[ch];
            for i in 0..inner {
                out[base + i] = a * x[base + i] + b;
            }
        }
    }
    out
}

/// Per-pixel affine map of the per-pixel feature vector to one value.
/// `x` is (N, F, P) with F features and P pixels; returns (N, P).
pub fn pixel_dense_forward(x: &[f64], n: usize, f: usize, p: usize, w: &[f64], b: f64) -> Vec<f64> {
    let mut out = vec![b; n * p];
    for s in 0..n {
        let o = &mut out[s * p..(s + 1) * p];
        for fi in 0..f {
            let wf = w[fi];
            let xs = &x[(s * f + fi) * p..(s * f + fi + 1) * p];
            for (d, v) in o.iter_mut().zip(xs) {
                *d += wf * v;
            }
        }
    }
    out
}

pub fn pixel_dense_backward(
    x: &[f64],
    n: usize,
    f: usize,
    p: usize,
    w: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, f64) {
    let mut gx = vec![0.0; n * f * p];
    let mut gw = vec![0.0; f];
    let mut gb = 0.0;
    for s in 0..n {
        let go = &gout[s * p..(s + 1) * p];
        gb += go.iter().sum::<f64>();
        for fi in 0..f {
            let xs = &x[(s * f + fi) * p..(s * f + fi + 1) * p];
            let gs = &mut gx[(s * f + fi) * p..(s * f + fi + 1) * p];
            let mut acc = 0.0;
            let wf = w[fi];
            for i in 0..p {
                acc += go[i] * xs[i];
                gs[i] = wf * go[i];
            }
            gw[fi] += acc;
        }
    }
    (gx, gw, gb)
}

/// Weighted soft confusion counts over probabilities and 0/1 labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
}

pub fn soft_counts(probs: &[f64], labels: &[f64], w_ps: f64, w_nonps: f64) -> SoftCounts {
    let mut c = SoftCounts { tp: 0.0, fp: 0.0, fn_: 0.0, tn: 0.0 };
    for (&p, &y) in probs.iter().zip(labels) {
        if y == 1.0 {
            c.tp += w_ps * p;
            c.fn_ += w_ps * (1.0 - p);
        } else {
            c.fp += w_nonps * p;
            c.tn += w_nonps * (1.0 - p);
        }
    }
    c
}

pub const SOFT_F1_EPS: f64 = 1e-9;

/// loss = 1 - 2TP / (2TP + FP + FN + eps), from the weighted soft counts.
pub fn soft_f1_loss_value(c: &SoftCounts) -> f64 {
    1.0 - 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn_ + SOFT_F1_EPS)
}

/// d loss / d p_i, scaled by the upstream gradient `g`.
pub fn soft_f1_grad(probs: &[f64], labels: &[f64], w_ps: f64, w_nonps: f64, c: &SoftCounts, g: f64) -> Vec<f64> {
    let denom = 2.0 * c.tp + c.fp + c.fn_ + SOFT_F1_EPS;
    let d2 = denom * denom;
    let g_pos = -2.0 * (denom - c.tp) / d2;
    let g_neg = 2.0 * c.tp / d2;
    probs
        .iter()
        .zip(labels)
        .map(|(_, &y)| if y == 1.0 { g * w_ps * g_pos } else { g * w_nonps * g_neg })
        .collect()
}
