//! Reverse-mode tape. Operations append nodes whose parents always precede
//! them, so one reverse sweep propagates gradients; intermediate gradients
//! are freed as soon as their node has been processed, leaf gradients are
//! kept for reading.

use crate::autodiff::ops::{self, Conv2dDims, Conv3dDims, SoftCounts};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;

pub type NodeId = usize;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Conv2d { x: NodeId, k: NodeId, b: Option<NodeId>, dims: Conv2dDims },
    Conv3d { x: NodeId, k: NodeId, b: Option<NodeId>, dims: Conv3dDims },
    BatchNorm { x: NodeId, scale: NodeId, shift: NodeId, axis: usize, mean: Vec<f64>, istd: Vec<f64>, batch: bool },
    Dropout { x: NodeId, mask: Vec<f64> },
    PixelDense { x: NodeId, w: NodeId, b: NodeId, n: usize, f: usize, p: usize },
    Stack0 { parts: Vec<NodeId> },
    Index0 { x: NodeId, index: usize },
    SoftF1 { probs: NodeId, labels: Vec<f64>, w_ps: f64, w_nonps: f64, counts: SoftCounts },
    SumAll(NodeId),
}

pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Per-channel batch statistics observed by a train-mode batchnorm node;
/// the caller folds them into its running statistics.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        self.grads.push(None);
        self.values.len() - 1
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    /// Gradient of a node after `backward`; only leaves retain theirs.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.values[a].shape() != self.values[b].shape() {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.values[a].shape(),
                self.values[b].shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data =
            self.values[a].data().iter().zip(self.values[b].data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.values[a].shape(), data).expect("add shape");
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let data =
            self.values[a].data().iter().zip(self.values[b].data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.values[a].shape(), data).expect("mul shape");
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.values[x].data().iter().map(|&v| v.max(0.0)).collect();
        let t = Tensor::new(self.values[x].shape(), data).expect("relu shape");
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let data = self.values[x].data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let t = Tensor::new(self.values[x].shape(), data).expect("sigmoid shape");
        self.push(t, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let data = self.values[x].data().iter().map(|&v| v.tanh()).collect();
        let t = Tensor::new(self.values[x].shape(), data).expect("tanh shape");
        self.push(t, Op::Tanh(x))
    }

    fn conv2d_dims(&self, x: NodeId, k: NodeId, b: Option<NodeId>) -> Result<Conv2dDims> {
        let xs = self.values[x].shape();
        let ks = self.values[k].shape();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::invalid(format!("conv2d: ranks {:?} / {:?}", xs, ks)));
        }
        if ks[1] != xs[1] {
            return Err(Error::invalid(format!(
                "conv2d: kernel expects {} input channels, input has {}",
                ks[1], xs[1]
            )));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(Error::invalid("conv2d: kernel extents must be odd"));
        }
        if let Some(b) = b {
            if self.values[b].shape() != [ks[0]] {
                return Err(Error::invalid("conv2d: bias shape mismatch"));
            }
        }
        Ok(Conv2dDims { n: xs[0], c_in: xs[1], h: xs[2], w: xs[3], c_out: ks[0], kh: ks[2], kw: ks[3] })
    }

    /// Same-padded stride-1 2-D convolution; input (N, C, H, W), kernel
    /// (Cout, Cin, kh, kw), optional bias (Cout).
    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let dims = self.conv2d_dims(x, k, b)?;
        let out = ops::conv2d_forward(
            self.values[x].data(),
            self.values[k].data(),
            b.map(|b| self.values[b].data()),
            dims,
        );
        let t = Tensor::new(&[dims.n, dims.c_out, dims.h, dims.w], out).expect("conv2d shape");
        Ok(self.push(t, Op::Conv2d { x, k, b, dims }))
    }

    /// Same-padded stride-1 3-D convolution; input (N, C, D, H, W), kernel
    /// (Cout, Cin, kd, kh, kw), optional bias (Cout).
    pub fn conv3d(&mut self, x: NodeId, k: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        let ks = self.values[k].shape().to_vec();
        if xs.len() != 5 || ks.len() != 5 {
            return Err(Error::invalid(format!("conv3d: ranks {:?} / {:?}", xs, ks)));
        }
        if ks[1] != xs[1] {
            return Err(Error::invalid("conv3d: channel mismatch"));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 || ks[4] % 2 == 0 {
            return Err(Error::invalid("conv3d: kernel extents must be odd"));
        }
        if let Some(bb) = b {
            if self.values[bb].shape() != [ks[0]] {
                return Err(Error::invalid("conv3d: bias shape mismatch"));
            }
        }
        let dims = Conv3dDims {
            n: xs[0],
            c_in: xs[1],
            d: xs[2],
            h: xs[3],
            w: xs[4],
            c_out: ks[0],
            kd: ks[2],
            kh: ks[3],
            kw: ks[4],
        };
        let out = ops::conv3d_forward(
            self.values[x].data(),
            self.values[k].data(),
            b.map(|b| self.values[b].data()),
            dims,
        );
        let t = Tensor::new(&[dims.n, dims.c_out, dims.d, dims.h, dims.w], out)
            .expect("conv3d shape");
        Ok(self.push(t, Op::Conv3d { x, k, b, dims }))
    }

    /// Train-mode batch normalization over the channel `axis`: normalizes
    /// by batch statistics and reports them for running-average updates.
    pub fn batchnorm_train(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        axis: usize,
        eps: f64,
    ) -> Result<(NodeId, BatchStats)> {
        let shape = self.values[x].shape().to_vec();
        let c = *shape
            .get(axis)
            .ok_or_else(|| Error::invalid("batchnorm: channel axis out of range"))?;
        if self.values[scale].shape() != [c] || self.values[shift].shape() != [c] {
            return Err(Error::invalid("batchnorm: scale/shift must be (channels,)"));
        }
        let stats = ops::channel_stats(self.values[x].data(), &shape, axis);
        let istd: Vec<f64> = stats.var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let out = ops::batchnorm_apply(
            self.values[x].data(),
            &shape,
            axis,
            &stats.mean,
            &istd,
            self.values[scale].data(),
            self.values[shift].data(),
        );
        let t = Tensor::new(&shape, out).expect("bn shape");
        let node = self.push(
            t,
            Op::BatchNorm { x, scale, shift, axis, mean: stats.mean.clone(), istd, batch: true },
        );
        Ok((node, BatchStats { mean: stats.mean, var: stats.var }))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batchnorm_infer(
        &mut self,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
        axis: usize,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<NodeId> {
        let shape = self.values[x].shape().to_vec();
        let c = *shape
            .get(axis)
            .ok_or_else(|| Error::invalid("batchnorm: channel axis out of range"))?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::invalid("batchnorm: running stats length mismatch"));
        }
        let istd: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let out = ops::batchnorm_apply(
            self.values[x].data(),
            &shape,
            axis,
            running_mean,
            &istd,
            self.values[scale].data(),
            self.values[shift].data(),
        );
        let t = Tensor::new(&shape, out).expect("bn shape");
        Ok(self.push(
            t,
            Op::BatchNorm { x, scale, shift, axis, mean: running_mean.to_vec(), istd, batch: false },
        ))
    }

    /// Train-mode dropout: zero with probability `rate`, survivors scaled
    /// by 1/(1-rate); the mask is a pure function of `mask_seed`.
    /// Inference skips the node entirely.
    pub fn dropout(&mut self, x: NodeId, rate: f64, mask_seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout: rate {rate} outside [0, 1)")));
        }
        let len = self.values[x].len();
        let mask: Vec<f64> = if rate == 0.0 {
            vec![1.0; len]
        } else {
            let keep = 1.0 / (1.0 - rate);
            let mut rng = seed::rng(mask_seed, &[0x6d61_736b]);
            (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
        };
        let data = self.values[x].data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.values[x].shape(), data).expect("dropout shape");
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    /// Per-pixel affine map onto one logit plane. Input (N, F..., H, W)
    /// where the feature dims F... are everything between the batch and
    /// the two spatial dims; weights (prod F,), bias (1,); output (N, H, W).
    pub fn pixel_dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.values[x].shape().to_vec();
        if xs.len() < 4 {
            return Err(Error::invalid("pixel_dense: input must be (N, F..., H, W)"));
        }
        let n = xs[0];
        let f: usize = xs[1..xs.len() - 2].iter().product();
        let p = xs[xs.len() - 2] * xs[xs.len() - 1];
        if self.values[w].shape() != [f] {
            return Err(Error::invalid(format!(
                "pixel_dense: weights {:?} for {} per-pixel features",
                self.values[w].shape(),
                f
            )));
        }
        if self.values[b].len() != 1 {
            return Err(Error::invalid("pixel_dense: bias must be a single value"));
        }
        let out = ops::pixel_dense_forward(
            self.values[x].data(),
            n,
            f,
            p,
            self.values[w].data(),
            self.values[b].data()[0],
        );
        let t = Tensor::new(&[n, xs[xs.len() - 2], xs[xs.len() - 1]], out).expect("dense shape");
        Ok(self.push(t, Op::PixelDense { x, w, b, n, f, p }))
    }

    /// Stack equal-shaped tensors along a new leading axis.
    pub fn stack0(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("stack0: no parts"));
        }
        let shape = self.values[parts[0]].shape().to_vec();
        let mut data = Vec::with_capacity(shape.iter().product::<usize>() * parts.len());
        for &p in parts {
            if self.values[p].shape() != shape {
                return Err(Error::invalid("stack0: shape mismatch"));
            }
            data.extend_from_slice(self.values[p].data());
        }
        let mut out_shape = vec![parts.len()];
        out_shape.extend_from_slice(&shape);
        let t = Tensor::new(&out_shape, data).expect("stack shape");
        Ok(self.push(t, Op::Stack0 { parts: parts.to_vec() }))
    }

    /// Select one sub-tensor along the leading axis.
    pub fn index0(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let shape = self.values[x].shape().to_vec();
        if shape.is_empty() || index >= shape[0] {
            return Err(Error::invalid("index0: index out of range"));
        }
        let sub: usize = shape[1..].iter().product();
        let data = self.values[x].data()[index * sub..(index + 1) * sub].to_vec();
        let t = Tensor::new(&shape[1..], data).expect("index shape");
        Ok(self.push(t, Op::Index0 { x, index }))
    }

    /// Weighted soft-F1 loss against 0/1 labels; scalar output.
    pub fn soft_f1(
        &mut self,
        probs: NodeId,
        labels: &[f64],
        w_ps: f64,
        w_nonps: f64,
    ) -> Result<NodeId> {
        if labels.len() != self.values[probs].len() {
            return Err(Error::invalid("soft_f1: labels length mismatch"));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid("soft_f1: labels must be exactly 0 or 1"));
        }
        let counts = ops::soft_counts(self.values[probs].data(), labels, w_ps, w_nonps);
        let loss = ops::soft_f1_loss_value(&counts);
        let t = Tensor::scalar(loss);
        Ok(self.push(t, Op::SoftF1 { probs, labels: labels.to_vec(), w_ps, w_nonps, counts }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.values[x].data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    fn accumulate(&mut self, id: NodeId, contribution: impl Fn(usize) -> f64) {
        let len = self.values[id].len();
        let g = self.grads[id].get_or_insert_with(|| vec![0.0; len]);
        for (i, gi) in g.iter_mut().enumerate() {
            *gi += contribution(i);
        }
    }

    fn accumulate_slice(&mut self, id: NodeId, contribution: &[f64]) {
        let len = self.values[id].len();
        debug_assert_eq!(contribution.len(), len);
        let g = self.grads[id].get_or_insert_with(|| vec![0.0; len]);
        for (gi, c) in g.iter_mut().zip(contribution) {
            *gi += c;
        }
    }

    /// Reverse sweep from a scalar root. Leaf gradients are retained and
    /// readable via `grad`; intermediate gradients are freed on the fly.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.values[root].len() != 1 {
            return Err(Error::invalid(format!(
                "backward: root must be scalar, got shape {:?}",
                self.values[root].shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = self.grads[id].take() else { continue };
            // split off the op to appease the borrow checker; Op is cheap to move
            let op = std::mem::replace(&mut self.ops[id], Op::Leaf);
            match &op {
                Op::Leaf => {
                    self.grads[id] = Some(g);
                }
                Op::Add(a, b) => {
                    self.accumulate_slice(*a, &g);
                    self.accumulate_slice(*b, &g);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let bv: Vec<f64> =
                        self.values[b].data().iter().zip(&g).map(|(v, gi)| v * gi).collect();
                    self.accumulate_slice(a, &bv);
                    let av: Vec<f64> =
                        self.values[a].data().iter().zip(&g).map(|(v, gi)| v * gi).collect();
                    self.accumulate_slice(b, &av);
                }
                Op::Relu(x) => {
                    let x = *x;
                    let gx: Vec<f64> = self.values[x]
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, gi)| if v > 0.0 { *gi } else { 0.0 })
                        .collect();
                    self.accumulate_slice(x, &gx);
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let gx: Vec<f64> = self.values[id]
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&s, gi)| gi * s * (1.0 - s))
                        .collect();
                    self.accumulate_slice(x, &gx);
                }
                Op::Tanh(x) => {
                    let x = *x;
                    let gx: Vec<f64> = self.values[id]
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&t, gi)| gi * (1.0 - t * t))
                        .collect();
                    self.accumulate_slice(x, &gx);
                }
                Op::Conv2d { x, k, b, dims } => {
                    let (gx, gk, gb) = ops::conv2d_backward(
                        self.values[*x].data(),
                        self.values[*k].data(),
                        &g,
                        *dims,
                        b.is_some(),
                    );
                    self.accumulate_slice(*x, &gx);
                    self.accumulate_slice(*k, &gk);
                    if let (Some(b), Some(gb)) = (b, gb) {
                        self.accumulate_slice(*b, &gb);
                    }
                }
                Op::Conv3d { x, k, b, dims } => {
                    let (gx, gk, gb) = ops::conv3d_backward(
                        self.values[*x].data(),
                        self.values[*k].data(),
                        &g,
                        *dims,
                        b.is_some(),
                    );
                    self.accumulate_slice(*x, &gx);
                    self.accumulate_slice(*k, &gk);
                    if let (Some(b), Some(gb)) = (b, gb) {
                        self.accumulate_slice(*b, &gb);
                    }
                }
                Op::BatchNorm { x, scale, shift, axis, mean, istd, batch } => {
                    let (x, scale, shift, axis) = (*x, *scale, *shift, *axis);
                    let shape = self.values[x].shape().to_vec();
                    let c = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let count = (outer * inner) as f64;
                    let xd = self.values[x].data();
                    let sc = self.values[scale].data();

                    let mut gscale = vec![0.0; c];
                    let mut gshift = vec![0.0; c];
                    let mut sum_g = vec![0.0; c];
                    for o in 0..outer {
                        for ch in 0..c {
                            let base = (o * c + ch) * inner;
                            for i in 0..inner {
                                let xhat = (xd[base + i] - mean[ch]) * istd[ch];
                                gscale[ch] += g[base + i] * xhat;
                                gshift[ch] += g[base + i];
                                sum_g[ch] += g[base + i];
                            }
                        }
                    }
                    let mut gx = vec![0.0; xd.len()];
                    if *batch {
                        // d/dx of batch-statistics normalization
                        for o in 0..outer {
                            for ch in 0..c {
                                let base = (o * c + ch) * inner;
                                let a = sc[ch] * istd[ch];
                                let mg = sum_g[ch] / count;
                                let mgx = gscale[ch] / count;
                                for i in 0..inner {
                                    let xhat = (xd[base + i] - mean[ch]) * istd[ch];
                                    gx[base + i] = a * (g[base + i] - mg - xhat * mgx);
                                }
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for ch in 0..c {
                                let base = (o * c + ch) * inner;
                                let a = sc[ch] * istd[ch];
                                for i in 0..inner {
                                    gx[base + i] = a * g[base + i];
                                }
                            }
                        }
                    }
                    self.accumulate_slice(x, &gx);
                    self.accumulate_slice(scale, &gscale);
                    self.accumulate_slice(shift, &gshift);
                }
                Op::Dropout { x, mask } => {
                    let gx: Vec<f64> = g.iter().zip(mask).map(|(gi, m)| gi * m).collect();
                    self.accumulate_slice(*x, &gx);
                }
                Op::PixelDense { x, w, b, n, f, p } => {
                    let (gx, gw, gb) = ops::pixel_dense_backward(
                        self.values[*x].data(),
                        *n,
                        *f,
                        *p,
                        self.values[*w].data(),
                        &g,
                    );
                    self.accumulate_slice(*x, &gx);
                    self.accumulate_slice(*w, &gw);
                    self.accumulate_slice(*b, &[gb]);
                }
                Op::Stack0 { parts } => {
                    let sub = self.values[parts[0]].len();
                    for (i, &part) in parts.iter().enumerate() {
                        self.accumulate_slice(part, &g[i * sub..(i + 1) * sub]);
                    }
                }
                Op::Index0 { x, index } => {
                    let (x, index) = (*x, *index);
                    let sub = g.len();
                    let len = self.values[x].len();
                    let gx = self.grads[x].get_or_insert_with(|| vec![0.0; len]);
                    for (gi, c) in gx[index * sub..(index + 1) * sub].iter_mut().zip(&g) {
                        *gi += c;
                    }
                }
                Op::SoftF1 { probs, labels, w_ps, w_nonps, counts } => {
                    let gp = ops::soft_f1_grad(
                        self.values[*probs].data(),
                        labels,
                        *w_ps,
                        *w_nonps,
                        counts,
                        g[0],
                    );
                    self.accumulate_slice(*probs, &gp);
                }
                Op::SumAll(x) => {
                    let x = *x;
                    self.accumulate(x, |_| g[0]);
                }
            }
            self.ops[id] = op;
        }
        Ok(())
    }
}
