//! The two per-pixel PS segmentation networks.
//!
//! CNN-ISS treats the interferogram stack as a 3-D volume: four same-padded
//! 3-D conv layers (each conv → batch-norm → ReLU), dropout, then a
//! per-pixel dense map over all time×channel features and a sigmoid. The
//! dense layer consumes every time step, so the time depth is fixed at
//! build time.
//!
//! CLSTM-ISS runs three ConvLSTM layers over the sequence (each followed by
//! batch-norm → ReLU on the stacked hidden maps), takes the final-step
//! hidden map through a 2-D conv → ReLU head, dropout, per-pixel dense and
//! sigmoid. No parameter depends on the sequence length, so the number of
//! time steps stays flexible.

pub mod checkpoint;

use crate::autodiff::convlstm::{
    convlstm_step, convlstm_step_infer, ConvLstmNodes, ConvLstmParams, ConvLstmState,
};
use crate::autodiff::ops::{self, Conv2dDims, Conv3dDims};
use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;
use crate::stack::{chunk, stitch, InterferogramStack, MaskSource, PixelMask, Plane};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;
/// Mask decision rule: a pixel is PS when probability >= 0.5.
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    CnnIss,
    ClstmIss,
}

impl NetworkKind {
    pub fn mask_source(&self) -> MaskSource {
        match self {
            NetworkKind::CnnIss => MaskSource::CnnIss,
            NetworkKind::ClstmIss => MaskSource::ClstmIss,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            NetworkKind::CnnIss => "cnn_iss",
            NetworkKind::ClstmIss => "clstm_iss",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    /// Channel counts of the four feature layers. For CNN-ISS these are the
    /// four 3-D convs; for CLSTM-ISS the first three are ConvLSTM hidden
    /// widths and the fourth is the 2-D conv head.
    pub filter_plan: Vec<usize>,
    pub kernel: usize,
    pub dropout_rate: f64,
    pub input_patch: usize,
    /// Time depth. Fixed for CNN-ISS; a default (not a constraint) for
    /// CLSTM-ISS.
    pub n_timesteps: usize,
}

impl NetworkSpec {
    pub fn cnn_default() -> Self {
        NetworkSpec {
            kind: NetworkKind::CnnIss,
            filter_plan: vec![16, 16, 32, 64],
            kernel: 3,
            dropout_rate: 0.25,
            input_patch: 100,
            n_timesteps: 10,
        }
    }

    pub fn clstm_default() -> Self {
        NetworkSpec { kind: NetworkKind::ClstmIss, ..Self::cnn_default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_plan.len() != 4 || self.filter_plan.iter().any(|&c| c == 0) {
            return Err(Error::invalid(format!(
                "network: filter_plan must be 4 non-zero channel counts, got {:?}",
                self.filter_plan
            )));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::invalid("network: kernel extent must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid("network: dropout_rate outside [0, 1)"));
        }
        if self.input_patch < 8 {
            return Err(Error::invalid("network: input_patch < 8"));
        }
        if self.n_timesteps < 2 {
            return Err(Error::invalid("network: n_timesteps < 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct BnLayer {
    scale: Tensor,
    shift: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
}

impl BnLayer {
    fn new(channels: usize) -> Self {
        BnLayer {
            scale: Tensor::full(&[channels], 1.0),
            shift: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    fn fold_batch(&mut self, mean: &[f64], var: &[f64]) {
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
        }
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernel: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug)]
struct DenseHead {
    weights: Tensor,
    bias: Tensor,
}

#[derive(Clone, Debug)]
enum Body {
    Cnn { convs: Vec<ConvLayer>, bns: Vec<BnLayer>, dense: DenseHead },
    Clstm { cells: Vec<ConvLstmParams>, bns: Vec<BnLayer>, head: ConvLayer, dense: DenseHead },
}

/// A built network: spec, parameters and batch-norm running state.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    body: Body,
}

/// Batch input: a (N, 1, T, H, W) volume for CNN-ISS or per-step
/// (N, 1, H, W) frames for CLSTM-ISS.
#[derive(Clone, Debug)]
pub enum BatchInput {
    Volume(Tensor),
    Sequence(Vec<Tensor>),
}

impl BatchInput {
    /// Assemble a batch from per-sample phase patches, each laid out as
    /// (T, H, W) row-major.
    pub fn from_phase_patches(
        kind: NetworkKind,
        patches: &[&[f64]],
        t: usize,
        h: usize,
        w: usize,
    ) -> Result<Self> {
        let n = patches.len();
        if n == 0 {
            return Err(Error::invalid("batch: no patches"));
        }
        let plane = h * w;
        for p in patches {
            if p.len() != t * plane {
                return Err(Error::invalid("batch: patch length mismatch"));
            }
        }
        match kind {
            NetworkKind::CnnIss => {
                let mut data = Vec::with_capacity(n * t * plane);
                for p in patches {
                    data.extend_from_slice(p);
                }
                Ok(BatchInput::Volume(Tensor::new(&[n, 1, t, h, w], data)?))
            }
            NetworkKind::ClstmIss => {
                let mut frames = Vec::with_capacity(t);
                for ti in 0..t {
                    let mut data = Vec::with_capacity(n * plane);
                    for p in patches {
                        data.extend_from_slice(&p[ti * plane..(ti + 1) * plane]);
                    }
                    frames.push(Tensor::new(&[n, 1, h, w], data)?);
                }
                Ok(BatchInput::Sequence(frames))
            }
        }
    }

    pub fn batch_len(&self) -> usize {
        match self {
            BatchInput::Volume(t) => t.shape()[0],
            BatchInput::Sequence(f) => f[0].shape()[0],
        }
    }

    pub fn timesteps(&self) -> usize {
        match self {
            BatchInput::Volume(t) => t.shape()[2],
            BatchInput::Sequence(f) => f.len(),
        }
    }
}

/// Recorded training forward pass: the probability node plus the parameter
/// leaves in registry order (aligned with `param_tensors`). The trainer
/// attaches the loss on top.
pub struct TrainForward {
    pub probs: NodeId,
    pub param_nodes: Vec<NodeId>,
}

impl Network {
    pub fn new(spec: NetworkSpec, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        let k = spec.kernel;
        let mut rng = seed::rng(init_seed, &[0x6e65_7473]);
        let body = match spec.kind {
            NetworkKind::CnnIss => {
                let mut convs = Vec::new();
                let mut bns = Vec::new();
                let mut c_in = 1;
                for &c_out in &spec.filter_plan {
                    let fan_in = c_in * k * k * k;
                    convs.push(ConvLayer {
                        kernel: Tensor::uniform_init(&[c_out, c_in, k, k, k], fan_in, &mut rng),
                        bias: Tensor::zeros(&[c_out]),
                    });
                    bns.push(BnLayer::new(c_out));
                    c_in = c_out;
                }
                let features = spec.filter_plan[3] * spec.n_timesteps;
                let dense = DenseHead {
                    weights: Tensor::uniform_init(&[features], features, &mut rng),
                    bias: Tensor::zeros(&[1]),
                };
                Body::Cnn { convs, bns, dense }
            }
            NetworkKind::ClstmIss => {
                let mut cells = Vec::new();
                let mut bns = Vec::new();
                let mut c_in = 1;
                for &hid in &spec.filter_plan[..3] {
                    cells.push(ConvLstmParams::init(c_in, hid, k, &mut rng));
                    bns.push(BnLayer::new(hid));
                    c_in = hid;
                }
                let head_out = spec.filter_plan[3];
                let fan_in = c_in * k * k;
                let head = ConvLayer {
                    kernel: Tensor::uniform_init(&[head_out, c_in, k, k], fan_in, &mut rng),
                    bias: Tensor::zeros(&[head_out]),
                };
                let dense = DenseHead {
                    weights: Tensor::uniform_init(&[head_out], head_out, &mut rng),
                    bias: Tensor::zeros(&[1]),
                };
                Body::Clstm { cells, bns, head, dense }
            }
        };
        Ok(Network { spec, body })
    }

    /// All-zero parameters (probabilities collapse to 1/2 everywhere).
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let mut net = Self::new(spec, 0)?;
        for (_, t) in net.param_tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn kind(&self) -> NetworkKind {
        self.spec.kind
    }

    /// Trainable parameters in stable registry order.
    pub fn param_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        match &self.body {
            Body::Cnn { convs, bns, dense } => {
                for (l, (conv, bn)) in convs.iter().zip(bns).enumerate() {
                    out.push((format!("conv{l}.kernel"), &conv.kernel));
                    out.push((format!("conv{l}.bias"), &conv.bias));
                    out.push((format!("bn{l}.scale"), &bn.scale));
                    out.push((format!("bn{l}.shift"), &bn.shift));
                }
                out.push(("dense.weights".into(), &dense.weights));
                out.push(("dense.bias".into(), &dense.bias));
            }
            Body::Clstm { cells, bns, head, dense } => {
                for (l, (cell, bn)) in cells.iter().zip(bns).enumerate() {
                    for (name, t) in cell.tensors() {
                        out.push((format!("clstm{l}.{name}"), t));
                    }
                    out.push((format!("bn{l}.scale"), &bn.scale));
                    out.push((format!("bn{l}.shift"), &bn.shift));
                }
                out.push(("head.kernel".into(), &head.kernel));
                out.push(("head.bias".into(), &head.bias));
                out.push(("dense.weights".into(), &dense.weights));
                out.push(("dense.bias".into(), &dense.bias));
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        match &mut self.body {
            Body::Cnn { convs, bns, dense } => {
                for (l, (conv, bn)) in convs.iter_mut().zip(bns).enumerate() {
                    out.push((format!("conv{l}.kernel"), &mut conv.kernel));
                    out.push((format!("conv{l}.bias"), &mut conv.bias));
                    out.push((format!("bn{l}.scale"), &mut bn.scale));
                    out.push((format!("bn{l}.shift"), &mut bn.shift));
                }
                out.push(("dense.weights".into(), &mut dense.weights));
                out.push(("dense.bias".into(), &mut dense.bias));
            }
            Body::Clstm { cells, bns, head, dense } => {
                for (l, (cell, bn)) in cells.iter_mut().zip(bns).enumerate() {
                    for (name, t) in cell.tensors_mut() {
                        out.push((format!("clstm{l}.{name}"), t));
                    }
                    out.push((format!("bn{l}.scale"), &mut bn.scale));
                    out.push((format!("bn{l}.shift"), &mut bn.shift));
                }
                out.push(("head.kernel".into(), &mut head.kernel));
                out.push(("head.bias".into(), &mut head.bias));
                out.push(("dense.weights".into(), &mut dense.weights));
                out.push(("dense.bias".into(), &mut dense.bias));
            }
        }
        out
    }

    /// Batch-norm running statistics (non-trainable state).
    pub fn state_tensors(&self) -> Vec<(String, &Tensor)> {
        let bns = match &self.body {
            Body::Cnn { bns, .. } => bns,
            Body::Clstm { bns, .. } => bns,
        };
        let mut out = Vec::new();
        for (l, bn) in bns.iter().enumerate() {
            out.push((format!("bn{l}.running_mean"), &bn.running_mean));
            out.push((format!("bn{l}.running_var"), &bn.running_var));
        }
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let bns = match &mut self.body {
            Body::Cnn { bns, .. } => bns,
            Body::Clstm { bns, .. } => bns,
        };
        let mut out = Vec::new();
        for (l, bn) in bns.iter_mut().enumerate() {
            out.push((format!("bn{l}.running_mean"), &mut bn.running_mean));
            out.push((format!("bn{l}.running_var"), &mut bn.running_var));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, input: &BatchInput) -> Result<()> {
        match (self.spec.kind, input) {
            (NetworkKind::CnnIss, BatchInput::Volume(v)) => {
                if v.shape().len() != 5 || v.shape()[1] != 1 {
                    return Err(Error::invalid("cnn: input must be (N, 1, T, H, W)"));
                }
                if v.shape()[2] != self.spec.n_timesteps {
                    return Err(Error::invalid(format!(
                        "cnn: {} time steps incompatible with trained depth {}",
                        v.shape()[2],
                        self.spec.n_timesteps
                    )));
                }
                Ok(())
            }
            (NetworkKind::ClstmIss, BatchInput::Sequence(frames)) => {
                if frames.len() < 2 {
                    return Err(Error::invalid("clstm: need at least 2 time steps"));
                }
                for f in frames {
                    if f.shape().len() != 4 || f.shape()[1] != 1 {
                        return Err(Error::invalid("clstm: frames must be (N, 1, H, W)"));
                    }
                }
                Ok(())
            }
            _ => Err(Error::invalid("network: input form does not match network kind")),
        }
    }

    /// Recorded forward pass in train mode (batch statistics, dropout on).
    /// Folds the observed batch statistics into the running averages.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        input: &BatchInput,
        dropout_seed: u64,
    ) -> Result<TrainForward> {
        self.check_input(input)?;
        let rate = self.spec.dropout_rate;
        match &mut self.body {
            Body::Cnn { convs, bns, dense } => {
                let mut param_nodes = Vec::new();
                let BatchInput::Volume(v) = input else { unreachable!() };
                let mut x = tape.leaf(v.clone());
                for (conv, bn) in convs.iter().zip(bns.iter_mut()) {
                    let kn = tape.leaf(conv.kernel.clone());
                    let bb = tape.leaf(conv.bias.clone());
                    let sc = tape.leaf(bn.scale.clone());
                    let sh = tape.leaf(bn.shift.clone());
                    param_nodes.extend([kn, bb, sc, sh]);
                    let c = tape.conv3d(x, kn, Some(bb))?;
                    let (y, stats) = tape.batchnorm_train(c, sc, sh, 1, BN_EPS)?;
                    bn.fold_batch(&stats.mean, &stats.var);
                    x = tape.relu(y);
                }
                let d = tape.dropout(x, rate, dropout_seed)?;
                let wn = tape.leaf(dense.weights.clone());
                let bn_ = tape.leaf(dense.bias.clone());
                param_nodes.extend([wn, bn_]);
                let logits = tape.pixel_dense(d, wn, bn_)?;
                let probs = tape.sigmoid(logits);
                Ok(TrainForward { probs, param_nodes })
            }
            Body::Clstm { cells, bns, head, dense } => {
                let BatchInput::Sequence(frames) = input else { unreachable!() };
                let t_steps = frames.len();
                let (n, h, w) = (frames[0].shape()[0], frames[0].shape()[2], frames[0].shape()[3]);
                let mut param_nodes = Vec::new();
                let mut inputs: Vec<NodeId> = frames.iter().map(|f| tape.leaf(f.clone())).collect();
                for (cell, bn) in cells.iter().zip(bns.iter_mut()) {
                    let nodes = ConvLstmNodes::from_params(tape, cell);
                    param_nodes.extend(nodes.ids());
                    let sc = tape.leaf(bn.scale.clone());
                    let sh = tape.leaf(bn.shift.clone());
                    param_nodes.extend([sc, sh]);
                    let hid = cell.hidden_channels();
                    let mut c = tape.leaf(Tensor::zeros(&[n, hid, h, w]));
                    let mut y = tape.leaf(Tensor::zeros(&[n, hid, h, w]));
                    let mut hiddens = Vec::with_capacity(t_steps);
                    for &x_t in &inputs {
                        (c, y) = convlstm_step(tape, x_t, c, y, &nodes)?;
                        hiddens.push(y);
                    }
                    let stacked = tape.stack0(&hiddens)?;
                    let (bn_out, stats) = tape.batchnorm_train(stacked, sc, sh, 2, BN_EPS)?;
                    bn.fold_batch(&stats.mean, &stats.var);
                    let activated = tape.relu(bn_out);
                    inputs = (0..t_steps)
                        .map(|t| tape.index0(activated, t))
                        .collect::<Result<Vec<_>>>()?;
                }
                let last = *inputs.last().expect("timesteps checked >= 2");
                let kn = tape.leaf(head.kernel.clone());
                let kb = tape.leaf(head.bias.clone());
                param_nodes.extend([kn, kb]);
                let c = tape.conv2d(last, kn, Some(kb))?;
                let r = tape.relu(c);
                let d = tape.dropout(r, rate, dropout_seed)?;
                let wn = tape.leaf(dense.weights.clone());
                let bn_ = tape.leaf(dense.bias.clone());
                param_nodes.extend([wn, bn_]);
                let logits = tape.pixel_dense(d, wn, bn_)?;
                let probs = tape.sigmoid(logits);
                Ok(TrainForward { probs, param_nodes })
            }
        }
    }

    /// Forward-only pass in inference mode (running statistics, dropout
    /// off): pre-dense feature maps, (N, C, T, H, W) for CNN-ISS and
    /// (N, C, H, W) for CLSTM-ISS.
    pub fn forward_infer_features(&self, input: &BatchInput) -> Result<Tensor> {
        self.check_input(input)?;
        match &self.body {
            Body::Cnn { convs, bns, .. } => {
                let BatchInput::Volume(v) = input else { unreachable!() };
                let mut x = v.clone();
                for (conv, bn) in convs.iter().zip(bns) {
                    x = infer_conv3d_bn_relu(&x, conv, bn)?;
                }
                Ok(x)
            }
            Body::Clstm { cells, bns, head, .. } => {
                let BatchInput::Sequence(frames) = input else { unreachable!() };
                let (n, h, w) = (frames[0].shape()[0], frames[0].shape()[2], frames[0].shape()[3]);
                let mut inputs: Vec<Tensor> = frames.to_vec();
                for (cell, bn) in cells.iter().zip(bns) {
                    let mut state = ConvLstmState::zeros(n, cell.hidden_channels(), h, w);
                    let mut outputs = Vec::with_capacity(inputs.len());
                    for x_t in &inputs {
                        state = convlstm_step_infer(x_t, &state, cell)?;
                        outputs.push(infer_bn_relu(&state.hidden, bn)?);
                    }
                    inputs = outputs;
                }
                let last = inputs.last().expect("timesteps checked >= 2");
                let dims = Conv2dDims {
                    n,
                    c_in: last.shape()[1],
                    h,
                    w,
                    c_out: head.kernel.shape()[0],
                    kh: head.kernel.shape()[2],
                    kw: head.kernel.shape()[3],
                };
                let mut out = ops::conv2d_forward(
                    last.data(),
                    head.kernel.data(),
                    Some(head.bias.data()),
                    dims,
                );
                for v in &mut out {
                    *v = v.max(0.0);
                }
                Tensor::new(&[n, dims.c_out, h, w], out)
            }
        }
    }

    /// Inference-mode probabilities, (N, H, W).
    pub fn forward_infer(&self, input: &BatchInput) -> Result<Tensor> {
        let features = self.forward_infer_features(input)?;
        let dense = match &self.body {
            Body::Cnn { dense, .. } => dense,
            Body::Clstm { dense, .. } => dense,
        };
        let shape = features.shape().to_vec();
        let n = shape[0];
        let f: usize = shape[1..shape.len() - 2].iter().product();
        let p = shape[shape.len() - 2] * shape[shape.len() - 1];
        if dense.weights.len() != f {
            return Err(Error::invalid(format!(
                "dense: {} weights for {f} per-pixel features",
                dense.weights.len()
            )));
        }
        let logits =
            ops::pixel_dense_forward(features.data(), n, f, p, dense.weights.data(), dense.bias.data()[0]);
        let probs: Vec<f64> = logits.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        Tensor::new(&[n, shape[shape.len() - 2], shape[shape.len() - 1]], probs)
    }
}

fn infer_conv3d_bn_relu(x: &Tensor, conv: &ConvLayer, bn: &BnLayer) -> Result<Tensor> {
    let xs = x.shape();
    let ks = conv.kernel.shape();
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
    let out = ops::conv3d_forward(x.data(), conv.kernel.data(), Some(conv.bias.data()), dims);
    let shape = [dims.n, dims.c_out, dims.d, dims.h, dims.w];
    let t = Tensor::new(&shape, out)?;
    infer_bn_relu_axis(&t, bn, 1)
}

fn infer_bn_relu(x: &Tensor, bn: &BnLayer) -> Result<Tensor> {
    infer_bn_relu_axis(x, bn, 1)
}

fn infer_bn_relu_axis(x: &Tensor, bn: &BnLayer, axis: usize) -> Result<Tensor> {
    let istd: Vec<f64> =
        bn.running_var.data().iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut out = ops::batchnorm_apply(
        x.data(),
        x.shape(),
        axis,
        bn.running_mean.data(),
        &istd,
        bn.scale.data(),
        bn.shift.data(),
    );
    for v in &mut out {
        *v = v.max(0.0);
    }
    Tensor::new(x.shape(), out)
}

/// Chunk a stack into patches, predict each in inference mode, stitch the
/// probability planes back to full extent, and threshold into a mask.
pub fn predict_full(
    network: &Network,
    stack: &InterferogramStack,
) -> Result<(Plane, PixelMask)> {
    let spec = network.spec();
    if spec.kind == NetworkKind::CnnIss && stack.n_ifgs() != spec.n_timesteps {
        return Err(Error::invalid(format!(
            "predict: stack has {} interferograms, cnn_iss trained for {}",
            stack.n_ifgs(),
            spec.n_timesteps
        )));
    }
    if stack.n_ifgs() < 2 {
        return Err(Error::invalid("predict: need at least 2 interferograms"));
    }
    let patchset = chunk(stack, spec.input_patch)?;
    let ps = spec.input_patch;
    let t = stack.n_ifgs();
    let planes: Vec<Plane> = patchset
        .patches()
        .par_iter()
        .map(|patch| {
            let mut phase = Vec::with_capacity(t * ps * ps);
            for i in 0..t {
                phase.extend_from_slice(patch.stack.phase_plane(i));
            }
            let input = BatchInput::from_phase_patches(spec.kind, &[&phase], t, ps, ps)?;
            let probs = network.forward_infer(&input)?;
            Plane::new(ps, ps, probs.data().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let prob = stitch(&planes, &patchset)?;
    let labels: Vec<bool> = prob.data().iter().map(|&p| p >= MASK_THRESHOLD).collect();
    let mask = PixelMask::new(stack.width(), stack.height(), spec.kind.mask_source(), labels)?;
    Ok((prob, mask))
}
