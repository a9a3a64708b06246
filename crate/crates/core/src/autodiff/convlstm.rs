//! ConvLSTM cell: gate pre-activations are same-padded convolutions over
//! the step input, the previous hidden map and (for the input/forget/output
//! peepholes) the cell state:
//!
//! ```text
//! i_t = sigmoid(W_xi*X_t + W_yi*Y_{t-1} + W_si*S_{t-1} + b_i)
//! f_t = sigmoid(W_xf*X_t + W_yf*Y_{t-1} + W_sf*S_{t-1} + b_f)
//! S_t = f_t . S_{t-1} + i_t . tanh(W_xs*X_t + W_ys*Y_{t-1} + b_s)
//! o_t = sigmoid(W_xo*X_t + W_yo*Y_{t-1} + W_so*S_t + b_o)
//! Y_t = o_t . tanh(S_t)
//! ```
//!
//! (`*` convolution, `.` elementwise product.) The peephole terms are
//! convolutions, not Hadamard products.

use crate::autodiff::ops::{self, Conv2dDims};
use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Names of the 15 parameter tensors of one cell, in storage order.
pub const PARAM_NAMES: [&str; 15] = [
    "w_xi", "w_yi", "w_si", "w_xf", "w_yf", "w_sf", "w_xs", "w_ys", "w_xo", "w_yo", "w_so",
    "b_i", "b_f", "b_s", "b_o",
];

/// Parameters of one ConvLSTM cell.
#[derive(Clone, Debug)]
pub struct ConvLstmParams {
    pub w_xi: Tensor,
    pub w_yi: Tensor,
    pub w_si: Tensor,
    pub w_xf: Tensor,
    pub w_yf: Tensor,
    pub w_sf: Tensor,
    pub w_xs: Tensor,
    pub w_ys: Tensor,
    pub w_xo: Tensor,
    pub w_yo: Tensor,
    pub w_so: Tensor,
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_s: Tensor,
    pub b_o: Tensor,
}

impl ConvLstmParams {
    /// Centered-uniform init scaled by 1/sqrt(fan-in); the forget-gate bias
    /// starts at +1 so early training does not flush the cell state.
    pub fn init(in_channels: usize, hidden: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        let kx = [hidden, in_channels, kernel, kernel];
        let kh = [hidden, hidden, kernel, kernel];
        let fan_x = in_channels * kernel * kernel;
        let fan_h = hidden * kernel * kernel;
        ConvLstmParams {
            w_xi: Tensor::uniform_init(&kx, fan_x, rng),
            w_yi: Tensor::uniform_init(&kh, fan_h, rng),
            w_si: Tensor::uniform_init(&kh, fan_h, rng),
            w_xf: Tensor::uniform_init(&kx, fan_x, rng),
            w_yf: Tensor::uniform_init(&kh, fan_h, rng),
            w_sf: Tensor::uniform_init(&kh, fan_h, rng),
            w_xs: Tensor::uniform_init(&kx, fan_x, rng),
            w_ys: Tensor::uniform_init(&kh, fan_h, rng),
            w_xo: Tensor::uniform_init(&kx, fan_x, rng),
            w_yo: Tensor::uniform_init(&kh, fan_h, rng),
            w_so: Tensor::uniform_init(&kh, fan_h, rng),
            b_i: Tensor::zeros(&[hidden]),
            b_f: Tensor::full(&[hidden], 1.0),
            b_s: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(in_channels: usize, hidden: usize, kernel: usize) -> Self {
        let kx = [hidden, in_channels, kernel, kernel];
        let kh = [hidden, hidden, kernel, kernel];
        ConvLstmParams {
            w_xi: Tensor::zeros(&kx),
            w_yi: Tensor::zeros(&kh),
            w_si: Tensor::zeros(&kh),
            w_xf: Tensor::zeros(&kx),
            w_yf: Tensor::zeros(&kh),
            w_sf: Tensor::zeros(&kh),
            w_xs: Tensor::zeros(&kx),
            w_ys: Tensor::zeros(&kh),
            w_xo: Tensor::zeros(&kx),
            w_yo: Tensor::zeros(&kh),
            w_so: Tensor::zeros(&kh),
            b_i: Tensor::zeros(&[hidden]),
            b_f: Tensor::zeros(&[hidden]),
            b_s: Tensor::zeros(&[hidden]),
            b_o: Tensor::zeros(&[hidden]),
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.w_xi.shape()[0]
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_xi", &self.w_xi),
            ("w_yi", &self.w_yi),
            ("w_si", &self.w_si),
            ("w_xf", &self.w_xf),
            ("w_yf", &self.w_yf),
            ("w_sf", &self.w_sf),
            ("w_xs", &self.w_xs),
            ("w_ys", &self.w_ys),
            ("w_xo", &self.w_xo),
            ("w_yo", &self.w_yo),
            ("w_so", &self.w_so),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_s", &self.b_s),
            ("b_o", &self.b_o),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_xi", &mut self.w_xi),
            ("w_yi", &mut self.w_yi),
            ("w_si", &mut self.w_si),
            ("w_xf", &mut self.w_xf),
            ("w_yf", &mut self.w_yf),
            ("w_sf", &mut self.w_sf),
            ("w_xs", &mut self.w_xs),
            ("w_ys", &mut self.w_ys),
            ("w_xo", &mut self.w_xo),
            ("w_yo", &mut self.w_yo),
            ("w_so", &mut self.w_so),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_s", &mut self.b_s),
            ("b_o", &mut self.b_o),
        ]
    }
}

/// Cell parameters registered as tape leaves.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmNodes {
    pub w_xi: NodeId,
    pub w_yi: NodeId,
    pub w_si: NodeId,
    pub w_xf: NodeId,
    pub w_yf: NodeId,
    pub w_sf: NodeId,
    pub w_xs: NodeId,
    pub w_ys: NodeId,
    pub w_xo: NodeId,
    pub w_yo: NodeId,
    pub w_so: NodeId,
    pub b_i: NodeId,
    pub b_f: NodeId,
    pub b_s: NodeId,
    pub b_o: NodeId,
}

impl ConvLstmNodes {
    pub fn from_params(tape: &mut Tape, p: &ConvLstmParams) -> Self {
        ConvLstmNodes {
            w_xi: tape.leaf(p.w_xi.clone()),
            w_yi: tape.leaf(p.w_yi.clone()),
            w_si: tape.leaf(p.w_si.clone()),
            w_xf: tape.leaf(p.w_xf.clone()),
            w_yf: tape.leaf(p.w_yf.clone()),
            w_sf: tape.leaf(p.w_sf.clone()),
            w_xs: tape.leaf(p.w_xs.clone()),
            w_ys: tape.leaf(p.w_ys.clone()),
            w_xo: tape.leaf(p.w_xo.clone()),
            w_yo: tape.leaf(p.w_yo.clone()),
            w_so: tape.leaf(p.w_so.clone()),
            b_i: tape.leaf(p.b_i.clone()),
            b_f: tape.leaf(p.b_f.clone()),
            b_s: tape.leaf(p.b_s.clone()),
            b_o: tape.leaf(p.b_o.clone()),
        }
    }

    pub fn ids(&self) -> [NodeId; 15] {
        [
            self.w_xi, self.w_yi, self.w_si, self.w_xf, self.w_yf, self.w_sf, self.w_xs,
            self.w_ys, self.w_xo, self.w_yo, self.w_so, self.b_i, self.b_f, self.b_s, self.b_o,
        ]
    }
}

/// Cell and hidden maps carried between steps, both (N, hidden, H, W).
#[derive(Clone, Debug)]
pub struct ConvLstmState {
    pub cell: Tensor,
    pub hidden: Tensor,
}

impl ConvLstmState {
    pub fn zeros(n: usize, hidden: usize, h: usize, w: usize) -> Self {
        ConvLstmState {
            cell: Tensor::zeros(&[n, hidden, h, w]),
            hidden: Tensor::zeros(&[n, hidden, h, w]),
        }
    }
}

/// One recorded step; returns (cell, hidden) node ids.
pub fn convlstm_step(
    tape: &mut Tape,
    x: NodeId,
    prev_cell: NodeId,
    prev_hidden: NodeId,
    p: &ConvLstmNodes,
) -> Result<(NodeId, NodeId)> {
    let xi = tape.conv2d(x, p.w_xi, Some(p.b_i))?;
    let yi = tape.conv2d(prev_hidden, p.w_yi, None)?;
    let si = tape.conv2d(prev_cell, p.w_si, None)?;
    let i_pre = tape.add(xi, yi)?;
    let i_pre = tape.add(i_pre, si)?;
    let i_gate = tape.sigmoid(i_pre);

    let xf = tape.conv2d(x, p.w_xf, Some(p.b_f))?;
    let yf = tape.conv2d(prev_hidden, p.w_yf, None)?;
    let sf = tape.conv2d(prev_cell, p.w_sf, None)?;
    let f_pre = tape.add(xf, yf)?;
    let f_pre = tape.add(f_pre, sf)?;
    let f_gate = tape.sigmoid(f_pre);

    let xs = tape.conv2d(x, p.w_xs, Some(p.b_s))?;
    let ys = tape.conv2d(prev_hidden, p.w_ys, None)?;
    let s_pre = tape.add(xs, ys)?;
    let s_tilde = tape.tanh(s_pre);

    let keep = tape.mul(f_gate, prev_cell)?;
    let write = tape.mul(i_gate, s_tilde)?;
    let cell = tape.add(keep, write)?;

    let xo = tape.conv2d(x, p.w_xo, Some(p.b_o))?;
    let yo = tape.conv2d(prev_hidden, p.w_yo, None)?;
    let so = tape.conv2d(cell, p.w_so, None)?;
    let o_pre = tape.add(xo, yo)?;
    let o_pre = tape.add(o_pre, so)?;
    let o_gate = tape.sigmoid(o_pre);

    let cell_tanh = tape.tanh(cell);
    let hidden = tape.mul(o_gate, cell_tanh)?;
    Ok((cell, hidden))
}

fn conv_dims(x: &Tensor, k: &Tensor) -> Conv2dDims {
    let xs = x.shape();
    let ks = k.shape();
    Conv2dDims { n: xs[0], c_in: xs[1], h: xs[2], w: xs[3], c_out: ks[0], kh: ks[2], kw: ks[3] }
}

/// Forward-only step on plain tensors (prediction path).
pub fn convlstm_step_infer(
    x: &Tensor,
    prev: &ConvLstmState,
    p: &ConvLstmParams,
) -> Result<ConvLstmState> {
    if x.shape().len() != 4 {
        return Err(Error::invalid("convlstm: input must be (N, C, H, W)"));
    }
    if x.shape()[2..] != prev.hidden.shape()[2..] {
        return Err(Error::invalid("convlstm: spatial shape mismatch with state"));
    }
    let conv = |input: &Tensor, k: &Tensor, b: Option<&Tensor>| -> Vec<f64> {
        ops::conv2d_forward(input.data(), k.data(), b.map(|b| b.data()), conv_dims(input, k))
    };
    let out_shape = prev.hidden.shape().to_vec();

    let mut i_pre = conv(x, &p.w_xi, Some(&p.b_i));
    for (a, b) in i_pre.iter_mut().zip(conv(&prev.hidden, &p.w_yi, None)) {
        *a += b;
    }
    for (a, b) in i_pre.iter_mut().zip(conv(&prev.cell, &p.w_si, None)) {
        *a += b;
    }

    let mut f_pre = conv(x, &p.w_xf, Some(&p.b_f));
    for (a, b) in f_pre.iter_mut().zip(conv(&prev.hidden, &p.w_yf, None)) {
        *a += b;
    }
    for (a, b) in f_pre.iter_mut().zip(conv(&prev.cell, &p.w_sf, None)) {
        *a += b;
    }

    let mut s_pre = conv(x, &p.w_xs, Some(&p.b_s));
    for (a, b) in s_pre.iter_mut().zip(conv(&prev.hidden, &p.w_ys, None)) {
        *a += b;
    }

    let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
    let cell_data: Vec<f64> = i_pre
        .iter()
        .zip(&f_pre)
        .zip(&s_pre)
        .zip(prev.cell.data())
        .map(|(((ip, fp), sp), s_prev)| sigmoid(*fp) * s_prev + sigmoid(*ip) * sp.tanh())
        .collect();
    let cell = Tensor::new(&out_shape, cell_data).expect("cell shape");

    let mut o_pre = conv(x, &p.w_xo, Some(&p.b_o));
    for (a, b) in o_pre.iter_mut().zip(conv(&prev.hidden, &p.w_yo, None)) {
        *a += b;
    }
    for (a, b) in o_pre.iter_mut().zip(conv(&cell, &p.w_so, None)) {
        *a += b;
    }
    let hidden_data: Vec<f64> =
        o_pre.iter().zip(cell.data()).map(|(op, s)| sigmoid(*op) * s.tanh()).collect();
    let hidden = Tensor::new(&out_shape, hidden_data).expect("hidden shape");
    Ok(ConvLstmState { cell, hidden })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_are_a_fixed_point() {
        let p = ConvLstmParams::zeros(1, 2, 3);
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let mut state = ConvLstmState::zeros(1, 2, 4, 4);
        for _ in 0..3 {
            state = convlstm_step_infer(&x, &state, &p).unwrap();
            assert!(state.cell.data().iter().all(|&v| v == 0.0));
            assert!(state.hidden.data().iter().all(|&v| v == 0.0));
        }
        // gates are exactly 1/2 at zero pre-activation
        let mut tape = Tape::new();
        let nodes = ConvLstmNodes::from_params(&mut tape, &p);
        let xl = tape.leaf(x);
        let c0 = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let h0 = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let (c1, h1) = convlstm_step(&mut tape, xl, c0, h0, &nodes).unwrap();
        assert!(tape.value(c1).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
        // the sigmoid node for the input gate sits right after its pre-sum
        let probe_pre = tape.leaf(Tensor::zeros(&[1]));
        let g = tape.sigmoid(probe_pre);
        assert_eq!(tape.value(g).data()[0], 0.5);
    }

    /// Scalar reference: evaluates the cell equations directly on f64
    /// scalars (1x1 spatial extent, 1x1 kernels make convolution a product).
    #[derive(Clone, Copy)]
    struct ScalarCell {
        w_xi: f64,
        w_yi: f64,
        w_si: f64,
        w_xf: f64,
        w_yf: f64,
        w_sf: f64,
        w_xs: f64,
        w_ys: f64,
        w_xo: f64,
        w_yo: f64,
        w_so: f64,
        b_i: f64,
        b_f: f64,
        b_s: f64,
        b_o: f64,
    }

    fn scalar_step(p: &ScalarCell, x: f64, s_prev: f64, y_prev: f64) -> (f64, f64) {
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sigmoid(p.w_xi * x + p.w_yi * y_prev + p.w_si * s_prev + p.b_i);
        let f = sigmoid(p.w_xf * x + p.w_yf * y_prev + p.w_sf * s_prev + p.b_f);
        let s = f * s_prev + i * (p.w_xs * x + p.w_ys * y_prev + p.b_s).tanh();
        let o = sigmoid(p.w_xo * x + p.w_yo * y_prev + p.w_so * s + p.b_o);
        let y = o * s.tanh();
        (s, y)
    }

    #[test]
    fn matches_scalar_oracle_over_rollout() {
        use rand::Rng;
        let mut rng = crate::seed::rng(21, &[3]);
        let sc = ScalarCell {
            w_xi: rng.gen_range(-0.9..0.9),
            w_yi: rng.gen_range(-0.9..0.9),
            w_si: rng.gen_range(-0.9..0.9),
            w_xf: rng.gen_range(-0.9..0.9),
            w_yf: rng.gen_range(-0.9..0.9),
            w_sf: rng.gen_range(-0.9..0.9),
            w_xs: rng.gen_range(-0.9..0.9),
            w_ys: rng.gen_range(-0.9..0.9),
            w_xo: rng.gen_range(-0.9..0.9),
            w_yo: rng.gen_range(-0.9..0.9),
            w_so: rng.gen_range(-0.9..0.9),
            b_i: rng.gen_range(-0.5..0.5),
            b_f: rng.gen_range(-0.5..0.5),
            b_s: rng.gen_range(-0.5..0.5),
            b_o: rng.gen_range(-0.5..0.5),
        };
        let mut p = ConvLstmParams::zeros(1, 1, 1);
        p.w_xi.data_mut()[0] = sc.w_xi;
        p.w_yi.data_mut()[0] = sc.w_yi;
        p.w_si.data_mut()[0] = sc.w_si;
        p.w_xf.data_mut()[0] = sc.w_xf;
        p.w_yf.data_mut()[0] = sc.w_yf;
        p.w_sf.data_mut()[0] = sc.w_sf;
        p.w_xs.data_mut()[0] = sc.w_xs;
        p.w_ys.data_mut()[0] = sc.w_ys;
        p.w_xo.data_mut()[0] = sc.w_xo;
        p.w_yo.data_mut()[0] = sc.w_yo;
        p.w_so.data_mut()[0] = sc.w_so;
        p.b_i.data_mut()[0] = sc.b_i;
        p.b_f.data_mut()[0] = sc.b_f;
        p.b_s.data_mut()[0] = sc.b_s;
        p.b_o.data_mut()[0] = sc.b_o;

        let xs: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut state = ConvLstmState::zeros(1, 1, 1, 1);
        let (mut s_ref, mut y_ref) = (0.0, 0.0);
        for &x in &xs {
            let xt = Tensor::new(&[1, 1, 1, 1], vec![x]).unwrap();
            state = convlstm_step_infer(&xt, &state, &p).unwrap();
            let (s, y) = scalar_step(&sc, x, s_ref, y_ref);
            s_ref = s;
            y_ref = y;
            assert!((state.cell.data()[0] - s_ref).abs() <= 1e-12);
            assert!((state.hidden.data()[0] - y_ref).abs() <= 1e-12);
        }
        // the recorded (tape) step agrees with the inference step
        let mut tape = Tape::new();
        let nodes = ConvLstmNodes::from_params(&mut tape, &p);
        let mut c = tape.leaf(Tensor::zeros(&[1, 1, 1, 1]));
        let mut h = tape.leaf(Tensor::zeros(&[1, 1, 1, 1]));
        for &x in &xs {
            let xt = tape.leaf(Tensor::new(&[1, 1, 1, 1], vec![x]).unwrap());
            (c, h) = convlstm_step(&mut tape, xt, c, h, &nodes).unwrap();
        }
        assert!((tape.value(c).data()[0] - s_ref).abs() <= 1e-12);
        assert!((tape.value(h).data()[0] - y_ref).abs() <= 1e-12);
    }

    #[test]
    fn saturated_forget_gate_accumulates_state() {
        let mut rng = crate::seed::rng(22, &[3]);
        let mut p = ConvLstmParams::init(1, 2, 3, &mut rng);
        // push the forget gate to its +1 limit
        for b in p.b_f.data_mut() {
            *b = 50.0;
        }
        let n = 1;
        let (h, w) = (4, 4);
        let x = Tensor::new(&[n, 1, h, w], (0..16).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let prev = ConvLstmState {
            cell: Tensor::new(&[n, 2, h, w], (0..32).map(|i| (i as f64 * 0.21).cos()).collect())
                .unwrap(),
            hidden: Tensor::new(&[n, 2, h, w], (0..32).map(|i| (i as f64 * 0.11).sin()).collect())
                .unwrap(),
        };
        let next = convlstm_step_infer(&x, &prev, &p).unwrap();

        // reference with f_t == 1 exactly: S_t = S_{t-1} + i_t . tanh(...)
        let conv = |input: &Tensor, k: &Tensor, b: Option<&Tensor>| -> Vec<f64> {
            ops::conv2d_forward(input.data(), k.data(), b.map(|b| b.data()), conv_dims(input, k))
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut i_pre = conv(&x, &p.w_xi, Some(&p.b_i));
        for (a, b) in i_pre.iter_mut().zip(conv(&prev.hidden, &p.w_yi, None)) {
            *a += b;
        }
        for (a, b) in i_pre.iter_mut().zip(conv(&prev.cell, &p.w_si, None)) {
            *a += b;
        }
        let mut s_pre = conv(&x, &p.w_xs, Some(&p.b_s));
        for (a, b) in s_pre.iter_mut().zip(conv(&prev.hidden, &p.w_ys, None)) {
            *a += b;
        }
        for i in 0..32 {
            let expect = prev.cell.data()[i] + sigmoid(i_pre[i]) * s_pre[i].tanh();
            assert!(
                (next.cell.data()[i] - expect).abs() <= 1e-12,
                "cell[{i}]: {} vs {expect}",
                next.cell.data()[i]
            );
        }
    }

    #[test]
    fn rejects_mismatched_state() {
        let p = ConvLstmParams::zeros(1, 2, 3);
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let prev = ConvLstmState::zeros(1, 2, 5, 5);
        assert!(convlstm_step_infer(&x, &prev, &p).is_err());
    }
}
