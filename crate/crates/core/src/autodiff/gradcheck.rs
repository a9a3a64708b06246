//! Central finite-difference verification of reverse-mode gradients.

use crate::autodiff::tape::{NodeId, Tape};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;
use rand::seq::SliceRandom;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Cap on checked coordinates per input tensor; `None` checks all.
    /// Sampling keeps full-network checks inside a time budget while still
    /// touching every parameter tensor.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-6, max_coords_per_input: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max of |analytic - numeric| / max(1, |analytic|, |numeric|).
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst_input: usize,
    pub worst_coord: usize,
}

/// Compare the tape gradient of a scalar-valued graph against central
/// finite differences, coordinate by coordinate over every input tensor.
pub fn grad_check<F>(build: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |tensors: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = build(&mut tape, &ids)?;
        if tape.value(root).len() != 1 {
            return Err(Error::invalid("grad_check: graph output must be scalar"));
        }
        Ok((tape, ids, root))
    };

    let (mut tape, ids, root) = eval(inputs)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.value(id).len()]))
        .collect();

    let mut report =
        GradCheckReport { max_rel_error: 0.0, coords_checked: 0, worst_input: 0, worst_coord: 0 };
    let mut work = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        let len = input.len();
        let coords: Vec<usize> = match cfg.max_coords_per_input {
            Some(cap) if len > cap => {
                let mut all: Vec<usize> = (0..len).collect();
                let mut rng = seed::rng(cfg.seed, &[0x67_72_61_64, ti as u64]);
                all.shuffle(&mut rng);
                let mut picked = all[..cap].to_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..len).collect(),
        };
        for &ci in &coords {
            let orig = work[ti].data()[ci];
            work[ti].data_mut()[ci] = orig + cfg.step;
            let (tape_p, _, root_p) = eval(&work)?;
            let fp = tape_p.value(root_p).item();
            work[ti].data_mut()[ci] = orig - cfg.step;
            let (tape_m, _, root_m) = eval(&work)?;
            let fm = tape_m.value(root_m).item();
            work[ti].data_mut()[ci] = orig;

            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic[ti][ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_input = ti;
                report.worst_coord = ci;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn linear_graph_is_near_exact() {
        let mut rng = crate::seed::rng(31, &[0]);
        let a = rand_tensor(&[6], -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[6], -1.0, 1.0, &mut rng);
        let report = grad_check(
            |tape, ids| {
                let s = tape.add(ids[0], ids[1])?;
                Ok(tape.sum_all(s))
            },
            &[a, b],
            // linear graph: no truncation error, so a large step leaves
            // only negligible rounding noise
            &GradCheckConfig { step: 1e-3, ..Default::default() },
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-10, "{}", report.max_rel_error);
        assert_eq!(report.coords_checked, 12);
    }

    #[test]
    fn product_graph_checks_out() {
        let mut rng = crate::seed::rng(32, &[0]);
        let a = rand_tensor(&[8], -2.0, 2.0, &mut rng);
        let b = rand_tensor(&[8], -2.0, 2.0, &mut rng);
        let report = grad_check(
            |tape, ids| {
                let m = tape.mul(ids[0], ids[1])?;
                let t = tape.tanh(m);
                Ok(tape.sum_all(t))
            },
            &[a, b],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-7, "{}", report.max_rel_error);
    }

    #[test]
    fn sampling_caps_coordinates() {
        let mut rng = crate::seed::rng(33, &[0]);
        let a = rand_tensor(&[100], -1.0, 1.0, &mut rng);
        let cfg = GradCheckConfig { max_coords_per_input: Some(10), seed: 5, ..Default::default() };
        let report = grad_check(
            |tape, ids| {
                let s = tape.sigmoid(ids[0]);
                Ok(tape.sum_all(s))
            },
            &[a],
            &cfg,
        )
        .unwrap();
        assert_eq!(report.coords_checked, 10);
        assert!(report.max_rel_error <= 1e-7);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let a = Tensor::zeros(&[3]);
        let err = grad_check(|tape, ids| Ok(tape.relu(ids[0])), &[a], &GradCheckConfig::default());
        assert!(err.is_err());
    }
}
