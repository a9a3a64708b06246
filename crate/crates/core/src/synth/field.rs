//! Spatially correlated random fields: Gaussian-kernel smoothing of white
//! noise, rescaled to an exact target standard deviation. The kernel sigma
//! is `corr_len / 2`, which puts the field autocorrelation at lag
//! `corr_len` near exp(-1) and makes it negligible by `4 * corr_len`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as usize;
    let mut k = Vec::with_capacity(2 * half + 1);
    for i in 0..=2 * half {
        let x = i as f64 - half as f64;
        k.push((-x * x / (2.0 * sigma * sigma)).exp());
    }
    k
}

/// Separable convolution along rows then columns, with the kernel
/// renormalized wherever it is clipped by the border.
fn smooth(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let half = kernel.len() / 2;
    let mut rows = vec![0.0; data.len()];
    for r in 0..height {
        let src = &data[r * width..(r + 1) * width];
        let dst = &mut rows[r * width..(r + 1) * width];
        for c in 0..width {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(width - 1);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for j in lo..=hi {
                let w = kernel[j + half - c];
                acc += w * src[j];
                norm += w;
            }
            dst[c] = acc / norm;
        }
    }
    let mut out = vec![0.0; data.len()];
    for c in 0..width {
        for r in 0..height {
            let lo = r.saturating_sub(half);
            let hi = (r + half).min(height - 1);
            let mut acc = 0.0;
            let mut norm = 0.0;
            for j in lo..=hi {
                let w = kernel[j + half - r];
                acc += w * rows[j * width + c];
                norm += w;
            }
            out[r * width + c] = acc / norm;
        }
    }
    out
}

/// Zero-mean random plane with population standard deviation exactly `std`
/// and spatial correlation length `corr_len` (pixels).
pub fn correlated_field(
    width: usize,
    height: usize,
    std: f64,
    corr_len: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("correlated_field: zero extent"));
    }
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::invalid(format!("correlated_field: bad std {std}")));
    }
    if std == 0.0 {
        return Ok(vec![0.0; width * height]);
    }
    if corr_len < 1.0 {
        return Err(Error::invalid(format!("correlated_field: corr_len {corr_len} < 1")));
    }
    let white: Vec<f64> = (0..width * height).map(|_| rng.sample(StandardNormal)).collect();
    let kernel = gaussian_kernel(corr_len / 2.0);
    let mut field = smooth(&white, width, height, &kernel);

    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var < 1e-300 {
        return Ok(vec![0.0; width * height]);
    }
    let scale = std / var.sqrt();
    for v in &mut field {
        *v = (*v - mean) * scale;
    }
    Ok(field)
}

/// Empirical autocorrelation of a plane at a horizontal pixel lag.
pub fn autocorrelation(data: &[f64], width: usize, height: usize, lag: usize) -> f64 {
    assert!(lag < width);
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in 0..height {
        for c in 0..width - lag {
            acc += (data[r * width + c] - mean) * (data[r * width + c + lag] - mean);
            count += 1;
        }
    }
    acc / count as f64 / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn zero_std_gives_zero_plane() {
        let mut rng = seed::rng(1, &[0]);
        let f = correlated_field(64, 64, 0.0, 8.0, &mut rng).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn std_is_exact_after_rescale() {
        let mut rng = seed::rng(2, &[0]);
        let f = correlated_field(256, 256, 0.5, 12.0, &mut rng).unwrap();
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let std = (f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!((0.45..=0.55).contains(&std), "std {std}");
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn corr_len_one_is_nearly_white() {
        let mut rng = seed::rng(3, &[0]);
        let f = correlated_field(256, 256, 1.0, 1.0, &mut rng).unwrap();
        let rho3 = autocorrelation(&f, 256, 256, 3);
        assert!(rho3.abs() < 0.2, "rho(3) = {rho3}");
    }

    #[test]
    fn autocorrelation_decays_with_lag() {
        let mut rng = seed::rng(4, &[0]);
        let corr_len = 10usize;
        let f = correlated_field(256, 256, 1.0, corr_len as f64, &mut rng).unwrap();
        let near = autocorrelation(&f, 256, 256, corr_len);
        let far = autocorrelation(&f, 256, 256, 4 * corr_len);
        assert!(near > far, "rho({corr_len}) = {near} <= rho({}) = {far}", 4 * corr_len);
        assert!(near > 0.2, "rho({corr_len}) = {near}");
    }

    #[test]
    fn rejects_bad_arguments() {
        let mut rng = seed::rng(5, &[0]);
        assert!(correlated_field(0, 4, 1.0, 2.0, &mut rng).is_err());
        assert!(correlated_field(4, 4, 1.0, 0.5, &mut rng).is_err());
        assert!(correlated_field(4, 4, f64::NAN, 2.0, &mut rng).is_err());
    }
}
