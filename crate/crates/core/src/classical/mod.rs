//! Classical phase-stability PS selection.
//!
//! Candidates are gated by amplitude dispersion, then iterated through
//! adaptive low-pass filtering (weighted circular mean over a disk of
//! candidate neighbours), grid-search inversion of the look-angle error
//! against the perpendicular baselines, temporal coherence of the phase
//! residual, and SNR re-weighting, until the per-candidate coherence
//! stabilizes. The final mask keeps candidates whose coherence clears the
//! threshold.

use crate::error::{Error, Result};
use crate::stack::{wrap, InterferogramStack, MaskSource, PixelMask, Plane};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Weight cap applied both to 1/D_A seeding and to SNR weights.
const WEIGHT_CAP: f64 = 1e6;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassicalConfig {
    /// Candidate gate: keep pixels with D_A strictly below this.
    pub d_a_threshold: f64,
    /// Disk radius (pixels) of the adaptive low-pass filter.
    pub filter_radius: f64,
    /// Half-width of the Δh grid search, meters.
    pub dh_search_max: f64,
    /// Grid step, meters.
    pub dh_search_step: f64,
    /// Final selection threshold on temporal coherence.
    pub gamma_threshold: f64,
    pub max_iters: usize,
    /// Stop when the RMS change of per-candidate coherence drops below this.
    pub rms_tol: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig {
            d_a_threshold: 0.4,
            filter_radius: 10.0,
            dh_search_max: 20.0,
            dh_search_step: 0.1,
            gamma_threshold: 0.75,
            max_iters: 10,
            rms_tol: 1e-3,
        }
    }
}

impl ClassicalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dh_search_step > 0.0 && self.dh_search_step < self.dh_search_max) {
            return Err(Error::invalid("classical: dh_search_step must be in (0, dh_search_max)"));
        }
        if !(self.gamma_threshold > 0.0 && self.gamma_threshold < 1.0) {
            return Err(Error::invalid("classical: gamma_threshold outside (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("classical: max_iters is 0"));
        }
        if !(self.filter_radius > 0.0) {
            return Err(Error::invalid("classical: filter_radius must be positive"));
        }
        if !(self.d_a_threshold > 0.0) {
            return Err(Error::invalid("classical: d_a_threshold must be positive"));
        }
        if self.rms_tol < 0.0 {
            return Err(Error::invalid("classical: rms_tol must be non-negative"));
        }
        Ok(())
    }
}

/// Per-candidate result of the classical chain.
#[derive(Clone, Debug)]
pub struct CandidateRecord {
    pub pixel: (usize, usize),
    pub d_a: f64,
    /// SNR weight from the final iteration.
    pub weight: f64,
    /// Estimated spatially uncorrelated look-angle (DEM) error, meters.
    pub delta_h_su: f64,
    /// Wrapped phase residual per interferogram.
    pub noise_series: Vec<f64>,
    /// Temporal coherence of the residual, in [0, 1].
    pub gamma: f64,
    /// Filter had no usable neighbour besides the pixel itself.
    pub low_support: bool,
    /// False when all baselines were zero and Δh could not be estimated.
    pub dh_identifiable: bool,
}

/// Amplitude dispersion D_A = temporal std / temporal mean (population
/// std). Pixels with zero mean amplitude get +∞, which no threshold
/// passes.
pub fn amplitude_dispersion(stack: &InterferogramStack) -> Plane {
    let (w, h, n) = (stack.width(), stack.height(), stack.n_ifgs());
    let mut out = Plane::zeros(w, h);
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for i in 0..n {
                let a = stack.amplitude(i, r, c);
                sum += a;
                sum2 += a * a;
            }
            let mean = sum / n as f64;
            if mean == 0.0 {
                out.set(r, c, f64::INFINITY);
            } else {
                let var = (sum2 / n as f64 - mean * mean).max(0.0);
                out.set(r, c, var.sqrt() / mean);
            }
        }
    }
    out
}

/// Pixels with D_A strictly below the threshold, row-major. An empty
/// result is valid.
pub fn select_candidates(d_a: &Plane, threshold: f64) -> Result<Vec<(usize, usize)>> {
    if !(threshold > 0.0) {
        return Err(Error::invalid(format!("select_candidates: threshold {threshold} must be > 0")));
    }
    let mut out = Vec::new();
    for r in 0..d_a.height() {
        for c in 0..d_a.width() {
            if d_a.get(r, c) < threshold {
                out.push((r, c));
            }
        }
    }
    Ok(out)
}

/// Output of the adaptive low-pass filter: estimated spatially
/// uncorrelated phase per candidate per interferogram.
#[derive(Clone, Debug)]
pub struct AlpfOutput {
    /// `su[cand][ifg]`, wrapped.
    pub su: Vec<Vec<f64>>,
    pub low_support: Vec<bool>,
}

/// Adaptive low-pass filter: the spatially correlated phase at a candidate
/// is the weighted circular mean over candidate neighbours within
/// `radius`; the spatially uncorrelated estimate is the wrapped difference
/// from the candidate's own phase. The centre pixel is excluded from its
/// own smoothing when at least 8 neighbours exist, otherwise included.
/// Candidates with no positively weighted neighbour besides themselves
/// are flagged low-support (their SC estimate degrades to their own phase
/// or to zero).
pub fn alpf(
    stack: &InterferogramStack,
    candidates: &[(usize, usize)],
    weights: &[f64],
    radius: f64,
) -> Result<AlpfOutput> {
    if weights.len() != candidates.len() {
        return Err(Error::invalid("alpf: weights/candidates length mismatch"));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(Error::invalid("alpf: weights must be finite and non-negative"));
    }
    let n = stack.n_ifgs();
    // unit phasors per candidate per ifg, shared read-only
    let phasors: Vec<Vec<(f64, f64)>> = candidates
        .iter()
        .map(|&(r, c)| (0..n).map(|i| stack.phase(i, r, c)).map(|p| (p.cos(), p.sin())).collect())
        .collect();

    // bucket grid for disk queries
    let cell = radius.ceil().max(1.0) as usize;
    let gw = stack.width().div_ceil(cell);
    let gh = stack.height().div_ceil(cell);
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); gw * gh];
    for (idx, &(r, c)) in candidates.iter().enumerate() {
        grid[(r / cell) * gw + c / cell].push(idx);
    }
    let r2 = radius * radius;

    let results: Vec<(Vec<f64>, bool)> = candidates
        .par_iter()
        .enumerate()
        .map(|(idx, &(r, c))| {
            let mut neighbors: Vec<usize> = Vec::new();
            let gr = r / cell;
            let gc = c / cell;
            for dgr in gr.saturating_sub(1)..=(gr + 1).min(gh - 1) {
                for dgc in gc.saturating_sub(1)..=(gc + 1).min(gw - 1) {
                    for &j in &grid[dgr * gw + dgc] {
                        if j == idx {
                            continue;
                        }
                        let (rr, cc) = candidates[j];
                        let dr = rr as f64 - r as f64;
                        let dc = cc as f64 - c as f64;
                        if dr * dr + dc * dc <= r2 {
                            neighbors.push(j);
                        }
                    }
                }
            }
            neighbors.sort_unstable(); // fixed reduction order
            let include_center = neighbors.len() < 8;
            let mut total_w: f64 = neighbors.iter().map(|&j| weights[j]).sum();
            if include_center {
                total_w += weights[idx];
            }
            let supported = !neighbors.is_empty() && total_w > 0.0;

            let mut su = Vec::with_capacity(n);
            for i in 0..n {
                let own = stack.phase(i, r, c);
                if total_w == 0.0 {
                    su.push(own); // SU estimate falls back to the pixel's own phase
                    continue;
                }
                let mut re = 0.0;
                let mut im = 0.0;
                for &j in &neighbors {
                    let (pc, ps) = phasors[j][i];
                    re += weights[j] * pc;
                    im += weights[j] * ps;
                }
                if include_center {
                    let (pc, ps) = phasors[idx][i];
                    re += weights[idx] * pc;
                    im += weights[idx] * ps;
                }
                if re == 0.0 && im == 0.0 {
                    su.push(own);
                } else {
                    let sc = im.atan2(re);
                    su.push(wrap(own - sc));
                }
            }
            (su, !supported)
        })
        .collect();

    let mut su = Vec::with_capacity(candidates.len());
    let mut low_support = Vec::with_capacity(candidates.len());
    for (s, l) in results {
        su.push(s);
        low_support.push(l);
    }
    Ok(AlpfOutput { su, low_support })
}

/// Temporal coherence of a wrapped phase series: magnitude of the mean
/// unit phasor.
pub fn temporal_coherence(series: &[f64]) -> f64 {
    assert!(!series.is_empty(), "temporal_coherence: empty series");
    let mut re = 0.0;
    let mut im = 0.0;
    for &p in series {
        re += p.cos();
        im += p.sin();
    }
    (re * re + im * im).sqrt() / series.len() as f64
}

/// SNR weight from an amplitude series and its phase residuals: coherent
/// power over twice the residual power, clamped to [0, 1e6].
pub fn snr_weight(amplitude_series: &[f64], noise_series: &[f64]) -> f64 {
    assert_eq!(amplitude_series.len(), noise_series.len(), "snr_weight: length mismatch");
    let n = amplitude_series.len() as f64;
    let mut mu_c = 0.0;
    let mut mu_2 = 0.0;
    for (&a, &p) in amplitude_series.iter().zip(noise_series) {
        mu_c += a * p.cos();
        mu_2 += a * a;
    }
    mu_c /= n;
    mu_2 /= n;
    let denom = (mu_2 - mu_c * mu_c).max(1e-12);
    (mu_c * mu_c / (2.0 * denom)).clamp(0.0, WEIGHT_CAP)
}

/// Result of the look-angle-error inversion for one candidate.
#[derive(Clone, Debug)]
pub struct SulaFit {
    pub delta_h: f64,
    pub noise_series: Vec<f64>,
    pub gamma: f64,
    pub identifiable: bool,
}

/// Invert the spatially uncorrelated look-angle error Δh from an SU phase
/// series: grid search over [−dh_search_max, dh_search_max] maximizing the
/// coherence of the residual, ties broken toward the smallest |Δh|,
/// followed by one least-squares refinement on the wrapped residuals
/// (kept only if it does not lower the coherence). All-zero baselines make
/// Δh unidentifiable; the fit returns Δh = 0 with `identifiable = false`.
pub fn invert_sula(
    su_series: &[f64],
    b_perp: &[f64],
    k: f64,
    cfg: &ClassicalConfig,
) -> Result<SulaFit> {
    if su_series.len() != b_perp.len() {
        return Err(Error::invalid("invert_sula: series length mismatch"));
    }
    if su_series.len() < 2 {
        return Err(Error::invalid("invert_sula: need at least 2 interferograms"));
    }
    cfg.validate()?;
    let n = su_series.len();
    let kb: Vec<f64> = b_perp.iter().map(|&b| k * b).collect();
    if kb.iter().all(|&v| v.abs() < 1e-30) {
        let noise: Vec<f64> = su_series.iter().map(|&p| wrap(p)).collect();
        let gamma = temporal_coherence(&noise);
        return Ok(SulaFit { delta_h: 0.0, noise_series: noise, gamma, identifiable: false });
    }

    let gamma_at = |dh: f64| -> f64 {
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..n {
            let p = su_series[i] - kb[i] * dh;
            re += p.cos();
            im += p.sin();
        }
        (re * re + im * im).sqrt() / n as f64
    };

    let steps = (cfg.dh_search_max / cfg.dh_search_step).round() as i64;
    let mut best_dh = 0.0f64;
    let mut best_gamma = f64::NEG_INFINITY;
    for m in -steps..=steps {
        let dh = m as f64 * cfg.dh_search_step;
        let g = gamma_at(dh);
        if g > best_gamma || (g == best_gamma && dh.abs() < best_dh.abs()) {
            best_gamma = g;
            best_dh = dh;
        }
    }

    // one weighted least-squares step on the wrapped residuals around the
    // grid optimum
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        let r = wrap(su_series[i] - kb[i] * best_dh);
        num += kb[i] * r;
        den += kb[i] * kb[i];
    }
    if den > 0.0 {
        let refined = (best_dh + num / den).clamp(-cfg.dh_search_max, cfg.dh_search_max);
        if gamma_at(refined) >= best_gamma {
            best_dh = refined;
        }
    }

    let noise_series: Vec<f64> =
        (0..n).map(|i| wrap(su_series[i] - kb[i] * best_dh)).collect();
    let gamma = temporal_coherence(&noise_series);
    Ok(SulaFit { delta_h: best_dh, noise_series, gamma, identifiable: true })
}

/// Full classical run: records for every candidate, the selected mask, and
/// per-iteration totals for convergence diagnostics.
#[derive(Clone, Debug)]
pub struct ClassicalOutcome {
    pub records: Vec<CandidateRecord>,
    pub mask: PixelMask,
    /// Σγ over candidates after each iteration.
    pub gamma_total_history: Vec<f64>,
    pub iterations: usize,
}

pub fn run_classical(stack: &InterferogramStack, cfg: &ClassicalConfig) -> Result<ClassicalOutcome> {
    cfg.validate()?;
    let d_a = amplitude_dispersion(stack);
    let candidates = select_candidates(&d_a, cfg.d_a_threshold)?;
    let mask_empty = PixelMask::all_false(stack.width(), stack.height(), MaskSource::Classical);
    if candidates.is_empty() {
        return Ok(ClassicalOutcome {
            records: Vec::new(),
            mask: mask_empty,
            gamma_total_history: Vec::new(),
            iterations: 0,
        });
    }

    let amp_series: Vec<Vec<f64>> =
        candidates.iter().map(|&(r, c)| stack.amplitude_series(r, c)).collect();
    let bperp_series: Vec<Vec<f64>> =
        candidates.iter().map(|&(r, c)| stack.perp_baseline_series(r, c)).collect();
    let k_per: Vec<f64> = candidates.iter().map(|&(r, c)| stack.k_factor(r, c)).collect();

    // first iteration weights: inverse amplitude dispersion
    let mut weights: Vec<f64> = candidates
        .iter()
        .map(|&(r, c)| (1.0 / d_a.get(r, c).max(1.0 / WEIGHT_CAP)).min(WEIGHT_CAP))
        .collect();

    let mut prev_gamma = vec![0.0f64; candidates.len()];
    let mut history = Vec::new();
    let mut fits: Vec<SulaFit> = Vec::new();
    let mut low_support = vec![false; candidates.len()];
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let filtered = alpf(stack, &candidates, &weights, cfg.filter_radius)?;
        low_support = filtered.low_support;
        fits = filtered
            .su
            .par_iter()
            .enumerate()
            .map(|(i, su)| invert_sula(su, &bperp_series[i], k_per[i], cfg))
            .collect::<Result<Vec<_>>>()?;
        let gammas: Vec<f64> = fits.iter().map(|f| f.gamma).collect();
        history.push(gammas.iter().sum());

        weights = (0..candidates.len())
            .map(|i| snr_weight(&amp_series[i], &fits[i].noise_series))
            .collect();

        let rms = (gammas
            .iter()
            .zip(&prev_gamma)
            .map(|(g, p)| (g - p) * (g - p))
            .sum::<f64>()
            / gammas.len() as f64)
            .sqrt();
        prev_gamma = gammas;
        if rms < cfg.rms_tol {
            break;
        }
    }

    let mut labels = vec![false; stack.width() * stack.height()];
    let mut records = Vec::with_capacity(candidates.len());
    for (i, &(r, c)) in candidates.iter().enumerate() {
        let fit = &fits[i];
        if fit.gamma >= cfg.gamma_threshold {
            labels[r * stack.width() + c] = true;
        }
        records.push(CandidateRecord {
            pixel: (r, c),
            d_a: d_a.get(r, c),
            weight: weights[i],
            delta_h_su: fit.delta_h,
            noise_series: fit.noise_series.clone(),
            gamma: fit.gamma,
            low_support: low_support[i],
            dh_identifiable: fit.identifiable,
        });
    }
    let mask = PixelMask::new(stack.width(), stack.height(), MaskSource::Classical, labels)?;
    Ok(ClassicalOutcome { records, mask, gamma_total_history: history, iterations })
}
