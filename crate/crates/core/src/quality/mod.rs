//! STIP-based reliability scoring and mask comparison statistics.
//!
//! A neighbour y is a similar-time-series interferometric pixel (STIP) of x
//! when the temporal coherence of the wrapped phase-difference series
//! between the two pixels clears a threshold. Counts are taken over a
//! rectangular window around each pixel (center excluded, clipped at the
//! image border), and a PS mask is split into reliable/unreliable pixels by
//! comparing the count against a fixed threshold.

use crate::error::{Error, Result};
use crate::stack::{InterferogramStack, PixelMask};
use crate::synth::{LandcoverClass, LANDCOVER_CLASSES};
use crate::trainer::{metrics, Metrics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StipConfig {
    /// Window extent (rows, cols); both must be odd so the window centers
    /// on the pixel.
    pub window: (usize, usize),
    /// Coherence threshold on the phase-difference series.
    pub similarity_threshold: f64,
    /// A PS pixel is reliable when its STIP count exceeds this.
    pub reliable_count: usize,
}

impl Default for StipConfig {
    fn default() -> Self {
        StipConfig { window: (5, 25), similarity_threshold: 0.8, reliable_count: 35 }
    }
}

impl StipConfig {
    pub fn window_area(&self) -> usize {
        self.window.0 * self.window.1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.0 % 2 == 0 || self.window.1 % 2 == 0 || self.window.0 == 0 || self.window.1 == 0 {
            return Err(Error::invalid("stip: window extents must be odd"));
        }
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::invalid("stip: similarity_threshold outside [0, 1]"));
        }
        if self.reliable_count >= self.window_area() - 1 {
            return Err(Error::invalid("stip: reliable_count must be < window area - 1"));
        }
        Ok(())
    }
}

/// Unit phasors of every pixel's phase series, precomputed once per stack.
struct PhasorPlanes {
    cos: Vec<f64>,
    sin: Vec<f64>,
    n_ifgs: usize,
    width: usize,
    height: usize,
}

impl PhasorPlanes {
    fn new(stack: &InterferogramStack) -> Self {
        let n = stack.n_ifgs();
        let plane = stack.width() * stack.height();
        let mut cos = vec![0.0; n * plane];
        let mut sin = vec![0.0; n * plane];
        for i in 0..n {
            let src = stack.phase_plane(i);
            for (p, &ph) in src.iter().enumerate() {
                cos[i * plane + p] = ph.cos();
                sin[i * plane + p] = ph.sin();
            }
        }
        PhasorPlanes { cos, sin, n_ifgs: n, width: stack.width(), height: stack.height() }
    }

    /// Coherence of the phase-difference series between two pixels:
    /// (1/n)|Σ_i exp(j(φ_i,x − φ_i,y))|.
    fn pair_coherence(&self, a: usize, b: usize) -> f64 {
        let plane = self.width * self.height;
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..self.n_ifgs {
            let (ca, sa) = (self.cos[i * plane + a], self.sin[i * plane + a]);
            let (cb, sb) = (self.cos[i * plane + b], self.sin[i * plane + b]);
            // exp(j(pa - pb)) = (ca + j sa)(cb - j sb)
            re += ca * cb + sa * sb;
            im += sa * cb - ca * sb;
        }
        (re * re + im * im).sqrt() / self.n_ifgs as f64
    }

    fn count(&self, row: usize, col: usize, cfg: &StipConfig) -> usize {
        let half_r = cfg.window.0 / 2;
        let half_c = cfg.window.1 / 2;
        let r0 = row.saturating_sub(half_r);
        let r1 = (row + half_r).min(self.height - 1);
        let c0 = col.saturating_sub(half_c);
        let c1 = (col + half_c).min(self.width - 1);
        let center = row * self.width + col;
        let mut count = 0;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let p = r * self.width + c;
                if p == center {
                    continue;
                }
                if self.pair_coherence(center, p) >= cfg.similarity_threshold {
                    count += 1;
                }
            }
        }
        count
    }
}

/// STIP count of one pixel. The window is clipped at image borders.
pub fn stip_count(stack: &InterferogramStack, pixel: (usize, usize), cfg: &StipConfig) -> Result<usize> {
    cfg.validate()?;
    if pixel.0 >= stack.height() || pixel.1 >= stack.width() {
        return Err(Error::invalid(format!("stip: pixel {pixel:?} outside extent")));
    }
    let phasors = PhasorPlanes::new(stack);
    Ok(phasors.count(pixel.0, pixel.1, cfg))
}

/// STIP counts for a list of pixels over a shared phasor table.
pub fn stip_counts(
    stack: &InterferogramStack,
    pixels: &[(usize, usize)],
    cfg: &StipConfig,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    for &(r, c) in pixels {
        if r >= stack.height() || c >= stack.width() {
            return Err(Error::invalid(format!("stip: pixel ({r}, {c}) outside extent")));
        }
    }
    let phasors = PhasorPlanes::new(stack);
    Ok(pixels.par_iter().map(|&(r, c)| phasors.count(r, c, cfg)).collect())
}

/// PS pixels of a mask partitioned by STIP count, plus the count histogram
/// binned over [0, window area).
#[derive(Clone, Debug)]
pub struct ReliabilitySplit {
    pub reliable: Vec<(usize, usize)>,
    pub unreliable: Vec<(usize, usize)>,
    pub histogram: Vec<u64>,
}

pub fn reliability_split(
    stack: &InterferogramStack,
    mask: &PixelMask,
    cfg: &StipConfig,
) -> Result<ReliabilitySplit> {
    cfg.validate()?;
    if mask.width() != stack.width() || mask.height() != stack.height() {
        return Err(Error::invalid("stip: mask extent does not match stack"));
    }
    let pixels = mask.ps_pixels();
    let counts = stip_counts(stack, &pixels, cfg)?;
    let mut histogram = vec![0u64; cfg.window_area()];
    let mut reliable = Vec::new();
    let mut unreliable = Vec::new();
    for (&px, &n) in pixels.iter().zip(&counts) {
        histogram[n.min(cfg.window_area() - 1)] += 1;
        if n > cfg.reliable_count {
            reliable.push(px);
        } else {
            unreliable.push(px);
        }
    }
    Ok(ReliabilitySplit { reliable, unreliable, histogram })
}

/// Per-mask summary in a comparison report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MaskSummary {
    pub source: String,
    pub ps_count: usize,
    /// Share (%) of this mask's PS pixels in each land cover class, ordered
    /// urban/forest/water/uncropped; sums to 100 for a non-empty mask.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landcover_pct: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vs_truth: Option<Metrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stip_reliable: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stip_unreliable: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stip_histogram: Option<Vec<u64>>,
}

/// Overlap of mask `a` with mask `b`; the percentage is relative to `a`
/// (the first mask of the pair).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairOverlap {
    pub a: String,
    pub b: String,
    pub common: usize,
    pub pct_of_a: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub masks: Vec<MaskSummary>,
    pub pairwise: Vec<PairOverlap>,
}

/// Pairwise overlaps, optional per-class shares and optional truth metrics
/// for a set of masks over one extent.
pub fn compare_masks(
    masks: &[&PixelMask],
    landcover: Option<&[LandcoverClass]>,
    truth: Option<&PixelMask>,
) -> Result<ComparisonReport> {
    if masks.is_empty() {
        return Err(Error::invalid("compare: no masks"));
    }
    let (w, h) = (masks[0].width(), masks[0].height());
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::invalid("compare: mask extents differ"));
        }
    }
    if let Some(lc) = landcover {
        if lc.len() != w * h {
            return Err(Error::invalid("compare: landcover extent mismatch"));
        }
    }
    if let Some(t) = truth {
        if t.width() != w || t.height() != h {
            return Err(Error::invalid("compare: truth extent mismatch"));
        }
    }

    let mut summaries = Vec::new();
    for m in masks {
        let ps_count = m.count();
        let landcover_pct = landcover.map(|lc| {
            let mut counts = [0usize; 4];
            for (p, &ps) in m.labels().iter().enumerate() {
                if ps {
                    counts[lc[p].code() as usize] += 1;
                }
            }
            let total = ps_count.max(1) as f64;
            let mut pct = [0.0; 4];
            for (i, &c) in counts.iter().enumerate() {
                pct[i] = 100.0 * c as f64 / total;
            }
            pct
        });
        let vs_truth = truth.map(|t| {
            let truth_bools: Vec<bool> = t.labels().to_vec();
            metrics(m.labels(), &truth_bools)
        });
        summaries.push(MaskSummary {
            source: m.source().as_str().to_string(),
            ps_count,
            landcover_pct,
            vs_truth,
            stip_reliable: None,
            stip_unreliable: None,
            stip_histogram: None,
        });
    }

    let mut pairwise = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            let common = masks[i]
                .labels()
                .iter()
                .zip(masks[j].labels())
                .filter(|(&a, &b)| a && b)
                .count();
            let denom = masks[i].count();
            pairwise.push(PairOverlap {
                a: masks[i].source().as_str().to_string(),
                b: masks[j].source().as_str().to_string(),
                common,
                pct_of_a: if denom > 0 { 100.0 * common as f64 / denom as f64 } else { 0.0 },
            });
        }
    }
    Ok(ComparisonReport { masks: summaries, pairwise })
}

/// Full report: mask comparison plus per-mask STIP reliability.
pub fn build_report(
    stack: &InterferogramStack,
    masks: &[&PixelMask],
    landcover: Option<&[LandcoverClass]>,
    truth: Option<&PixelMask>,
    stip_cfg: &StipConfig,
) -> Result<ComparisonReport> {
    let mut report = compare_masks(masks, landcover, truth)?;
    for (summary, mask) in report.masks.iter_mut().zip(masks) {
        let split = reliability_split(stack, mask, stip_cfg)?;
        summary.stip_reliable = Some(split.reliable.len());
        summary.stip_unreliable = Some(split.unreliable.len());
        summary.stip_histogram = Some(split.histogram);
    }
    Ok(report)
}

/// Class distribution helper for report tables.
pub fn landcover_class_names() -> [&'static str; 4] {
    [
        LANDCOVER_CLASSES[0].as_str(),
        LANDCOVER_CLASSES[1].as_str(),
        LANDCOVER_CLASSES[2].as_str(),
        LANDCOVER_CLASSES[3].as_str(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::{quantize_phase, wrap, MaskSource, PadPolicy};
    use rand::Rng;

    fn stack_raw(
        w: usize,
        h: usize,
        mut series: impl FnMut(usize, usize, usize) -> f64,
        n: usize,
        quantize: bool,
    ) -> InterferogramStack {
        let plane = w * h;
        let mut phase = vec![0.0; plane * n];
        for i in 0..n {
            for r in 0..h {
                for c in 0..w {
                    let p = wrap(series(i, r, c));
                    phase[i * plane + r * w + c] = if quantize { quantize_phase(p) } else { p };
                }
            }
        }
        InterferogramStack::new(
            w,
            h,
            n,
            (0..n).map(|i| (i + 1) as f64).collect(),
            PadPolicy::Reflect,
            phase,
            vec![1.0; plane * n],
            vec![200.0; plane * n],
            vec![0.001; plane],
        )
        .unwrap()
    }

    fn stack_from_series(
        w: usize,
        h: usize,
        series: impl FnMut(usize, usize, usize) -> f64,
        n: usize,
    ) -> InterferogramStack {
        stack_raw(w, h, series, n, true)
    }

    #[test]
    fn identical_series_full_interior_window_counts_124() {
        let stack = stack_from_series(40, 20, |i, _, _| 0.3 * i as f64, 10);
        let cfg = StipConfig::default();
        let count = stip_count(&stack, (10, 20), &cfg).unwrap();
        assert_eq!(count, 5 * 25 - 1);
    }

    #[test]
    fn corner_pixel_uses_clipped_window() {
        let stack = stack_from_series(40, 20, |i, _, _| 0.3 * i as f64, 10);
        let cfg = StipConfig::default();
        // corner window: 3 rows x 13 cols minus the center
        let count = stip_count(&stack, (0, 0), &cfg).unwrap();
        assert_eq!(count, 3 * 13 - 1);
    }

    #[test]
    fn random_phases_count_zero() {
        let mut rng = crate::seed::rng(17, &[4]);
        let stack = stack_from_series(
            40,
            20,
            move |_, _, _| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            50,
        );
        let cfg = StipConfig::default();
        let pixels: Vec<(usize, usize)> =
            (0..100).map(|k| (2 + (k / 20), 12 + (k % 20))).collect();
        let counts = stip_counts(&stack, &pixels, &cfg).unwrap();
        let zeros = counts.iter().filter(|&&c| c == 0).count();
        assert!(zeros >= 99, "{zeros}/100 random-phase pixels had STIP count 0");
    }

    #[test]
    fn stip_relation_is_symmetric() {
        let mut rng = crate::seed::rng(18, &[4]);
        let stack = stack_from_series(
            16,
            8,
            move |_, _, _| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            6,
        );
        let phasors = PhasorPlanes::new(&stack);
        for a in 0..(16 * 8) {
            for b in (a + 1)..(16 * 8) {
                let ab = phasors.pair_coherence(a, b);
                let ba = phasors.pair_coherence(b, a);
                assert_eq!(ab, ba);
            }
        }
    }

    #[test]
    fn common_phase_screen_cancels() {
        let mut rng = crate::seed::rng(19, &[4]);
        let base: Vec<f64> = (0..6 * 16 * 8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let screens: Vec<f64> = (0..6).map(|i| 0.7 * i as f64 - 1.1).collect();
        let plane = 16 * 8;
        let b1 = base.clone();
        // full f64 phase: the f32 storage quantization would perturb the
        // cancellation at the 1e-7 level
        let s1 = stack_raw(16, 8, move |i, r, c| b1[i * plane + r * 16 + c], 6, false);
        let b2 = base.clone();
        let sc = screens.clone();
        let s2 = stack_raw(16, 8, move |i, r, c| b2[i * plane + r * 16 + c] + sc[i], 6, false);
        let p1 = PhasorPlanes::new(&s1);
        let p2 = PhasorPlanes::new(&s2);
        for a in 0..plane {
            for b in 0..plane {
                if a == b {
                    continue;
                }
                assert!(
                    (p1.pair_coherence(a, b) - p2.pair_coherence(a, b)).abs() <= 1e-12,
                    "pair ({a}, {b})"
                );
            }
        }
    }

    #[test]
    fn reliability_partition_is_exhaustive() {
        let mut rng = crate::seed::rng(20, &[4]);
        let stack = stack_from_series(
            40,
            20,
            move |i, r, c| {
                if (r + c) % 3 == 0 {
                    0.2 * i as f64
                } else {
                    rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)
                }
            },
            12,
        );
        let labels: Vec<bool> = (0..800).map(|p| p % 2 == 0).collect();
        let mask = PixelMask::new(40, 20, MaskSource::Classical, labels).unwrap();
        let cfg = StipConfig::default();
        let split = reliability_split(&stack, &mask, &cfg).unwrap();
        assert_eq!(split.reliable.len() + split.unreliable.len(), mask.count());
        assert_eq!(split.histogram.iter().sum::<u64>(), mask.count() as u64);
        assert_eq!(split.histogram.len(), cfg.window_area());
    }

    #[test]
    fn noise_free_cluster_is_fully_reliable() {
        let stack = stack_from_series(60, 30, |i, _, _| 0.25 * i as f64 - 0.6, 10);
        let labels: Vec<bool> = (0..60 * 30)
            .map(|p| {
                let (r, c) = (p / 60, p % 60);
                (10..20).contains(&r) && (20..40).contains(&c)
            })
            .collect();
        let mask = PixelMask::new(60, 30, MaskSource::Truth, labels).unwrap();
        let split = reliability_split(&stack, &mask, &StipConfig::default()).unwrap();
        assert!(split.unreliable.is_empty());
        assert_eq!(split.reliable.len(), mask.count());
    }

    #[test]
    fn compare_masks_self_and_disjoint() {
        let a = PixelMask::new(8, 4, MaskSource::Classical, (0..32).map(|p| p < 8).collect())
            .unwrap();
        let b = PixelMask::new(8, 4, MaskSource::CnnIss, (0..32).map(|p| p >= 24).collect())
            .unwrap();
        let report = compare_masks(&[&a, &a, &b], None, None).unwrap();
        assert_eq!(report.pairwise[0].common, 8);
        assert_eq!(report.pairwise[0].pct_of_a, 100.0);
        let ab = report
            .pairwise
            .iter()
            .find(|p| p.a == "classical" && p.b == "cnn_iss")
            .unwrap();
        assert_eq!(ab.common, 0);
        assert_eq!(ab.pct_of_a, 0.0);
    }

    #[test]
    fn landcover_percentages_sum_to_100() {
        let mut rng = crate::seed::rng(21, &[4]);
        let labels: Vec<bool> = (0..64 * 64).map(|_| rng.gen::<f64>() < 0.1).collect();
        let mask = PixelMask::new(64, 64, MaskSource::ClstmIss, labels).unwrap();
        let lc: Vec<LandcoverClass> = (0..64 * 64)
            .map(|p| LANDCOVER_CLASSES[p % 4])
            .collect();
        let truth =
            PixelMask::new(64, 64, MaskSource::Truth, (0..64 * 64).map(|p| p % 7 == 0).collect())
                .unwrap();
        let report = compare_masks(&[&mask], Some(&lc), Some(&truth)).unwrap();
        let pct = report.masks[0].landcover_pct.unwrap();
        let total: f64 = pct.iter().sum();
        assert!((total - 100.0).abs() < 0.1, "total {total}");
        assert!(report.masks[0].vs_truth.is_some());
    }

    #[test]
    fn extent_mismatch_rejected() {
        let a = PixelMask::all_false(8, 4, MaskSource::Classical);
        let b = PixelMask::all_false(8, 5, MaskSource::CnnIss);
        assert!(compare_masks(&[&a, &b], None, None).is_err());
    }

    #[test]
    fn stip_config_validation() {
        assert!(StipConfig { window: (4, 25), ..Default::default() }.validate().is_err());
        assert!(StipConfig { reliable_count: 124, ..Default::default() }.validate().is_err());
        assert!(StipConfig::default().validate().is_ok());
    }
}
