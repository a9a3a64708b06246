//! Data model for co-registered interferogram stacks: wrapped-phase
//! arithmetic, patch chunking/stitching and the binary file formats.
//!
//! A stack holds, per interferogram, a wrapped phase plane, an amplitude
//! plane and a perpendicular-baseline plane, plus one height-to-phase
//! factor plane shared by all interferograms. All planes are stored
//! row-major as `f64`; the on-disk payload is float32, so stacks meant to
//! round-trip through files are quantized to float32-representable values
//! at construction time (the synthetic generator does this).

pub mod format;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Wrap an angle to the half-open interval (−π, π]. The −π boundary maps
/// to +π. NaN propagates; use [`try_wrap`] when the input is untrusted.
pub fn wrap(angle: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = angle.rem_euclid(two_pi); // [0, 2π)
    if r > PI {
        r -= two_pi;
    }
    r
}

/// Checked variant of [`wrap`]; rejects non-finite input.
pub fn try_wrap(angle: f64) -> Result<f64> {
    if !angle.is_finite() {
        return Err(Error::invalid(format!("wrap: non-finite angle {angle}")));
    }
    Ok(wrap(angle))
}

/// Largest f64 that is exactly representable in f32 and still ≤ π.
pub(crate) fn f32_phase_hi() -> f64 {
    let mut v = PI as f32;
    if (v as f64) > PI {
        v = f32::from_bits(v.to_bits() - 1);
    }
    v as f64
}

/// Quantize a wrapped phase to an f32-representable f64 without leaving
/// (−π, π]. Rounding at the ±π boundary is clamped inward.
pub(crate) fn quantize_phase(p: f64) -> f64 {
    let q = p as f32 as f64;
    let hi = f32_phase_hi();
    if q > PI {
        hi
    } else if q <= -PI {
        -hi
    } else {
        q
    }
}

/// Padding rule for edge patches whose extent is not a multiple of the
/// patch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    /// Mirror about the edge without repeating the edge sample.
    #[default]
    Reflect,
    Zero,
}

/// Origin of a PS/non-PS mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Truth,
    Classical,
    CnnIss,
    ClstmIss,
}

impl MaskSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            MaskSource::Truth => "truth",
            MaskSource::Classical => "classical",
            MaskSource::CnnIss => "cnn_iss",
            MaskSource::ClstmIss => "clstm_iss",
        }
    }
}

/// Binary PS/non-PS label image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    source: MaskSource,
    labels: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, source: MaskSource, labels: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask: zero extent"));
        }
        if labels.len() != width * height {
            return Err(Error::invalid(format!(
                "mask: {} labels for {}x{} extent",
                labels.len(),
                width,
                height
            )));
        }
        Ok(PixelMask { width, height, source, labels })
    }

    pub fn all_false(width: usize, height: usize, source: MaskSource) -> Self {
        PixelMask { width, height, source, labels: vec![false; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn source(&self) -> MaskSource {
        self.source
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.labels[row * self.width + col]
    }

    /// Number of PS pixels.
    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&b| b).count()
    }

    /// Row-major (row, col) coordinates of all PS pixels.
    pub fn ps_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                if self.labels[r * self.width + c] {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// A single-band float image, row-major. Used for amplitude-dispersion
/// planes, coherence maps and stitched probability images.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "plane: {} values for {}x{} extent",
                data.len(),
                width,
                height
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Plane { width, height, data: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }
}

/// Co-registered stack of wrapped interferograms with amplitude,
/// perpendicular-baseline and height-to-phase factor planes.
///
/// Immutable after construction; cheap to share read-only across workers.
#[derive(Clone, Debug, PartialEq)]
pub struct InterferogramStack {
    width: usize,
    height: usize,
    n_ifgs: usize,
    acquisition_days: Vec<f64>,
    pad_policy: PadPolicy,
    phase: Vec<f64>,
    amplitude: Vec<f64>,
    perp_baseline: Vec<f64>,
    k_factor: Vec<f64>,
}

impl InterferogramStack {
    /// Build a stack from raw planes. `phase`, `amplitude` and
    /// `perp_baseline` are (n_ifgs, height, width) interferogram-major,
    /// row-major; `k_factor` is a single (height, width) plane.
    pub fn new(
        width: usize,
        height: usize,
        n_ifgs: usize,
        acquisition_days: Vec<f64>,
        pad_policy: PadPolicy,
        phase: Vec<f64>,
        amplitude: Vec<f64>,
        perp_baseline: Vec<f64>,
        k_factor: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("stack: zero extent"));
        }
        if n_ifgs < 2 {
            return Err(Error::invalid(format!("stack: n_ifgs {n_ifgs} < 2")));
        }
        let plane = width
            .checked_mul(height)
            .ok_or_else(|| Error::invalid("stack: extent overflow"))?;
        let volume = plane
            .checked_mul(n_ifgs)
            .ok_or_else(|| Error::invalid("stack: extent overflow"))?;
        if phase.len() != volume || amplitude.len() != volume || perp_baseline.len() != volume {
            return Err(Error::invalid("stack: plane length mismatch"));
        }
        if k_factor.len() != plane {
            return Err(Error::invalid("stack: k_factor length mismatch"));
        }
        if acquisition_days.len() != n_ifgs {
            return Err(Error::invalid("stack: acquisition_days length mismatch"));
        }
        for &p in &phase {
            if !p.is_finite() || p <= -PI || p > PI {
                return Err(Error::invalid(format!("stack: phase {p} outside (-pi, pi]")));
            }
        }
        for &a in &amplitude {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::invalid(format!("stack: amplitude {a} invalid")));
            }
        }
        if perp_baseline.iter().chain(k_factor.iter()).chain(acquisition_days.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("stack: non-finite plane value"));
        }
        Ok(InterferogramStack {
            width,
            height,
            n_ifgs,
            acquisition_days,
            pad_policy,
            phase,
            amplitude,
            perp_baseline,
            k_factor,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_ifgs(&self) -> usize {
        self.n_ifgs
    }

    pub fn acquisition_days(&self) -> &[f64] {
        &self.acquisition_days
    }

    pub fn pad_policy(&self) -> PadPolicy {
        self.pad_policy
    }

    fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn phase(&self, ifg: usize, row: usize, col: usize) -> f64 {
        self.phase[(ifg * self.height + row) * self.width + col]
    }

    pub fn amplitude(&self, ifg: usize, row: usize, col: usize) -> f64 {
        self.amplitude[(ifg * self.height + row) * self.width + col]
    }

    pub fn perp_baseline(&self, ifg: usize, row: usize, col: usize) -> f64 {
        self.perp_baseline[(ifg * self.height + row) * self.width + col]
    }

    pub fn k_factor(&self, row: usize, col: usize) -> f64 {
        self.k_factor[row * self.width + col]
    }

    pub fn phase_plane(&self, ifg: usize) -> &[f64] {
        &self.phase[ifg * self.plane_len()..(ifg + 1) * self.plane_len()]
    }

    pub fn amplitude_plane(&self, ifg: usize) -> &[f64] {
        &self.amplitude[ifg * self.plane_len()..(ifg + 1) * self.plane_len()]
    }

    pub fn perp_baseline_plane(&self, ifg: usize) -> &[f64] {
        &self.perp_baseline[ifg * self.plane_len()..(ifg + 1) * self.plane_len()]
    }

    pub fn k_factor_plane(&self) -> &[f64] {
        &self.k_factor
    }

    /// Phase time series of one pixel across all interferograms.
    pub fn phase_series(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.n_ifgs).map(|i| self.phase(i, row, col)).collect()
    }

    pub fn amplitude_series(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.n_ifgs).map(|i| self.amplitude(i, row, col)).collect()
    }

    pub fn perp_baseline_series(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.n_ifgs).map(|i| self.perp_baseline(i, row, col)).collect()
    }
}

/// One tile of a chunked stack. `valid_rows`/`valid_cols` give the extent
/// of real data; anything beyond is padding and is discarded on stitch.
#[derive(Clone, Debug)]
pub struct Patch {
    pub origin_row: usize,
    pub origin_col: usize,
    pub valid_rows: usize,
    pub valid_cols: usize,
    pub stack: InterferogramStack,
}

impl Patch {
    pub fn is_padded(&self) -> bool {
        self.valid_rows < self.stack.height() || self.valid_cols < self.stack.width()
    }
}

/// Result of chunking a stack into fixed-size tiles. Tiles cover every
/// source pixel exactly once; stitching reproduces the source extent.
#[derive(Clone, Debug)]
pub struct PatchSet {
    patch_size: usize,
    pad_policy: PadPolicy,
    source_width: usize,
    source_height: usize,
    patches: Vec<Patch>,
}

impl PatchSet {
    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn pad_policy(&self) -> PadPolicy {
        self.pad_policy
    }

    pub fn source_width(&self) -> usize {
        self.source_width
    }

    pub fn source_height(&self) -> usize {
        self.source_height
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Map an out-of-range index into a valid one according to the pad policy.
/// Returns None for zero padding (caller substitutes 0).
fn pad_index(i: usize, len: usize, policy: PadPolicy) -> Option<usize> {
    if i < len {
        return Some(i);
    }
    match policy {
        // Mirror without repeating the edge sample: [a b c] -> a b c b a.
        // Chunking guarantees the pad width is < len, so one fold suffices.
        PadPolicy::Reflect => Some(2 * (len - 1) - i),
        PadPolicy::Zero => None,
    }
}

/// Split a stack into `patch_size`-square tiles. Edge tiles are padded per
/// `stack.pad_policy()` and flagged with their valid extent.
pub fn chunk(stack: &InterferogramStack, patch_size: usize) -> Result<PatchSet> {
    if patch_size < 8 {
        return Err(Error::invalid(format!("chunk: patch_size {patch_size} < 8")));
    }
    if patch_size > stack.width().min(stack.height()) {
        return Err(Error::invalid(format!(
            "chunk: patch_size {} exceeds extent {}x{}",
            patch_size,
            stack.width(),
            stack.height()
        )));
    }
    let policy = stack.pad_policy();
    let n_rows = stack.height().div_ceil(patch_size);
    let n_cols = stack.width().div_ceil(patch_size);
    let mut patches = Vec::with_capacity(n_rows * n_cols);
    for pr in 0..n_rows {
        for pc in 0..n_cols {
            let origin_row = pr * patch_size;
            let origin_col = pc * patch_size;
            let valid_rows = patch_size.min(stack.height() - origin_row);
            let valid_cols = patch_size.min(stack.width() - origin_col);

            let plane = patch_size * patch_size;
            let mut phase = vec![0.0; plane * stack.n_ifgs()];
            let mut amplitude = vec![0.0; plane * stack.n_ifgs()];
            let mut baseline = vec![0.0; plane * stack.n_ifgs()];
            let mut k_factor = vec![0.0; plane];
            for r in 0..patch_size {
                let src_r = pad_index(origin_row + r, stack.height(), policy);
                for c in 0..patch_size {
                    let src_c = pad_index(origin_col + c, stack.width(), policy);
                    let dst2 = r * patch_size + c;
                    match (src_r, src_c) {
                        (Some(sr), Some(sc)) => {
                            k_factor[dst2] = stack.k_factor(sr, sc);
                            for i in 0..stack.n_ifgs() {
                                let dst3 = i * plane + dst2;
                                phase[dst3] = stack.phase(i, sr, sc);
                                amplitude[dst3] = stack.amplitude(i, sr, sc);
                                baseline[dst3] = stack.perp_baseline(i, sr, sc);
                            }
                        }
                        _ => {} // zero padding
                    }
                }
            }
            let sub = InterferogramStack::new(
                patch_size,
                patch_size,
                stack.n_ifgs(),
                stack.acquisition_days().to_vec(),
                policy,
                phase,
                amplitude,
                baseline,
                k_factor,
            )?;
            patches.push(Patch { origin_row, origin_col, valid_rows, valid_cols, stack: sub });
        }
    }
    Ok(PatchSet {
        patch_size,
        pad_policy: policy,
        source_width: stack.width(),
        source_height: stack.height(),
        patches,
    })
}

/// Reassemble per-patch prediction images into a full-extent image,
/// discarding padded regions. Each prediction must be patch_size².
pub fn stitch(predictions: &[Plane], patchset: &PatchSet) -> Result<Plane> {
    if predictions.len() != patchset.len() {
        return Err(Error::invalid(format!(
            "stitch: {} predictions for {} patches",
            predictions.len(),
            patchset.len()
        )));
    }
    let ps = patchset.patch_size();
    let mut out = Plane::zeros(patchset.source_width(), patchset.source_height());
    for (pred, patch) in predictions.iter().zip(patchset.patches()) {
        if pred.width() != ps || pred.height() != ps {
            return Err(Error::invalid(format!(
                "stitch: prediction {}x{} does not match patch size {}",
                pred.width(),
                pred.height(),
                ps
            )));
        }
        for r in 0..patch.valid_rows {
            for c in 0..patch.valid_cols {
                out.set(patch.origin_row + r, patch.origin_col + c, pred.get(r, c));
            }
        }
    }
    Ok(out)
}
