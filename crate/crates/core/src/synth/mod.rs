//! Truth-labelled synthetic interferogram stacks.
//!
//! A scene is assembled from the standard wrapped-phase decomposition:
//! deformation + atmosphere + orbit ramp + K·B⊥·Δh_SC + K·B⊥·Δh_SU + noise,
//! wrapped to (−π, π]. Every component plane is kept as ground truth, the
//! per-pixel noise level defines the true PS mask, and generation is a pure
//! function of the config (bitwise reproducible, including across thread
//! counts).
//!
//! Emitted stack planes are quantized to float32-representable values so
//! the binary stack format round-trips bitwise; the float32 rounding of the
//! phase is folded into the stored noise component, which keeps
//! wrap(sum of components) equal to the emitted phase to f64 accuracy.

pub mod field;

pub use field::{autocorrelation, correlated_field};

use crate::error::{Error, Result};
use crate::seed;
use crate::stack::{quantize_phase, wrap, InterferogramStack, MaskSource, PadPolicy, PixelMask};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Mean amplitude of PS pixels; their relative dispersion is ~0.1.
const PS_AMP_MEAN: f64 = 2.0;
/// Rayleigh scale for non-PS amplitudes, chosen for unit mean.
const NONPS_RAYLEIGH_SIGMA: f64 = 0.797_884_560_802_865_4;

/// Land cover classes used for area-wise detection statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandcoverClass {
    Urban,
    Forest,
    Water,
    Uncropped,
}

pub const LANDCOVER_CLASSES: [LandcoverClass; 4] = [
    LandcoverClass::Urban,
    LandcoverClass::Forest,
    LandcoverClass::Water,
    LandcoverClass::Uncropped,
];

impl LandcoverClass {
    pub fn code(&self) -> u8 {
        match self {
            LandcoverClass::Urban => 0,
            LandcoverClass::Forest => 1,
            LandcoverClass::Water => 2,
            LandcoverClass::Uncropped => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(LandcoverClass::Urban),
            1 => Ok(LandcoverClass::Forest),
            2 => Ok(LandcoverClass::Water),
            3 => Ok(LandcoverClass::Uncropped),
            other => Err(Error::invalid(format!("landcover code {other}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LandcoverClass::Urban => "urban",
            LandcoverClass::Forest => "forest",
            LandcoverClass::Water => "water",
            LandcoverClass::Uncropped => "uncropped",
        }
    }
}

/// Rectangles of urban/forest/water painted over an uncropped background,
/// plus per-class multipliers on the PS density. Multipliers are
/// renormalized so the scene-wide expected PS fraction stays at
/// `ps_fraction` regardless of the cover layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandcoverConfig {
    pub rects_per_class: usize,
    pub ps_density_urban: f64,
    pub ps_density_forest: f64,
    pub ps_density_water: f64,
    pub ps_density_uncropped: f64,
}

impl Default for LandcoverConfig {
    fn default() -> Self {
        LandcoverConfig {
            rects_per_class: 3,
            ps_density_urban: 4.0,
            ps_density_forest: 0.25,
            ps_density_water: 0.0,
            ps_density_uncropped: 1.0,
        }
    }
}

impl LandcoverConfig {
    /// Uniform uncropped cover with density 1 everywhere.
    pub fn uniform() -> Self {
        LandcoverConfig {
            rects_per_class: 0,
            ps_density_urban: 1.0,
            ps_density_forest: 1.0,
            ps_density_water: 1.0,
            ps_density_uncropped: 1.0,
        }
    }

    fn density(&self, class: LandcoverClass) -> f64 {
        match class {
            LandcoverClass::Urban => self.ps_density_urban,
            LandcoverClass::Forest => self.ps_density_forest,
            LandcoverClass::Water => self.ps_density_water,
            LandcoverClass::Uncropped => self.ps_density_uncropped,
        }
    }
}

/// Radially symmetric subsidence bowl, scaled linearly in time, with an
/// optional step offset from a given interferogram onward (an earthquake
/// style jump).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformationConfig {
    /// Bowl centre (row, col); scene centre when absent.
    pub bowl_center: Option<(f64, f64)>,
    /// Bowl 1/e radius in pixels; min(extent)/3 when absent.
    pub bowl_radius: Option<f64>,
    /// Peak deformation rate at the bowl centre, radians per interferogram.
    pub velocity: f64,
    /// Step offset (radians at the bowl centre) applied from `step_at_ifg`.
    pub step_magnitude: f64,
    pub step_at_ifg: usize,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        DeformationConfig {
            bowl_center: None,
            bowl_radius: None,
            velocity: 0.25,
            step_magnitude: 0.0,
            step_at_ifg: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_ifgs: usize,
    pub seed: u64,
    pub deformation: DeformationConfig,
    /// Std of the per-interferogram atmospheric phase screen, radians.
    pub atmosphere_std: f64,
    pub atmosphere_corr_len: f64,
    /// Std of the per-interferogram linear orbit ramp across the extent.
    pub orbit_ramp_std: f64,
    /// Std of the spatially correlated DEM error, meters.
    pub dem_error_sc_std: f64,
    pub dem_error_sc_corr_len: f64,
    /// Std of the spatially uncorrelated DEM error, meters.
    pub dem_error_su_std: f64,
    pub ps_fraction: f64,
    pub ps_noise_std: f64,
    pub nonps_noise_std: f64,
    pub landcover: LandcoverConfig,
    /// (min, max) perpendicular baseline magnitude, meters.
    pub baseline_range: (f64, f64),
    /// Height-to-phase factor K, radians per (meter of baseline × meter of
    /// height error). Assigned directly as a constant plane.
    pub k_factor: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 256,
            height: 256,
            n_ifgs: 10,
            seed: 0,
            deformation: DeformationConfig::default(),
            atmosphere_std: 0.4,
            atmosphere_corr_len: 30.0,
            orbit_ramp_std: 0.5,
            dem_error_sc_std: 1.0,
            dem_error_sc_corr_len: 60.0,
            dem_error_su_std: 0.3,
            ps_fraction: 0.05,
            ps_noise_std: 0.1,
            nonps_noise_std: 2.0,
            landcover: LandcoverConfig::default(),
            baseline_range: (100.0, 400.0),
            k_factor: 0.001,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid(format!(
                "scene: degenerate extent {}x{}",
                self.width, self.height
            )));
        }
        if self.n_ifgs < 2 {
            return Err(Error::invalid("scene: n_ifgs < 2"));
        }
        if !(self.ps_fraction > 0.0 && self.ps_fraction < 0.5) {
            return Err(Error::invalid(format!("scene: ps_fraction {} outside (0, 0.5)", self.ps_fraction)));
        }
        let degenerate_noise = self.ps_noise_std == 0.0 && self.nonps_noise_std == 0.0;
        if !(self.ps_noise_std < self.nonps_noise_std || degenerate_noise) {
            return Err(Error::invalid(format!(
                "scene: ps_noise_std {} must be < nonps_noise_std {}",
                self.ps_noise_std, self.nonps_noise_std
            )));
        }
        if !(self.baseline_range.0 > 0.0 && self.baseline_range.0 <= self.baseline_range.1) {
            return Err(Error::invalid("scene: bad baseline_range"));
        }
        if self.atmosphere_std > 0.0 && self.atmosphere_corr_len < 1.0 {
            return Err(Error::invalid("scene: atmosphere_corr_len < 1"));
        }
        if self.dem_error_sc_std > 0.0 && self.dem_error_sc_corr_len < 1.0 {
            return Err(Error::invalid("scene: dem_error_sc_corr_len < 1"));
        }
        for v in [
            self.atmosphere_std,
            self.orbit_ramp_std,
            self.dem_error_sc_std,
            self.dem_error_su_std,
            self.ps_noise_std,
            self.nonps_noise_std,
            self.k_factor,
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("scene: negative or non-finite parameter {v}")));
            }
        }
        Ok(())
    }
}

/// Per-pixel, per-interferogram ground truth for a generated scene. The
/// six phase components satisfy
/// `wrap(defo + atm + orbit + topo_sc + topo_su + noise) == stack phase`
/// at every sample to f64 round-off.
#[derive(Clone, Debug)]
pub struct SceneTruth {
    pub width: usize,
    pub height: usize,
    pub n_ifgs: usize,
    /// Phase components, (n_ifgs, height, width) each, radians.
    pub defo: Vec<f64>,
    pub atmosphere: Vec<f64>,
    pub orbit: Vec<f64>,
    pub topo_sc: Vec<f64>,
    pub topo_su: Vec<f64>,
    pub noise: Vec<f64>,
    /// Spatially correlated DEM error, meters, per pixel.
    pub delta_h_sc: Vec<f64>,
    /// Spatially uncorrelated DEM error, meters, per pixel.
    pub delta_h_su: Vec<f64>,
    /// Generative noise std per pixel, radians.
    pub noise_std: Vec<f64>,
    pub landcover: Vec<LandcoverClass>,
    pub ps_mask: PixelMask,
}

impl SceneTruth {
    fn idx(&self, ifg: usize, row: usize, col: usize) -> usize {
        (ifg * self.height + row) * self.width + col
    }

    /// Spatially uncorrelated part of the true phase for one pixel:
    /// K·B⊥·Δh_SU + noise, per interferogram.
    pub fn su_phase_series(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.n_ifgs)
            .map(|i| self.topo_su[self.idx(i, row, col)] + self.noise[self.idx(i, row, col)])
            .collect()
    }

    /// Spatially correlated part of the true phase for one pixel.
    pub fn sc_phase_series(&self, row: usize, col: usize) -> Vec<f64> {
        (0..self.n_ifgs)
            .map(|i| {
                self.defo[self.idx(i, row, col)]
                    + self.atmosphere[self.idx(i, row, col)]
                    + self.orbit[self.idx(i, row, col)]
                    + self.topo_sc[self.idx(i, row, col)]
            })
            .collect()
    }
}

fn paint_landcover(cfg: &SceneConfig) -> Vec<LandcoverClass> {
    let (w, h) = (cfg.width, cfg.height);
    let mut cover = vec![LandcoverClass::Uncropped; w * h];
    let mut rng = seed::rng(cfg.seed, &[1]);
    for class in [LandcoverClass::Urban, LandcoverClass::Forest, LandcoverClass::Water] {
        for _ in 0..cfg.landcover.rects_per_class {
            let half_w = ((w.min(h) as f64) * rng.gen_range(0.05..0.15)).max(2.0) as usize;
            let half_h = ((w.min(h) as f64) * rng.gen_range(0.05..0.15)).max(2.0) as usize;
            let cr = rng.gen_range(0..h);
            let cc = rng.gen_range(0..w);
            let r0 = cr.saturating_sub(half_h);
            let r1 = (cr + half_h).min(h - 1);
            let c0 = cc.saturating_sub(half_w);
            let c1 = (cc + half_w).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    cover[r * w + c] = class;
                }
            }
        }
    }
    cover
}

/// Generate a stack and its ground truth from a config. Deterministic:
/// the same config yields bitwise identical output.
pub fn generate(cfg: &SceneConfig) -> Result<(InterferogramStack, SceneTruth)> {
    cfg.validate()?;
    let (w, h, n) = (cfg.width, cfg.height, cfg.n_ifgs);
    let plane = w * h;

    let landcover = paint_landcover(cfg);

    // PS assignment, renormalized so the expected PS count is
    // ps_fraction * plane for any cover layout.
    let mut density: Vec<f64> = landcover.iter().map(|&c| cfg.landcover.density(c)).collect();
    let mean_density = density.iter().sum::<f64>() / plane as f64;
    if mean_density <= 0.0 {
        return Err(Error::invalid("scene: landcover PS densities are all zero"));
    }
    for d in &mut density {
        *d = (*d / mean_density * cfg.ps_fraction).min(0.95);
    }
    let mut rng_ps = seed::rng(cfg.seed, &[2]);
    let is_ps: Vec<bool> = density.iter().map(|&p| rng_ps.gen::<f64>() < p).collect();
    let noise_std: Vec<f64> = is_ps
        .iter()
        .map(|&ps| if ps { cfg.ps_noise_std } else { cfg.nonps_noise_std })
        .collect();

    // Per-ifg constant perpendicular baselines; stored planes are f32
    // quantized before the phase is formed so file round trips agree with
    // the truth exactly.
    let mut rng_b = seed::rng(cfg.seed, &[3]);
    let baselines: Vec<f64> = (0..n)
        .map(|_| rng_b.gen_range(cfg.baseline_range.0..=cfg.baseline_range.1) as f32 as f64)
        .collect();
    let k = cfg.k_factor as f32 as f64;

    let mut rng_sc = seed::rng(cfg.seed, &[4]);
    let delta_h_sc =
        correlated_field(w, h, cfg.dem_error_sc_std, cfg.dem_error_sc_corr_len.max(1.0), &mut rng_sc)?;
    let mut rng_su = seed::rng(cfg.seed, &[5]);
    let delta_h_su: Vec<f64> = (0..plane)
        .map(|_| cfg.dem_error_su_std * rng_su.sample::<f64, _>(StandardNormal))
        .collect();

    let mut atmosphere = vec![0.0; plane * n];
    for i in 0..n {
        let mut rng_atm = seed::rng(cfg.seed, &[6, i as u64]);
        let f = correlated_field(w, h, cfg.atmosphere_std, cfg.atmosphere_corr_len.max(1.0), &mut rng_atm)?;
        atmosphere[i * plane..(i + 1) * plane].copy_from_slice(&f);
    }

    let mut orbit = vec![0.0; plane * n];
    let mut rng_orb = seed::rng(cfg.seed, &[7]);
    for i in 0..n {
        let a = cfg.orbit_ramp_std * rng_orb.sample::<f64, _>(StandardNormal);
        let b = cfg.orbit_ramp_std * rng_orb.sample::<f64, _>(StandardNormal);
        for r in 0..h {
            for c in 0..w {
                orbit[i * plane + r * w + c] = a * (c as f64 / (w - 1) as f64 - 0.5)
                    + b * (r as f64 / (h - 1) as f64 - 0.5);
            }
        }
    }

    let bowl_center = cfg.deformation.bowl_center.unwrap_or(((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0));
    let bowl_radius = cfg.deformation.bowl_radius.unwrap_or(w.min(h) as f64 / 3.0).max(1.0);
    let bowl: Vec<f64> = (0..plane)
        .map(|p| {
            let (r, c) = ((p / w) as f64, (p % w) as f64);
            let d2 = (r - bowl_center.0).powi(2) + (c - bowl_center.1).powi(2);
            (-d2 / (bowl_radius * bowl_radius)).exp()
        })
        .collect();
    let mut defo = vec![0.0; plane * n];
    for i in 0..n {
        let step = if cfg.deformation.step_magnitude != 0.0 && i >= cfg.deformation.step_at_ifg {
            cfg.deformation.step_magnitude
        } else {
            0.0
        };
        let center_amp = cfg.deformation.velocity * (i + 1) as f64 + step;
        for p in 0..plane {
            defo[i * plane + p] = center_amp * bowl[p];
        }
    }

    let mut rng_noise = seed::rng(cfg.seed, &[8]);
    let mut rng_amp = seed::rng(cfg.seed, &[9]);

    let mut topo_sc = vec![0.0; plane * n];
    let mut topo_su = vec![0.0; plane * n];
    let mut noise = vec![0.0; plane * n];
    let mut phase = vec![0.0; plane * n];
    let mut amplitude = vec![0.0; plane * n];
    for i in 0..n {
        let kb = k * baselines[i];
        for p in 0..plane {
            let idx = i * plane + p;
            topo_sc[idx] = kb * delta_h_sc[p];
            topo_su[idx] = kb * delta_h_su[p];
            let eps: f64 = rng_noise.sample(StandardNormal);
            let drawn = noise_std[p] * eps;
            let raw = defo[idx] + atmosphere[idx] + orbit[idx] + topo_sc[idx] + topo_su[idx] + drawn;
            let wrapped = wrap(raw);
            let q = quantize_phase(wrapped);
            phase[idx] = q;
            // fold the f32 rounding into the noise component so the truth
            // reconstructs the emitted phase exactly
            noise[idx] = drawn + (q - wrapped);

            let a = if is_ps[p] {
                if cfg.ps_noise_std > 0.0 {
                    (PS_AMP_MEAN + 0.1 * PS_AMP_MEAN * rng_amp.sample::<f64, _>(StandardNormal))
                        .max(0.0)
                } else {
                    PS_AMP_MEAN
                }
            } else if cfg.nonps_noise_std > 0.0 {
                let u: f64 = rng_amp.gen_range(f64::MIN_POSITIVE..1.0);
                NONPS_RAYLEIGH_SIGMA * (-2.0 * u.ln()).sqrt()
            } else {
                1.0
            };
            amplitude[idx] = a as f32 as f64;
        }
    }

    let baseline_planes: Vec<f64> = (0..n)
        .flat_map(|i| std::iter::repeat(baselines[i]).take(plane))
        .collect();
    let k_plane = vec![k; plane];

    let stack = InterferogramStack::new(
        w,
        h,
        n,
        (0..n).map(|i| 12.0 * (i + 1) as f64).collect(),
        PadPolicy::Reflect,
        phase,
        amplitude,
        baseline_planes,
        k_plane,
    )?;
    let ps_mask = PixelMask::new(w, h, MaskSource::Truth, is_ps)?;
    let truth = SceneTruth {
        width: w,
        height: h,
        n_ifgs: n,
        defo,
        atmosphere,
        orbit,
        topo_sc,
        topo_su,
        noise,
        delta_h_sc,
        delta_h_su,
        noise_std,
        landcover,
        ps_mask,
    };
    Ok((stack, truth))
}
