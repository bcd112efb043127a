//! Temporally structured initial noise.
//!
//! Frame 0 is plain Gaussian noise. Each later frame pulls the previous
//! frame's noise through the camera warp, refreshes pixels whose source falls
//! outside the image, and blends with fresh noise:
//! `z_t = √λ · warp(z_{t-1}) + √(1-λ) · ε_t`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::{build_warp_field, CameraTemplate, TransitionField};
use crate::diffusion::SamplerState;
use crate::tensor::{gaussian_grid, GridShape, LatentGrid, RngStream};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpMode {
    /// Copy the value at the rounded source coordinate.
    #[default]
    Nearest,
    /// Bilinear weights divided by `√Σw²` so unit variance survives.
    BilinearRenormalized,
}

impl fmt::Display for WarpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarpMode::Nearest => "nearest",
            WarpMode::BilinearRenormalized => "bilinear",
        })
    }
}

impl FromStr for WarpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nearest" => Ok(WarpMode::Nearest),
            "bilinear" | "bilinear_renormalized" => Ok(WarpMode::BilinearRenormalized),
            other => Err(Error::Parse(format!("unknown warp mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub lambda: f64,
    pub warp_mode: WarpMode,
}

impl BlendConfig {
    pub fn new(lambda: f64, warp_mode: WarpMode) -> Result<Self> {
        let cfg = Self { lambda, warp_mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            warp_mode: WarpMode::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseProvenance {
    pub template: String,
    pub lambda: f64,
    pub seed: u64,
    pub warp_mode: WarpMode,
}

/// The `z_1 … z_T` stack plus how it was made.
#[derive(Debug, Clone)]
pub struct StructuredNoise {
    pub grid: LatentGrid,
    pub provenance: NoiseProvenance,
}

/// Height, width and channel count of one frame slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FrameDims {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<GridShape> for FrameDims {
    fn from(s: GridShape) -> Self {
        Self {
            height: s.height,
            width: s.width,
            channels: s.channels,
        }
    }
}

/// Pulls `prev` through one transition field.
///
/// Out-of-bounds pixels get fresh per-channel draws from `rng`, consumed in
/// raster order.
pub fn warp_noise(
    prev: &[f32],
    dims: FrameDims,
    field: &TransitionField,
    mode: WarpMode,
    rng: &mut RngStream,
) -> Result<Vec<f32>> {
    let pixels = dims.height * dims.width;
    if prev.len() != dims.len() || field.in_bounds.len() != pixels {
        return Err(Error::Shape(format!(
            "frame of {} values / field of {} pixels for {dims:?}",
            prev.len(),
            field.in_bounds.len()
        )));
    }
    let c = dims.channels;
    let mut out = vec![0.0f32; prev.len()];
    for p in 0..pixels {
        let dst = &mut out[p * c..(p + 1) * c];
        if !field.in_bounds[p] {
            rng.fill_gaussian(dst);
            continue;
        }
        let (sx, sy) = (field.source_x[p], field.source_y[p]);
        match mode {
            WarpMode::Nearest => {
                let src = (sy.round() as usize * dims.width + sx.round() as usize) * c;
                dst.copy_from_slice(&prev[src..src + c]);
            }
            WarpMode::BilinearRenormalized => {
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as usize, y0 as usize);
                let x1 = (x0 + 1).min(dims.width - 1);
                let y1 = (y0 + 1).min(dims.height - 1);
                let taps = [
                    ((1.0 - fx) * (1.0 - fy), y0, x0),
                    (fx * (1.0 - fy), y0, x1),
                    ((1.0 - fx) * fy, y1, x0),
                    (fx * fy, y1, x1),
                ];
                let norm = taps.iter().map(|t| t.0 * t.0).sum::<f64>().sqrt();
                for (ch, d) in dst.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for &(w, y, x) in &taps {
                        if w != 0.0 {
                            acc += w * f64::from(prev[(y * dims.width + x) * c + ch]);
                        }
                    }
                    *d = (acc / norm) as f32;
                }
            }
        }
    }
    Ok(out)
}

/// `√λ · warped + √(1-λ) · ε` with `ε` drawn from `rng` in element order.
///
/// `λ = 1` returns the input unchanged and `λ = 0` returns `ε` exactly.
pub fn blend(warped: &[f32], cfg: &BlendConfig, rng: &mut RngStream) -> Result<Vec<f32>> {
    cfg.validate()?;
    if cfg.lambda == 1.0 {
        return Ok(warped.to_vec());
    }
    let mut eps = vec![0.0f32; warped.len()];
    rng.fill_gaussian(&mut eps);
    if cfg.lambda == 0.0 {
        return Ok(eps);
    }
    let (a, b) = (cfg.lambda.sqrt(), (1.0 - cfg.lambda).sqrt());
    Ok(warped
        .iter()
        .zip(&eps)
        .map(|(&w, &e)| (a * f64::from(w) + b * f64::from(e)) as f32)
        .collect())
}

/// Builds the full noise stack for `template`.
///
/// Streams: frame 0 uses `("init", 0)`, frame `t ≥ 1` uses `("boundary", t)`
/// for refreshed pixels and `("blend", t)` for blending noise.
pub fn generate_camera_noise(
    template: &CameraTemplate,
    shape: GridShape,
    cfg: &BlendConfig,
    seed: u64,
) -> Result<StructuredNoise> {
    shape.validate()?;
    cfg.validate()?;
    if template.frames() != shape.frames {
        return Err(Error::Shape(format!(
            "template spans {} frames, shape {shape} has {}",
            template.frames(),
            shape.frames
        )));
    }
    let field = build_warp_field(template, (shape.frames, shape.height, shape.width))?;
    let first = gaussian_grid(GridShape { frames: 1, ..shape }, seed)?.into_vec();
    let dims = FrameDims::from(shape);
    let mut data = Vec::with_capacity(shape.len());
    data.extend_from_slice(&first);
    for t in 1..shape.frames {
        let prev = &data[(t - 1) * dims.len()..t * dims.len()];
        let mut boundary = RngStream::new(seed, "boundary", t as u64);
        let warped = warp_noise(prev, dims, field.into_frame(t), cfg.warp_mode, &mut boundary)?;
        let mut fresh = RngStream::new(seed, "blend", t as u64);
        let z = blend(&warped, cfg, &mut fresh)?;
        data.extend_from_slice(&z);
    }
    Ok(StructuredNoise {
        grid: LatentGrid::from_vec(shape, data)?,
        provenance: NoiseProvenance {
            template: template.summary(),
            lambda: cfg.lambda,
            seed,
            warp_mode: cfg.warp_mode,
        },
    })
}

/// Pearson correlation between noise values `k` frames apart along warp
/// trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCorrelation {
    pub lag: usize,
    pub pairs: usize,
    pub correlation: f64,
}

/// Follows every pixel of frames `k..T` back `k` transitions through the
/// rounded warp sources, keeping only paths that stay in bounds, and
/// correlates the endpoint values channel by channel.
pub fn trajectory_correlation(noise: &LatentGrid, template: &CameraTemplate, k: usize) -> Result<TrajectoryCorrelation> {
    let shape = noise.shape();
    if k == 0 || k >= shape.frames {
        return Err(Error::Validation(format!("lag {k} outside 1..{}", shape.frames)));
    }
    let field = build_warp_field(template, (shape.frames, shape.height, shape.width))?;
    let (h, w) = (shape.height, shape.width);
    let (mut n, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
    for t in k..shape.frames {
        for y in 0..h {
            'pixel: for x in 0..w {
                let (mut py, mut px) = (y, x);
                for s in (t - k + 1..=t).rev() {
                    let tr = &field.transitions[s - 1];
                    let i = py * w + px;
                    if !tr.in_bounds[i] {
                        continue 'pixel;
                    }
                    px = tr.source_x[i].round() as usize;
                    py = tr.source_y[i].round() as usize;
                }
                for c in 0..shape.channels {
                    let a = f64::from(noise.get(t, y, x, c));
                    let b = f64::from(noise.get(t - k, py, px, c));
                    n += 1;
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
        }
    }
    if n < 2 {
        return Err(Error::Validation(format!("only {n} aligned pairs at lag {k}")));
    }
    let nf = n as f64;
    let cov = sab / nf - (sa / nf) * (sb / nf);
    let va = saa / nf - (sa / nf).powi(2);
    let vb = sbb / nf - (sb / nf).powi(2);
    Ok(TrajectoryCorrelation {
        lag: k,
        pairs: n,
        correlation: cov / (va * vb).sqrt(),
    })
}

/// Replaces the sampler's initial latent with `noise`.
///
/// The noise is consumed; the sampler only ever sees it as its starting
/// point.
pub fn inject_initial_noise(sampler: SamplerState, noise: StructuredNoise) -> Result<SamplerState> {
    sampler.with_initial(noise.grid)
}
