//! Moving-sinusoid training videos.
//!
//! Each channel is a sum of plane waves with integer spatial frequencies, so
//! the pattern tiles the frame exactly and pans are circular shifts. Frame
//! `t` samples the pattern at the backward-mapped coordinates of the
//! category's camera template, which keeps the data on the same sign
//! convention as the structured noise.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::sampler::Conditioning;
use crate::attention::ShotLayout;
use crate::camera::{template_from_category, CameraIntrinsics, CameraTemplate, MotionCategory};
use crate::prompt::{embed_prompt, extend_prompt, ExtensionMode, Prompt, DEFAULT_EMBED_DIM};
use crate::tensor::{GridShape, LatentGrid, RngStream};
use crate::{Error, Result};

pub const PAN_SPEED: f64 = 1.0;
pub const ZOOM_SPEED: f64 = 0.05;
const WAVES_PER_CHANNEL: usize = 2;
const MAX_FREQUENCY: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDatasetConfig {
    pub shape: GridShape,
    /// Frames per shot; must divide the frame count.
    pub frames_per_shot: usize,
    pub samples: usize,
    pub seed: u64,
}

impl ToyDatasetConfig {
    pub fn new(shape: GridShape, frames_per_shot: usize, samples: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            shape,
            frames_per_shot,
            samples,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.frames_per_shot == 0 || self.shape.frames % self.frames_per_shot != 0 {
            return Err(Error::Config(format!(
                "frames_per_shot {} must divide {} frames",
                self.frames_per_shot, self.shape.frames
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<ShotLayout> {
        ShotLayout::uniform(
            self.shape.frames / self.frames_per_shot,
            self.frames_per_shot,
            self.shape.pixels_per_frame(),
        )
    }
}

/// The fixed prompt used for a category's training videos.
pub fn canned_prompt(m: MotionCategory) -> &'static str {
    match m {
        MotionCategory::Left => "the camera pans left across rolling stripes",
        MotionCategory::Right => "the camera pans right across rolling stripes",
        MotionCategory::Upward => "the camera tilts up over rolling stripes",
        MotionCategory::Downward => "the camera tilts down over rolling stripes",
        MotionCategory::ZoomIn => "the camera zooms in on rolling stripes",
        MotionCategory::ZoomOut => "the camera zooms out from rolling stripes",
        MotionCategory::Static => "a still shot of rolling stripes",
    }
}

/// Embeds the category prompt, offline-extended, once per shot.
pub fn category_conditioning(m: MotionCategory, shots: usize) -> Result<Conditioning> {
    let extended = extend_prompt(&Prompt::new(canned_prompt(m))?, &ExtensionMode::Offline)?;
    let e = embed_prompt(&extended, DEFAULT_EMBED_DIM)?;
    Ok(Conditioning::new(vec![vec![e]; shots]))
}

/// The default speed for a category: 1 px/frame for pans.
pub fn category_speed(m: MotionCategory) -> f64 {
    match m {
        MotionCategory::Static => 0.0,
        MotionCategory::ZoomIn | MotionCategory::ZoomOut => ZOOM_SPEED,
        _ => PAN_SPEED,
    }
}

pub fn category_template(m: MotionCategory, shape: GridShape) -> Result<CameraTemplate> {
    let (h, w) = (shape.height, shape.width);
    template_from_category(m, category_speed(m), shape.frames, &CameraIntrinsics::default_for(h, w), (h, w))
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
pub struct ToySample {
    pub category: MotionCategory,
    pub video: LatentGrid,
    pub conditioning: Conditioning,
}

/// A deterministic, indexable stream of toy samples.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    cfg: ToyDatasetConfig,
    layout: ShotLayout,
    templates: Vec<CameraTemplate>,
    conditioning: Vec<Conditioning>,
}

pub fn make_toy_dataset(cfg: ToyDatasetConfig) -> Result<ToyDataset> {
    cfg.validate()?;
    let layout = cfg.layout()?;
    let templates = MotionCategory::ALL
        .iter()
        .map(|&m| category_template(m, cfg.shape))
        .collect::<Result<_>>()?;
    let conditioning = MotionCategory::ALL
        .iter()
        .map(|&m| category_conditioning(m, layout.num_shots()))
        .collect::<Result<_>>()?;
    Ok(ToyDataset {
        cfg,
        layout,
        templates,
        conditioning,
    })
}

impl ToyDataset {
    pub fn config(&self) -> &ToyDatasetConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ShotLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.cfg.samples
    }

    pub fn is_empty(&self) -> bool {
        self.cfg.samples == 0
    }

    /// Sample `index`, a pure function of the seed and index.
    pub fn sample(&self, index: usize) -> Result<ToySample> {
        let mut rng = RngStream::new(self.cfg.seed, "toy-sample", index as u64);
        let k = rng.below(MotionCategory::ALL.len());
        self.sample_with_category(MotionCategory::ALL[k], &mut rng)
    }

    /// A sample of a chosen category, drawn from stream ("toy-fixed", index).
    pub fn sample_of(&self, category: MotionCategory, index: usize) -> Result<ToySample> {
        let mut rng = RngStream::new(self.cfg.seed, "toy-fixed", index as u64);
        self.sample_with_category(category, &mut rng)
    }

    fn sample_with_category(&self, category: MotionCategory, rng: &mut RngStream) -> Result<ToySample> {
        let k = MotionCategory::ALL.iter().position(|&m| m == category).expect("known category");
        let shape = self.cfg.shape;
        let waves: Vec<Vec<Wave>> = (0..shape.channels)
            .map(|_| (0..WAVES_PER_CHANNEL).map(|_| draw_wave(rng)).collect())
            .collect();
        let video = render(&waves, &self.templates[k], shape)?;
        Ok(ToySample {
            category,
            video,
            conditioning: self.conditioning[k].clone(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<ToySample>> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }
}

fn draw_wave(rng: &mut RngStream) -> Wave {
    let span = (2 * MAX_FREQUENCY + 1) as u64;
    loop {
        let fx = rng.below(span as usize) as i64 - MAX_FREQUENCY;
        let fy = rng.below(span as usize) as i64 - MAX_FREQUENCY;
        if fx != 0 || fy != 0 {
            return Wave {
                fx: fx as f64,
                fy: fy as f64,
                phase: rng.uniform() * TAU,
            };
        }
    }
}

fn render(waves: &[Vec<Wave>], template: &CameraTemplate, shape: GridShape) -> Result<LatentGrid> {
    let (h, w) = (shape.height as f64, shape.width as f64);
    // Unit variance per channel: each wave contributes a²/2.
    let amp = (2.0 / WAVES_PER_CHANNEL as f64).sqrt();
    let mut data = Vec::with_capacity(shape.len());
    for t in 0..shape.frames {
        let back = template.compose(0, t);
        for y in 0..shape.height {
            for x in 0..shape.width {
                let (sx, sy) = back.apply(x as f64, y as f64);
                for channel in waves {
                    let v: f64 = channel
                        .iter()
                        .map(|wv| amp * (TAU * (wv.fx * sx / w + wv.fy * sy / h) + wv.phase).sin())
                        .sum();
                    data.push(v as f32);
                }
            }
        }
    }
    LatentGrid::from_vec(shape, data)
}
