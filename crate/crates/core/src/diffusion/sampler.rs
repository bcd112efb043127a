use serde::{Deserialize, Serialize};

use super::model::{text_tokens, DenoiserParams};
use super::schedule::DiffusionSchedule;
use crate::attention::ShotLayout;
use crate::noise::StructuredNoise;
use crate::prompt::TextEmbedding;
use crate::tensor::{gaussian_grid, GridShape, LatentGrid};
use crate::{Error, Result};

/// Text conditioning: a token sequence per shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub shots: Vec<Vec<TextEmbedding>>,
}

impl Conditioning {
    pub fn new(shots: Vec<Vec<TextEmbedding>>) -> Self {
        Self { shots }
    }

    pub fn num_shots(&self) -> usize {
        self.shots.len()
    }
}

/// Anything that predicts the noise in `x_t`.
pub trait NoisePredictor {
    fn predict(&self, x: &LatentGrid, step: usize, cond: &Conditioning, layout: &ShotLayout) -> Result<LatentGrid>;
}

impl NoisePredictor for DenoiserParams<f32> {
    fn predict(&self, x: &LatentGrid, step: usize, cond: &Conditioning, layout: &ShotLayout) -> Result<LatentGrid> {
        denoiser_forward(self, x, step, cond, layout)
    }
}

/// `ε̂ = ε_θ(x_t, t | c)` on a whole latent grid.
pub fn denoiser_forward(
    params: &DenoiserParams<f32>,
    x: &LatentGrid,
    step: usize,
    cond: &Conditioning,
    layout: &ShotLayout,
) -> Result<LatentGrid> {
    let shape = x.shape();
    if shape.channels != params.config.channels {
        return Err(Error::Shape(format!(
            "latent has {} channels, model expects {}",
            shape.channels, params.config.channels
        )));
    }
    if layout.tokens_per_frame() != shape.pixels_per_frame() || layout.total_frames() != shape.frames {
        return Err(Error::Shape(format!(
            "layout of {} frames x {} tokens does not match latent {shape}",
            layout.total_frames(),
            layout.tokens_per_frame()
        )));
    }
    let text = text_tokens::<f32>(&cond.shots);
    let y = params.forward(x.data(), step, &text, layout)?;
    LatentGrid::from_vec(shape, y)
}

/// Where the sampler's first latent comes from.
#[derive(Debug, Clone)]
pub enum InitialNoise {
    Injected(StructuredNoise),
    /// A previously saved latent, injected as is.
    Grid(LatentGrid),
    Fresh { shape: GridShape, seed: u64 },
}

impl InitialNoise {
    pub fn shape(&self) -> GridShape {
        match self {
            InitialNoise::Injected(n) => n.grid.shape(),
            InitialNoise::Grid(g) => g.shape(),
            InitialNoise::Fresh { shape, .. } => *shape,
        }
    }
}

/// Mutable sampling state; the initial latent is handed over exactly once.
#[derive(Debug, Clone)]
pub struct SamplerState {
    shape: GridShape,
    initial: Option<LatentGrid>,
    latent: Option<LatentGrid>,
    step: usize,
    schedule: DiffusionSchedule,
    conditioning: Conditioning,
    injected: bool,
    initial_reads: usize,
}

impl SamplerState {
    /// A state starting from a fresh Gaussian grid.
    pub fn new(shape: GridShape, seed: u64, schedule: DiffusionSchedule, conditioning: Conditioning) -> Result<Self> {
        let initial = gaussian_grid(shape, seed)?;
        Ok(Self {
            shape,
            initial: Some(initial),
            latent: None,
            step: schedule.steps(),
            schedule,
            conditioning,
            injected: false,
            initial_reads: 0,
        })
    }

    /// Replaces the initial latent; the shape must match.
    pub(crate) fn with_initial(mut self, grid: LatentGrid) -> Result<Self> {
        if grid.shape() != self.shape {
            return Err(Error::Shape(format!(
                "injected noise {} does not match sampler {}",
                grid.shape(),
                self.shape
            )));
        }
        if self.latent.is_some() {
            return Err(Error::Validation("sampling has already started".into()));
        }
        self.initial = Some(grid);
        self.injected = true;
        Ok(self)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn injected(&self) -> bool {
        self.injected
    }

    /// How many times the initial latent has been read.
    pub fn initial_reads(&self) -> usize {
        self.initial_reads
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn conditioning(&self) -> &Conditioning {
        &self.conditioning
    }

    pub fn latent(&self) -> Option<&LatentGrid> {
        self.latent.as_ref()
    }

    fn take_initial(&mut self) -> Result<LatentGrid> {
        let grid = self
            .initial
            .take()
            .ok_or_else(|| Error::Internal("initial latent already consumed".into()))?;
        self.initial_reads += 1;
        Ok(grid)
    }

    /// Runs `sub_steps` deterministic updates down to step 0.
    pub fn run(&mut self, model: &dyn NoisePredictor, layout: &ShotLayout, sub_steps: usize) -> Result<LatentGrid> {
        let total = self.schedule.steps();
        if sub_steps == 0 || sub_steps > total {
            return Err(Error::Schedule(format!("sub_steps {sub_steps} outside 1..={total}")));
        }
        let mut x = self.take_initial()?;
        for (t, t_next) in ddim_timesteps(total, sub_steps).into_iter().zip(ddim_timesteps(total, sub_steps).into_iter().skip(1)) {
            let eps = model.predict(&x, t, &self.conditioning, layout)?;
            if eps.shape() != self.shape {
                return Err(Error::Shape(format!("predictor returned {}", eps.shape())));
            }
            x = ddim_update(&x, &eps, self.schedule.alpha_bar(t), self.schedule.alpha_bar(t_next), t)?;
            self.step = t_next;
        }
        self.latent = Some(x.clone());
        Ok(x)
    }
}

/// Visited steps `round(T·(k-j)/k)` for `j = 0..=k`, ending at 0.
pub fn ddim_timesteps(total: usize, sub_steps: usize) -> Vec<usize> {
    (0..=sub_steps)
        .map(|j| ((total * (sub_steps - j)) as f64 / sub_steps as f64).round() as usize)
        .collect()
}

/// One η = 0 step from `ᾱ_t` to `ᾱ_next`, computed in `f64`.
fn ddim_update(x: &LatentGrid, eps: &LatentGrid, ab: f64, ab_next: f64, t: usize) -> Result<LatentGrid> {
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let (sa_next, sn_next) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
    let mut data = Vec::with_capacity(x.data().len());
    for (&xv, &ev) in x.data().iter().zip(eps.data()) {
        let (xv, ev) = (f64::from(xv), f64::from(ev));
        let x0 = (xv - sn * ev) / sa;
        let v = (sa_next * x0 + sn_next * ev) as f32;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite latent at step {t}")));
        }
        data.push(v);
    }
    LatentGrid::from_vec(x.shape(), data)
}

/// Deterministic DDIM sampling from injected or fresh initial noise.
pub fn ddim_sample(
    model: &dyn NoisePredictor,
    schedule: &DiffusionSchedule,
    init: InitialNoise,
    cond: &Conditioning,
    layout: &ShotLayout,
    sub_steps: usize,
) -> Result<LatentGrid> {
    let state = match init {
        InitialNoise::Fresh { shape, seed } => SamplerState::new(shape, seed, schedule.clone(), cond.clone())?,
        InitialNoise::Injected(noise) => {
            let state = SamplerState::new(noise.grid.shape(), 0, schedule.clone(), cond.clone())?;
            crate::noise::inject_initial_noise(state, noise)?
        }
        InitialNoise::Grid(grid) => {
            SamplerState::new(grid.shape(), 0, schedule.clone(), cond.clone())?.with_initial(grid)?
        }
    };
    let mut state = state;
    state.run(model, layout, sub_steps)
}
