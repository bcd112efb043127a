use serde::{Deserialize, Serialize};

use crate::tensor::LatentGrid;
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Variance-preserving noise schedule over steps `1..=steps`.
///
/// `alpha_bar(0)` is 1 so the clean latent sits at step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("schedule needs at least one step".into()));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule("empty beta sequence".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Schedule(format!("beta[{}] = {b} outside (0, 1)", i + 1)));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Schedule("alpha_bar is not strictly decreasing".into()));
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `1 ≤ t ≤ steps`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// `ᾱ_t` for `0 ≤ t ≤ steps`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Schedule(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, BETA_START, BETA_END).expect("default schedule is valid")
    }
}

/// `x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·ε`.
pub fn forward_noise(x0: &LatentGrid, t: usize, eps: &LatentGrid, schedule: &DiffusionSchedule) -> Result<LatentGrid> {
    schedule.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::Shape(format!("x0 {} vs noise {}", x0.shape(), eps.shape())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (a * f64::from(x) + b * f64::from(e)) as f32)
        .collect();
    LatentGrid::from_vec(x0.shape(), data)
}
