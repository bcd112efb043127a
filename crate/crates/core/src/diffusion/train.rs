use serde::{Deserialize, Serialize};

use super::dataset::{make_toy_dataset, ToyDatasetConfig};
use super::model::{text_tokens, DenoiserConfig, DenoiserParams};
use super::schedule::{forward_noise, DiffusionSchedule};
use super::sampler::Conditioning;
use crate::attention::ShotLayout;
use crate::tensor::{gaussian_grid, LatentGrid, Real, RngStream};
use crate::{Error, Result};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e3;
pub const LOG_EVERY: usize = 100;

/// Reference toy run: shape (8,16,16,4), 2-frame shots, batch 1.
pub const REFERENCE_STEPS: usize = 2000;
pub const REFERENCE_LR: f64 = 0.02;
pub const REFERENCE_FRAMES_PER_SHOT: usize = 2;
pub const REFERENCE_SAMPLES: usize = 256;
pub const REFERENCE_SUB_STEPS: usize = 20;

/// One `(x0, t, ε, c)` training tuple.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub x0: LatentGrid,
    pub step: usize,
    pub noise: LatentGrid,
    pub conditioning: Conditioning,
}

/// Squared error of a prediction against `target`, mean over elements, with
/// parameter gradients accumulated into `params`.
///
/// `scale` multiplies both the returned loss and the gradients, so batch
/// averaging is a matter of passing `1/batch`.
pub fn loss_against_target<F: Real>(
    params: &mut DenoiserParams<F>,
    x: &[F],
    step: usize,
    text: &[Vec<Vec<F>>],
    layout: &ShotLayout,
    target: &[F],
    scale: F,
) -> Result<F> {
    let (pred, cache) = params.forward_cached(x, step, text, layout)?;
    if target.len() != pred.len() {
        return Err(Error::Shape(format!("target of {} for {} predictions", target.len(), pred.len())));
    }
    let n = F::of(pred.len() as f64);
    let mut loss = F::zero();
    let mut dy = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let r = *p - *t;
        loss += r * r;
        dy.push(F::of(2.0) * r * scale / n);
    }
    params.backward(&cache, &dy);
    Ok(loss * scale / n)
}

/// Mean `‖ε - ε_θ(x_t, t | c)‖²` over a batch, with gradients left in
/// `params` (zeroed first).
pub fn training_loss<F: Real>(
    params: &mut DenoiserParams<F>,
    batch: &[TrainingExample],
    schedule: &DiffusionSchedule,
    layout: &ShotLayout,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("empty training batch".into()));
    }
    params.zero_grad();
    let scale = F::of(1.0 / batch.len() as f64);
    let mut total = F::zero();
    for ex in batch {
        let xt = forward_noise(&ex.x0, ex.step, &ex.noise, schedule)?;
        let x: Vec<F> = xt.data().iter().map(|&v| F::of(f64::from(v))).collect();
        let target: Vec<F> = ex.noise.data().iter().map(|&v| F::of(f64::from(v))).collect();
        let text = text_tokens::<F>(&ex.conditioning.shots);
        total += loss_against_target(params, &x, ex.step, &text, layout, &target, scale)?;
    }
    let loss = total.to_f64_lossy();
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss} over {} examples at steps {:?}",
            batch.len(),
            batch.iter().map(|e| e.step).collect::<Vec<_>>()
        )));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams<f32>,
    /// Loss at every step.
    pub losses: Vec<f64>,
    /// `step=<n> loss=<float>` lines, one per 100 steps and one for the last.
    pub log: Vec<String>,
}

impl TrainOutcome {
    /// Mean loss over the first and the last `window` steps.
    pub fn window_means(&self, window: usize) -> Option<(f64, f64)> {
        let n = self.losses.len();
        if window == 0 || n < window {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.losses[..window]), mean(&self.losses[n - window..])))
    }
}

/// Draws the batch for `step` from stream ("batch", step).
pub fn toy_batch(
    data: &super::dataset::ToyDataset,
    schedule: &DiffusionSchedule,
    batch: usize,
    seed: u64,
    step: usize,
) -> Result<Vec<TrainingExample>> {
    let mut rng = RngStream::new(seed, "batch", step as u64);
    (0..batch)
        .map(|_| {
            let sample = data.sample(rng.below(data.len()))?;
            let t = 1 + rng.below(schedule.steps());
            let noise = gaussian_grid(data.config().shape, rng.next_u64())?;
            Ok(TrainingExample {
                x0: sample.video,
                step: t,
                noise,
                conditioning: sample.conditioning,
            })
        })
        .collect()
}

/// Plain fixed-rate gradient descent on the toy dataset.
pub fn train_toy(
    data_cfg: ToyDatasetConfig,
    model_cfg: DenoiserConfig,
    schedule: &DiffusionSchedule,
    train: TrainConfig,
) -> Result<TrainOutcome> {
    if !(train.lr.is_finite() && train.lr > 0.0) || train.batch == 0 {
        return Err(Error::Config(format!("invalid training config {train:?}")));
    }
    if model_cfg.channels != data_cfg.shape.channels {
        return Err(Error::Config(format!(
            "model has {} channels, data has {}",
            model_cfg.channels, data_cfg.shape.channels
        )));
    }
    let data = make_toy_dataset(data_cfg)?;
    let mut params = DenoiserParams::<f32>::init(model_cfg, train.seed)?;
    let mut losses = Vec::with_capacity(train.steps);
    let mut log = Vec::new();
    for step in 1..=train.steps {
        let batch = toy_batch(&data, schedule, train.batch, train.seed, step)?;
        let loss = training_loss(&mut params, &batch, schedule, data.layout())?;
        if loss > DIVERGENCE_LIMIT {
            return Err(Error::Training { step, loss });
        }
        params.sgd_step(train.lr as f32);
        if !params.all_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after step {step}")));
        }
        losses.push(loss);
        if step % LOG_EVERY == 0 || step == train.steps {
            let line = format!("step={step} loss={loss}");
            log::info!("{line}");
            log.push(line);
        }
    }
    Ok(TrainOutcome { params, losses, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::embed_text;
    use crate::tensor::GridShape;

    fn tiny() -> (DenoiserConfig, ShotLayout, GridShape) {
        let cfg = DenoiserConfig {
            channels: 2,
            model_dim: 8,
            heads: 2,
            head_dim: 4,
            mlp_hidden: 12,
            time_dim: 8,
            text_dim: 8,
            blocks: 2,
            summary_tokens: 2,
        };
        (cfg, ShotLayout::new(vec![8, 4], 4).unwrap(), GridShape::new(3, 2, 2, 2).unwrap())
    }

    fn example(shape: GridShape, seed: u64, step: usize) -> TrainingExample {
        let e1 = embed_text("a kite", 8).unwrap();
        let e2 = embed_text("a boat at dusk", 8).unwrap();
        TrainingExample {
            x0: gaussian_grid(shape, seed).unwrap(),
            step,
            noise: gaussian_grid(shape, seed + 100).unwrap(),
            conditioning: Conditioning::new(vec![vec![e1.clone(), e2.clone()], vec![e2]]),
        }
    }

    #[test]
    fn tiny_model_is_under_5k_params() {
        let (cfg, _, _) = tiny();
        let p = DenoiserParams::<f64>::init(cfg, 0).unwrap();
        assert!(p.parameter_count() <= 5000, "{}", p.parameter_count());
        let q = DenoiserParams::<f64>::init(cfg, 0).unwrap();
        assert_eq!(p.parameter_count(), q.parameter_count());
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let (cfg, layout, shape) = tiny();
        let mut p = DenoiserParams::<f64>::init_with_std(cfg, 1, 0.3).unwrap();
        let ex = example(shape, 1, 40);
        let x: Vec<f64> = ex.x0.data().iter().map(|&v| f64::from(v)).collect();
        let text = text_tokens::<f64>(&ex.conditioning.shots);
        let target = p.forward(&x, 40, &text, &layout).unwrap();
        p.zero_grad();
        let loss = loss_against_target(&mut p, &x, 40, &text, &layout, &target, 1.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(p.params().iter().all(|q| q.grad.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn loss_is_non_negative() {
        let (cfg, layout, shape) = tiny();
        let s = DiffusionSchedule::default();
        let mut p = DenoiserParams::<f32>::init(cfg, 2).unwrap();
        for seed in 0..5 {
            let l = training_loss(&mut p, &[example(shape, seed, 1 + 199 * seed as usize)], &s, &layout).unwrap();
            assert!(l >= 0.0);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let (cfg, layout, _) = tiny();
        let mut p = DenoiserParams::<f32>::init(cfg, 2).unwrap();
        assert!(training_loss(&mut p, &[], &DiffusionSchedule::default(), &layout).is_err());
    }

    fn small_training() -> (ToyDatasetConfig, DenoiserConfig) {
        let shape = GridShape::new(2, 4, 4, 2).unwrap();
        let mut m = DenoiserConfig::toy(2);
        m.summary_tokens = 2;
        (ToyDatasetConfig::new(shape, 1, 16, 3).unwrap(), m)
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (d, m) = small_training();
        let t = TrainConfig { steps: 0, lr: 0.1, batch: 1, seed: 4 };
        let out = train_toy(d, m, &DiffusionSchedule::default(), t).unwrap();
        assert_eq!(out.params, DenoiserParams::init(m, 4).unwrap());
        assert!(out.losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_logs() {
        let (d, m) = small_training();
        let t = TrainConfig { steps: 120, lr: 0.1, batch: 1, seed: 4 };
        let s = DiffusionSchedule::default();
        let a = train_toy(d, m, &s, t).unwrap();
        let b = train_toy(d, m, &s, t).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log.len(), 2);
        assert!(a.log[0].starts_with("step=100 loss="));
        assert!(a.log[1].starts_with("step=120 loss="));
        let v: f64 = a.log[0]["step=100 loss=".len()..].parse().unwrap();
        assert_eq!(v, a.losses[99]);
    }

    #[test]
    fn divergence_reports_step() {
        let (d, m) = small_training();
        let t = TrainConfig { steps: 50, lr: 1e4, batch: 1, seed: 4 };
        match train_toy(d, m, &DiffusionSchedule::default(), t) {
            Err(Error::Training { step, loss }) => assert!(step > 1 && loss > DIVERGENCE_LIMIT),
            Err(Error::Numeric(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
