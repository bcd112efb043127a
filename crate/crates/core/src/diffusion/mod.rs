//! Toy latent diffusion: schedule, denoiser, training, sampling and the
//! moving-sinusoid dataset used to exercise camera-structured noise.

pub mod checkpoint;
pub mod dataset;
pub mod model;
pub mod motion;
pub mod ops;
pub mod sampler;
pub mod schedule;
pub mod train;

pub use checkpoint::{load_params, save_params};
pub use dataset::{make_toy_dataset, ToyDataset, ToyDatasetConfig, ToySample};
pub use model::{DenoiserConfig, DenoiserParams, Param};
pub use motion::{estimate_displacement, mean_displacement, Displacement};
pub use sampler::{ddim_sample, denoiser_forward, Conditioning, InitialNoise, NoisePredictor, SamplerState};
pub use schedule::{forward_noise, DiffusionSchedule};
pub use train::{train_toy, training_loss, TrainConfig, TrainOutcome, TrainingExample};
pub use train::{REFERENCE_FRAMES_PER_SHOT, REFERENCE_LR, REFERENCE_SAMPLES, REFERENCE_STEPS, REFERENCE_SUB_STEPS};
