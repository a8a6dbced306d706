//! Local-noise diffusion: schedules, forward noising, guided reverse sampling.

pub mod process;
pub mod sampler;
pub mod schedule;

pub use process::{
    cfg_combine, forward_noise, jump_coefficients, reverse_jump, reverse_step, NoiseTensor,
    SamplerVariant,
};
pub use sampler::{initial_noisy, sample, NoisePredictor, SamplerConfig};
pub use schedule::{timestep_ladder, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
