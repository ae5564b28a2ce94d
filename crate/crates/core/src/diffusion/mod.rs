//! Minimal denoising-diffusion machinery on low-dimensional synthetic data.

mod net;
mod sample;
mod sampler;
mod schedule;

pub use net::{Denoiser, DenoiserKind, EpsNet, Linear, LowRankAdapter, NetSpec, Role};
pub use sample::{Condition, Sample, Shape};
pub use sampler::{ancestral_sample, guided_eps, inpaint_sample, Trajectory};
pub use schedule::{forward_diffuse, make_linear_schedule, NoiseSchedule};

use crate::error::Result;

/// Unreduced sum-of-squares denoising error ||eps_target - eps_hat||^2.
pub fn denoising_mse(
    denoiser: &Denoiser,
    x_t: &Sample,
    c: &Condition,
    t: usize,
    eps_target: &Sample,
) -> Result<f64> {
    if eps_target.shape != x_t.shape {
        return Err(crate::error::Error::shape(
            x_t.shape.to_string(),
            eps_target.shape.to_string(),
        ));
    }
    let pred = denoiser.predict_eps(x_t, c, t)?;
    Ok(sum_sq_err(&eps_target.data, &pred.data))
}

pub(crate) fn sum_sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}
