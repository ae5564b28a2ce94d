use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal_vec;

use super::net::Denoiser;
use super::sample::{Condition, Sample};
use super::schedule::{forward_diffuse, NoiseSchedule};

/// Intermediate states of one reverse-process run. The first entry is the
/// initial pure-noise state; one entry follows per sampling step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Sample>,
    pub timesteps: Vec<usize>,
}

/// Evenly spaced decreasing timestep subsequence ending at 0.
fn timestep_sequence(t_count: usize, steps: usize) -> Vec<usize> {
    if steps == 1 {
        return vec![0];
    }
    (0..steps)
        .map(|i| (t_count - 1) * (steps - 1 - i) / (steps - 1))
        .collect()
}

/// Classifier-free-guided prediction. Guidance 1.0 uses the conditional
/// prediction alone and 0.0 the NULL prediction alone, so those identities
/// hold bitwise.
pub fn guided_eps(
    denoiser: &Denoiser,
    x: &Sample,
    c: &Condition,
    t: usize,
    guidance_scale: f64,
) -> Result<Sample> {
    if guidance_scale == 1.0 {
        return denoiser.predict_eps(x, c, t);
    }
    if guidance_scale == 0.0 {
        return denoiser.predict_eps(x, &Condition::Null, t);
    }
    let cond = denoiser.predict_eps(x, c, t)?;
    let null = denoiser.predict_eps(x, &Condition::Null, t)?;
    let data = null
        .data
        .iter()
        .zip(&cond.data)
        .map(|(n, c)| n + guidance_scale * (c - n))
        .collect();
    Sample::new(data, x.shape)
}

/// Ancestral (DDPM) sampling over an evenly spaced timestep subsequence.
/// Pure function of (denoiser, condition, schedule, steps, guidance, rng state).
pub fn ancestral_sample(
    denoiser: &Denoiser,
    c: &Condition,
    schedule: &NoiseSchedule,
    steps: usize,
    guidance_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Sample, Trajectory)> {
    if steps == 0 || steps > schedule.len() {
        return Err(Error::invalid(format!(
            "steps must be in [1, T={}], got {steps}",
            schedule.len()
        )));
    }
    if guidance_scale < 0.0 || !guidance_scale.is_finite() {
        return Err(Error::invalid("guidance_scale must be finite and >= 0"));
    }
    let shape = denoiser.data_shape();
    let d = shape.len();
    let ts = timestep_sequence(schedule.len(), steps);

    let mut x = Sample::new(normal_vec(rng, d), shape)?;
    let mut states = vec![x.clone()];
    for (i, &t) in ts.iter().enumerate() {
        let eps = guided_eps(denoiser, &x, c, t, guidance_scale)?;
        let abar = schedule.alpha_bars[t];
        let x0_hat: Vec<f64> = x
            .data
            .iter()
            .zip(&eps.data)
            .map(|(xt, e)| (xt - (1.0 - abar).sqrt() * e) / abar.sqrt())
            .collect();
        let next = match ts.get(i + 1) {
            None => x0_hat,
            Some(&t_prev) => {
                let abar_prev = schedule.alpha_bars[t_prev];
                // Ancestral posterior variance on the subsequence.
                let var = (1.0 - abar_prev) / (1.0 - abar) * (1.0 - abar / abar_prev);
                let var = var.max(0.0);
                let dir = (1.0 - abar_prev - var).max(0.0).sqrt();
                let z = normal_vec(rng, d);
                x0_hat
                    .iter()
                    .zip(&eps.data)
                    .zip(&z)
                    .map(|((x0, e), zi)| abar_prev.sqrt() * x0 + dir * e + var.sqrt() * zi)
                    .collect()
            }
        };
        x = Sample::new(next, shape)?;
        states.push(x.clone());
    }
    let trajectory = Trajectory {
        states,
        timesteps: ts,
    };
    Ok((x, trajectory))
}

/// Mask-conditioned inpainting: each reverse step re-imposes the known region
/// by forward-diffusing `x_known` to the current noise level, and the final
/// output copies the known region back exactly. Mask entries of 1 mark the
/// region to regenerate.
pub fn inpaint_sample(
    denoiser: &Denoiser,
    x_known: &Sample,
    mask: &Sample,
    c: &Condition,
    schedule: &NoiseSchedule,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    if x_known.shape != mask.shape {
        return Err(Error::shape(
            x_known.shape.to_string(),
            mask.shape.to_string(),
        ));
    }
    if x_known.shape != denoiser.data_shape() {
        return Err(Error::shape(
            denoiser.data_shape().to_string(),
            x_known.shape.to_string(),
        ));
    }
    if !mask.data.iter().all(|&m| m == 0.0 || m == 1.0) {
        return Err(Error::invalid("mask entries must be 0 or 1"));
    }
    if steps == 0 || steps > schedule.len() {
        return Err(Error::invalid(format!(
            "steps must be in [1, T={}], got {steps}",
            schedule.len()
        )));
    }
    let shape = x_known.shape;
    let d = shape.len();
    let ts = timestep_sequence(schedule.len(), steps);

    let mut x = Sample::new(normal_vec(rng, d), shape)?;
    for (i, &t) in ts.iter().enumerate() {
        let eps = guided_eps(denoiser, &x, c, t, 1.0)?;
        let abar = schedule.alpha_bars[t];
        let x0_hat: Vec<f64> = x
            .data
            .iter()
            .zip(&eps.data)
            .map(|(xt, e)| (xt - (1.0 - abar).sqrt() * e) / abar.sqrt())
            .collect();
        let mut next: Vec<f64> = match ts.get(i + 1) {
            None => x0_hat,
            Some(&t_prev) => {
                let abar_prev = schedule.alpha_bars[t_prev];
                let var = ((1.0 - abar_prev) / (1.0 - abar) * (1.0 - abar / abar_prev)).max(0.0);
                let dir = (1.0 - abar_prev - var).max(0.0).sqrt();
                let z = normal_vec(rng, d);
                x0_hat
                    .iter()
                    .zip(&eps.data)
                    .zip(&z)
                    .map(|((x0, e), zi)| abar_prev.sqrt() * x0 + dir * e + var.sqrt() * zi)
                    .collect()
            }
        };
        // Re-impose the known region at the new noise level.
        if let Some(&t_prev) = ts.get(i + 1) {
            let noise = Sample::new(normal_vec(rng, d), shape)?;
            let known_noisy = forward_diffuse(x_known, t_prev, &noise, schedule)?;
            for j in 0..d {
                if mask.data[j] == 0.0 {
                    next[j] = known_noisy.data[j];
                }
            }
        } else {
            for j in 0..d {
                if mask.data[j] == 0.0 {
                    next[j] = x_known.data[j];
                }
            }
        }
        x = Sample::new(next, shape)?;
    }
    Ok(x)
}
