use rand_chacha::ChaCha8Rng;

use crate::diffusion::{ancestral_sample, inpaint_sample, Denoiser, NoiseSchedule, Sample};
use crate::error::Result;

use super::ReferenceSample;

/// Regenerates the masked region of a reference with a deliberately weak
/// model, preserving the unmasked region exactly.
pub fn construct_negative(
    reference: &ReferenceSample,
    mask: &Sample,
    weak_model: &Denoiser,
    steps: usize,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    inpaint_sample(
        weak_model,
        &reference.sample,
        mask,
        &reference.condition,
        schedule,
        steps,
        rng,
    )
}

/// Full-sample negative: generates from scratch conditioned on the
/// reference's condition, sharing nothing else with the reference.
pub fn construct_negative_t2i(
    reference: &ReferenceSample,
    weak_model: &Denoiser,
    steps: usize,
    guidance_scale: f64,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Sample> {
    let (sample, _) = ancestral_sample(
        weak_model,
        &reference.condition,
        schedule,
        steps,
        guidance_scale,
        rng,
    )?;
    Ok(sample)
}
