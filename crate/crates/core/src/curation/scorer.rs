use crate::diffusion::{forward_diffuse, Condition, Denoiser, NoiseSchedule, Sample};
use crate::error::Result;
use crate::rng::{derive_seed, normal_vec, rng_from};

/// Abstract quality scorer: deterministic for fixed inputs, higher is
/// preferred. Stands in for the pretrained preference models that are out of
/// desk scale.
pub trait Scorer {
    fn score(&self, sample: &Sample, condition: &Condition) -> Result<f64>;
    fn name(&self) -> &str;
}

/// ELBO-style proxy scorer: negative mean per-coordinate denoising error of a
/// held-out model over a fixed stratified set of timesteps with frozen noise
/// draws.
#[derive(Clone, Debug)]
pub struct DenoisingScorer {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub timesteps: Vec<usize>,
    pub noise_seed: u64,
    pub label: String,
}

impl DenoisingScorer {
    pub fn new(
        model: Denoiser,
        schedule: NoiseSchedule,
        n_timesteps: usize,
        noise_seed: u64,
        label: impl Into<String>,
    ) -> Self {
        let t_count = schedule.len();
        let n = n_timesteps.clamp(1, t_count);
        let timesteps = (0..n)
            .map(|i| if n == 1 { t_count / 2 } else { (t_count - 1) * i / (n - 1) })
            .collect();
        DenoisingScorer {
            model,
            schedule,
            timesteps,
            noise_seed,
            label: label.into(),
        }
    }
}

impl Scorer for DenoisingScorer {
    fn score(&self, sample: &Sample, condition: &Condition) -> Result<f64> {
        let d = sample.len() as f64;
        let mut total = 0.0;
        for &t in &self.timesteps {
            let eps = Sample::new(
                normal_vec(
                    &mut rng_from(derive_seed(self.noise_seed, "scorer-noise", t as u64)),
                    sample.len(),
                ),
                sample.shape,
            )?;
            let x_t = forward_diffuse(sample, t, &eps, &self.schedule)?;
            let pred = self.model.predict_eps(&x_t, condition, t)?;
            total += crate::diffusion::sum_sq_err(&eps.data, &pred.data) / d;
        }
        Ok(-total / self.timesteps.len() as f64)
    }

    fn name(&self) -> &str {
        &self.label
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_linear_schedule, Shape};

    #[test]
    fn scorer_is_deterministic_and_prefers_oracle_matched_data() {
        let schedule = make_linear_schedule(50, 1e-3, 0.1).unwrap();
        let oracle = Denoiser::oracle(vec![0.0; 4], 1.0, &schedule).unwrap();
        let scorer = DenoisingScorer::new(oracle, schedule, 8, 99, "toy");
        let near = Sample::new(vec![0.1, -0.1, 0.2, 0.0], Shape::Vector(4)).unwrap();
        let far = Sample::new(vec![25.0, -25.0, 25.0, -25.0], Shape::Vector(4)).unwrap();
        let a = scorer.score(&near, &Condition::Null).unwrap();
        let b = scorer.score(&near, &Condition::Null).unwrap();
        assert_eq!(a, b);
        let c = scorer.score(&far, &Condition::Null).unwrap();
        assert!(a > c, "in-distribution sample must score higher: {a} vs {c}");
    }
}
