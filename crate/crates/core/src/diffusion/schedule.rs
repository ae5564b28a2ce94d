use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sample::Sample;

/// Discrete forward-process coefficients for T timesteps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t_count: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.t_count
    }

    pub fn is_empty(&self) -> bool {
        self.t_count == 0
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.t_count {
            return Err(Error::TimestepOutOfRange {
                t,
                max: self.t_count,
            });
        }
        Ok(())
    }
}

/// Linear beta schedule, endpoints inclusive.
pub fn make_linear_schedule(t_count: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_count < 2 {
        return Err(Error::invalid(format!("T must be >= 2, got {t_count}")));
    }
    if !beta_start.is_finite() || !beta_end.is_finite() {
        return Err(Error::invalid("beta endpoints must be finite"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let step = (beta_end - beta_start) / (t_count - 1) as f64;
    let betas: Vec<f64> = (0..t_count)
        .map(|i| beta_start + step * i as f64)
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_count);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(NoiseSchedule {
        t_count,
        betas,
        alphas,
        alpha_bars,
    })
}

/// Forward process q(x_t | x_0): x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
pub fn forward_diffuse(
    x0: &Sample,
    t: usize,
    eps: &Sample,
    schedule: &NoiseSchedule,
) -> Result<Sample> {
    schedule.check_t(t)?;
    if x0.shape != eps.shape {
        return Err(Error::shape(x0.shape.to_string(), eps.shape.to_string()));
    }
    let abar = schedule.alpha_bars[t];
    let signal = abar.sqrt();
    let noise = (1.0 - abar).sqrt();
    let data = x0
        .data
        .iter()
        .zip(&eps.data)
        .map(|(x, e)| signal * x + noise * e)
        .collect();
    Ok(Sample {
        data,
        shape: x0.shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::sample::Shape;

    #[test]
    fn constant_beta_by_hand() {
        let s = make_linear_schedule(2, 0.1, 0.1).unwrap();
        assert_eq!(s.betas, vec![0.1, 0.1]);
        assert!((s.alpha_bars[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars[1] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn long_schedule_matches_running_product_oracle() {
        let s = make_linear_schedule(1000, 1e-4, 0.02).unwrap();
        // Independent brute-force product over independently recomputed betas.
        let mut prod = 1.0f64;
        for i in 0..1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0;
            prod *= 1.0 - beta;
        }
        assert!((s.alpha_bars[999] - prod).abs() <= 1e-12 * prod.abs().max(1.0));
        // Invariants.
        for t in 0..1000 {
            assert!(s.betas[t] > 0.0 && s.betas[t] < 1.0);
            assert_eq!(s.alphas[t], 1.0 - s.betas[t]);
            assert!(s.alpha_bars[t] > 0.0 && s.alpha_bars[t] < 1.0);
            if t > 0 {
                assert!(s.alpha_bars[t] < s.alpha_bars[t - 1]);
            }
        }
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(make_linear_schedule(2, 0.5, 1.5).is_err());
        assert!(make_linear_schedule(2, 0.0, 0.5).is_err());
        assert!(make_linear_schedule(2, 0.5, 0.1).is_err());
        assert!(make_linear_schedule(1, 0.1, 0.2).is_err());
        assert!(make_linear_schedule(2, f64::NAN, 0.2).is_err());
    }

    fn limit_schedule(abar: f64) -> NoiseSchedule {
        NoiseSchedule {
            t_count: 1,
            betas: vec![0.0],
            alphas: vec![1.0],
            alpha_bars: vec![abar],
        }
    }

    #[test]
    fn forward_diffuse_limit_cases() {
        let shape = Shape::Vector(3);
        let x0 = Sample::new(vec![1.0, -2.0, 0.5], shape).unwrap();
        let eps = Sample::new(vec![0.3, 0.3, 0.3], shape).unwrap();

        let id = forward_diffuse(&x0, 0, &eps, &limit_schedule(1.0)).unwrap();
        assert_eq!(id.data, x0.data);

        let pure_noise = forward_diffuse(&x0, 0, &eps, &limit_schedule(0.0)).unwrap();
        assert_eq!(pure_noise.data, eps.data);
    }

    #[test]
    fn forward_diffuse_hand_value() {
        // abar = 0.36: x0 = 0, eps = 1 => entries = sqrt(0.64) = 0.8
        let shape = Shape::Vector(4);
        let x0 = Sample::zeros(shape);
        let eps = Sample::new(vec![1.0; 4], shape).unwrap();
        let out = forward_diffuse(&x0, 0, &eps, &limit_schedule(0.36)).unwrap();
        for v in out.data {
            assert!((v - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_diffuse_rejects_bad_inputs() {
        let s = make_linear_schedule(10, 0.01, 0.1).unwrap();
        let x0 = Sample::zeros(Shape::Vector(2));
        let eps3 = Sample::zeros(Shape::Vector(3));
        assert!(forward_diffuse(&x0, 0, &eps3, &s).is_err());
        let eps2 = Sample::zeros(Shape::Vector(2));
        assert!(forward_diffuse(&x0, 10, &eps2, &s).is_err());
    }
}
