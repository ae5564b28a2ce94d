use crate::diffusion::{Sample, Shape};
use crate::error::{Error, Result};

/// Colorfulness of an image-shaped sample.
///
/// Three-channel inputs use the opponent-channel statistic
/// C = sigma_rgyb + 0.3 mu_rgyb over rg = R-G and yb = (R+G)/2 - B.
/// Grayscale inputs use the population standard deviation of the pixels.
/// Constant images score 0 on the grayscale path.
pub fn colorfulness_score(sample: &Sample) -> Result<f64> {
    match sample.shape {
        Shape::Image { h, w, channels: 1 } => {
            let n = (h * w) as f64;
            let mean = sample.data.iter().sum::<f64>() / n;
            let var = sample.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            Ok(var.sqrt())
        }
        Shape::Image { h, w, channels: 3 } => {
            let n = (h * w) as f64;
            let mut sum_rg = 0.0;
            let mut sum_yb = 0.0;
            let mut sumsq_rg = 0.0;
            let mut sumsq_yb = 0.0;
            for px in sample.data.chunks_exact(3) {
                let (r, g, b) = (px[0], px[1], px[2]);
                let rg = r - g;
                let yb = 0.5 * (r + g) - b;
                sum_rg += rg;
                sum_yb += yb;
                sumsq_rg += rg * rg;
                sumsq_yb += yb * yb;
            }
            let mean_rg = sum_rg / n;
            let mean_yb = sum_yb / n;
            let var_rg = (sumsq_rg / n - mean_rg * mean_rg).max(0.0);
            let var_yb = (sumsq_yb / n - mean_yb * mean_yb).max(0.0);
            let sigma = (var_rg + var_yb).sqrt();
            let mu = (mean_rg * mean_rg + mean_yb * mean_yb).sqrt();
            Ok(sigma + 0.3 * mu)
        }
        other => Err(Error::invalid(format!(
            "colorfulness requires a 1- or 3-channel image, got {other}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_gray_is_zero() {
        let img = Sample::new(vec![0.5; 64], Shape::Image { h: 8, w: 8, channels: 1 }).unwrap();
        assert_eq!(colorfulness_score(&img).unwrap(), 0.0);
    }

    #[test]
    fn uniform_pure_red_hand_value() {
        // (255, 0, 0): rg = 255, yb = 127.5 everywhere.
        // sigma = 0, mu = sqrt(255^2 + 127.5^2) ~ 285.095, score ~ 85.53.
        let mut data = Vec::with_capacity(4 * 4 * 3);
        for _ in 0..16 {
            data.extend_from_slice(&[255.0, 0.0, 0.0]);
        }
        let img = Sample::new(data, Shape::Image { h: 4, w: 4, channels: 3 }).unwrap();
        let score = colorfulness_score(&img).unwrap();
        let mu = (255.0f64 * 255.0 + 127.5 * 127.5).sqrt();
        assert!((score - 0.3 * mu).abs() < 1e-10);
        assert!((score - 85.5289).abs() < 1e-3);
    }

    #[test]
    fn gray_checkerboard_is_half() {
        let mut data = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                data.push(((i + j) % 2) as f64);
            }
        }
        let img = Sample::new(data, Shape::Image { h: 4, w: 4, channels: 1 }).unwrap();
        assert!((colorfulness_score(&img).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_image() {
        let v = Sample::zeros(Shape::Vector(4));
        assert!(colorfulness_score(&v).is_err());
    }
}
