use crate::curation::Scorer;
use crate::diffusion::{Condition, Sample, Shape};
use crate::error::{Error, Result};

/// Variance of the 4-neighbor discrete Laplacian over interior pixels.
/// Interior-only evaluation makes affine ramps score exactly 0; padded
/// variants pick up spurious boundary response on ramps.
pub fn laplacian_variance(sample: &Sample) -> Result<f64> {
    let (h, w, channels) = match sample.shape {
        Shape::Image { h, w, channels } => (h, w, channels),
        other => {
            return Err(Error::shape("image", other.to_string()));
        }
    };
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!(
            "laplacian variance needs at least 3x3 images, got {h}x{w}"
        )));
    }
    let plane = h * w;
    let mut responses = Vec::with_capacity(channels * (h - 2) * (w - 2));
    for ch in 0..channels {
        let base = ch * plane;
        for row in 1..h - 1 {
            for col in 1..w - 1 {
                let i = base + row * w + col;
                let lap = sample.data[i - w] + sample.data[i + w] + sample.data[i - 1]
                    + sample.data[i + 1]
                    - 4.0 * sample.data[i];
                responses.push(lap);
            }
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n)
}

/// Difference of a conditional scorer under two conditions; antisymmetric in
/// (cond_a, cond_b) by construction.
pub fn prefix_contrast_score(
    scorer: &dyn Scorer,
    sample: &Sample,
    cond_a: &Condition,
    cond_b: &Condition,
) -> Result<f64> {
    Ok(scorer.score(sample, cond_a)? - scorer.score(sample, cond_b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::DenoisingScorer;
    use crate::diffusion::{make_linear_schedule, Denoiser};

    fn image(h: usize, w: usize, data: Vec<f64>) -> Sample {
        Sample::new(data, Shape::Image { h, w, channels: 1 }).unwrap()
    }

    #[test]
    fn constant_image_scores_zero() {
        let img = image(8, 8, vec![0.7; 64]);
        assert_eq!(laplacian_variance(&img).unwrap(), 0.0);
    }

    #[test]
    fn linear_ramp_scores_zero() {
        let data: Vec<f64> = (0..64)
            .map(|i| 0.3 * (i / 8) as f64 + 1.7 * (i % 8) as f64 - 2.0)
            .collect();
        let img = image(8, 8, data);
        // Interior Laplacian of an affine field vanishes, up to the rounding
        // of the sampled values themselves.
        assert!(laplacian_variance(&img).unwrap() < 1e-28);
    }

    #[test]
    fn single_impulse_matches_hand_kernel_response() {
        // 5x5 zeros with a 1 at the center. Interior responses (9 pixels):
        // center -4, its 4 interior neighbors +1, corners of the interior 0.
        let mut data = vec![0.0; 25];
        data[12] = 1.0;
        let img = image(5, 5, data);
        let responses = [-4.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let mean: f64 = responses.iter().sum::<f64>() / 9.0;
        let var: f64 = responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 9.0;
        assert!((laplacian_variance(&img).unwrap() - var).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_images_and_tiny_images() {
        let v = Sample::new(vec![1.0, 2.0], Shape::Vector(2)).unwrap();
        assert!(laplacian_variance(&v).is_err());
        let tiny = image(3, 2, vec![0.0; 6]);
        assert!(laplacian_variance(&tiny).is_err());
    }

    #[test]
    fn prefix_contrast_is_antisymmetric_and_zero_on_equal_conditions() {
        let schedule = make_linear_schedule(16, 1e-3, 0.1).unwrap();
        let strong = Denoiser::oracle(vec![0.0, 0.0], 1.0, &schedule).unwrap();
        let scorer = DenoisingScorer::new(strong, schedule, 6, 7, "probe");
        let x = Sample::new(vec![0.4, -0.2], Shape::Vector(2)).unwrap();
        let a = Condition::Null;
        let b = Condition::Embedding(vec![1.0, 0.0]);
        assert_eq!(prefix_contrast_score(&scorer, &x, &a, &a).unwrap(), 0.0);
        let ab = prefix_contrast_score(&scorer, &x, &a, &b).unwrap();
        let ba = prefix_contrast_score(&scorer, &x, &b, &a).unwrap();
        assert_eq!(ab, -ba);
        // Compositional check against two direct calls.
        let direct = scorer.score(&x, &a).unwrap() - scorer.score(&x, &b).unwrap();
        assert_eq!(ab, direct);
    }
}
