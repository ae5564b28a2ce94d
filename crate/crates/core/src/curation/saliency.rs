use serde::{Deserialize, Serialize};

use crate::diffusion::{Sample, Shape};
use crate::error::{Error, Result};

/// Saliency proxy modes. `EnergyProxy` marks the square window of highest
/// local gradient-magnitude energy covering ~25% of the pixels; `FixedBlob`
/// marks a centered disk. Flat images fall back from EnergyProxy to
/// FixedBlob.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SaliencyMode {
    EnergyProxy,
    FixedBlob,
}

/// Fraction of pixels the energy-proxy window covers.
const WINDOW_FRACTION: f64 = 0.25;

/// Binary saliency mask for an image-shaped sample. Deterministic; ties in
/// window energy break toward the topmost-leftmost window.
pub fn saliency_mask(sample: &Sample, mode: SaliencyMode) -> Result<Sample> {
    let (h, w, channels) = match sample.shape {
        Shape::Image { h, w, channels } => (h, w, channels),
        other => {
            return Err(Error::invalid(format!(
                "saliency mask requires an image, got {other}"
            )))
        }
    };
    match mode {
        SaliencyMode::FixedBlob => Ok(fixed_blob(h, w, channels)),
        SaliencyMode::EnergyProxy => {
            // Luminance = channel mean.
            let lum: Vec<f64> = (0..h * w)
                .map(|p| {
                    (0..channels).map(|c| sample.data[p * channels + c]).sum::<f64>()
                        / channels as f64
                })
                .collect();
            // Forward-difference gradient energy, replicate at edges.
            let mut energy = vec![0.0; h * w];
            for i in 0..h {
                for j in 0..w {
                    let v = lum[i * w + j];
                    let dx = if j + 1 < w { lum[i * w + j + 1] - v } else { 0.0 };
                    let dy = if i + 1 < h { lum[(i + 1) * w + j] - v } else { 0.0 };
                    energy[i * w + j] = dx * dx + dy * dy;
                }
            }
            if energy.iter().all(|&e| e == 0.0) {
                return Ok(fixed_blob(h, w, channels));
            }
            let k = ((WINDOW_FRACTION * (h * w) as f64).sqrt().round() as usize)
                .clamp(1, h.min(w));
            let mut best = (0usize, 0usize);
            let mut best_energy = f64::NEG_INFINITY;
            for i in 0..=h - k {
                for j in 0..=w - k {
                    let mut total = 0.0;
                    for di in 0..k {
                        for dj in 0..k {
                            total += energy[(i + di) * w + j + dj];
                        }
                    }
                    if total > best_energy {
                        best_energy = total;
                        best = (i, j);
                    }
                }
            }
            let mut mask = vec![0.0; h * w * channels];
            for di in 0..k {
                for dj in 0..k {
                    let p = (best.0 + di) * w + best.1 + dj;
                    for c in 0..channels {
                        mask[p * channels + c] = 1.0;
                    }
                }
            }
            Sample::new(mask, sample.shape)
        }
    }
}

fn fixed_blob(h: usize, w: usize, channels: usize) -> Sample {
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let r = h.min(w) as f64 / 4.0;
    let mut mask = vec![0.0; h * w * channels];
    for i in 0..h {
        for j in 0..w {
            let dy = i as f64 - cy;
            let dx = j as f64 - cx;
            if dy * dy + dx * dx <= r * r {
                for c in 0..channels {
                    mask[(i * w + j) * channels + c] = 1.0;
                }
            }
        }
    }
    Sample {
        data: mask,
        shape: Shape::Image { h, w, channels },
    }
}
