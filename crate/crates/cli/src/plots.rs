//! Minimal PNG scatter plots for 2-D point data. Reports stay the source of
//! truth; these exist only for eyeballing a run.

use std::path::Path;

use image::{Rgb, RgbImage};

use realign::diffusion::Sample;
use realign::Result;

const SIZE: u32 = 512;
const PAD: f64 = 0.05;

/// Overlay of two point clouds: `reference` in light gray, `generated` in
/// dark blue. Non-2-D samples are skipped (plots are best-effort).
pub fn scatter_png(reference: &[Sample], generated: &[Sample], path: &Path) -> Result<()> {
    let ref_xy = points_2d(reference);
    let gen_xy = points_2d(generated);
    if ref_xy.is_empty() && gen_xy.is_empty() {
        return Ok(());
    }
    let (min, max) = bounds(ref_xy.iter().chain(gen_xy.iter()));
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    for &(x, y) in &ref_xy {
        dot(&mut img, project(x, min.0, max.0), project(y, min.1, max.1), Rgb([190, 190, 190]));
    }
    for &(x, y) in &gen_xy {
        dot(&mut img, project(x, min.0, max.0), project(y, min.1, max.1), Rgb([40, 60, 160]));
    }
    img.save(path)
        .map_err(|e| realign::Error::Config(format!("cannot write plot {}: {e}", path.display())))
}

fn points_2d(samples: &[Sample]) -> Vec<(f64, f64)> {
    samples
        .iter()
        .filter(|s| s.data.len() == 2)
        .map(|s| (s.data[0], s.data[1]))
        .collect()
}

fn bounds<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> ((f64, f64), (f64, f64)) {
    let mut min = (f64::INFINITY, f64::INFINITY);
    let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        min.0 = min.0.min(x);
        min.1 = min.1.min(y);
        max.0 = max.0.max(x);
        max.1 = max.1.max(y);
    }
    // Degenerate clouds (single point) still get a finite box.
    if max.0 - min.0 < 1e-12 {
        max.0 += 1.0;
        min.0 -= 1.0;
    }
    if max.1 - min.1 < 1e-12 {
        max.1 += 1.0;
        min.1 -= 1.0;
    }
    (min, max)
}

fn project(v: f64, lo: f64, hi: f64) -> u32 {
    let unit = (v - lo) / (hi - lo);
    let padded = PAD + unit * (1.0 - 2.0 * PAD);
    (padded * (SIZE - 1) as f64).round().clamp(0.0, (SIZE - 1) as f64) as u32
}

fn dot(img: &mut RgbImage, cx: u32, cy: u32, color: Rgb<u8>) {
    // y grows downward in image space; flip so plots read math-style.
    let cy = SIZE - 1 - cy;
    for dx in -1i64..=1 {
        for dy in -1i64..=1 {
            let x = cx as i64 + dx;
            let y = cy as i64 + dy;
            if (0..SIZE as i64).contains(&x) && (0..SIZE as i64).contains(&y) {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}
