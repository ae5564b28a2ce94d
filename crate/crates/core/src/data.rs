//! Synthetic corpora: 2-D Gaussian-mixture point clouds and 16x16 grayscale
//! shape images, with clean and degraded variants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::curation::ReferenceSample;
use crate::diffusion::{Condition, Sample, Shape};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, normal_vec, rng_from, standard_normal};

/// Isotropic Gaussian mixture over R^d with equal component weights.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    pub means: Vec<Vec<f64>>,
    pub scale: f64,
}

impl GaussianMixture {
    pub fn new(means: Vec<Vec<f64>>, scale: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Empty("mixture means".into()));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("mixture means must share a nonzero dimension"));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(format!("mixture scale must be positive, got {scale}")));
        }
        Ok(GaussianMixture { means, scale })
    }

    /// Single standard-normal component.
    pub fn standard_normal(dim: usize) -> Self {
        GaussianMixture {
            means: vec![vec![0.0; dim]],
            scale: 1.0,
        }
    }

    /// Two well-separated 2-D lobes.
    pub fn two_lobes() -> Self {
        GaussianMixture {
            means: vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            scale: 0.5,
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Draw one point; returns the point and the component index.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
        let k = rng.gen_range(0..self.means.len());
        let point = self.means[k]
            .iter()
            .map(|&m| m + self.scale * standard_normal(rng))
            .collect();
        (point, k)
    }

    /// Draw `n` raw points (no metadata), e.g. as a held-out evaluation set.
    pub fn draw_points(&self, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = rng_from(seed);
        let shape = Shape::Vector(self.dim());
        (0..n)
            .map(|_| Sample::new(self.draw(&mut rng).0, shape).expect("finite draw"))
            .collect()
    }

    /// One-hot condition embedding for a component, or Null for a
    /// single-component mixture.
    pub fn condition_for(&self, component: usize) -> Condition {
        if self.means.len() == 1 {
            return Condition::Null;
        }
        let mut e = vec![0.0; self.means.len()];
        e[component] = 1.0;
        Condition::Embedding(e)
    }

    /// Conditioning dimension used by `condition_for`.
    pub fn cond_dim(&self) -> usize {
        if self.means.len() == 1 {
            0
        } else {
            self.means.len()
        }
    }
}

/// Reference corpus of mixture points with unique source ids and per-point
/// component conditions.
pub fn point_corpus(mix: &GaussianMixture, n: usize, seed: u64) -> Vec<ReferenceSample> {
    let mut rng = rng_from(seed);
    let shape = Shape::Vector(mix.dim());
    (0..n)
        .map(|i| {
            let (point, k) = mix.draw(&mut rng);
            ReferenceSample {
                sample: Sample::new(point, shape).expect("finite draw"),
                condition: mix.condition_for(k),
                source_id: format!("pt-{i:05}"),
                colorfulness: None,
                quality: None,
            }
        })
        .collect()
}

pub const IMAGE_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Square,
    Cross,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disk, ShapeKind::Square, ShapeKind::Cross];

    fn index(self) -> usize {
        match self {
            ShapeKind::Disk => 0,
            ShapeKind::Square => 1,
            ShapeKind::Cross => 2,
        }
    }
}

/// Quality of a rendered image corpus. `Degraded` adds pixel noise and
/// washes out contrast, the stand-in for low-quality generations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImageQuality {
    Clean,
    Degraded { noise_sigma: f64 },
}

/// Render one 16x16 grayscale shape in [0,1]: foreground figure on a dark
/// background, centered at (cx, cy) with half-extent r.
pub fn shape_image(kind: ShapeKind, cx: f64, cy: f64, r: f64, fg: f64, bg: f64) -> Sample {
    let side = IMAGE_SIDE;
    let mut data = vec![bg; side * side];
    for row in 0..side {
        for col in 0..side {
            let dy = row as f64 - cy;
            let dx = col as f64 - cx;
            let inside = match kind {
                ShapeKind::Disk => dx * dx + dy * dy <= r * r,
                ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
                ShapeKind::Cross => {
                    (dx.abs() <= r / 2.0 && dy.abs() <= r) || (dy.abs() <= r / 2.0 && dx.abs() <= r)
                }
            };
            if inside {
                data[row * side + col] = fg;
            }
        }
    }
    Sample::new(
        data,
        Shape::Image {
            h: side,
            w: side,
            channels: 1,
        },
    )
    .expect("finite render")
}

fn one_hot_shape(kind: ShapeKind) -> Condition {
    let mut e = vec![0.0; ShapeKind::ALL.len()];
    e[kind.index()] = 1.0;
    Condition::Embedding(e)
}

/// Corpus of randomly placed shapes. Clean images are crisp renders;
/// degraded ones get additive noise and reduced contrast, clamped to [0,1].
pub fn image_corpus(n: usize, quality: ImageQuality, seed: u64) -> Vec<ReferenceSample> {
    (0..n)
        .map(|i| {
            let mut rng = rng_from(derive_seed(seed, "image", i as u64));
            let kind = ShapeKind::ALL[rng.gen_range(0..ShapeKind::ALL.len())];
            let cx = rng.gen_range(5.0..11.0);
            let cy = rng.gen_range(5.0..11.0);
            let r = rng.gen_range(2.5..4.5);
            let fg = rng.gen_range(0.8..1.0);
            let bg = rng.gen_range(0.0..0.15);
            let mut img = shape_image(kind, cx, cy, r, fg, bg);
            if let ImageQuality::Degraded { noise_sigma } = quality {
                let noise = normal_vec(&mut rng, img.data.len());
                for (v, z) in img.data.iter_mut().zip(noise) {
                    // Pull toward mid-gray, then add noise: less contrast,
                    // more clutter.
                    *v = (0.5 + 0.5 * (*v - 0.5) + noise_sigma * z).clamp(0.0, 1.0);
                }
            }
            ReferenceSample {
                sample: img,
                condition: one_hot_shape(kind),
                source_id: format!("img-{i:05}"),
                colorfulness: None,
                quality: None,
            }
        })
        .collect()
}
