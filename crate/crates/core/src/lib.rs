//! Toy-scale laboratory for real-data preference alignment of diffusion models.
//!
//! The pipeline has three legs:
//! - `diffusion`: minimal DDPM machinery (schedules, forward process, a small
//!   epsilon-prediction MLP with optional low-rank adapters, ancestral and
//!   inpainting samplers) on 2-D point clouds and 16x16 grayscale images.
//! - `curation`: turns a corpus of reference samples into preference pairs
//!   without labels (colorfulness filter, saliency masks, inpainting
//!   negatives, gap filter, top-K selection).
//! - `objectives` + `training` + `eval`: the two-stage alignment losses
//!   (margin-hinge distribution ranking, then pairwise preference
//!   optimization), the training loops around them, and the measurement
//!   harnesses (sliced Wasserstein, win rates, ablation grids).

pub mod curation;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod objectives;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
