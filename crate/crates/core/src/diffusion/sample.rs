use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the data space: a flat vector (point data) or an H x W grid with
/// one or three channels (toy images).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Image { h: usize, w: usize, channels: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match self {
            Shape::Vector(d) => *d,
            Shape::Image { h, w, channels } => h * w * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Shape::Image { .. })
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Vector(d) => write!(f, "vector[{d}]"),
            Shape::Image { h, w, channels } => write!(f, "image[{h}x{w}x{channels}]"),
        }
    }
}

/// A point in data space. Pixel layout for images is row-major,
/// channel-interleaved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub data: Vec<f64>,
    pub shape: Shape,
}

impl Sample {
    pub fn new(data: Vec<f64>, shape: Shape) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                shape.to_string(),
                format!("{} values", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "sample data".into(),
            });
        }
        Ok(Sample { data, shape })
    }

    pub fn zeros(shape: Shape) -> Self {
        Sample {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Pixel value at (row, col, channel) for image-shaped samples.
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f64 {
        match self.shape {
            Shape::Image { w, channels, .. } => self.data[(row * w + col) * channels + channel],
            Shape::Vector(_) => panic!("at() on non-image sample"),
        }
    }
}

/// Conditioning input: a fixed-length embedding, or the distinguished NULL
/// condition (the empty-prompt analog used by prompt dropout and guidance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    Null,
    Embedding(Vec<f64>),
}

impl Condition {
    pub fn embedding(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "condition embedding".into(),
            });
        }
        Ok(Condition::Embedding(values))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Condition::Null)
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Condition::Null => None,
            Condition::Embedding(v) => Some(v.len()),
        }
    }
}
