//! Label-free preference-pair curation: colorfulness filtering, saliency
//! masks, inpainting-based negatives, gap filtering and top-K selection.

mod filters;
mod manifest;
mod metrics;
mod negatives;
mod pipeline;
mod saliency;
mod scorer;

pub use filters::{filter_above_average, quality_gap_filter, select_top_k};
pub use manifest::{load_manifest, CurationManifest, PairRecord, StageCounts, ARRAYS_FILE, MANIFEST_FILE};
pub use metrics::colorfulness_score;
pub use negatives::{construct_negative, construct_negative_t2i};
pub use pipeline::{run_curation, ColorfulnessMode, CurationConfig, NegativeMode, TauMode};
pub use saliency::{saliency_mask, SaliencyMode};
pub use scorer::{DenoisingScorer, Scorer};

use serde::{Deserialize, Serialize};

use crate::diffusion::{Condition, Sample};

/// A reference sample from the "real" corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub sample: Sample,
    pub condition: Condition,
    pub source_id: String,
    pub colorfulness: Option<f64>,
    pub quality: Option<f64>,
}

/// How a loser sample was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Inpainting,
    TextToImage,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Inpainting => write!(f, "inpainting"),
            Provenance::TextToImage => write!(f, "text_to_image"),
        }
    }
}

/// The unit of stage-2 supervision: a reference winner and its degraded
/// counterpart.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner: Sample,
    pub loser: Sample,
    pub condition: Condition,
    /// scorer(winner) - scorer(loser), recorded at construction and
    /// recomputed by the gap filter.
    pub gap: f64,
    pub mask: Sample,
    pub provenance: Provenance,
    pub source_id: String,
}
