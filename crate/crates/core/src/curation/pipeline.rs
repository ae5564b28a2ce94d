use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{Denoiser, NoiseSchedule, Sample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed_str, rng_from};

use super::filters::{filter_above_average, quality_gap_filter, select_top_k};
use super::manifest::{write_manifest, CurationManifest, StageCounts};
use super::metrics::colorfulness_score;
use super::negatives::{construct_negative, construct_negative_t2i};
use super::saliency::{saliency_mask, SaliencyMode};
use super::scorer::Scorer;
use super::{PreferencePair, Provenance, ReferenceSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeMode {
    Inpainting,
    TextToImage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorfulnessMode {
    AboveAverage,
    Off,
}

/// Gap threshold: fixed, or calibrated as a quantile of the observed gap
/// distribution of the constructed pairs (clamped to >= 0).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TauMode {
    Fixed(f64),
    Percentile(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurationConfig {
    pub tau: TauMode,
    pub top_k: usize,
    pub colorfulness: ColorfulnessMode,
    pub saliency: SaliencyMode,
    pub negative: NegativeMode,
    /// Reverse-process steps for negative construction.
    pub inpaint_steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            tau: TauMode::Percentile(0.4),
            top_k: 512,
            colorfulness: ColorfulnessMode::AboveAverage,
            saliency: SaliencyMode::EnergyProxy,
            negative: NegativeMode::Inpainting,
            inpaint_steps: 10,
            guidance_scale: 1.0,
            seed: 0,
        }
    }
}

impl CurationConfig {
    fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        match self.tau {
            TauMode::Fixed(v) if !(v >= 0.0) => {
                Err(Error::Config(format!("tau must be >= 0, got {v}")))
            }
            TauMode::Percentile(q) if !(0.0..=1.0).contains(&q) => {
                Err(Error::Config(format!("tau percentile must be in [0,1], got {q}")))
            }
            _ => Ok(()),
        }
    }
}

fn resolve_tau(mode: TauMode, gaps: &[f64]) -> f64 {
    match mode {
        TauMode::Fixed(v) => v,
        TauMode::Percentile(q) => {
            if gaps.is_empty() {
                return 0.0;
            }
            let mut sorted = gaps.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = ((sorted.len() - 1) as f64 * q).floor() as usize;
            sorted[idx].max(0.0)
        }
    }
}

/// The full curation funnel: colorfulness filter, per-reference mask and
/// negative construction, gap filter, top-K selection; writes the dataset
/// manifest and arrays into `out_dir`.
pub fn run_curation(
    corpus: &[ReferenceSample],
    weak_model: &Denoiser,
    scorer: &dyn Scorer,
    cfg: &CurationConfig,
    schedule: &NoiseSchedule,
    out_dir: &Path,
) -> Result<CurationManifest> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("curation corpus".into()));
    }
    let mut counts = StageCounts {
        initial: corpus.len(),
        ..Default::default()
    };
    let mut warnings = Vec::new();

    // Stage 1: colorfulness filter.
    let filtered: Vec<ReferenceSample> = match cfg.colorfulness {
        ColorfulnessMode::Off => corpus.to_vec(),
        ColorfulnessMode::AboveAverage => {
            let populated: Vec<ReferenceSample> = corpus
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    if r.colorfulness.is_none() {
                        r.colorfulness = Some(colorfulness_score(&r.sample)?);
                    }
                    Ok(r)
                })
                .collect::<Result<_>>()?;
            filter_above_average(&populated)?
        }
    };
    counts.after_colorfulness = filtered.len();

    // Stage 2: negative construction, in source-id order for determinism.
    let mut ordered: Vec<&ReferenceSample> = filtered.iter().collect();
    ordered.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let mut pairs = Vec::with_capacity(ordered.len());
    for reference in ordered {
        let mask = if reference.sample.shape.is_image() {
            saliency_mask(&reference.sample, cfg.saliency)?
        } else {
            // No saliency notion for point data: degrade the first half of
            // the coordinates and preserve the rest, the point-cloud analog
            // of a localized mask.
            let d = reference.sample.len();
            let cut = d.div_ceil(2);
            let mut m = vec![0.0; d];
            m[..cut].fill(1.0);
            Sample::new(m, reference.sample.shape)?
        };
        let mut rng = rng_from(derive_seed_str(cfg.seed, "negative", &reference.source_id));
        let (loser, provenance) = match cfg.negative {
            NegativeMode::Inpainting => (
                construct_negative(reference, &mask, weak_model, cfg.inpaint_steps, schedule, &mut rng)?,
                Provenance::Inpainting,
            ),
            NegativeMode::TextToImage => (
                construct_negative_t2i(
                    reference,
                    weak_model,
                    cfg.inpaint_steps,
                    cfg.guidance_scale,
                    schedule,
                    &mut rng,
                )?,
                Provenance::TextToImage,
            ),
        };
        let gap = scorer.score(&reference.sample, &reference.condition)?
            - scorer.score(&loser, &reference.condition)?;
        pairs.push(PreferencePair {
            winner: reference.sample.clone(),
            loser,
            condition: reference.condition.clone(),
            gap,
            mask,
            provenance,
            source_id: reference.source_id.clone(),
        });
    }
    counts.constructed = pairs.len();

    // Stage 3: gap filter with the resolved threshold.
    let gaps: Vec<f64> = pairs.iter().map(|p| p.gap).collect();
    let tau_used = resolve_tau(cfg.tau, &gaps);
    let kept = quality_gap_filter(&pairs, scorer, tau_used)?;
    counts.after_gap = kept.len();

    // Stage 4: top-K.
    let (selected, warning) = if kept.is_empty() {
        (Vec::new(), None)
    } else {
        select_top_k(&kept, scorer, cfg.top_k)?
    };
    if let Some(w) = warning {
        warnings.push(w);
    }
    counts.selected = selected.len();

    if selected.is_empty() {
        return Err(Error::EmptyPipeline {
            counts: format!(
                "initial={} after_colorfulness={} constructed={} after_gap={} selected=0",
                counts.initial, counts.after_colorfulness, counts.constructed, counts.after_gap
            ),
        });
    }

    write_manifest(
        out_dir,
        cfg,
        scorer.name(),
        tau_used,
        counts,
        warnings,
        &selected,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curation::load_manifest;
    use crate::curation::scorer::DenoisingScorer;
    use crate::diffusion::{make_linear_schedule, Condition, Shape};
    use crate::rng::normal_vec;

    fn toy_corpus(n: usize, seed: u64) -> Vec<ReferenceSample> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|i| ReferenceSample {
                sample: Sample::new(normal_vec(&mut rng, 2), Shape::Vector(2)).unwrap(),
                condition: Condition::Null,
                source_id: format!("s{i:04}"),
                colorfulness: None,
                quality: None,
            })
            .collect()
    }

    fn setup() -> (NoiseSchedule, Denoiser, DenoisingScorer, CurationConfig) {
        let schedule = make_linear_schedule(40, 1e-3, 0.08).unwrap();
        // Weak model believes the data is offset: clear degradation signal.
        let weak = Denoiser::oracle(vec![3.0, -3.0], 1.0, &schedule).unwrap();
        let strong = Denoiser::oracle(vec![0.0, 0.0], 1.0, &schedule).unwrap();
        let scorer = DenoisingScorer::new(strong, schedule.clone(), 8, 1234, "toy-oracle");
        let cfg = CurationConfig {
            colorfulness: ColorfulnessMode::Off,
            top_k: 32,
            seed: 7,
            ..CurationConfig::default()
        };
        (schedule, weak, scorer, cfg)
    }

    #[test]
    fn deterministic_manifests() {
        let (schedule, weak, scorer, cfg) = setup();
        let corpus = toy_corpus(60, 5);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir_a.path()).unwrap();
        let mb = run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir_b.path()).unwrap();
        assert_eq!(ma.content_hash, mb.content_hash);
        let bytes_a = std::fs::read(dir_a.path().join(super::super::manifest::MANIFEST_FILE)).unwrap();
        let bytes_b = std::fs::read(dir_b.path().join(super::super::manifest::MANIFEST_FILE)).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let arrays_a = std::fs::read(dir_a.path().join(super::super::manifest::ARRAYS_FILE)).unwrap();
        let arrays_b = std::fs::read(dir_b.path().join(super::super::manifest::ARRAYS_FILE)).unwrap();
        assert_eq!(arrays_a, arrays_b);
    }

    #[test]
    fn funnel_counts_non_increasing_and_dominance_holds() {
        let (schedule, weak, scorer, cfg) = setup();
        let corpus = toy_corpus(80, 9);
        let dir = tempfile::tempdir().unwrap();
        let m = run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir.path()).unwrap();
        let c = &m.stage_counts;
        assert!(c.initial >= c.after_colorfulness);
        assert!(c.after_colorfulness >= c.constructed);
        assert!(c.constructed >= c.after_gap);
        assert!(c.after_gap >= c.selected);
        assert!(c.selected > 0);
        let (loaded, pairs) = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.content_hash, m.content_hash);
        for p in &pairs {
            assert!(p.gap > m.tau_used);
        }
        // top-K output sorted by winner score descending
        let scores: Vec<f64> = pairs
            .iter()
            .map(|p| scorer.score(&p.winner, &p.condition).unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn permissive_config_keeps_all_constructed_pairs() {
        let (schedule, weak, scorer, mut cfg) = setup();
        cfg.tau = TauMode::Fixed(0.0);
        cfg.top_k = usize::MAX >> 1;
        let corpus = toy_corpus(40, 11);
        let dir = tempfile::tempdir().unwrap();
        let m = run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir.path()).unwrap();
        // tau = 0 still drops non-positive gaps; with the strongly mismatched
        // weak model every gap should be positive, so all pairs survive.
        assert_eq!(m.stage_counts.selected, m.stage_counts.after_gap);
        assert!(m.warnings.iter().any(|w| w.contains("returning all")));
    }

    #[test]
    fn stage_counts_match_end_to_end_rerun() {
        let (schedule, weak, scorer, cfg) = setup();
        let corpus = toy_corpus(200, 21);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir_a.path()).unwrap();
        let b = run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir_b.path()).unwrap();
        assert_eq!(
            serde_json::to_string(&a.stage_counts).unwrap(),
            serde_json::to_string(&b.stage_counts).unwrap()
        );
    }

    #[test]
    fn zero_pair_pipeline_is_explicit_error() {
        let (schedule, weak, scorer, mut cfg) = setup();
        cfg.tau = TauMode::Fixed(1e12);
        let corpus = toy_corpus(10, 3);
        let dir = tempfile::tempdir().unwrap();
        let err = run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir.path());
        assert!(matches!(err, Err(Error::EmptyPipeline { .. })));
    }

    #[test]
    fn corrupt_manifest_detected() {
        let (schedule, weak, scorer, cfg) = setup();
        let corpus = toy_corpus(30, 2);
        let dir = tempfile::tempdir().unwrap();
        run_curation(&corpus, &weak, &scorer, &cfg, &schedule, dir.path()).unwrap();
        // Flip a byte in the arrays file.
        let path = dir.path().join(super::super::manifest::ARRAYS_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(load_manifest(dir.path()).is_err());
    }
}
